#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "diffir/autograd.hpp"
#include "diffir/nn.hpp"
#include "diffir/rng.hpp"

namespace testutil {

using diffir::Rng;
using diffir::Tensor;
namespace ag = diffir::ag;

inline double rel_err(double a, double b) {
    double scale = std::max(std::abs(a), std::abs(b));
    if (scale < 1e-8) return 0.0;
    return std::abs(a - b) / scale;
}

// Central finite differences against reverse-mode gradients. build() must
// construct a fresh scalar loss graph from the current parameter values.
// Checks up to max_coords entries per tensor (all if the tensor is small).
//
// Pass rule per coordinate: |analytic - numeric| <= atol + rtol*max(|a|,|n|).
// The absolute floor covers double-precision FD noise on coordinates whose
// gradient is orders of magnitude below the loss scale; the sweep in the
// harness's own tests shows the noise sits near 1e-9 for unit-scale losses.
struct GradCheck {
    double h = 1e-4;
    double tol = 1e-6;     // rtol
    double atol = 1e-7;
    int max_coords = 6;
    uint64_t seed = 1234;

    double max_rel_err = 0.0;  // worst (|a-n| - atol) / max(|a|,|n|), clamped at 0
    int checked = 0;

    bool run(const std::function<ag::Var()>& build, const std::vector<ag::Var>& params) {
        for (const auto& p : params) p->zero_grad();
        auto loss = build();
        ag::backward(loss);
        Rng rng(seed);
        bool ok = true;
        for (const auto& p : params) {
            int64_t n = p->value.numel();
            std::vector<int64_t> coords;
            if (n <= max_coords) {
                for (int64_t i = 0; i < n; ++i) coords.push_back(i);
            } else {
                for (int i = 0; i < max_coords; ++i) coords.push_back(rng.uniform_int(0, n - 1));
            }
            for (int64_t ci : coords) {
                double w0 = p->value[ci];
                double step = h * std::max(1.0, std::abs(w0));
                p->value[ci] = w0 + step;
                double lp = build()->value[0];
                p->value[ci] = w0 - step;
                double lm = build()->value[0];
                p->value[ci] = w0;
                double numeric = (lp - lm) / (2.0 * step);
                double analytic = p->grad.data.empty() ? 0.0 : p->grad[ci];
                double diff = std::abs(analytic - numeric);
                double scale = std::max(std::abs(analytic), std::abs(numeric));
                double excess = scale > 0 ? std::max(0.0, diff - atol) / scale : 0.0;
                max_rel_err = std::max(max_rel_err, excess);
                ++checked;
                if (diff > atol + tol * scale) ok = false;
            }
        }
        return ok;
    }
};

inline Tensor random_tensor(Rng& rng, std::vector<int64_t> shape, double lo = -1.0, double hi = 1.0) {
    return rng.uniform_tensor(std::move(shape), lo, hi);
}

}  // namespace testutil
