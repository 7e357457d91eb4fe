#pragma once

#include <cmath>
#include <vector>

#include "diffir/nn.hpp"

namespace diffir {

// Standard Adam with bias correction. Updates run in the registration order
// of the parameter map, single-threaded, so trajectories are reproducible.
class Adam {
  public:
    Adam(const nn::ParamMap& params, double lr, double beta1 = 0.9, double beta2 = 0.99, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        for (const auto& [name, v] : params.entries) {
            slots_.push_back({v, Tensor::zeros(v->value.shape), Tensor::zeros(v->value.shape)});
        }
    }

    void step() {
        ++t_;
        double bc1 = 1.0 - std::pow(b1_, t_);
        double bc2 = 1.0 - std::pow(b2_, t_);
        for (auto& s : slots_) {
            if (s.p->grad.data.empty()) continue;
            for (int64_t i = 0; i < s.p->value.numel(); ++i) {
                double g = s.p->grad[i];
                s.m[i] = b1_ * s.m[i] + (1.0 - b1_) * g;
                s.v[i] = b2_ * s.v[i] + (1.0 - b2_) * g * g;
                double mhat = s.m[i] / bc1;
                double vhat = s.v[i] / bc2;
                s.p->value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    void zero_grad() {
        for (auto& s : slots_) s.p->zero_grad();
    }

    int64_t step_count() const { return t_; }

  private:
    struct Slot {
        ag::Var p;
        Tensor m, v;
    };
    double lr_, b1_, b2_, eps_;
    int64_t t_ = 0;
    std::vector<Slot> slots_;
};

}  // namespace diffir
