#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "diffir/tensor.hpp"

namespace diffir {

struct LossReport {
    double l_rec = 0.0;
    double l_diff = 0.0;
    double l_all = 0.0;
    std::optional<double> l2;
    std::optional<double> l_kl;
};

// mean absolute error between restored and ground-truth images
inline double l_rec(const Tensor& i_hat, const Tensor& i_gt) {
    require_same_shape(i_hat, i_gt, "l_rec");
    double s = 0;
    for (int64_t i = 0; i < i_hat.numel(); ++i) s += std::abs(i_gt[i] - i_hat[i]);
    return s / static_cast<double>(i_hat.numel());
}

inline void require_equal_len(const std::vector<double>& a, const std::vector<double>& b, const char* where) {
    if (a.size() != b.size()) throw std::invalid_argument(std::string(where) + ": length mismatch");
}

// (1/4C') sum |Zhat - Z|
inline double l_diff(const std::vector<double>& z_hat, const std::vector<double>& z) {
    require_equal_len(z_hat, z, "l_diff");
    double s = 0;
    for (size_t i = 0; i < z.size(); ++i) s += std::abs(z_hat[i] - z[i]);
    return s / static_cast<double>(z.size());
}

// (1/4C') sum (Zhat - Z)^2
inline double l2(const std::vector<double>& z_hat, const std::vector<double>& z) {
    require_equal_len(z_hat, z, "l2");
    double s = 0;
    for (size_t i = 0; i < z.size(); ++i) s += (z_hat[i] - z[i]) * (z_hat[i] - z[i]);
    return s / static_cast<double>(z.size());
}

inline std::vector<double> softmax(const std::vector<double>& v) {
    std::vector<double> p(v.size());
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double s = 0;
    for (size_t i = 0; i < v.size(); ++i) {
        p[i] = std::exp(v[i] - mx);
        s += p[i];
    }
    for (auto& x : p) x /= s;
    return p;
}

// KL(softmax(Z) || softmax(Zhat)), natural log
inline double l_kl(const std::vector<double>& z_hat, const std::vector<double>& z) {
    require_equal_len(z_hat, z, "l_kl");
    auto p = softmax(z);
    auto q = softmax(z_hat);
    double kl = 0;
    for (size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
    return kl;
}

}  // namespace diffir
