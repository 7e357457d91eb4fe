#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "diffir/rng.hpp"
#include "diffir/tensor.hpp"

namespace diffir {

// Compact prior vector with its diffusion state. timestep 0 = clean,
// timestep T = fully diffused.
struct IPRVector {
    std::vector<double> values;
    int timestep = 0;
};

enum class NoiseMode { deterministic, stochastic };

// beta/alpha/alpha_bar tables for T timesteps, all in double. Index t is
// 1-based in the math; tables are 0-based with entry [t-1] for step t.
struct NoiseSchedule {
    int T = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;
    std::vector<double> posterior_vars;  // sigma_t^2 = (1-abar_{t-1})/(1-abar_t) * beta_t, abar_0 = 1

    double beta(int t) const { return betas.at(static_cast<size_t>(t - 1)); }
    double alpha(int t) const { return alphas.at(static_cast<size_t>(t - 1)); }
    double alpha_bar(int t) const { return alpha_bars.at(static_cast<size_t>(t - 1)); }
    double posterior_var(int t) const { return posterior_vars.at(static_cast<size_t>(t - 1)); }

    // reverse-step coefficients of Eq.-style mean: (z - eps_coef*eps) * recip_sqrt_alpha
    double recip_sqrt_alpha(int t) const { return 1.0 / std::sqrt(alpha(t)); }
    double eps_coef(int t) const { return (1.0 - alpha(t)) / std::sqrt(1.0 - alpha_bar(t)); }

    void check_step(int t, const char* where) const {
        if (t < 1 || t > T) throw std::invalid_argument(std::string(where) + ": timestep out of range");
    }
};

// Linear beta schedule. T = 1 takes the terminal beta so alpha_bar stays
// close to zero and sampling from pure noise remains valid.
inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("make_schedule: betas must satisfy 0 < beta_start <= beta_end < 1");
    if (T >= 2 && beta_start == beta_end)
        throw std::invalid_argument("make_schedule: equal endpoints make a non-increasing schedule for T >= 2");
    NoiseSchedule s;
    s.T = T;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.betas.resize(static_cast<size_t>(T));
    if (T == 1) {
        s.betas[0] = beta_end;
    } else {
        double step = (beta_end - beta_start) / static_cast<double>(T - 1);
        for (int t = 0; t < T; ++t) s.betas[static_cast<size_t>(t)] = beta_start + step * t;
    }
    s.alphas.resize(static_cast<size_t>(T));
    s.alpha_bars.resize(static_cast<size_t>(T));
    s.posterior_vars.resize(static_cast<size_t>(T));
    double abar = 1.0;
    for (int t = 0; t < T; ++t) {
        s.alphas[static_cast<size_t>(t)] = 1.0 - s.betas[static_cast<size_t>(t)];
        double abar_prev = abar;
        abar *= s.alphas[static_cast<size_t>(t)];
        s.alpha_bars[static_cast<size_t>(t)] = abar;
        s.posterior_vars[static_cast<size_t>(t)] = (1.0 - abar_prev) / (1.0 - abar) * s.betas[static_cast<size_t>(t)];
    }
    return s;
}

inline void require_len(const IPRVector& z, const std::vector<double>& eps, const char* where) {
    if (z.values.size() != eps.size()) throw std::invalid_argument(std::string(where) + ": length mismatch");
}

// Single-shot diffusion to an arbitrary timestep t via the closed form.
inline IPRVector diffuse_to(const NoiseSchedule& s, const IPRVector& z, int t, const std::vector<double>& eps) {
    s.check_step(t, "diffuse_to");
    if (z.timestep != 0) throw std::invalid_argument("diffuse_to: input must be a clean (t=0) vector");
    require_len(z, eps, "diffuse_to");
    double a = std::sqrt(s.alpha_bar(t));
    double b = std::sqrt(1.0 - s.alpha_bar(t));
    IPRVector out;
    out.timestep = t;
    out.values.resize(z.values.size());
    for (size_t i = 0; i < z.values.size(); ++i) out.values[i] = a * z.values[i] + b * eps[i];
    return out;
}

// Diffusion straight to the terminal state Z_T.
inline IPRVector diffuse(const NoiseSchedule& s, const IPRVector& z, const std::vector<double>& eps) {
    return diffuse_to(s, z, s.T, eps);
}

// One forward step t-1 -> t.
inline IPRVector diffuse_step(const NoiseSchedule& s, const IPRVector& z_prev, int t, const std::vector<double>& eps) {
    s.check_step(t, "diffuse_step");
    if (z_prev.timestep != t - 1) throw std::invalid_argument("diffuse_step: input is not at timestep t-1");
    require_len(z_prev, eps, "diffuse_step");
    double a = std::sqrt(1.0 - s.beta(t));
    double b = std::sqrt(s.beta(t));
    IPRVector out;
    out.timestep = t;
    out.values.resize(z_prev.values.size());
    for (size_t i = 0; i < z_prev.values.size(); ++i) out.values[i] = a * z_prev.values[i] + b * eps[i];
    return out;
}

// One reverse step t -> t-1. Deterministic mode is the method's default;
// stochastic mode injects posterior-variance noise (ablation V4 only).
inline IPRVector reverse_step(const NoiseSchedule& s, const IPRVector& z_t, int t, const std::vector<double>& eps_hat,
                              NoiseMode mode = NoiseMode::deterministic, Rng* rng = nullptr) {
    s.check_step(t, "reverse_step");
    if (z_t.timestep != t) throw std::invalid_argument("reverse_step: input is not at timestep t");
    require_len(z_t, eps_hat, "reverse_step");
    if (mode == NoiseMode::stochastic && rng == nullptr)
        throw std::invalid_argument("reverse_step: stochastic mode requires an rng");
    double ra = s.recip_sqrt_alpha(t);
    double ec = s.eps_coef(t);
    IPRVector out;
    out.timestep = t - 1;
    out.values.resize(z_t.values.size());
    for (size_t i = 0; i < z_t.values.size(); ++i) out.values[i] = ra * (z_t.values[i] - ec * eps_hat[i]);
    if (mode == NoiseMode::stochastic) {
        double sigma = std::sqrt(s.posterior_var(t));
        for (auto& v : out.values) v += sigma * rng->normal();
    }
    return out;
}

}  // namespace diffir
