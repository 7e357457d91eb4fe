#pragma once

#include <string>
#include <vector>

#include "diffir/config.hpp"
#include "diffir/cpen.hpp"
#include "diffir/nn.hpp"
#include "diffir/schedule.hpp"

namespace diffir {

// Noise-prediction MLP over the compact vector: eps_theta(Concat(Z_t, t, D)).
// The timestep enters as t/T by default, or as a sinusoidal code.
struct Denoiser {
    DenoiserConfig cfg;
    int prior_dim = 0;
    int T = 0;
    std::vector<nn::Linear> hidden;
    nn::Linear out;
    mutable int64_t call_count = 0;  // instrumentation for the sampler contract

    void init(Rng& rng, const DenoiserConfig& c, int prior_dim_, int T_) {
        cfg = c;
        prior_dim = prior_dim_;
        T = T_;
        int in = 2 * prior_dim + c.t_embed_width();
        hidden.resize(static_cast<size_t>(c.num_layers));
        for (int i = 0; i < c.num_layers; ++i) {
            hidden[static_cast<size_t>(i)].init(rng, i == 0 ? in : c.hidden_width, c.hidden_width);
        }
        // Small-gain output layer: the reverse chain multiplies prediction
        // error by 1/sqrt(alpha_bar), so a full-gain random head starts the
        // sampler far off scale and stalls early joint training.
        out.init(rng, c.hidden_width, prior_dim, 0.03);
    }

    Tensor t_embedding(int t) const {
        if (cfg.t_embed == TEmbed::scalar_append) return Tensor({1}, {static_cast<double>(t) / static_cast<double>(T)});
        Tensor e({cfg.sinusoidal_dim});
        int half = cfg.sinusoidal_dim / 2;
        for (int i = 0; i < half; ++i) {
            double freq = std::pow(10000.0, -static_cast<double>(i) / std::max(1, half));
            e[i] = std::sin(t * freq);
            e[half + i] = std::cos(t * freq);
        }
        return e;
    }

    ag::Var forward(const ag::Var& z_t, int t, const ag::Var& d) const {
        if (t < 1 || t > T) throw std::invalid_argument("denoiser: timestep out of range");
        if (z_t->value.numel() != prior_dim || d->value.numel() != prior_dim)
            throw std::invalid_argument("denoiser: vector length mismatch");
        ++call_count;
        auto x = ag::concat_vec({z_t, ag::constant(t_embedding(t)), d});
        for (const auto& l : hidden) x = ag::leaky_relu(l(x));
        return out(x);
    }

    void reg(nn::ParamMap& pm, const std::string& name) const {
        for (size_t i = 0; i < hidden.size(); ++i) hidden[i].reg(pm, name + ".h" + std::to_string(i));
        out.reg(pm, name + ".out");
    }
};

// Plain-value noise prediction for inference paths.
inline std::vector<double> denoise_eps(const Denoiser& net, const IPRVector& z_t, int t, const std::vector<double>& d) {
    if (z_t.timestep != t) throw std::invalid_argument("denoise_eps: vector is not at timestep t");
    auto e = net.forward(ag::constant(Tensor({static_cast<int64_t>(z_t.values.size())}, z_t.values)), t,
                         ag::constant(Tensor({static_cast<int64_t>(d.size())}, d)));
    return e->value.data;
}

// Full reverse sampling of the prior: D once, Gaussian start, T deterministic
// reverse steps with per-step predicted noise. Bit-reproducible per seed.
inline IPRVector sample_ipr(const Denoiser& denoiser, const Cpen& cpen_s2, const NoiseSchedule& s, const Tensor& i_lq,
                            Rng& rng) {
    std::vector<double> d = cpen_s2_forward(cpen_s2, i_lq);
    IPRVector z;
    z.timestep = s.T;
    z.values.resize(d.size());
    for (auto& v : z.values) v = rng.normal();
    for (int t = s.T; t >= 1; --t) {
        auto eps_hat = denoise_eps(denoiser, z, t, d);
        z = reverse_step(s, z, t, eps_hat, NoiseMode::deterministic, nullptr);
    }
    return z;
}

}  // namespace diffir
