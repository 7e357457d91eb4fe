#pragma once

#include <string>
#include <vector>

#include "diffir/autograd.hpp"
#include "diffir/rng.hpp"

namespace diffir::nn {

// Ordered registry of named parameters. Registration order defines the
// checkpoint manifest order and the optimizer update order, so it must be
// deterministic.
struct ParamMap {
    std::vector<std::pair<std::string, ag::Var>> entries;

    void add(const std::string& name, const ag::Var& v) {
        for (const auto& [n, _] : entries)
            if (n == name) throw std::invalid_argument("ParamMap: duplicate name " + name);
        entries.push_back({name, v});
    }
    void merge(const std::string& prefix, const ParamMap& other) {
        for (const auto& [n, v] : other.entries) add(prefix + "." + n, v);
    }
    ag::Var find(const std::string& name) const {
        for (const auto& [n, v] : entries)
            if (n == name) return v;
        return nullptr;
    }
    int64_t total_params() const {
        int64_t n = 0;
        for (const auto& [_, v] : entries) n += v->value.numel();
        return n;
    }
    void zero_grad() const {
        for (const auto& [_, v] : entries) v->zero_grad();
    }
    void set_requires_grad(bool on) const {
        for (const auto& [_, v] : entries) v->requires_grad = on;
    }
    double grad_norm() const {
        double s = 0;
        for (const auto& [_, v] : entries)
            if (!v->grad.data.empty())
                for (double g : v->grad.data) s += g * g;
        return std::sqrt(s);
    }
};

inline Tensor kaiming_conv(Rng& rng, int64_t co, int64_t k, int64_t ci, double gain = std::sqrt(2.0)) {
    Tensor w({co, k, k, ci});
    double std = gain / std::sqrt(static_cast<double>(k * k * ci));
    for (auto& v : w.data) v = rng.normal() * std;
    return w;
}

inline Tensor kaiming_linear(Rng& rng, int64_t out, int64_t in, double gain = std::sqrt(2.0)) {
    Tensor w({out, in});
    double std = gain / std::sqrt(static_cast<double>(in));
    for (auto& v : w.data) v = rng.normal() * std;
    return w;
}

struct Conv2d {
    ag::Var w, b;
    int stride = 1, pad = 1;

    void init(Rng& rng, int64_t ci, int64_t co, int64_t k, int stride_ = 1, int pad_ = -1, bool zero = false) {
        stride = stride_;
        pad = pad_ < 0 ? static_cast<int>(k / 2) : pad_;
        w = ag::param(zero ? Tensor::zeros({co, k, k, ci}) : kaiming_conv(rng, co, k, ci));
        b = ag::param(Tensor::zeros({co}));
    }
    ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, w, b, stride, pad); }
    void reg(ParamMap& pm, const std::string& name) const {
        pm.add(name + ".w", w);
        pm.add(name + ".b", b);
    }
};

struct DwConv2d {
    ag::Var w, b;
    int pad = 1;

    void init(Rng& rng, int64_t c, int64_t k) {
        pad = static_cast<int>(k / 2);
        Tensor t({c, k, k});
        double std = std::sqrt(2.0) / std::sqrt(static_cast<double>(k * k));
        for (auto& v : t.data) v = rng.normal() * std;
        w = ag::param(std::move(t));
        b = ag::param(Tensor::zeros({c}));
    }
    ag::Var operator()(const ag::Var& x) const { return ag::dwconv2d(x, w, b, pad); }
    void reg(ParamMap& pm, const std::string& name) const {
        pm.add(name + ".w", w);
        pm.add(name + ".b", b);
    }
};

struct Linear {
    ag::Var w, b;

    void init(Rng& rng, int64_t in, int64_t out, double gain = std::sqrt(2.0)) {
        w = ag::param(kaiming_linear(rng, out, in, gain));
        b = ag::param(Tensor::zeros({out}));
    }
    ag::Var operator()(const ag::Var& x) const { return ag::linear(x, w, b); }
    void reg(ParamMap& pm, const std::string& name) const {
        pm.add(name + ".w", w);
        pm.add(name + ".b", b);
    }
};

}  // namespace diffir::nn
