#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffir/config.hpp"

namespace diffir {

// Analytic model-cost accounting. Conventions: one multiply-accumulate = 1
// Mult-Add; biases, activations, normalizations and softmax are excluded;
// attention counts its two matrix contractions. Must mirror the actual
// forward pass layer for layer.
struct CostItem {
    std::string name;
    int64_t value;
};

struct CostReport {
    int64_t total = 0;
    std::vector<CostItem> breakdown;

    void add(const std::string& name, int64_t v) {
        breakdown.push_back({name, v});
        total += v;
    }
    int64_t find(const std::string& name) const {
        for (const auto& it : breakdown)
            if (it.name == name) return it.value;
        return 0;
    }
};

namespace cost {

inline int64_t conv_params(int64_t k, int64_t cin, int64_t cout) { return k * k * cin * cout + cout; }
inline int64_t dwconv_params(int64_t k, int64_t c) { return k * k * c + c; }
inline int64_t linear_params(int64_t in, int64_t out) { return in * out + out; }

inline int64_t conv_mult_adds(int64_t k, int64_t cin, int64_t cout, int64_t ho, int64_t wo) { return k * k * cin * cout * ho * wo; }
inline int64_t dwconv_mult_adds(int64_t k, int64_t c, int64_t h, int64_t w) { return k * k * c * h * w; }
inline int64_t linear_mult_adds(int64_t in, int64_t out) { return in * out; }

// one dynamic transformer block (DMTA + DGFN) at channel width c
inline int64_t block_params(int64_t c, int64_t prior) {
    int64_t mod = 2 * (prior * c + c);                                        // per module
    int64_t dmta = mod + 3 * (c * c + c) + 3 * (9 * c + c) + 1 + (c * c + c);  // qkv, dw, gamma, out
    int64_t dgfn = mod + 2 * (c * c + c) + 2 * (9 * c + c);
    return dmta + dgfn;
}

inline int64_t block_attention_mult_adds(int64_t c, int64_t heads, int64_t n) {
    return 2 * c * c * n / heads;  // K^T Q and V A contractions, per-head widths
}

inline int64_t block_mult_adds(int64_t c, int64_t heads, int64_t n, int64_t prior) {
    int64_t mod = 2 * linear_mult_adds(prior, c);  // per module
    int64_t dmta = mod + 3 * c * c * n + 3 * 9 * c * n + block_attention_mult_adds(c, heads, n) + c * c * n;
    int64_t dgfn = mod + 2 * (c * c * n + 9 * c * n);
    return dmta + dgfn;
}

// ---- DIRformer ----

inline int64_t dirformer_params(const DirformerConfig& d, int64_t prior, int64_t in_ch) {
    const auto& c = d.channels;
    int64_t p = conv_params(3, in_ch, c[0]);
    for (int l = 0; l < 3; ++l) {
        p += 2 * d.blocks[static_cast<size_t>(l)] * block_params(c[static_cast<size_t>(l)], prior);  // enc + dec
        p += conv_params(3, c[static_cast<size_t>(l)], c[static_cast<size_t>(l) + 1]);               // down
        p += conv_params(1, c[static_cast<size_t>(l) + 1], 4 * c[static_cast<size_t>(l)]);           // up
        p += conv_params(1, 2 * c[static_cast<size_t>(l)], c[static_cast<size_t>(l)]);               // fuse
    }
    p += d.blocks[3] * block_params(c[3], prior);
    p += conv_params(3, c[0], 3);
    return p;
}

struct DirformerMacs {
    int64_t attention = 0;
    int64_t blocks_rest = 0;
    int64_t plumbing = 0;
    int64_t total() const { return attention + blocks_rest + plumbing; }
};

inline DirformerMacs dirformer_mult_adds(const DirformerConfig& d, int64_t prior, int64_t in_ch, int64_t h, int64_t w) {
    const auto& c = d.channels;
    int64_t n[4] = {h * w, h * w / 4, h * w / 16, h * w / 64};
    DirformerMacs m;
    m.plumbing += conv_mult_adds(3, in_ch, c[0], h, w);
    for (int l = 0; l < 3; ++l) {
        int64_t cl = c[static_cast<size_t>(l)], cn = c[static_cast<size_t>(l) + 1];
        int64_t nb = 2 * d.blocks[static_cast<size_t>(l)];
        m.attention += nb * block_attention_mult_adds(cl, d.heads[static_cast<size_t>(l)], n[l]);
        m.blocks_rest += nb * (block_mult_adds(cl, d.heads[static_cast<size_t>(l)], n[l], prior) -
                               block_attention_mult_adds(cl, d.heads[static_cast<size_t>(l)], n[l]));
        m.plumbing += conv_mult_adds(3, cl, cn, h >> (l + 1), w >> (l + 1));         // down
        m.plumbing += conv_mult_adds(1, cn, 4 * cl, h >> (l + 1), w >> (l + 1));     // up (coarse res)
        m.plumbing += conv_mult_adds(1, 2 * cl, cl, h >> l, w >> l);                 // fuse
    }
    m.attention += d.blocks[3] * block_attention_mult_adds(c[3], d.heads[3], n[3]);
    m.blocks_rest += d.blocks[3] * (block_mult_adds(c[3], d.heads[3], n[3], prior) -
                                    block_attention_mult_adds(c[3], d.heads[3], n[3]));
    m.plumbing += conv_mult_adds(3, c[0], 3, h, w);
    return m;
}

// ---- CPEN ----

inline int64_t cpen_params(const CpenConfig& c, int64_t in_ch) {
    int64_t p = conv_params(1, in_ch, c.stem_width);
    p += conv_params(3, c.stem_width, c.width);
    p += c.num_res_blocks() * 2 * conv_params(3, c.width, c.width);
    p += static_cast<int64_t>(c.stage_blocks.size() - 1) * conv_params(3, c.width, c.width);
    p += linear_params(c.width, c.head_hidden) + linear_params(c.head_hidden, c.prior_dim());
    return p;
}

inline int64_t cpen_mult_adds(const CpenConfig& c, int64_t in_ch, int64_t h, int64_t w) {
    int64_t hh = h / c.unshuffle_factor, ww = w / c.unshuffle_factor;
    int64_t m = conv_mult_adds(1, in_ch, c.stem_width, hh, ww);
    m += conv_mult_adds(3, c.stem_width, c.width, hh, ww);
    for (size_t s = 0; s < c.stage_blocks.size(); ++s) {
        m += c.stage_blocks[s] * 2 * conv_mult_adds(3, c.width, c.width, hh, ww);
        if (s + 1 < c.stage_blocks.size()) {
            hh /= 2;
            ww /= 2;
            m += conv_mult_adds(3, c.width, c.width, hh, ww);
        }
    }
    m += linear_mult_adds(c.width, c.head_hidden) + linear_mult_adds(c.head_hidden, c.prior_dim());
    return m;
}

// ---- denoiser ----

inline int64_t denoiser_params(const DenoiserConfig& d, int64_t prior) {
    if (d.num_layers == 0) return 0;
    int64_t in = 2 * prior + d.t_embed_width();
    int64_t p = linear_params(in, d.hidden_width);
    p += (d.num_layers - 1) * linear_params(d.hidden_width, d.hidden_width);
    p += linear_params(d.hidden_width, prior);
    return p;
}

inline int64_t denoiser_mult_adds(const DenoiserConfig& d, int64_t prior) {
    if (d.num_layers == 0) return 0;
    int64_t in = 2 * prior + d.t_embed_width();
    return linear_mult_adds(in, d.hidden_width) + (d.num_layers - 1) * linear_mult_adds(d.hidden_width, d.hidden_width) +
           linear_mult_adds(d.hidden_width, prior);
}

}  // namespace cost

// Learnable-scalar count for one system variant.
inline CostReport count_params(const ModelConfig& m, Task task, Stage variant) {
    CostReport r;
    int64_t prior = m.cpen.prior_dim();
    int in_ch = model_image_channels(task);
    if (variant == Stage::s1) {
        r.add("cpen_s1", cost::cpen_params(m.cpen, m.cpen.in_channels_s1(task)));
    } else {
        r.add("cpen_s2", cost::cpen_params(m.cpen, m.cpen.in_channels_s2(task)));
        r.add("denoiser", cost::denoiser_params(m.denoiser, prior));
    }
    r.add("dirformer", cost::dirformer_params(m.dirformer, prior, in_ch));
    return r;
}

// Mult-adds of one restoration forward pass at (input, input). The S2 variant
// includes the condition encoder once plus T denoiser invocations.
inline CostReport count_mult_adds(const ModelConfig& m, Task task, int64_t input, int T, Stage variant) {
    if (input % 8 != 0) throw std::invalid_argument("count_mult_adds: input size must be divisible by 8");
    CostReport r;
    int64_t prior = m.cpen.prior_dim();
    int in_ch = model_image_channels(task);
    if (variant == Stage::s1) {
        r.add("cpen_s1", cost::cpen_mult_adds(m.cpen, m.cpen.in_channels_s1(task), input, input));
    } else {
        r.add("cpen_s2", cost::cpen_mult_adds(m.cpen, m.cpen.in_channels_s2(task), input, input));
        r.add("denoiser_x" + std::to_string(T), static_cast<int64_t>(T) * cost::denoiser_mult_adds(m.denoiser, prior));
    }
    auto dm = cost::dirformer_mult_adds(m.dirformer, prior, in_ch, input, input);
    r.add("dirformer.attention", dm.attention);
    r.add("dirformer.blocks", dm.blocks_rest);
    r.add("dirformer.plumbing", dm.plumbing);
    return r;
}

}  // namespace diffir
