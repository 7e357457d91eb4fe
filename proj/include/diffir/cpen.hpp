#pragma once

#include <string>
#include <vector>

#include "diffir/config.hpp"
#include "diffir/nn.hpp"
#include "diffir/schedule.hpp"

namespace diffir {

// Compact prior extraction network. The S1 variant consumes Concat(GT, LQ),
// the S2 variant consumes LQ only; the two share every layer shape except the
// input width of the first convolution.
struct Cpen {
    CpenConfig cfg;
    int in_channels = 0;
    nn::Conv2d stem;   // 1x1, the S1/S2-dependent layer
    nn::Conv2d entry;  // 3x3 to trunk width
    struct ResBlock {
        nn::Conv2d c1, c2;
    };
    std::vector<ResBlock> blocks;       // flattened over stages
    std::vector<nn::Conv2d> downs;      // stride-2 between stages
    nn::Linear head1, head2;

    void init(Rng& rng, const CpenConfig& c, int in_ch) {
        cfg = c;
        in_channels = in_ch;
        stem.init(rng, in_ch, c.stem_width, 1, 1, 0);
        entry.init(rng, c.stem_width, c.width, 3);
        int nb = c.num_res_blocks();
        blocks.resize(static_cast<size_t>(nb));
        for (auto& b : blocks) {
            b.c1.init(rng, c.width, c.width, 3);
            b.c2.init(rng, c.width, c.width, 3);
        }
        downs.resize(c.stage_blocks.size() - 1);
        for (auto& d : downs) d.init(rng, c.width, c.width, 3, 2);
        head1.init(rng, c.width, c.head_hidden);
        head2.init(rng, c.head_hidden, c.prior_dim());
    }

    ag::Var forward(const ag::Var& img) const {
        int r = cfg.unshuffle_factor;
        if (img->value.dim(2) * r * r != in_channels)
            throw std::invalid_argument("cpen: input has wrong channel count");
        auto x = ag::pixel_unshuffle(img, r);
        x = ag::leaky_relu(stem(x));
        x = ag::leaky_relu(entry(x));
        size_t bi = 0;
        for (size_t s = 0; s < cfg.stage_blocks.size(); ++s) {
            for (int i = 0; i < cfg.stage_blocks[s]; ++i, ++bi) {
                const auto& b = blocks[bi];
                x = ag::add(x, b.c2(ag::leaky_relu(b.c1(x))));
            }
            if (s + 1 < cfg.stage_blocks.size()) x = ag::leaky_relu(downs[s](x));
        }
        auto v = ag::global_avg_pool(x);
        return head2(ag::leaky_relu(head1(v)));
    }

    void reg(nn::ParamMap& pm, const std::string& name) const {
        stem.reg(pm, name + ".stem");
        entry.reg(pm, name + ".entry");
        for (size_t i = 0; i < blocks.size(); ++i) {
            blocks[i].c1.reg(pm, name + ".block" + std::to_string(i) + ".c1");
            blocks[i].c2.reg(pm, name + ".block" + std::to_string(i) + ".c2");
        }
        for (size_t i = 0; i < downs.size(); ++i) downs[i].reg(pm, name + ".down" + std::to_string(i));
        head1.reg(pm, name + ".head1");
        head2.reg(pm, name + ".head2");
    }
};

// Eq.-(5)-style extraction: Z = CPEN_S1(PixelUnshuffle(Concat(I_GT, I_LQ))).
inline IPRVector cpen_s1_forward(const Cpen& net, const Tensor& i_gt, const Tensor& i_lq) {
    require_same_shape(i_gt, i_lq, "cpen_s1_forward");
    auto cat = ag::concat_channels(ag::constant(i_gt), ag::constant(i_lq));
    auto z = net.forward(cat);
    IPRVector out;
    out.timestep = 0;
    out.values = z->value.data;
    return out;
}

inline std::vector<double> cpen_s2_forward(const Cpen& net, const Tensor& i_lq) {
    auto d = net.forward(ag::constant(i_lq));
    return d->value.data;
}

}  // namespace diffir
