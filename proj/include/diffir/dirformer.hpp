#pragma once

#include <string>
#include <vector>

#include "diffir/config.hpp"
#include "diffir/nn.hpp"

namespace diffir {

// F' = W1 Z * Norm(F) + W2 Z. Layer norm runs over channels per position
// without learned affine; the affine comes from the prior vector.
struct Modulation {
    nn::Linear w1, w2;

    void init(Rng& rng, int prior_dim, int c) {
        w1.init(rng, prior_dim, c, 1.0);
        // scale path starts near identity
        std::fill(w1.b->value.data.begin(), w1.b->value.data.end(), 1.0);
        w2.init(rng, prior_dim, c, 1.0);
    }
    ag::Var operator()(const ag::Var& f, const ag::Var& z) const {
        return ag::channel_affine(ag::layer_norm_channels(f), w1(z), w2(z));
    }
    void reg(nn::ParamMap& pm, const std::string& name) const {
        w1.reg(pm, name + ".w1");
        w2.reg(pm, name + ".w2");
    }
};

// Dynamic multi-head transposed attention: channel-by-channel attention maps
// of size (C/heads)^2 per head, linear in spatial size.
struct Dmta {
    Modulation mod;
    nn::Conv2d qc, kc, vc, out;  // 1x1 point-wise
    nn::DwConv2d qd, kd, vd;     // 3x3 depth-wise
    ag::Var gamma;               // one learnable temperature per attention layer
    int heads = 1;

    void init(Rng& rng, int prior_dim, int c, int heads_, double gamma_init) {
        heads = heads_;
        if (c % heads != 0) throw std::invalid_argument("dmta: channels not divisible by heads");
        mod.init(rng, prior_dim, c);
        qc.init(rng, c, c, 1, 1, 0);
        kc.init(rng, c, c, 1, 1, 0);
        vc.init(rng, c, c, 1, 1, 0);
        qd.init(rng, c, 3);
        kd.init(rng, c, 3);
        vd.init(rng, c, 3);
        out.init(rng, c, c, 1, 1, 0);
        gamma = ag::param(Tensor::scalar(gamma_init));
    }

    ag::Var operator()(const ag::Var& f, const ag::Var& z) const {
        int64_t h = f->value.dim(0), w = f->value.dim(1), c = f->value.dim(2);
        auto f2 = mod(f, z);
        auto q = ag::reshape(qd(qc(f2)), {h * w, c});
        auto k = ag::reshape(kd(kc(f2)), {h * w, c});
        auto v = ag::reshape(vd(vc(f2)), {h * w, c});
        int64_t ch = c / heads;
        std::vector<ag::Var> parts;
        parts.reserve(static_cast<size_t>(heads));
        for (int hd = 0; hd < heads; ++hd) {
            auto qh = ag::slice_cols(q, hd * ch, (hd + 1) * ch);
            auto kh = ag::slice_cols(k, hd * ch, (hd + 1) * ch);
            auto vh = ag::slice_cols(v, hd * ch, (hd + 1) * ch);
            // att(r, i): weight of value-channel i for output channel r;
            // softmax normalizes over the axis contracted with V.
            auto att = ag::softmax_rows(ag::div_by_scalar_param(ag::matmul_tn(qh, kh), gamma));
            parts.push_back(ag::matmul_nt(vh, att));
        }
        auto o = heads == 1 ? parts[0] : ag::concat_cols(parts);
        return ag::add(out(ag::reshape(o, {h, w, c})), f);
    }

    void reg(nn::ParamMap& pm, const std::string& name) const {
        mod.reg(pm, name + ".mod");
        qc.reg(pm, name + ".qc");
        kc.reg(pm, name + ".kc");
        vc.reg(pm, name + ".vc");
        qd.reg(pm, name + ".qd");
        kd.reg(pm, name + ".kd");
        vd.reg(pm, name + ".vd");
        out.reg(pm, name + ".out");
        pm.add(name + ".gamma", gamma);
    }
};

// Dynamic gated feed-forward network: two 1x1 -> 3x3-depthwise branches,
// GELU gate, residual.
struct Dgfn {
    Modulation mod;
    nn::Conv2d c1, c2;
    nn::DwConv2d d1, d2;

    void init(Rng& rng, int prior_dim, int c) {
        mod.init(rng, prior_dim, c);
        c1.init(rng, c, c, 1, 1, 0);
        c2.init(rng, c, c, 1, 1, 0);
        d1.init(rng, c, 3);
        d2.init(rng, c, 3);
    }
    ag::Var operator()(const ag::Var& f, const ag::Var& z) const {
        auto f2 = mod(f, z);
        return ag::add(ag::mul(ag::gelu(d1(c1(f2))), d2(c2(f2))), f);
    }
    void reg(nn::ParamMap& pm, const std::string& name) const {
        mod.reg(pm, name + ".mod");
        c1.reg(pm, name + ".c1");
        c2.reg(pm, name + ".c2");
        d1.reg(pm, name + ".d1");
        d2.reg(pm, name + ".d2");
    }
};

struct DynamicBlock {
    Dmta attn;
    Dgfn ffn;

    void init(Rng& rng, int prior_dim, int c, int heads, double gamma_init) {
        attn.init(rng, prior_dim, c, heads, gamma_init);
        ffn.init(rng, prior_dim, c);
    }
    ag::Var operator()(const ag::Var& f, const ag::Var& z) const { return ffn(attn(f, z), z); }
    void reg(nn::ParamMap& pm, const std::string& name) const {
        attn.reg(pm, name + ".dmta");
        ffn.reg(pm, name + ".dgfn");
    }
};

// Four-level Unet of dynamic transformer blocks. Levels 1-3 are mirrored
// encoder/decoder, level 4 is the bottleneck. The output conv starts at zero
// so an untrained model is the identity on the LQ input.
struct Dirformer {
    DirformerConfig cfg;
    int prior_dim = 0;
    int in_channels = 0;
    nn::Conv2d embed;
    std::vector<std::vector<DynamicBlock>> enc;  // levels 1..3
    std::vector<nn::Conv2d> down;                // stride-2, c_l -> c_{l+1}
    std::vector<DynamicBlock> latent;            // level 4
    std::vector<nn::Conv2d> up;                  // 1x1 c_{l+1} -> 4 c_l, then pixel shuffle
    std::vector<nn::Conv2d> fuse;                // 1x1 2 c_l -> c_l after skip concat
    std::vector<std::vector<DynamicBlock>> dec;  // levels 3..1 mirrored
    nn::Conv2d out_conv;

    void init(Rng& rng, const DirformerConfig& c, int prior_dim_, int in_ch) {
        c.validate();
        cfg = c;
        prior_dim = prior_dim_;
        in_channels = in_ch;
        embed.init(rng, in_ch, c.channels[0], 3);
        enc.resize(3);
        dec.resize(3);
        down.resize(3);
        up.resize(3);
        fuse.resize(3);
        for (int l = 0; l < 3; ++l) {
            enc[static_cast<size_t>(l)].resize(static_cast<size_t>(c.blocks[static_cast<size_t>(l)]));
            dec[static_cast<size_t>(l)].resize(static_cast<size_t>(c.blocks[static_cast<size_t>(l)]));
            for (auto& b : enc[static_cast<size_t>(l)]) b.init(rng, prior_dim, c.channels[static_cast<size_t>(l)], c.heads[static_cast<size_t>(l)], c.gamma_init);
            for (auto& b : dec[static_cast<size_t>(l)]) b.init(rng, prior_dim, c.channels[static_cast<size_t>(l)], c.heads[static_cast<size_t>(l)], c.gamma_init);
            down[static_cast<size_t>(l)].init(rng, c.channels[static_cast<size_t>(l)], c.channels[static_cast<size_t>(l) + 1], 3, 2);
            up[static_cast<size_t>(l)].init(rng, c.channels[static_cast<size_t>(l) + 1], 4 * c.channels[static_cast<size_t>(l)], 1, 1, 0);
            fuse[static_cast<size_t>(l)].init(rng, 2 * c.channels[static_cast<size_t>(l)], c.channels[static_cast<size_t>(l)], 1, 1, 0);
        }
        latent.resize(static_cast<size_t>(c.blocks[3]));
        for (auto& b : latent) b.init(rng, prior_dim, c.channels[3], c.heads[3], c.gamma_init);
        out_conv.init(rng, c.channels[0], 3, 3, 1, -1, /*zero=*/true);
    }

    // model_img: (H, W, in_channels); first three channels are the LQ RGB the
    // residual is added to. Returns the restored RGB image.
    ag::Var forward(const Tensor& model_img, const ag::Var& z) const {
        if (model_img.rank() != 3 || model_img.dim(2) != in_channels)
            throw std::invalid_argument("dirformer: bad input channel count");
        if (model_img.dim(0) % 8 || model_img.dim(1) % 8)
            throw std::invalid_argument("dirformer: spatial dims must be divisible by 8");
        int64_t h = model_img.dim(0), w = model_img.dim(1);
        Tensor base({h, w, 3});
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                for (int64_t c = 0; c < 3; ++c) base.at3(y, x, c) = model_img.at3(y, x, c);

        auto x = embed(ag::constant(model_img));
        std::vector<ag::Var> skips;
        for (size_t l = 0; l < 3; ++l) {
            for (const auto& b : enc[l]) x = b(x, z);
            skips.push_back(x);
            x = down[l](x);
        }
        for (const auto& b : latent) x = b(x, z);
        for (int l = 2; l >= 0; --l) {
            x = ag::pixel_shuffle(up[static_cast<size_t>(l)](x), 2);
            x = fuse[static_cast<size_t>(l)](ag::concat_channels(x, skips[static_cast<size_t>(l)]));
            for (const auto& b : dec[static_cast<size_t>(l)]) x = b(x, z);
        }
        return ag::add(out_conv(x), ag::constant(base));
    }

    void reg(nn::ParamMap& pm, const std::string& name) const {
        embed.reg(pm, name + ".embed");
        for (size_t l = 0; l < 3; ++l) {
            for (size_t i = 0; i < enc[l].size(); ++i) enc[l][i].reg(pm, name + ".enc" + std::to_string(l + 1) + ".b" + std::to_string(i));
            down[l].reg(pm, name + ".down" + std::to_string(l + 1));
        }
        for (size_t i = 0; i < latent.size(); ++i) latent[i].reg(pm, name + ".latent.b" + std::to_string(i));
        for (size_t l = 0; l < 3; ++l) {
            up[l].reg(pm, name + ".up" + std::to_string(l + 1));
            fuse[l].reg(pm, name + ".fuse" + std::to_string(l + 1));
            for (size_t i = 0; i < dec[l].size(); ++i) dec[l][i].reg(pm, name + ".dec" + std::to_string(l + 1) + ".b" + std::to_string(i));
        }
        out_conv.reg(pm, name + ".out");
    }
};

}  // namespace diffir
