#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "diffir/adam.hpp"
#include "diffir/checkpoint.hpp"
#include "diffir/cpen.hpp"
#include "diffir/data.hpp"
#include "diffir/denoiser.hpp"
#include "diffir/dirformer.hpp"
#include "diffir/json_io.hpp"
#include "diffir/losses.hpp"
#include "diffir/metrics.hpp"

namespace diffir {

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

// Everything the restorer consumes for one sample, in model space. For SR the
// LQ is bicubic-upsampled to GT size first; for inpainting the mask rides
// along as a fourth channel on both the LQ and the GT view.
struct ModelSample {
    Tensor model_in;  // (H,W,Cin)
    Tensor gt_model;  // (H,W,Cin), GT content with the same extra channels
    Tensor gt_rgb;    // (H,W,3)
    Tensor lq_rgb;    // (H,W,3), base of the global residual
    std::optional<Tensor> mask;
};

inline ModelSample prepare_sample(Task task, const ImagePair& p) {
    ModelSample s;
    s.gt_rgb = p.i_gt;
    if (task == Task::sr) {
        s.lq_rgb = resize_bicubic(p.i_lq, p.i_gt.dim(0), p.i_gt.dim(1));
        clamp01(s.lq_rgb);
    } else {
        s.lq_rgb = p.i_lq;
    }
    if (task == Task::inpainting) {
        if (!p.mask) throw std::invalid_argument("prepare_sample: inpainting pair lacks a mask");
        s.mask = *p.mask;
        int64_t h = s.gt_rgb.dim(0), w = s.gt_rgb.dim(1);
        s.model_in = Tensor({h, w, 4});
        s.gt_model = Tensor({h, w, 4});
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                for (int64_t c = 0; c < 3; ++c) {
                    s.model_in.at3(y, x, c) = s.lq_rgb.at3(y, x, c);
                    s.gt_model.at3(y, x, c) = s.gt_rgb.at3(y, x, c);
                }
                s.model_in.at3(y, x, 3) = s.mask->at3(y, x, 0);
                s.gt_model.at3(y, x, 3) = s.mask->at3(y, x, 0);
            }
    } else {
        s.model_in = s.lq_rgb;
        s.gt_model = s.gt_rgb;
    }
    return s;
}

// The four networks plus the parameter registries used for checkpointing,
// optimizer group selection and freezing.
struct System {
    Task task = Task::inpainting;
    ModelConfig mc;
    NoiseSchedule sched;
    bool has_s2 = false;

    Cpen cpen_s1, cpen_s2;
    Dirformer dirformer;
    Denoiser denoiser;

    nn::ParamMap pm_cpen_s1, pm_cpen_s2, pm_dirformer, pm_denoiser;

    static System build_stage1(const ModelConfig& mc, Task task, const NoiseSchedule& sched, uint64_t seed) {
        System s;
        s.task = task;
        s.mc = mc;
        s.sched = sched;
        Rng r1(Rng::derive(seed, 101)), r2(Rng::derive(seed, 102));
        s.cpen_s1.init(r1, mc.cpen, mc.cpen.in_channels_s1(task));
        s.dirformer.init(r2, mc.dirformer, mc.cpen.prior_dim(), model_image_channels(task));
        s.cpen_s1.reg(s.pm_cpen_s1, "cpen_s1");
        s.dirformer.reg(s.pm_dirformer, "dirformer");
        return s;
    }

    // Stage-2 init per the training algorithm: DIRformer and CPEN_S1 copy the
    // stage-1 weights (CPEN_S1 frozen), CPEN_S2 warm-starts from CPEN_S1
    // except its first convolution, the denoiser starts fresh.
    static System build_stage2(const ModelConfig& mc, Task task, const NoiseSchedule& sched, uint64_t seed,
                               const Checkpoint& s1_ckpt) {
        System s = build_stage1(mc, task, sched, seed);
        s1_ckpt.apply_to(s.pm_cpen_s1);
        s1_ckpt.apply_to(s.pm_dirformer);
        s.pm_cpen_s1.set_requires_grad(false);

        s.has_s2 = true;
        Rng r3(Rng::derive(seed, 103)), r4(Rng::derive(seed, 104));
        s.cpen_s2.init(r3, mc.cpen, mc.cpen.in_channels_s2(task));
        s.denoiser.init(r4, mc.denoiser, mc.cpen.prior_dim(), sched.T);
        s.cpen_s2.reg(s.pm_cpen_s2, "cpen_s2");
        s.denoiser.reg(s.pm_denoiser, "denoiser");
        for (const auto& [name, var] : s.pm_cpen_s2.entries) {
            if (name.find(".stem.") != std::string::npos) continue;  // fresh first conv
            std::string s1_name = "cpen_s1" + name.substr(std::string("cpen_s2").size());
            auto src = s.pm_cpen_s1.find(s1_name);
            if (!src) throw CheckpointError("warm start: missing " + s1_name);
            var->value.data = src->value.data;
        }
        return s;
    }

    // Rebuild a full system from a checkpoint (stage 2), or stage 1 only.
    static System restore(const Checkpoint& ckpt, const ModelConfig& mc, Task task) {
        NoiseSchedule sched = make_schedule(ckpt.schedule_t, ckpt.beta_start, ckpt.beta_end);
        System s = build_stage1(mc, task, sched, ckpt.seed);
        ckpt.apply_to(s.pm_cpen_s1);
        ckpt.apply_to(s.pm_dirformer);
        if (ckpt.stage == Stage::s2) {
            s.has_s2 = true;
            Rng r3(Rng::derive(ckpt.seed, 103)), r4(Rng::derive(ckpt.seed, 104));
            s.cpen_s2.init(r3, mc.cpen, mc.cpen.in_channels_s2(task));
            s.denoiser.init(r4, mc.denoiser, mc.cpen.prior_dim(), sched.T);
            s.cpen_s2.reg(s.pm_cpen_s2, "cpen_s2");
            s.denoiser.reg(s.pm_denoiser, "denoiser");
            ckpt.apply_to(s.pm_cpen_s2);
            ckpt.apply_to(s.pm_denoiser);
        }
        return s;
    }

    nn::ParamMap checkpoint_params(Stage stage) const {
        nn::ParamMap pm;
        for (const auto& e : pm_cpen_s1.entries) pm.add(e.first, e.second);
        if (stage == Stage::s2) {
            for (const auto& e : pm_cpen_s2.entries) pm.add(e.first, e.second);
            for (const auto& e : pm_denoiser.entries) pm.add(e.first, e.second);
        }
        for (const auto& e : pm_dirformer.entries) pm.add(e.first, e.second);
        return pm;
    }

    // Parameter groups the optimizer updates, per stage/mode.
    nn::ParamMap trainable_params(Stage stage, Mode mode) const {
        nn::ParamMap pm;
        auto add_all = [&pm](const nn::ParamMap& src) {
            for (const auto& e : src.entries) pm.add(e.first, e.second);
        };
        if (stage == Stage::s1) {
            add_all(pm_cpen_s1);
            add_all(pm_dirformer);
            return pm;
        }
        switch (mode) {
            case Mode::v1_no_dm:
                add_all(pm_cpen_s2);
                add_all(pm_dirformer);
                break;
            case Mode::v2_traditional:
                add_all(pm_cpen_s2);
                add_all(pm_denoiser);
                break;
            case Mode::v3_joint:
            case Mode::v4_joint_noise:
                add_all(pm_cpen_s2);
                add_all(pm_denoiser);
                add_all(pm_dirformer);
                break;
        }
        return pm;
    }
};

// restored image graph for one sample (composites known pixels for inpainting)
inline ag::Var restore_image(const System& sys, const ModelSample& s, const ag::Var& z) {
    auto img = sys.dirformer.forward(s.model_in, z);
    if (s.mask) img = ag::composite_masked(img, s.lq_rgb, *s.mask);
    return img;
}

// ---- per-batch loss graphs ----

struct StepLosses {
    ag::Var total;    // optimized scalar
    double l_rec = 0.0;
    double l_diff = 0.0;
};

inline ag::Var cpen_forward_pair(const Cpen& net, const ModelSample& s) {
    return net.forward(ag::concat_channels(ag::constant(s.gt_model), ag::constant(s.model_in)));
}

// stage 1: Z from CPEN_S1(GT, LQ) modulates DIRformer; L_rec only
inline StepLosses stage1_batch_loss(const System& sys, const std::vector<ModelSample>& batch) {
    ag::Var acc;
    for (const auto& s : batch) {
        auto z = cpen_forward_pair(sys.cpen_s1, s);
        auto img = restore_image(sys, s, z);
        auto l = ag::l1_mean(img, ag::constant(s.gt_rgb));
        acc = acc ? ag::add(acc, l) : l;
    }
    StepLosses out;
    out.total = ag::scale(acc, 1.0 / static_cast<double>(batch.size()));
    out.l_rec = out.total->value[0];
    out.l_diff = 0.0;
    return out;
}

// deterministic (or stochastic, for v4) reverse chain in the autodiff graph
inline ag::Var reverse_chain(const System& sys, ag::Var z_t, const ag::Var& d, bool stochastic, bool full_backprop,
                             Rng* rng) {
    const auto& sc = sys.sched;
    for (int t = sc.T; t >= 1; --t) {
        auto eps_hat = sys.denoiser.forward(z_t, t, d);
        z_t = ag::scale(ag::sub(z_t, ag::scale(eps_hat, sc.eps_coef(t))), sc.recip_sqrt_alpha(t));
        if (stochastic) {
            double sigma = std::sqrt(sc.posterior_var(t));
            Tensor xi({z_t->value.numel()});
            for (auto& v : xi.data) v = sigma * rng->normal();
            z_t = ag::add(z_t, ag::constant(xi));
        }
        if (!full_backprop && t > 1) z_t = ag::detach(z_t);
    }
    return z_t;
}

// stage 2 in all four ablation modes
inline StepLosses stage2_batch_loss(const System& sys, const std::vector<ModelSample>& batch, Mode mode,
                                    bool full_backprop, Rng& noise_rng) {
    const auto& sc = sys.sched;
    int64_t prior = sys.mc.cpen.prior_dim();
    ag::Var acc;
    double rec_sum = 0.0, diff_sum = 0.0;
    for (const auto& s : batch) {
        ag::Var sample_loss;
        if (mode == Mode::v1_no_dm) {
            auto d = sys.cpen_s2.forward(ag::constant(s.model_in));
            auto img = restore_image(sys, s, d);
            auto l = ag::l1_mean(img, ag::constant(s.gt_rgb));
            rec_sum += l->value[0];
            sample_loss = l;
        } else if (mode == Mode::v2_traditional) {
            // random-timestep epsilon objective; DIRformer stays out of the graph
            auto z = cpen_forward_pair(sys.cpen_s1, s);  // frozen, no grads flow
            int t = static_cast<int>(noise_rng.uniform_int(1, sc.T));
            Tensor eps({prior});
            for (auto& v : eps.data) v = noise_rng.normal();
            auto z_t = ag::add(ag::scale(z, std::sqrt(sc.alpha_bar(t))),
                               ag::scale(ag::constant(eps), std::sqrt(1.0 - sc.alpha_bar(t))));
            auto d = sys.cpen_s2.forward(ag::constant(s.model_in));
            auto eps_hat = sys.denoiser.forward(z_t, t, d);
            auto l = ag::mse_mean(eps_hat, ag::constant(eps));
            diff_sum += l->value[0];
            sample_loss = l;
        } else {
            // v3 joint (and v4 with injected reverse noise): full diffusion +
            // reverse chain + restoration, L_all = L_rec + L_diff
            auto z = cpen_forward_pair(sys.cpen_s1, s);  // frozen target
            Tensor eps({prior});
            for (auto& v : eps.data) v = noise_rng.normal();
            auto z_T = ag::add(ag::scale(z, std::sqrt(sc.alpha_bar(sc.T))),
                               ag::scale(ag::constant(eps), std::sqrt(1.0 - sc.alpha_bar(sc.T))));
            auto d = sys.cpen_s2.forward(ag::constant(s.model_in));
            auto z_hat = reverse_chain(sys, z_T, d, mode == Mode::v4_joint_noise, full_backprop, &noise_rng);
            auto img = restore_image(sys, s, z_hat);
            auto lr = ag::l1_mean(img, ag::constant(s.gt_rgb));
            auto ld = ag::l1_mean(z_hat, z);
            rec_sum += lr->value[0];
            diff_sum += ld->value[0];
            sample_loss = ag::add(lr, ld);
        }
        acc = acc ? ag::add(acc, sample_loss) : sample_loss;
    }
    StepLosses out;
    out.total = ag::scale(acc, 1.0 / static_cast<double>(batch.size()));
    out.l_rec = rec_sum / static_cast<double>(batch.size());
    out.l_diff = diff_sum / static_cast<double>(batch.size());
    return out;
}

// ---- training loops ----

struct TrainResult {
    std::vector<LossReport> history;  // one row per step
    Checkpoint checkpoint;
};

using StepCallback = std::function<void(int64_t step, const LossReport&, double wall_ms)>;

inline LossReport to_report(const StepLosses& l) {
    LossReport r;
    r.l_rec = l.l_rec;
    r.l_diff = l.l_diff;
    r.l_all = l.total->value[0];
    return r;
}

inline void check_finite_loss(const StepLosses& l, int64_t step) {
    if (!std::isfinite(l.total->value[0]) || !std::isfinite(l.l_rec) || !std::isfinite(l.l_diff))
        throw NumericError("non-finite loss at step " + std::to_string(step));
}

// Stage-1 pretraining: CPEN_S1 + DIRformer end to end on L_rec.
inline TrainResult pretrain_stage1(const ExperimentConfig& cfg, System& sys, const Dataset& train_set,
                                   const StepCallback& on_step = nullptr) {
    if (cfg.train.stage != Stage::s1) throw std::invalid_argument("pretrain_stage1: config stage is not s1");
    if (train_set.size() == 0) throw std::invalid_argument("pretrain_stage1: empty dataset");
    auto params = sys.trainable_params(Stage::s1, cfg.train.mode);
    Adam opt(params, cfg.train.lr, cfg.train.adam_beta1, cfg.train.adam_beta2);
    BatchIter iter(train_set, cfg.train.batch_size, cfg.train.patch_size, Rng::derive(cfg.seed, 201));

    TrainResult res;
    for (int64_t step = 0; step < cfg.train.steps; ++step) {
        auto t0 = std::chrono::steady_clock::now();
        auto pairs = iter.next();
        std::vector<ModelSample> batch;
        batch.reserve(pairs.size());
        for (const auto& p : pairs) batch.push_back(prepare_sample(cfg.task, p));
        opt.zero_grad();
        auto losses = stage1_batch_loss(sys, batch);
        check_finite_loss(losses, step);
        ag::backward(losses.total);
        opt.step();
        auto rep = to_report(losses);
        res.history.push_back(rep);
        if (on_step) {
            double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            on_step(step, rep, ms);
        }
    }
    res.checkpoint = Checkpoint::from_params(sys.checkpoint_params(Stage::s1));
    res.checkpoint.stage = Stage::s1;
    res.checkpoint.mode = cfg.train.mode;
    res.checkpoint.seed = cfg.seed;
    res.checkpoint.step = cfg.train.steps;
    res.checkpoint.schedule_t = cfg.schedule.t;
    res.checkpoint.beta_start = cfg.schedule.beta_start;
    res.checkpoint.beta_end = cfg.schedule.beta_end;
    res.checkpoint.config = to_json(cfg);
    return res;
}

// Stage-2 training in the requested ablation mode.
inline TrainResult train_stage2(const ExperimentConfig& cfg, System& sys, const Dataset& train_set,
                                const StepCallback& on_step = nullptr) {
    if (cfg.train.stage != Stage::s2) throw std::invalid_argument("train_stage2: config stage is not s2");
    if (train_set.size() == 0) throw std::invalid_argument("train_stage2: empty dataset");
    if (!sys.has_s2) throw std::invalid_argument("train_stage2: system was not built from a stage-1 checkpoint");
    auto params = sys.trainable_params(Stage::s2, cfg.train.mode);
    Adam opt(params, cfg.train.lr, cfg.train.adam_beta1, cfg.train.adam_beta2);
    BatchIter iter(train_set, cfg.train.batch_size, cfg.train.patch_size, Rng::derive(cfg.seed, 202));
    Rng noise_rng(Rng::derive(cfg.seed, 203));

    TrainResult res;
    for (int64_t step = 0; step < cfg.train.steps; ++step) {
        auto t0 = std::chrono::steady_clock::now();
        auto pairs = iter.next();
        std::vector<ModelSample> batch;
        batch.reserve(pairs.size());
        for (const auto& p : pairs) batch.push_back(prepare_sample(cfg.task, p));
        opt.zero_grad();
        auto losses = stage2_batch_loss(sys, batch, cfg.train.mode, cfg.train.backprop_through_reverse, noise_rng);
        check_finite_loss(losses, step);
        ag::backward(losses.total);
        opt.step();
        auto rep = to_report(losses);
        res.history.push_back(rep);
        if (on_step) {
            double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            on_step(step, rep, ms);
        }
    }
    res.checkpoint = Checkpoint::from_params(sys.checkpoint_params(Stage::s2));
    res.checkpoint.stage = Stage::s2;
    res.checkpoint.mode = cfg.train.mode;
    res.checkpoint.seed = cfg.seed;
    res.checkpoint.step = cfg.train.steps;
    res.checkpoint.schedule_t = cfg.schedule.t;
    res.checkpoint.beta_start = cfg.schedule.beta_start;
    res.checkpoint.beta_end = cfg.schedule.beta_end;
    res.checkpoint.config = to_json(cfg);
    return res;
}

// ---- evaluation ----

struct EvalRow {
    double psnr_restored = 0.0;
    double ssim_restored = 0.0;
    double psnr_baseline = 0.0;
};

// Restores one pair with the networks appropriate for the checkpointed stage/
// mode. S1 uses the GT-conditioned prior (the training-time oracle); S2 draws
// the prior from the diffusion sampler, except mode v1 which conditions
// directly on CPEN_S2.
inline Tensor restore_pair(const System& sys, Stage stage, Mode mode, const ImagePair& pair, Rng& rng) {
    auto s = prepare_sample(sys.task, pair);
    ag::Var z;
    if (stage == Stage::s1) {
        z = cpen_forward_pair(sys.cpen_s1, s);
    } else if (mode == Mode::v1_no_dm) {
        z = sys.cpen_s2.forward(ag::constant(s.model_in));
    } else {
        auto ipr = sample_ipr(sys.denoiser, sys.cpen_s2, sys.sched, s.model_in, rng);
        z = ag::constant(Tensor({static_cast<int64_t>(ipr.values.size())}, ipr.values));
    }
    auto img = restore_image(sys, s, z);
    Tensor out = img->value;
    clamp01(out);
    return out;
}

inline EvalRow eval_pair(const System& sys, Stage stage, Mode mode, const ImagePair& pair, Rng& rng) {
    auto s = prepare_sample(sys.task, pair);
    Tensor restored = restore_pair(sys, stage, mode, pair, rng);
    EvalRow row;
    row.psnr_restored = psnr(restored, s.gt_rgb);
    row.ssim_restored = s.gt_rgb.dim(0) >= 11 && s.gt_rgb.dim(1) >= 11 ? ssim(restored, s.gt_rgb) : 1.0;
    row.psnr_baseline = psnr(s.lq_rgb, s.gt_rgb);
    return row;
}

// windowed mean of a loss column, for convergence checks
inline double windowed_mean(const std::vector<LossReport>& hist, size_t start, size_t count,
                            double LossReport::* field) {
    double s = 0;
    for (size_t i = start; i < start + count; ++i) s += hist.at(i).*field;
    return s / static_cast<double>(count);
}

}  // namespace diffir
