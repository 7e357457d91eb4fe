#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "diffir/pipeline.hpp"
#include "toy_config.hpp"

using namespace diffir;
namespace fs = std::filesystem;

namespace {

SplitDataset toy_data(const ExperimentConfig& cfg) { return load_split(cfg); }

bool same_params(const nn::ParamMap& a, const nn::ParamMap& b) {
    if (a.entries.size() != b.entries.size()) return false;
    for (size_t i = 0; i < a.entries.size(); ++i)
        if (a.entries[i].second->value.data != b.entries[i].second->value.data) return false;
    return true;
}

// A briefly trained stage-1 snapshot. Stage 2 always starts from a trained
// DiffIR_S1; an untrained one still has the zero output conv, which blocks
// any restoration-loss gradient from reaching the upstream networks.
Checkpoint make_s1_ckpt(const ExperimentConfig& cfg, const NoiseSchedule& sched, const Dataset& train_set,
                        int steps = 8) {
    ExperimentConfig c1 = cfg;
    c1.train.stage = Stage::s1;
    c1.train.steps = steps;
    System s1 = System::build_stage1(cfg.model, cfg.task, sched, cfg.seed);
    auto r = pretrain_stage1(c1, s1, train_set);
    Checkpoint ck = r.checkpoint;
    ck.schedule_t = sched.T;
    ck.beta_start = cfg.schedule.beta_start;
    ck.beta_end = cfg.schedule.beta_end;
    return ck;
}

}  // namespace

TEST_CASE("one Adam step on a quadratic bowl matches the closed form") {
    // L(w) = 0.5 * sum w^2, grad = w
    nn::ParamMap pm;
    auto w = ag::param(Tensor({3}, {0.7, -1.3, 2.1}));
    pm.add("w", w);
    double lr = 1e-3, b1 = 0.9, b2 = 0.99, eps = 1e-8;
    Adam opt(pm, lr, b1, b2, eps);

    Tensor w0 = w->value;
    auto loss = ag::scale(ag::mse_mean(w, ag::constant(Tensor::zeros({3}))), 1.5);  // = 0.5*sum w^2
    ag::backward(loss);
    opt.step();

    for (int64_t i = 0; i < 3; ++i) {
        double g = w0[i];  // analytic gradient of 0.5*sum w^2
        double m = (1 - b1) * g, v = (1 - b2) * g * g;
        double mhat = m / (1 - b1), vhat = v / (1 - b2);
        double want = w0[i] - lr * mhat / (std::sqrt(vhat) + eps);
        CHECK(std::abs(w->value[i] - want) <= 1e-12);
    }
}

TEST_CASE("two identically seeded runs produce bit-identical checkpoints") {
    auto cfg = testcfg::toy_inpainting("");
    cfg.train.steps = 6;
    auto sched = make_schedule(cfg.schedule.t, cfg.schedule.beta_start, cfg.schedule.beta_end);
    auto data = toy_data(cfg);

    System a = System::build_stage1(cfg.model, cfg.task, sched, cfg.seed);
    System b = System::build_stage1(cfg.model, cfg.task, sched, cfg.seed);
    auto ra = pretrain_stage1(cfg, a, data.train);
    auto rb = pretrain_stage1(cfg, b, data.train);
    REQUIRE(ra.checkpoint.tensors.size() == rb.checkpoint.tensors.size());
    for (size_t i = 0; i < ra.checkpoint.tensors.size(); ++i)
        CHECK(ra.checkpoint.tensors[i].second.data == rb.checkpoint.tensors[i].second.data);
    for (size_t i = 0; i < ra.history.size(); ++i) CHECK(ra.history[i].l_all == rb.history[i].l_all);
}

TEST_CASE("zero steps leaves the checkpoint at initialization") {
    auto cfg = testcfg::toy_inpainting("");
    cfg.train.steps = 0;
    auto sched = make_schedule(cfg.schedule.t, cfg.schedule.beta_start, cfg.schedule.beta_end);
    auto data = toy_data(cfg);
    System sys = System::build_stage1(cfg.model, cfg.task, sched, cfg.seed);
    Checkpoint before = Checkpoint::from_params(sys.checkpoint_params(Stage::s1));
    auto r = pretrain_stage1(cfg, sys, data.train);
    REQUIRE(r.checkpoint.tensors.size() == before.tensors.size());
    for (size_t i = 0; i < before.tensors.size(); ++i)
        CHECK(r.checkpoint.tensors[i].second.data == before.tensors[i].second.data);
}

TEST_CASE("stage-1 smoke: windowed loss decreases") {
    auto cfg = testcfg::toy_inpainting("");
    cfg.train.steps = 60;
    auto sched = make_schedule(cfg.schedule.t, cfg.schedule.beta_start, cfg.schedule.beta_end);
    auto data = toy_data(cfg);
    System sys = System::build_stage1(cfg.model, cfg.task, sched, cfg.seed);
    auto r = pretrain_stage1(cfg, sys, data.train);
    double head = windowed_mean(r.history, 0, 20, &LossReport::l_rec);
    double tail = windowed_mean(r.history, r.history.size() - 20, 20, &LossReport::l_rec);
    CHECK(tail < head);
}

TEST_CASE("mode isolation: the updated parameter sets are exactly as specified") {
    auto cfg = testcfg::toy_inpainting("");
    cfg.train.stage = Stage::s2;
    cfg.train.steps = 4;
    auto sched = make_schedule(cfg.schedule.t, cfg.schedule.beta_start, cfg.schedule.beta_end);
    auto data = toy_data(cfg);
    auto ck = make_s1_ckpt(cfg, sched, data.train);

    auto run_mode = [&](Mode m) {
        ExperimentConfig c = cfg;
        c.train.mode = m;
        System sys = System::build_stage2(c.model, c.task, sched, c.seed, ck);
        System ref = System::build_stage2(c.model, c.task, sched, c.seed, ck);
        train_stage2(c, sys, data.train);
        struct Delta {
            bool cpen_s1, cpen_s2, denoiser, dirformer;
        } d;
        d.cpen_s1 = !same_params(sys.pm_cpen_s1, ref.pm_cpen_s1);
        d.cpen_s2 = !same_params(sys.pm_cpen_s2, ref.pm_cpen_s2);
        d.denoiser = !same_params(sys.pm_denoiser, ref.pm_denoiser);
        d.dirformer = !same_params(sys.pm_dirformer, ref.pm_dirformer);
        return d;
    };

    auto v1 = run_mode(Mode::v1_no_dm);
    CHECK_FALSE(v1.cpen_s1);
    CHECK(v1.cpen_s2);
    CHECK_FALSE(v1.denoiser);
    CHECK(v1.dirformer);

    auto v2 = run_mode(Mode::v2_traditional);
    CHECK_FALSE(v2.cpen_s1);
    CHECK(v2.cpen_s2);
    CHECK(v2.denoiser);
    CHECK_FALSE(v2.dirformer);  // DIRformer bit-unchanged under traditional DM optimization

    auto v3 = run_mode(Mode::v3_joint);
    CHECK_FALSE(v3.cpen_s1);  // frozen
    CHECK(v3.cpen_s2);
    CHECK(v3.denoiser);
    CHECK(v3.dirformer);

    auto v4 = run_mode(Mode::v4_joint_noise);
    CHECK_FALSE(v4.cpen_s1);
    CHECK(v4.cpen_s2);
    CHECK(v4.denoiser);
    CHECK(v4.dirformer);
}

TEST_CASE("joint optimization: restoration loss alone reaches the denoiser") {
    auto cfg = testcfg::toy_inpainting("");
    cfg.train.stage = Stage::s2;
    cfg.train.mode = Mode::v3_joint;
    auto sched = make_schedule(cfg.schedule.t, cfg.schedule.beta_start, cfg.schedule.beta_end);
    auto data = toy_data(cfg);
    auto ck = make_s1_ckpt(cfg, sched, data.train);
    System sys = System::build_stage2(cfg.model, cfg.task, sched, cfg.seed, ck);

    // build the v3 graph but propagate only L_rec (L_diff zeroed out)
    std::vector<ModelSample> batch;
    batch.push_back(prepare_sample(cfg.task, data.train.pairs[0]));
    Rng noise(Rng::derive(cfg.seed, 203));
    const auto& sc = sys.sched;
    auto z = cpen_forward_pair(sys.cpen_s1, batch[0]);
    Tensor eps({sys.mc.cpen.prior_dim()});
    for (auto& v : eps.data) v = noise.normal();
    auto z_T = ag::add(ag::scale(z, std::sqrt(sc.alpha_bar(sc.T))),
                       ag::scale(ag::constant(eps), std::sqrt(1.0 - sc.alpha_bar(sc.T))));
    auto d = sys.cpen_s2.forward(ag::constant(batch[0].model_in));
    auto z_hat = reverse_chain(sys, z_T, d, false, true, &noise);
    auto img = restore_image(sys, batch[0], z_hat);
    auto l_rec_only = ag::l1_mean(img, ag::constant(batch[0].gt_rgb));

    sys.pm_denoiser.zero_grad();
    sys.pm_cpen_s2.zero_grad();
    ag::backward(l_rec_only);
    CHECK(sys.pm_denoiser.grad_norm() > 0.0);
    CHECK(sys.pm_cpen_s2.grad_norm() > 0.0);
}

TEST_CASE("v3 smoke: windowed L_diff decreases") {
    auto cfg = testcfg::toy_inpainting("");
    cfg.train.stage = Stage::s2;
    cfg.train.mode = Mode::v3_joint;
    cfg.train.steps = 60;
    auto sched = make_schedule(cfg.schedule.t, cfg.schedule.beta_start, cfg.schedule.beta_end);
    auto data = toy_data(cfg);
    auto ck = make_s1_ckpt(cfg, sched, data.train);
    System sys = System::build_stage2(cfg.model, cfg.task, sched, cfg.seed, ck);
    auto r = train_stage2(cfg, sys, data.train);
    double head = windowed_mean(r.history, 0, 20, &LossReport::l_diff);
    double tail = windowed_mean(r.history, r.history.size() - 20, 20, &LossReport::l_diff);
    CHECK(tail < head);
}

TEST_CASE("backprop_through_reverse=false cuts the chain to the final step") {
    auto cfg = testcfg::toy_inpainting("");
    cfg.train.stage = Stage::s2;
    cfg.train.mode = Mode::v3_joint;
    cfg.train.backprop_through_reverse = false;
    cfg.train.steps = 2;
    auto sched = make_schedule(cfg.schedule.t, cfg.schedule.beta_start, cfg.schedule.beta_end);
    auto data = toy_data(cfg);
    auto ck = make_s1_ckpt(cfg, sched, data.train);
    System sys = System::build_stage2(cfg.model, cfg.task, sched, cfg.seed, ck);
    auto r = train_stage2(cfg, sys, data.train);  // must run without errors
    CHECK(r.history.size() == 2);
    CHECK(std::isfinite(r.history.back().l_all));
}

TEST_CASE("stage mismatches and missing inputs are rejected") {
    auto cfg = testcfg::toy_inpainting("");
    auto sched = make_schedule(cfg.schedule.t, cfg.schedule.beta_start, cfg.schedule.beta_end);
    auto data = toy_data(cfg);
    System s1 = System::build_stage1(cfg.model, cfg.task, sched, cfg.seed);

    ExperimentConfig c2 = cfg;
    c2.train.stage = Stage::s2;
    CHECK_THROWS_AS(train_stage2(c2, s1, data.train), std::invalid_argument);  // no s2 nets
    CHECK_THROWS_AS(pretrain_stage1(c2, s1, data.train), std::invalid_argument);  // wrong stage tag

    Dataset empty;
    CHECK_THROWS_AS(pretrain_stage1(cfg, s1, empty), std::invalid_argument);
}

TEST_CASE("non-finite loss aborts with a numeric error") {
    auto cfg = testcfg::toy_inpainting("");
    cfg.train.steps = 1;
    auto sched = make_schedule(cfg.schedule.t, cfg.schedule.beta_start, cfg.schedule.beta_end);
    auto data = toy_data(cfg);
    System sys = System::build_stage1(cfg.model, cfg.task, sched, cfg.seed);
    // poison one weight
    sys.pm_dirformer.entries[0].second->value[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(pretrain_stage1(cfg, sys, data.train), NumericError);
}

TEST_CASE("v2 epsilon objective decreases on a short run") {
    auto cfg = testcfg::toy_inpainting("");
    cfg.train.stage = Stage::s2;
    cfg.train.mode = Mode::v2_traditional;
    cfg.train.steps = 80;
    cfg.train.lr = 2e-3;
    auto sched = make_schedule(cfg.schedule.t, cfg.schedule.beta_start, cfg.schedule.beta_end);
    auto data = toy_data(cfg);
    auto ck = make_s1_ckpt(cfg, sched, data.train);
    System sys = System::build_stage2(cfg.model, cfg.task, sched, cfg.seed, ck);
    auto r = train_stage2(cfg, sys, data.train);
    double head = windowed_mean(r.history, 0, 20, &LossReport::l_diff);
    double tail = windowed_mean(r.history, r.history.size() - 20, 20, &LossReport::l_diff);
    CHECK(tail < head);
}
