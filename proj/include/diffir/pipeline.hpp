#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "diffir/cost.hpp"
#include "diffir/training.hpp"

namespace diffir {

// Orchestration layer shared by the CLI and the integration tests. Every run
// writes its resolved config, log, checkpoint(s) and a metrics file into the
// output directory; metrics files carry no timing so same-seed reruns are
// byte-identical.

namespace pipeline_detail {

inline std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << text;
}

}  // namespace pipeline_detail

inline void write_resolved_config(const ExperimentConfig& cfg, const std::string& dir) {
    std::filesystem::create_directories(dir);
    pipeline_detail::write_text(dir + "/config.json", to_json(cfg).dump(1, '\t') + "\n");
}

inline const char* metrics_header() {
    return "# psnr: max_val=1, cap=99dB; ssim: window=11, sigma=1.5, k1=0.01, k2=0.03, luma=ITU-R601\n"
           "index\tpsnr\tssim\tpsnr_baseline\n";
}

// GT images per the config: procedural corpus (possibly materialized on disk
// earlier by gen-data) or a user-supplied folder.
inline std::vector<Tensor> load_gt_images(const ExperimentConfig& cfg) {
    if (cfg.data.source == "folder") {
        if (cfg.data.dir.empty()) throw ConfigError("data.source=folder requires data.dir");
        return ingest_folder(cfg.data.dir);
    }
    if (!cfg.data.dir.empty() && std::filesystem::exists(cfg.data.dir + "/index.tsv"))
        return load_corpus_images(cfg.data.dir);
    return gen_corpus(Rng::derive(cfg.seed, 11), cfg.data.n, cfg.data.size);
}

inline DegradeParams degrade_params(const ExperimentConfig& cfg) {
    DegradeParams dp;
    dp.mask_lo = cfg.data.mask_lo;
    dp.mask_hi = cfg.data.mask_hi;
    dp.blur_len = cfg.data.blur_len;
    dp.blur_angle_deg = cfg.data.blur_angle_deg;
    dp.sr_factor = cfg.data.sr_factor;
    return dp;
}

struct SplitDataset {
    Dataset train;
    Dataset held;
};

inline SplitDataset load_split(const ExperimentConfig& cfg) {
    auto gts = load_gt_images(cfg);
    int holdout = std::min<int>(cfg.data.holdout, static_cast<int>(gts.size()) - 1);
    if (holdout < 0) holdout = 0;
    std::vector<Tensor> train_gts(gts.begin(), gts.end() - holdout);
    std::vector<Tensor> held_gts(gts.end() - holdout, gts.end());
    SplitDataset out;
    out.train = make_dataset(cfg.task, train_gts, Rng::derive(cfg.seed, 12), degrade_params(cfg));
    out.held = holdout > 0 ? make_dataset(cfg.task, held_gts, Rng::derive(cfg.seed, 13), degrade_params(cfg))
                           : Dataset{cfg.task, {}};
    return out;
}

// gen-data: materialize the procedural corpus
inline void run_gen_data(const ExperimentConfig& cfg) {
    if (cfg.data.dir.empty()) throw ConfigError("gen-data: data.dir must name the output corpus directory");
    auto gts = gen_corpus(Rng::derive(cfg.seed, 11), cfg.data.n, cfg.data.size);
    std::ostringstream desc;
    switch (cfg.task) {
        case Task::inpainting: desc << "mask:lo=" << cfg.data.mask_lo << ",hi=" << cfg.data.mask_hi; break;
        case Task::deblur: desc << "blur:len=" << cfg.data.blur_len << ",angle_deg=" << cfg.data.blur_angle_deg; break;
        case Task::sr: desc << "sr:factor=" << cfg.data.sr_factor; break;
    }
    save_corpus(cfg.data.dir, gts, Rng::derive(cfg.seed, 12), desc.str());
}

// shared post-training evaluation + artifact writing
inline void write_train_artifacts(const ExperimentConfig& cfg, System& sys, const TrainResult& res,
                                  const Dataset& held) {
    using pipeline_detail::fmt6;
    const std::string dir = cfg.out;
    save_checkpoint(res.checkpoint, dir + "/checkpoint");

    std::ostringstream m;
    m << metrics_header();
    if (held.size() > 0) {
        double sp = 0, ss = 0, sb = 0;
        for (int64_t i = 0; i < held.size(); ++i) {
            Rng rng(Rng::derive(cfg.seed, 500 + static_cast<uint64_t>(i)));
            auto row = eval_pair(sys, cfg.train.stage, cfg.train.mode, held.pairs[static_cast<size_t>(i)], rng);
            m << i << "\t" << fmt6(row.psnr_restored) << "\t" << fmt6(row.ssim_restored) << "\t" << fmt6(row.psnr_baseline)
              << "\n";
            sp += row.psnr_restored;
            ss += row.ssim_restored;
            sb += row.psnr_baseline;
        }
        double n = static_cast<double>(held.size());
        m << "mean\t" << fmt6(sp / n) << "\t" << fmt6(ss / n) << "\t" << fmt6(sb / n) << "\n";
    }
    pipeline_detail::write_text(dir + "/metrics.tsv", m.str());
}

struct RunOutput {
    TrainResult result;
    std::string checkpoint_dir;
};

inline RunOutput run_train(const ExperimentConfig& cfg) {
    std::filesystem::create_directories(cfg.out);
    write_resolved_config(cfg, cfg.out);
    auto split = load_split(cfg);
    NoiseSchedule sched = make_schedule(cfg.schedule.t, cfg.schedule.beta_start, cfg.schedule.beta_end);

    std::ofstream log(cfg.out + "/train_log.tsv", std::ios::trunc);
    if (!log) throw IoError("cannot write " + cfg.out + "/train_log.tsv");
    log << "step\tl_rec\tl_diff\tl_all\twall_ms\n";
    auto on_step = [&](int64_t step, const LossReport& r, double ms) {
        if (cfg.train.log_every > 0 && (step % cfg.train.log_every == 0 || step + 1 == cfg.train.steps)) {
            log << step << "\t" << pipeline_detail::fmt6(r.l_rec) << "\t" << pipeline_detail::fmt6(r.l_diff) << "\t"
                << pipeline_detail::fmt6(r.l_all) << "\t" << static_cast<int64_t>(ms) << "\n";
            log.flush();
        }
    };

    RunOutput out;
    if (cfg.train.stage == Stage::s1) {
        System sys = System::build_stage1(cfg.model, cfg.task, sched, cfg.seed);
        out.result = pretrain_stage1(cfg, sys, split.train, on_step);
        write_train_artifacts(cfg, sys, out.result, split.held);
    } else {
        if (cfg.train.s1_checkpoint.empty()) throw ConfigError("train-s2: train.s1_checkpoint is required");
        Checkpoint s1 = load_checkpoint(cfg.train.s1_checkpoint);
        if (s1.stage != Stage::s1) throw ConfigError("train-s2: " + cfg.train.s1_checkpoint + " is not a stage-1 checkpoint");
        System sys = System::build_stage2(cfg.model, cfg.task, sched, cfg.seed, s1);
        out.result = train_stage2(cfg, sys, split.train, on_step);
        write_train_artifacts(cfg, sys, out.result, split.held);
    }
    out.checkpoint_dir = cfg.out + "/checkpoint";
    return out;
}

// eval: metrics over the held-out split (or the whole set when holdout = 0)
inline std::vector<EvalRow> run_eval(const ExperimentConfig& cfg) {
    if (cfg.eval_checkpoint.empty()) throw ConfigError("eval: eval.checkpoint is required");
    std::filesystem::create_directories(cfg.out);
    write_resolved_config(cfg, cfg.out);
    Checkpoint ckpt = load_checkpoint(cfg.eval_checkpoint);
    System sys = System::restore(ckpt, cfg.model, cfg.task);
    auto split = load_split(cfg);
    const Dataset& ds = split.held.size() > 0 ? split.held : split.train;

    using pipeline_detail::fmt6;
    std::ostringstream m;
    m << metrics_header();
    std::vector<EvalRow> rows;
    double sp = 0, ss = 0, sb = 0;
    for (int64_t i = 0; i < ds.size(); ++i) {
        Rng rng(Rng::derive(cfg.seed, 500 + static_cast<uint64_t>(i)));
        auto row = eval_pair(sys, ckpt.stage, ckpt.mode, ds.pairs[static_cast<size_t>(i)], rng);
        rows.push_back(row);
        m << i << "\t" << fmt6(row.psnr_restored) << "\t" << fmt6(row.ssim_restored) << "\t" << fmt6(row.psnr_baseline) << "\n";
        sp += row.psnr_restored;
        ss += row.ssim_restored;
        sb += row.psnr_baseline;
    }
    double n = std::max<double>(1.0, static_cast<double>(ds.size()));
    m << "mean\t" << fmt6(sp / n) << "\t" << fmt6(ss / n) << "\t" << fmt6(sb / n) << "\n";
    pipeline_detail::write_text(cfg.out + "/metrics.tsv", m.str());
    return rows;
}

// infer: write restored images for every pair of the evaluation split
inline void run_infer(const ExperimentConfig& cfg) {
    if (cfg.eval_checkpoint.empty()) throw ConfigError("infer: eval.checkpoint is required");
    std::filesystem::create_directories(cfg.out);
    write_resolved_config(cfg, cfg.out);
    Checkpoint ckpt = load_checkpoint(cfg.eval_checkpoint);
    System sys = System::restore(ckpt, cfg.model, cfg.task);
    auto split = load_split(cfg);
    const Dataset& ds = split.held.size() > 0 ? split.held : split.train;
    for (int64_t i = 0; i < ds.size(); ++i) {
        Rng rng(Rng::derive(cfg.seed, 500 + static_cast<uint64_t>(i)));
        Tensor img = restore_pair(sys, ckpt.stage, ckpt.mode, ds.pairs[static_cast<size_t>(i)], rng);
        char name[48];
        std::snprintf(name, sizeof(name), "restored_%05lld.png", static_cast<long long>(i));
        imgio::write_png(cfg.out + "/" + std::string(name), img);
    }
}

// count: analytic cost report for both system variants
inline std::string run_count(const ExperimentConfig& cfg, int64_t input) {
    std::ostringstream out;
    auto print = [&out](const std::string& label, const CostReport& r) {
        for (const auto& it : r.breakdown) out << label << "\t" << it.name << "\t" << it.value << "\n";
        out << label << "\ttotal\t" << r.total << "\n";
    };
    print("params_s1", count_params(cfg.model, cfg.task, Stage::s1));
    print("params_s2", count_params(cfg.model, cfg.task, Stage::s2));
    print("mult_adds_s1@" + std::to_string(input), count_mult_adds(cfg.model, cfg.task, input, cfg.schedule.t, Stage::s1));
    print("mult_adds_s2@" + std::to_string(input), count_mult_adds(cfg.model, cfg.task, input, cfg.schedule.t, Stage::s2));
    return out.str();
}

// sweep-t: per-T pipeline run with the invariant suite asserted at each T
struct SweepRow {
    int t = 0;
    double abar_T = 0.0;
    double psnr = 0.0;
    int64_t denoiser_calls = 0;
    bool invariants_ok = false;
};

inline std::vector<SweepRow> run_sweep_t(const ExperimentConfig& cfg, const std::vector<int>& ts) {
    std::filesystem::create_directories(cfg.out);
    write_resolved_config(cfg, cfg.out);
    auto split = load_split(cfg);
    const Dataset& ds = split.held.size() > 0 ? split.held : split.train;

    std::vector<SweepRow> rows;
    std::ostringstream m;
    m << "t\talpha_bar_T\tpsnr\tdenoiser_calls\tinvariants\n";
    for (int T : ts) {
        SweepRow row;
        row.t = T;
        ExperimentConfig c = cfg;
        c.schedule.t = T;
        NoiseSchedule sched = make_schedule(T, c.schedule.beta_start, c.schedule.beta_end);
        row.abar_T = sched.alpha_bar(T);

        bool ok = true;
        // schedule invariants at this T
        double prev = 1.0;
        for (int t = 1; t <= T; ++t) {
            ok = ok && sched.alpha(t) == 1.0 - sched.beta(t);
            ok = ok && sched.alpha_bar(t) < prev;
            prev = sched.alpha_bar(t);
        }
        ok = ok && sched.posterior_var(1) == 0.0;
        // exact inversion with oracle noise through this schedule
        {
            Rng rng(Rng::derive(c.seed, 600));
            std::vector<double> z0(8), eps(8);
            for (auto& v : z0) v = rng.normal();
            for (auto& v : eps) v = rng.normal();
            IPRVector z{z0, 0};
            auto zt = diffuse(sched, z, eps);
            IPRVector cur = zt;
            for (int t = T; t >= 1; --t) {
                // oracle epsilon for the remaining marginal at step t
                std::vector<double> eps_t(8);
                double num_a = std::sqrt(sched.alpha_bar(t));
                double num_b = std::sqrt(1.0 - sched.alpha_bar(t));
                for (size_t i = 0; i < 8; ++i) eps_t[i] = (cur.values[i] - num_a * z0[i]) / num_b;
                cur = reverse_step(sched, cur, t, eps_t);
            }
            for (size_t i = 0; i < 8; ++i) ok = ok && std::abs(cur.values[i] - z0[i]) <= 1e-8 * std::max(1.0, std::abs(z0[i]));
        }
        // end-to-end: fresh tiny stage-2 system, sampler call count, determinism
        {
            Checkpoint fake;  // build an untrained stage-1 snapshot in memory
            System s1 = System::build_stage1(c.model, c.task, sched, c.seed);
            fake = Checkpoint::from_params(s1.checkpoint_params(Stage::s1));
            fake.stage = Stage::s1;
            fake.schedule_t = T;
            fake.beta_start = c.schedule.beta_start;
            fake.beta_end = c.schedule.beta_end;
            fake.seed = c.seed;
            System sys = System::build_stage2(c.model, c.task, sched, c.seed, fake);
            const ImagePair& pair = ds.pairs.front();
            auto samp = prepare_sample(c.task, pair);
            sys.denoiser.call_count = 0;
            Rng r1(Rng::derive(c.seed, 601)), r2(Rng::derive(c.seed, 601));
            auto ipr1 = sample_ipr(sys.denoiser, sys.cpen_s2, sched, samp.model_in, r1);
            row.denoiser_calls = sys.denoiser.call_count;
            ok = ok && row.denoiser_calls == T;
            auto ipr2 = sample_ipr(sys.denoiser, sys.cpen_s2, sched, samp.model_in, r2);
            ok = ok && ipr1.values == ipr2.values && ipr1.timestep == 0;
            Rng re(Rng::derive(c.seed, 602));
            auto er = eval_pair(sys, Stage::s2, Mode::v3_joint, pair, re);
            row.psnr = er.psnr_restored;
            ok = ok && std::isfinite(row.psnr);
        }
        row.invariants_ok = ok;
        rows.push_back(row);
        m << T << "\t" << pipeline_detail::fmt6(row.abar_T) << "\t" << pipeline_detail::fmt6(row.psnr) << "\t"
          << row.denoiser_calls << "\t" << (ok ? "pass" : "FAIL") << "\n";
    }
    pipeline_detail::write_text(cfg.out + "/sweep.tsv", m.str());
    return rows;
}

}  // namespace diffir
