#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "diffir/diffir.hpp"

namespace {

using namespace diffir;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

[[noreturn]] void fail(int code, const std::string& category, const std::string& msg) {
    std::cerr << "error\t" << category << "\t" << msg << "\n";
    std::exit(code);
}

struct CommonFlags {
    std::string config_path;
    std::string out;
    std::string mode;
    int64_t seed = -1;
    std::string t_list;  // sweep-t list or single override
};

ExperimentConfig load_and_override(const CommonFlags& f, bool config_required = true) {
    ExperimentConfig cfg;
    if (!f.config_path.empty()) {
        cfg = load_config(f.config_path);
    } else if (config_required) {
        throw ConfigError("--config is required for this command");
    }
    if (f.seed >= 0) cfg.seed = static_cast<uint64_t>(f.seed);
    if (!f.out.empty()) cfg.out = f.out;
    if (!f.mode.empty()) cfg.train.mode = mode_from_string(f.mode);
    return cfg;
}

std::vector<int> parse_t_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stoi(item));
    }
    if (out.empty()) throw ConfigError("--t: expected a comma-separated list of timestep counts");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DiffIR: diffusion-prior image restoration at desk scale"};
    app.require_subcommand(1);
    CommonFlags f;

    auto add_common = [&f](CLI::App* cmd, bool with_mode, bool with_t) {
        cmd->add_option("--config", f.config_path, "experiment config (JSON)");
        cmd->add_option("--seed", f.seed, "override config seed");
        cmd->add_option("--out", f.out, "override output directory");
        if (with_mode) cmd->add_option("--mode", f.mode, "stage-2 mode: v1|v2|v3|v4");
        if (with_t) cmd->add_option("--t", f.t_list, "timesteps (single value, or comma list for sweep-t)");
    };

    auto* gen = app.add_subcommand("gen-data", "materialize the procedural corpus");
    add_common(gen, false, false);
    auto* ts1 = app.add_subcommand("train-s1", "stage-1 pretraining (CPEN_S1 + DIRformer)");
    add_common(ts1, false, false);
    auto* ts2 = app.add_subcommand("train-s2", "stage-2 diffusion training (modes v1-v4)");
    add_common(ts2, true, true);
    auto* inf = app.add_subcommand("infer", "restore images with a trained checkpoint");
    add_common(inf, false, false);
    auto* ev = app.add_subcommand("eval", "PSNR/SSIM evaluation of a checkpoint");
    add_common(ev, false, false);
    auto* cnt = app.add_subcommand("count", "analytic parameter / Mult-Adds report");
    std::string count_task = "inpainting";
    int64_t count_input = 256;
    cnt->add_option("--config", f.config_path, "experiment config (JSON); defaults to the paper preset");
    cnt->add_option("--task", count_task, "task preset: inpainting|sr|deblur");
    cnt->add_option("--input", count_input, "input side length");
    cnt->add_option("--t", f.t_list, "denoising timesteps");
    auto* swp = app.add_subcommand("sweep-t", "run the pipeline + invariant suite per T");
    add_common(swp, false, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error\tconfig\t" << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (gen->parsed()) {
            auto cfg = load_and_override(f);
            run_gen_data(cfg);
            std::printf("gen-data\tok\t%s\n", cfg.data.dir.c_str());
        } else if (ts1->parsed()) {
            auto cfg = load_and_override(f);
            cfg.train.stage = Stage::s1;
            auto out = run_train(cfg);
            std::printf("train-s1\tok\t%s\n", out.checkpoint_dir.c_str());
        } else if (ts2->parsed()) {
            auto cfg = load_and_override(f);
            cfg.train.stage = Stage::s2;
            if (!f.t_list.empty()) {
                auto ts = parse_t_list(f.t_list);
                if (ts.size() != 1) throw ConfigError("train-s2 --t takes a single value");
                cfg.schedule.t = ts[0];
            }
            auto out = run_train(cfg);
            std::printf("train-s2\tok\t%s\n", out.checkpoint_dir.c_str());
        } else if (inf->parsed()) {
            auto cfg = load_and_override(f);
            run_infer(cfg);
            std::printf("infer\tok\t%s\n", cfg.out.c_str());
        } else if (ev->parsed()) {
            auto cfg = load_and_override(f);
            run_eval(cfg);
            std::printf("eval\tok\t%s/metrics.tsv\n", cfg.out.c_str());
        } else if (cnt->parsed()) {
            ExperimentConfig cfg;
            if (!f.config_path.empty()) {
                cfg = load_config(f.config_path);
            } else {
                cfg.task = task_from_string(count_task);
                cfg.model = paper_model_config(cfg.task);
            }
            if (!f.t_list.empty()) {
                auto ts = parse_t_list(f.t_list);
                if (ts.size() != 1) throw ConfigError("count --t takes a single value");
                cfg.schedule.t = ts[0];
            }
            std::fputs(run_count(cfg, count_input).c_str(), stdout);
        } else if (swp->parsed()) {
            auto cfg = load_and_override(f);
            if (f.t_list.empty()) throw ConfigError("sweep-t requires --t, e.g. --t 1,2,4,8");
            auto rows = run_sweep_t(cfg, parse_t_list(f.t_list));
            bool all_ok = true;
            for (const auto& r : rows) {
                std::printf("sweep-t\t%d\tabar=%.6g\tpsnr=%.4f\tcalls=%lld\t%s\n", r.t, r.abar_T, r.psnr,
                            static_cast<long long>(r.denoiser_calls), r.invariants_ok ? "pass" : "FAIL");
                all_ok = all_ok && r.invariants_ok;
            }
            if (!all_ok) fail(kExitNumeric, "numeric", "sweep-t invariant suite failed");
        }
    } catch (const ConfigError& e) {
        fail(kExitConfig, "config", e.what());
    } catch (const std::invalid_argument& e) {
        fail(kExitConfig, "config", e.what());
    } catch (const NumericError& e) {
        fail(kExitNumeric, "numeric", e.what());
    } catch (const CheckpointError& e) {
        fail(kExitIo, "io", e.what());
    } catch (const IoError& e) {
        fail(kExitIo, "io", e.what());
    } catch (const std::exception& e) {
        fail(kExitIo, "io", e.what());
    }
    return kExitOk;
}
