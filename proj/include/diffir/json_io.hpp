#pragma once

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "diffir/config.hpp"

namespace diffir {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct DataConfig {
    std::string source = "procedural";  // procedural | folder
    std::string dir;                    // corpus dir (gen-data output) or user folder
    int n = 72;
    int size = 16;
    int holdout = 8;  // last N corpus images held out for evaluation
    double mask_lo = 0.05;
    double mask_hi = 0.25;
    int blur_len = 7;
    double blur_angle_deg = -1.0;  // negative = per-sample random
    int sr_factor = 4;
};

struct ScheduleConfig {
    int t = 4;
    double beta_start = 0.1;
    double beta_end = 0.99;
};

struct TrainSection {
    Stage stage = Stage::s1;
    Mode mode = Mode::v3_joint;
    int steps = 2000;
    int batch_size = 8;
    int patch_size = 16;
    double lr = 2e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.99;
    int log_every = 20;
    bool backprop_through_reverse = true;
    std::string s1_checkpoint;
};

struct ExperimentConfig {
    Task task = Task::inpainting;
    uint64_t seed = 7;
    std::string out = "runs/out";
    DataConfig data;
    ScheduleConfig schedule;
    TrainSection train;
    ModelConfig model;
    std::string eval_checkpoint;
};

namespace json_detail {

using nlohmann::json;

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
        }
    }
}

}  // namespace json_detail

inline nlohmann::json to_json(const ModelConfig& m) {
    nlohmann::json j;
    j["cpen"] = {{"c_prime", m.cpen.c_prime},
                 {"unshuffle_factor", m.cpen.unshuffle_factor},
                 {"stem_width", m.cpen.stem_width},
                 {"width", m.cpen.width},
                 {"stage_blocks", m.cpen.stage_blocks},
                 {"head_hidden", m.cpen.head_hidden}};
    j["dirformer"] = {{"channels", m.dirformer.channels},
                      {"heads", m.dirformer.heads},
                      {"blocks", m.dirformer.blocks},
                      {"gamma_init", m.dirformer.gamma_init}};
    j["denoiser"] = {{"hidden_width", m.denoiser.hidden_width},
                     {"num_layers", m.denoiser.num_layers},
                     {"t_embed", m.denoiser.t_embed == TEmbed::scalar_append ? "scalar_append" : "sinusoidal"},
                     {"sinusoidal_dim", m.denoiser.sinusoidal_dim}};
    return j;
}

inline ModelConfig model_from_json(const nlohmann::json& j) {
    using json_detail::check_keys;
    using json_detail::get_if;
    ModelConfig m;
    check_keys(j, {"cpen", "dirformer", "denoiser"}, "model");
    if (j.contains("cpen")) {
        const auto& c = j.at("cpen");
        check_keys(c, {"c_prime", "unshuffle_factor", "stem_width", "width", "stage_blocks", "head_hidden"}, "model.cpen");
        get_if(c, "c_prime", m.cpen.c_prime);
        get_if(c, "unshuffle_factor", m.cpen.unshuffle_factor);
        get_if(c, "stem_width", m.cpen.stem_width);
        get_if(c, "width", m.cpen.width);
        get_if(c, "stage_blocks", m.cpen.stage_blocks);
        get_if(c, "head_hidden", m.cpen.head_hidden);
    }
    if (j.contains("dirformer")) {
        const auto& d = j.at("dirformer");
        check_keys(d, {"channels", "heads", "blocks", "gamma_init"}, "model.dirformer");
        get_if(d, "channels", m.dirformer.channels);
        get_if(d, "heads", m.dirformer.heads);
        get_if(d, "blocks", m.dirformer.blocks);
        get_if(d, "gamma_init", m.dirformer.gamma_init);
    }
    if (j.contains("denoiser")) {
        const auto& d = j.at("denoiser");
        check_keys(d, {"hidden_width", "num_layers", "t_embed", "sinusoidal_dim"}, "model.denoiser");
        get_if(d, "hidden_width", m.denoiser.hidden_width);
        get_if(d, "num_layers", m.denoiser.num_layers);
        std::string te = "scalar_append";
        get_if(d, "t_embed", te);
        if (te == "scalar_append")
            m.denoiser.t_embed = TEmbed::scalar_append;
        else if (te == "sinusoidal")
            m.denoiser.t_embed = TEmbed::sinusoidal;
        else
            throw ConfigError("bad t_embed: " + te);
        get_if(d, "sinusoidal_dim", m.denoiser.sinusoidal_dim);
    }
    if (m.cpen.c_prime <= 0 || m.cpen.unshuffle_factor <= 0 || m.cpen.stem_width <= 0 || m.cpen.width <= 0 ||
        m.cpen.head_hidden <= 0 || m.cpen.stage_blocks.empty())
        throw ConfigError("model.cpen: positive sizes required");
    for (int b : m.cpen.stage_blocks)
        if (b <= 0) throw ConfigError("model.cpen.stage_blocks: positive counts required");
    if (m.denoiser.hidden_width <= 0 || m.denoiser.num_layers <= 0) throw ConfigError("model.denoiser: positive sizes required");
    try {
        m.dirformer.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return m;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["task"] = to_string(c.task);
    j["seed"] = c.seed;
    j["out"] = c.out;
    j["data"] = {{"source", c.data.source},     {"dir", c.data.dir},
                 {"n", c.data.n},               {"size", c.data.size},
                 {"holdout", c.data.holdout},   {"mask_lo", c.data.mask_lo},
                 {"mask_hi", c.data.mask_hi},   {"blur_len", c.data.blur_len},
                 {"blur_angle_deg", c.data.blur_angle_deg}, {"sr_factor", c.data.sr_factor}};
    j["schedule"] = {{"t", c.schedule.t}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}};
    j["train"] = {{"stage", to_string(c.train.stage)},
                  {"mode", to_string(c.train.mode)},
                  {"steps", c.train.steps},
                  {"batch_size", c.train.batch_size},
                  {"patch_size", c.train.patch_size},
                  {"lr", c.train.lr},
                  {"adam_beta1", c.train.adam_beta1},
                  {"adam_beta2", c.train.adam_beta2},
                  {"log_every", c.train.log_every},
                  {"backprop_through_reverse", c.train.backprop_through_reverse},
                  {"s1_checkpoint", c.train.s1_checkpoint}};
    j["model"] = to_json(c.model);
    j["eval"] = {{"checkpoint", c.eval_checkpoint}};
    return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using json_detail::check_keys;
    using json_detail::get_if;
    ExperimentConfig c;
    check_keys(j, {"task", "seed", "out", "data", "schedule", "train", "model", "eval"}, "config");
    std::string task = "inpainting";
    get_if(j, "task", task);
    try {
        c.task = task_from_string(task);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    get_if(j, "seed", c.seed);
    get_if(j, "out", c.out);
    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, {"source", "dir", "n", "size", "holdout", "mask_lo", "mask_hi", "blur_len", "blur_angle_deg", "sr_factor"},
                   "data");
        get_if(d, "source", c.data.source);
        get_if(d, "dir", c.data.dir);
        get_if(d, "n", c.data.n);
        get_if(d, "size", c.data.size);
        get_if(d, "holdout", c.data.holdout);
        get_if(d, "mask_lo", c.data.mask_lo);
        get_if(d, "mask_hi", c.data.mask_hi);
        get_if(d, "blur_len", c.data.blur_len);
        get_if(d, "blur_angle_deg", c.data.blur_angle_deg);
        get_if(d, "sr_factor", c.data.sr_factor);
        if (c.data.source != "procedural" && c.data.source != "folder") throw ConfigError("data.source must be procedural|folder");
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        check_keys(s, {"t", "beta_start", "beta_end"}, "schedule");
        get_if(s, "t", c.schedule.t);
        get_if(s, "beta_start", c.schedule.beta_start);
        get_if(s, "beta_end", c.schedule.beta_end);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_keys(t,
                   {"stage", "mode", "steps", "batch_size", "patch_size", "lr", "adam_beta1", "adam_beta2", "log_every",
                    "backprop_through_reverse", "s1_checkpoint"},
                   "train");
        std::string stage = "s1", mode = "v3";
        get_if(t, "stage", stage);
        get_if(t, "mode", mode);
        try {
            c.train.stage = stage_from_string(stage);
            c.train.mode = mode_from_string(mode);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        get_if(t, "steps", c.train.steps);
        get_if(t, "batch_size", c.train.batch_size);
        get_if(t, "patch_size", c.train.patch_size);
        get_if(t, "lr", c.train.lr);
        get_if(t, "adam_beta1", c.train.adam_beta1);
        get_if(t, "adam_beta2", c.train.adam_beta2);
        get_if(t, "log_every", c.train.log_every);
        get_if(t, "backprop_through_reverse", c.train.backprop_through_reverse);
        get_if(t, "s1_checkpoint", c.train.s1_checkpoint);
    }
    if (j.contains("model")) c.model = model_from_json(j.at("model"));
    if (j.contains("eval")) {
        check_keys(j.at("eval"), {"checkpoint"}, "eval");
        get_if(j.at("eval"), "checkpoint", c.eval_checkpoint);
    }
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return config_from_json(j);
}

}  // namespace diffir
