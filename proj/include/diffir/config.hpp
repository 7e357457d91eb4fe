#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffir {

enum class Task { inpainting, sr, deblur };
enum class Stage { s1, s2 };
enum class Mode { v1_no_dm, v2_traditional, v3_joint, v4_joint_noise };
enum class TEmbed { scalar_append, sinusoidal };

inline const char* to_string(Task t) {
    switch (t) {
        case Task::inpainting: return "inpainting";
        case Task::sr: return "sr";
        case Task::deblur: return "deblur";
    }
    return "?";
}
inline const char* to_string(Stage s) { return s == Stage::s1 ? "s1" : "s2"; }
inline const char* to_string(Mode m) {
    switch (m) {
        case Mode::v1_no_dm: return "v1";
        case Mode::v2_traditional: return "v2";
        case Mode::v3_joint: return "v3";
        case Mode::v4_joint_noise: return "v4";
    }
    return "?";
}

inline Task task_from_string(const std::string& s) {
    if (s == "inpainting") return Task::inpainting;
    if (s == "sr") return Task::sr;
    if (s == "deblur") return Task::deblur;
    throw std::invalid_argument("unknown task: " + s);
}
inline Stage stage_from_string(const std::string& s) {
    if (s == "s1") return Stage::s1;
    if (s == "s2") return Stage::s2;
    throw std::invalid_argument("unknown stage: " + s);
}
inline Mode mode_from_string(const std::string& s) {
    if (s == "v1") return Mode::v1_no_dm;
    if (s == "v2") return Mode::v2_traditional;
    if (s == "v3") return Mode::v3_joint;
    if (s == "v4") return Mode::v4_joint_noise;
    throw std::invalid_argument("unknown mode: " + s);
}

// Channels the restorer sees: RGB plus a mask plane for inpainting.
inline int model_image_channels(Task t) { return t == Task::inpainting ? 4 : 3; }

// Compact prior extraction network. The paper fixes C' = 64 and says only
// "residual blocks and linear layers"; widths and depths here are declared
// configuration. prior_dim() is the 4C' vector length everything shares.
struct CpenConfig {
    int c_prime = 64;
    int unshuffle_factor = 4;
    int stem_width = 16;          // first conv (1x1); the only layer S1/S2 differ in
    int width = 288;              // residual trunk width
    std::vector<int> stage_blocks = {4, 1, 1};  // resblocks per stage, stride-2 between stages
    int head_hidden = 512;

    int prior_dim() const { return 4 * c_prime; }
    int num_res_blocks() const {
        int n = 0;
        for (int b : stage_blocks) n += b;
        return n;
    }
    int in_channels_s2(Task t) const { return model_image_channels(t) * unshuffle_factor * unshuffle_factor; }
    int in_channels_s1(Task t) const { return 2 * in_channels_s2(t); }
};

struct DirformerConfig {
    std::array<int, 4> channels = {48, 96, 192, 384};
    std::array<int, 4> heads = {1, 2, 4, 8};
    std::array<int, 4> blocks = {1, 1, 1, 9};
    double gamma_init = 1.0;

    void validate() const {
        for (int l = 0; l < 4; ++l) {
            if (channels[static_cast<size_t>(l)] <= 0 || heads[static_cast<size_t>(l)] <= 0 || blocks[static_cast<size_t>(l)] <= 0)
                throw std::invalid_argument("dirformer config: positive channels/heads/blocks required");
            if (channels[static_cast<size_t>(l)] % heads[static_cast<size_t>(l)] != 0)
                throw std::invalid_argument("dirformer config: channels must be divisible by heads");
        }
    }
};

struct DenoiserConfig {
    int hidden_width = 512;  // default 2 * 4C' for C' = 64
    int num_layers = 4;      // hidden layers
    TEmbed t_embed = TEmbed::scalar_append;
    int sinusoidal_dim = 8;

    int t_embed_width() const { return t_embed == TEmbed::scalar_append ? 1 : sinusoidal_dim; }
};

struct ModelConfig {
    CpenConfig cpen;
    DirformerConfig dirformer;
    DenoiserConfig denoiser;
};

// Block counts per task from the paper's experiment settings.
inline std::array<int, 4> paper_blocks(Task t) {
    switch (t) {
        case Task::inpainting: return {1, 1, 1, 9};
        case Task::sr: return {13, 1, 1, 1};
        case Task::deblur: return {3, 5, 6, 6};
    }
    return {1, 1, 1, 9};
}

inline ModelConfig paper_model_config(Task t) {
    ModelConfig m;
    m.dirformer.blocks = paper_blocks(t);
    return m;  // all other fields default to the paper-scale preset
}

}  // namespace diffir
