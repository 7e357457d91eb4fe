#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffir/config.hpp"
#include "diffir/nn.hpp"
#include "diffir/schedule.hpp"

namespace diffir {

static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");

struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& m) : std::runtime_error(m) {}
};

// On-disk layout: <dir>/manifest.json + <dir>/weights.bin. The blob is f32
// little-endian, row-major, concatenated in manifest order; the manifest
// records name/shape/dtype/offset/length per tensor plus a whole-blob CRC32.
struct Checkpoint {
    static constexpr int kVersion = 1;

    Stage stage = Stage::s1;
    Mode mode = Mode::v3_joint;
    uint64_t seed = 0;
    int64_t step = 0;
    int schedule_t = 4;
    double beta_start = 0.1;
    double beta_end = 0.99;
    nlohmann::json config;  // resolved experiment config snapshot
    std::vector<std::pair<std::string, Tensor>> tensors;

    static Checkpoint from_params(const nn::ParamMap& pm) {
        Checkpoint c;
        for (const auto& [name, var] : pm.entries) c.tensors.push_back({name, var->value});
        return c;
    }

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }

    // Copy stored values into matching parameters; every target must be
    // present with the right shape.
    void apply_to(const nn::ParamMap& pm, const std::string& prefix = "") const {
        for (const auto& [name, var] : pm.entries) {
            const Tensor* t = find(prefix.empty() ? name : prefix + "." + name);
            if (!t) throw CheckpointError("checkpoint missing tensor " + name);
            if (t->shape != var->value.shape)
                throw CheckpointError("checkpoint tensor " + name + " has shape " + t->shape_str() + ", expected " +
                                      var->value.shape_str());
            var->value.data = t->data;
        }
    }
};

inline void save_checkpoint(const Checkpoint& c, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::vector<uint8_t> blob;
    nlohmann::json manifest;
    manifest["version"] = Checkpoint::kVersion;
    manifest["stage"] = to_string(c.stage);
    manifest["mode"] = to_string(c.mode);
    manifest["seed"] = c.seed;
    manifest["step"] = c.step;
    manifest["schedule"] = {{"t", c.schedule_t}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
    manifest["config"] = c.config.is_null() ? nlohmann::json::object() : c.config;
    auto& tens = manifest["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : c.tensors) {
        size_t offset = blob.size();
        for (double v : t.data) {
            float f = static_cast<float>(v);
            const uint8_t* p = reinterpret_cast<const uint8_t*>(&f);
            blob.insert(blob.end(), p, p + 4);
        }
        tens.push_back({{"name", name},
                        {"shape", t.shape},
                        {"dtype", "f32"},
                        {"offset", offset},
                        {"length", t.data.size() * 4}});
    }
    manifest["checksum_crc32"] = static_cast<uint32_t>(crc32(0, blob.data(), static_cast<uInt>(blob.size())));

    {
        std::ofstream f(dir + "/weights.bin", std::ios::binary | std::ios::trunc);
        if (!f) throw CheckpointError("cannot write " + dir + "/weights.bin");
        f.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    }
    {
        std::ofstream f(dir + "/manifest.json", std::ios::trunc);
        if (!f) throw CheckpointError("cannot write " + dir + "/manifest.json");
        f << manifest.dump(1, '\t') << "\n";
    }
}

inline Checkpoint load_checkpoint(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw CheckpointError("cannot open " + dir + "/manifest.json");
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(dir + ": bad manifest: " + e.what());
    }
    if (!manifest.contains("version") || manifest["version"] != Checkpoint::kVersion)
        throw CheckpointError(dir + ": unknown manifest version");

    std::ifstream bf(dir + "/weights.bin", std::ios::binary);
    if (!bf) throw CheckpointError("cannot open " + dir + "/weights.bin");
    std::vector<uint8_t> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

    uint32_t want = manifest["checksum_crc32"].get<uint32_t>();
    uint32_t got = static_cast<uint32_t>(crc32(0, blob.data(), static_cast<uInt>(blob.size())));
    if (want != got) throw CheckpointError(dir + ": weights.bin checksum mismatch");

    Checkpoint c;
    c.stage = stage_from_string(manifest["stage"].get<std::string>());
    c.mode = mode_from_string(manifest["mode"].get<std::string>());
    c.seed = manifest["seed"].get<uint64_t>();
    c.step = manifest["step"].get<int64_t>();
    c.schedule_t = manifest["schedule"]["t"].get<int>();
    c.beta_start = manifest["schedule"]["beta_start"].get<double>();
    c.beta_end = manifest["schedule"]["beta_end"].get<double>();
    c.config = manifest["config"];
    for (const auto& rec : manifest["tensors"]) {
        std::string name = rec["name"].get<std::string>();
        std::vector<int64_t> shape = rec["shape"].get<std::vector<int64_t>>();
        size_t offset = rec["offset"].get<size_t>();
        size_t length = rec["length"].get<size_t>();
        if (rec["dtype"].get<std::string>() != "f32") throw CheckpointError(dir + ": unsupported dtype for " + name);
        if (offset + length > blob.size()) throw CheckpointError(dir + ": tensor " + name + " extends past the blob");
        Tensor t(shape);
        if (length != t.data.size() * 4) throw CheckpointError(dir + ": tensor " + name + " length/shape mismatch");
        for (size_t i = 0; i < t.data.size(); ++i) {
            float f;
            std::memcpy(&f, &blob[offset + 4 * i], 4);
            t.data[i] = static_cast<double>(f);
        }
        c.tensors.push_back({std::move(name), std::move(t)});
    }
    return c;
}

}  // namespace diffir
