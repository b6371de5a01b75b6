#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sasegan/errors.hpp"
#include "sasegan/model.hpp"
#include "sasegan/optim.hpp"
#include "sasegan/rng.hpp"
#include "sasegan/train_config.hpp"

namespace sasegan {

// Checkpoint file layout (all integers little-endian):
//   bytes 0..3   magic "SGCK"
//   bytes 4..7   u32 format version
//   bytes 8..15  u64 manifest length M
//   16..16+M     manifest, UTF-8 JSON
//   +8           u64 FNV-1a checksum of the manifest bytes
//   rest         payload: f64 arrays concatenated in manifest "arrays" order
constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig cfg;
    TrainConfig tcfg;
    std::uint64_t seed = 0;
    std::int64_t step = 0;
    Generator gen;
    Discriminator disc;
    OptimState opt_g, opt_d;
};

namespace detail {

inline std::uint64_t fnv1a64(const unsigned char* data, size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline void put_u64le(std::vector<unsigned char>& out, std::uint64_t x) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((x >> (8 * i)) & 0xff));
}
inline std::uint64_t get_u64le(const unsigned char* p) {
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return x;
}

inline void put_f64le(std::vector<unsigned char>& out, const double* data, size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        const unsigned char* raw = reinterpret_cast<const unsigned char*>(data);
        out.insert(out.end(), raw, raw + 8 * n);
    } else {
        for (size_t i = 0; i < n; ++i) {
            std::uint64_t bits = std::bit_cast<std::uint64_t>(data[i]);
            put_u64le(out, bits);
        }
    }
}
inline void get_f64le(const unsigned char* p, double* data, size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(data, p, 8 * n);
    } else {
        for (size_t i = 0; i < n; ++i)
            data[i] = std::bit_cast<double>(get_u64le(p + 8 * i));
    }
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
    return nlohmann::json{{"filter_schedule", c.filter_schedule},
                          {"filter_width", c.filter_width},
                          {"stride", c.stride},
                          {"input_len", c.input_len},
                          {"attention_layers", c.attention_layers},
                          {"k", c.k},
                          {"p", c.p},
                          {"scale_divisor", c.scale_divisor}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.filter_schedule = j.at("filter_schedule").get<std::vector<int>>();
    c.filter_width = j.at("filter_width").get<int>();
    c.stride = j.at("stride").get<int>();
    c.input_len = j.at("input_len").get<int>();
    c.attention_layers = j.at("attention_layers").get<std::vector<int>>();
    c.k = j.at("k").get<int>();
    c.p = j.at("p").get<int>();
    c.scale_divisor = j.at("scale_divisor").get<int>();
    return c;
}

inline nlohmann::json tconfig_to_json(const TrainConfig& t) {
    return nlohmann::json{{"epochs", t.epochs},         {"batch_size", t.batch_size},
                          {"lr", t.lr},                 {"rmsprop_decay", t.rmsprop_decay},
                          {"rmsprop_eps", t.rmsprop_eps}, {"lambda_l1", t.lambda_l1},
                          {"seed", t.seed},             {"max_steps", t.max_steps},
                          {"checkpoint_every", t.checkpoint_every}};
}

inline TrainConfig tconfig_from_json(const nlohmann::json& j) {
    TrainConfig t;
    t.epochs = j.at("epochs").get<int>();
    t.batch_size = j.at("batch_size").get<int>();
    t.lr = j.at("lr").get<double>();
    t.rmsprop_decay = j.at("rmsprop_decay").get<double>();
    t.rmsprop_eps = j.at("rmsprop_eps").get<double>();
    t.lambda_l1 = j.at("lambda_l1").get<double>();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.max_steps = j.at("max_steps").get<int>();
    t.checkpoint_every = j.at("checkpoint_every").get<int>();
    return t;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, Checkpoint& ckpt) {
    // Directory of named arrays, in a fixed order: G params, D params,
    // G states, D states, G optimizer, D optimizer.
    std::vector<std::pair<std::string, std::pair<const double*, size_t>>> arrays;
    auto collect = [&](const std::string& prefix) {
        return [&arrays, prefix](const std::string& name, double* data, size_t n) {
            arrays.emplace_back(prefix + name, std::make_pair(const_cast<const double*>(data), n));
        };
    };
    for_each_param(ckpt.gen, collect(""));
    for_each_param(ckpt.disc, collect(""));
    for_each_state(ckpt.gen, collect("state:"));
    for_each_state(ckpt.disc, collect("state:"));
    for_each_param(ckpt.gen, [&](const std::string& name, double* /*d*/, size_t n) {
        arrays.emplace_back("opt:" + name,
                            std::make_pair(ckpt.opt_g.slot(name, n).data(), n));
    });
    for_each_param(ckpt.disc, [&](const std::string& name, double* /*d*/, size_t n) {
        arrays.emplace_back("opt:" + name,
                            std::make_pair(ckpt.opt_d.slot(name, n).data(), n));
    });

    nlohmann::json manifest;
    manifest["format"] = kCheckpointVersion;
    manifest["config"] = detail::config_to_json(ckpt.cfg);
    manifest["train_config"] = detail::tconfig_to_json(ckpt.tcfg);
    manifest["meta"] = {{"seed", ckpt.seed}, {"step", ckpt.step}, {"tool", "sasegan"}};
    nlohmann::json dir = nlohmann::json::array();
    for (const auto& [name, span] : arrays)
        dir.push_back({{"name", name}, {"len", span.second}});
    manifest["arrays"] = dir;
    std::string mtext = manifest.dump();

    std::vector<unsigned char> bytes;
    const char* magic = "SGCK";
    bytes.insert(bytes.end(), magic, magic + 4);
    for (int i = 0; i < 4; ++i)
        bytes.push_back(static_cast<unsigned char>((kCheckpointVersion >> (8 * i)) & 0xff));
    detail::put_u64le(bytes, mtext.size());
    bytes.insert(bytes.end(), mtext.begin(), mtext.end());
    detail::put_u64le(bytes,
                      detail::fnv1a64(reinterpret_cast<const unsigned char*>(mtext.data()),
                                      mtext.size()));
    for (const auto& [name, span] : arrays) detail::put_f64le(bytes, span.first, span.second);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot open checkpoint for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoFailure("checkpoint write failed: " + path.string());
}

/// Reads a checkpoint and rebuilds both networks from the echoed config.
/// When `expected` is given, a config echo that differs is rejected.
inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  const ModelConfig* expected = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open checkpoint: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "SGCK", 4) != 0)
        throw CorruptFile("not a checkpoint file: " + path.string());
    std::uint32_t version = 0;
    for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(bytes[4 + i]) << (8 * i);
    if (version != kCheckpointVersion)
        throw VersionMismatch("checkpoint format " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
    std::uint64_t mlen = detail::get_u64le(bytes.data() + 8);
    if (16 + mlen + 8 > bytes.size()) throw CorruptFile("truncated checkpoint manifest");
    std::uint64_t stored = detail::get_u64le(bytes.data() + 16 + mlen);
    if (stored != detail::fnv1a64(bytes.data() + 16, mlen))
        throw CorruptFile("manifest checksum mismatch");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + mlen);
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFile(std::string("manifest parse error: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        ckpt.cfg = detail::config_from_json(manifest.at("config"));
        ckpt.tcfg = detail::tconfig_from_json(manifest.at("train_config"));
        ckpt.seed = manifest.at("meta").at("seed").get<std::uint64_t>();
        ckpt.step = manifest.at("meta").at("step").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFile(std::string("manifest field error: ") + e.what());
    }
    if (expected && !(*expected == ckpt.cfg))
        throw ConfigMismatch("checkpoint config does not match the requested model build");

    Rng shell_rng(0);
    ckpt.gen = build_generator(ckpt.cfg, shell_rng);
    ckpt.disc = build_discriminator(ckpt.cfg, shell_rng);

    std::vector<std::pair<std::string, std::pair<double*, size_t>>> arrays;
    auto collect = [&](const std::string& prefix) {
        return [&arrays, prefix](const std::string& name, double* data, size_t n) {
            arrays.emplace_back(prefix + name, std::make_pair(data, n));
        };
    };
    for_each_param(ckpt.gen, collect(""));
    for_each_param(ckpt.disc, collect(""));
    for_each_state(ckpt.gen, collect("state:"));
    for_each_state(ckpt.disc, collect("state:"));
    for_each_param(ckpt.gen, [&](const std::string& name, double*, size_t n) {
        arrays.emplace_back("opt:" + name, std::make_pair(ckpt.opt_g.slot(name, n).data(), n));
    });
    for_each_param(ckpt.disc, [&](const std::string& name, double*, size_t n) {
        arrays.emplace_back("opt:" + name, std::make_pair(ckpt.opt_d.slot(name, n).data(), n));
    });

    const auto& dir = manifest.at("arrays");
    if (dir.size() != arrays.size())
        throw CorruptFile("checkpoint array directory does not match the model layout");
    size_t off = 16 + mlen + 8;
    for (size_t i = 0; i < arrays.size(); ++i) {
        std::string name = dir[i].at("name").get<std::string>();
        size_t len = dir[i].at("len").get<size_t>();
        if (name != arrays[i].first || len != arrays[i].second.second)
            throw CorruptFile("checkpoint array mismatch at '" + name + "'");
        if (off + 8 * len > bytes.size()) throw CorruptFile("truncated checkpoint payload");
        detail::get_f64le(bytes.data() + off, arrays[i].second.first, len);
        off += 8 * len;
    }
    return ckpt;
}

}  // namespace sasegan
