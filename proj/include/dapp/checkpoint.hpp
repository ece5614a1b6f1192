#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "dapp/attention.hpp"

namespace dapp {

// FNV-1a 64-bit content digest, hex-encoded; identifies inputs in metadata.
inline std::string content_digest(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream out;
    out << std::hex << h;
    return out.str();
}

inline std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for digest: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return content_digest(buf.str());
}

namespace detail {

inline nlohmann::json mat_to_json(const Mat& m) {
    nlohmann::json data = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    return nlohmann::json{{"shape", {m.rows(), m.cols()}}, {"data", std::move(data)}};
}

inline Mat mat_from_json(const nlohmann::json& j) {
    const auto shape = j.at("shape");
    Mat m(shape.at(0).get<Eigen::Index>(), shape.at(1).get<Eigen::Index>());
    const auto& data = j.at("data");
    std::size_t at = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j2 = 0; j2 < m.cols(); ++j2) m(i, j2) = data.at(at++).get<double>();
    return m;
}

}  // namespace detail

inline nlohmann::json params_to_json(const ModelParams& mp) {
    nlohmann::json j;
    j["config"] = {{"heads", mp.config.heads},       {"value_dim", mp.config.value_dim},
                   {"feature_dim", mp.config.feature_dim}, {"noise_dim", mp.config.noise_dim},
                   {"hidden", mp.config.hidden},     {"time_scale", mp.config.time_scale}};
    j["marks"] = mp.mark_space.size;
    nlohmann::json params = nlohmann::json::object();
    mp.for_each_param([&](const std::string& name, const Mat& m) {
        params[name] = detail::mat_to_json(m);
    });
    j["params"] = std::move(params);
    return j;
}

inline ModelParams params_from_json(const nlohmann::json& j) {
    DappConfig cfg;
    const auto& jc = j.at("config");
    cfg.heads = jc.at("heads").get<int>();
    cfg.value_dim = jc.at("value_dim").get<int>();
    cfg.feature_dim = jc.at("feature_dim").get<int>();
    cfg.noise_dim = jc.at("noise_dim").get<int>();
    cfg.hidden = jc.at("hidden").get<std::vector<int>>();
    cfg.time_scale = jc.at("time_scale").get<double>();
    MarkSpace ms{j.at("marks").get<int>()};
    Rng dummy(0);
    ModelParams mp = ModelParams::init(cfg, ms, dummy);
    const auto& params = j.at("params");
    mp.for_each_param([&](const std::string& name, Mat& m) {
        Mat loaded = detail::mat_from_json(params.at(name));
        if (loaded.rows() != m.rows() || loaded.cols() != m.cols())
            throw ShapeMismatch("checkpoint: " + name + " is " + shape_str(loaded) + ", expected " +
                                shape_str(m));
        m = std::move(loaded);
    });
    return mp;
}

// Checkpoint file: parameters plus free-form metadata (hyperparameters, seed,
// input digest) so every output can be regenerated from the file alone.
inline void save_checkpoint(const ModelParams& mp, const std::string& path,
                            const nlohmann::json& metadata = {}) {
    nlohmann::json j = params_to_json(mp);
    if (!metadata.is_null()) j["metadata"] = metadata;
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

inline ModelParams load_checkpoint(const std::string& path, nlohmann::json* metadata = nullptr) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("bad checkpoint " + path + ": " + e.what());
    }
    if (metadata && j.contains("metadata")) *metadata = j.at("metadata");
    return params_from_json(j);
}

}  // namespace dapp
