#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "multiads/dataio.hpp"
#include "multiads/encoder.hpp"
#include "multiads/fewshot.hpp"
#include "multiads/infer.hpp"
#include "multiads/kba.hpp"
#include "multiads/train.hpp"

namespace multiads {

enum class BackendKind { mock, precomputed };

struct BackendConfig {
    BackendKind kind = BackendKind::mock;
    std::optional<EmbeddingLayout> layout;  // mock: explicit layout, else a default
    std::uint64_t mock_seed = 0;
    std::filesystem::path images;  // precomputed: MEB file
    std::filesystem::path text;    // precomputed: MADSTXT file
};

/// Everything a CLI run needs. Loaded from JSON; unknown keys are rejected.
struct RunConfig {
    double tau = kDefaultTau;
    double gamma = 2.0;
    double dice_eps = 1.0;
    double lr = 0.001;
    std::size_t batch_size = 8;
    std::size_t epochs = 5;
    Optimizer optimizer = Optimizer::adam;
    std::uint64_t seed = 0;
    std::size_t m = 4;
    bool exclude_combined = true;
    UpsampleMode upsample = UpsampleMode::bilinear;
    double theta = kDefaultTheta;
    double alpha_quantile = kDefaultAlphaQuantile;

    BackendConfig backend;
    std::filesystem::path dataset_root;
    std::filesystem::path kba;
    std::vector<std::string> products;  // empty = every KBA product found under the root

    PreprocessConfig preprocess;
    std::vector<double> loss_weights;
    bool pre_normalize = false;
    bool downsample_gt = false;

    /// Mock layout when none is configured: m stages of 8×8×32, N_z = 32.
    [[nodiscard]] EmbeddingLayout mock_layout() const {
        if (backend.layout) return *backend.layout;
        EmbeddingLayout l;
        l.joint_width = 32;
        l.stages.assign(m, StageShape{8, 8, 32});
        return l;
    }

    [[nodiscard]] LossConfig loss_config() const {
        LossConfig c;
        c.gamma = gamma;
        c.dice_eps = dice_eps;
        c.stage_weights = loss_weights;
        c.upsample = upsample;
        c.downsample_gt = downsample_gt;
        c.normalize_input = pre_normalize;
        return c;
    }

    [[nodiscard]] TrainConfig train_config() const {
        TrainConfig c;
        c.learning_rate = lr;
        c.batch_size = batch_size;
        c.epochs = epochs;
        c.optimizer = optimizer;
        c.seed = seed;
        c.stage_count = m;
        c.exclude_combined = exclude_combined;
        c.tau = tau;
        c.loss = loss_config();
        return c;
    }

    [[nodiscard]] InferenceOptions inference_options() const { return {theta, upsample, pre_normalize}; }

    void validate() const {
        train_config().validate();
        preprocess.validate();
        if (!(theta >= 0.0 && theta <= 1.0)) throw ConfigError("theta must lie in [0,1]");
        check_alpha(alpha_quantile);
        if (backend.kind == BackendKind::mock) mock_layout().validate();
        if (backend.kind == BackendKind::precomputed && (backend.images.empty() || backend.text.empty()))
            throw ConfigError("precomputed backend needs both 'images' and 'text' paths");
    }
};

namespace detail {

inline void reject_unknown(const ordered_json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ValidationError(where + " must be an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.contains(key)) throw ValidationError("unknown key '" + key + "' in " + where);
}

template <class T>
T get_as(const ordered_json& j, const std::string& key) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError("config key '" + key + "' has the wrong type");
    }
}

inline std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

inline std::array<double, 3> triple(const ordered_json& j, const std::string& key) {
    const auto v = get_as<std::vector<double>>(j, key);
    if (v.size() != 3) throw ValidationError("'" + key + "' needs three values");
    return {v[0], v[1], v[2]};
}

}  // namespace detail

/// Parses a run config. Relative paths resolve against `base_dir`.
inline RunConfig run_config_from_json(const ordered_json& j, const std::filesystem::path& base_dir = {}) {
    using detail::get_as;
    detail::reject_unknown(j,
                           {"tau", "gamma", "dice_eps", "lr", "batch_size", "epochs", "optimizer", "seed", "m",
                            "exclude_combined", "upsample", "theta", "alpha_quantile", "backend", "dataset_root", "kba",
                            "products", "image_size", "mean", "std", "loss_weights", "pre_normalize", "downsample_gt"},
                           "run config");
    RunConfig c;
    if (j.contains("tau")) c.tau = get_as<double>(j, "tau");
    if (j.contains("gamma")) c.gamma = get_as<double>(j, "gamma");
    if (j.contains("dice_eps")) c.dice_eps = get_as<double>(j, "dice_eps");
    if (j.contains("lr")) c.lr = get_as<double>(j, "lr");
    if (j.contains("batch_size")) c.batch_size = get_as<std::size_t>(j, "batch_size");
    if (j.contains("epochs")) c.epochs = get_as<std::size_t>(j, "epochs");
    if (j.contains("optimizer")) {
        const auto o = get_as<std::string>(j, "optimizer");
        if (o == "adam")
            c.optimizer = Optimizer::adam;
        else if (o == "sgd")
            c.optimizer = Optimizer::sgd;
        else
            throw ValidationError("optimizer must be 'adam' or 'sgd'");
    }
    if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j, "seed");
    if (j.contains("m")) c.m = get_as<std::size_t>(j, "m");
    if (j.contains("exclude_combined")) c.exclude_combined = get_as<bool>(j, "exclude_combined");
    if (j.contains("upsample")) {
        const auto u = get_as<std::string>(j, "upsample");
        if (u == "bilinear")
            c.upsample = UpsampleMode::bilinear;
        else if (u == "nearest")
            c.upsample = UpsampleMode::nearest;
        else
            throw ValidationError("upsample must be 'bilinear' or 'nearest'");
    }
    if (j.contains("theta")) c.theta = get_as<double>(j, "theta");
    if (j.contains("alpha_quantile")) c.alpha_quantile = get_as<double>(j, "alpha_quantile");
    if (j.contains("dataset_root")) c.dataset_root = detail::resolve_path(base_dir, get_as<std::string>(j, "dataset_root"));
    if (j.contains("kba")) c.kba = detail::resolve_path(base_dir, get_as<std::string>(j, "kba"));
    if (j.contains("products")) c.products = get_as<std::vector<std::string>>(j, "products");
    if (j.contains("image_size")) c.preprocess.image_size = get_as<std::size_t>(j, "image_size");
    if (j.contains("mean")) c.preprocess.mean = detail::triple(j, "mean");
    if (j.contains("std")) c.preprocess.std = detail::triple(j, "std");
    if (j.contains("loss_weights")) c.loss_weights = get_as<std::vector<double>>(j, "loss_weights");
    if (j.contains("pre_normalize")) c.pre_normalize = get_as<bool>(j, "pre_normalize");
    if (j.contains("downsample_gt")) c.downsample_gt = get_as<bool>(j, "downsample_gt");

    if (j.contains("backend")) {
        const auto& b = j.at("backend");
        detail::reject_unknown(b, {"type", "seed", "stages", "joint_width", "images", "text"}, "backend");
        const auto type = get_as<std::string>(b, "type");
        if (type == "mock") {
            c.backend.kind = BackendKind::mock;
            if (b.contains("seed")) c.backend.mock_seed = get_as<std::uint64_t>(b, "seed");
            if (b.contains("stages") != b.contains("joint_width"))
                throw ValidationError("mock backend needs both 'stages' and 'joint_width' or neither");
            if (b.contains("stages")) {
                EmbeddingLayout l;
                l.joint_width = get_as<std::uint32_t>(b, "joint_width");
                for (const auto& s : b.at("stages")) {
                    const auto v = s.get<std::vector<std::uint32_t>>();
                    if (v.size() != 3) throw ValidationError("mock stage must be [h, w, width]");
                    l.stages.push_back({v[0], v[1], v[2]});
                }
                c.backend.layout = l;
            }
        } else if (type == "precomputed") {
            c.backend.kind = BackendKind::precomputed;
            if (!b.contains("images") || !b.contains("text"))
                throw ValidationError("precomputed backend needs 'images' and 'text'");
            c.backend.images = detail::resolve_path(base_dir, get_as<std::string>(b, "images"));
            c.backend.text = detail::resolve_path(base_dir, get_as<std::string>(b, "text"));
        } else {
            throw ValidationError("backend type must be 'mock' or 'precomputed'");
        }
    }
    if (const char* env = std::getenv("MULTIADS_SEED"); env != nullptr && *env != '\0') {
        try {
            std::size_t used = 0;
            c.seed = std::stoull(env, &used);
            if (env[used] != '\0') throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw ValidationError("MULTIADS_SEED must be an unsigned integer");
        }
    }
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return run_config_from_json(detail::parse_strict(ss.str(), path.string()), path.parent_path());
}

}  // namespace multiads
