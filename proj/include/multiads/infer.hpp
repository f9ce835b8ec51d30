#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "multiads/adapter.hpp"
#include "multiads/upsample.hpp"

namespace multiads {

inline constexpr double kDefaultTheta = 0.5;

struct MultiDefectMap {
    ProbStack probs;  // (K+1) × H × W
    std::vector<std::string> state_ids;
};

/// (1/m) Σ_i UP(S_i).
inline MultiDefectMap multi_defect_map(const SimilarityMapStack& stack, std::size_t H, std::size_t W,
                                       UpsampleMode mode = UpsampleMode::bilinear) {
    if (stack.maps.empty()) throw EmptyStack("no similarity maps to average");
    MultiDefectMap out{ProbStack(stack.maps.front().dim0(), H, W), stack.state_ids};
    auto acc = out.probs.values();
    for (const auto& s : stack.maps) {
        if (s.dim0() != out.probs.dim0()) throw ShapeMismatch("stages disagree on the state count");
        const auto up = upsample(s, H, W, mode);
        const auto v = up.values();
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += v[k];
    }
    const double inv_m = 1.0 / static_cast<double>(stack.maps.size());
    for (auto& v : acc) v *= inv_m;
    return out;
}

/// (1/m) Σ_i (1 - UP(S_i)[0]).
inline ScoreMap anomaly_map(const SimilarityMapStack& stack, std::size_t H, std::size_t W,
                            UpsampleMode mode = UpsampleMode::bilinear) {
    if (stack.maps.empty()) throw EmptyStack("no similarity maps to average");
    ScoreMap out(H, W);
    for (const auto& s : stack.maps) {
        ScoreMap normal(s.dim1(), s.dim2());
        for (std::size_t y = 0; y < s.dim1(); ++y)
            for (std::size_t x = 0; x < s.dim2(); ++x) normal(y, x) = s(0, y, x);
        const auto up = upsample(normal, H, W, mode);
        for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] += 1.0 - up.data()[k];
    }
    const double inv_m = 1.0 / static_cast<double>(stack.maps.size());
    for (auto& v : out.values()) v *= inv_m;
    return out;
}

struct Decision {
    double score = 0.0;
    bool anomalous = false;
};

inline double max_score(const ScoreMap& map) {
    if (map.empty()) throw ShapeMismatch("empty anomaly map");
    return *std::max_element(map.values().begin(), map.values().end());
}

/// score = (max(anomaly) + a_x) / 2, anomalous iff score > θ.
inline Decision image_decision(const ScoreMap& anomaly, double a_x, double theta = kDefaultTheta) {
    if (!(theta >= 0.0 && theta <= 1.0)) throw ConfigError("theta must lie in [0,1]");
    const double score = 0.5 * (max_score(anomaly) + a_x);
    return {score, score > theta};
}

/// Per-pixel argmax over states; ties go to the lowest index.
inline LabelMap classify_pixels(const ProbStack& probs) {
    LabelMap out(probs.dim1(), probs.dim2());
    for (std::size_t y = 0; y < probs.dim1(); ++y) {
        for (std::size_t x = 0; x < probs.dim2(); ++x) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < probs.dim0(); ++j)
                if (probs(j, y, x) > probs(best, y, x)) best = j;
            out(y, x) = static_cast<int>(best);
        }
    }
    return out;
}

inline LabelMap classify_pixels(const MultiDefectMap& mdm) { return classify_pixels(mdm.probs); }

struct InferenceOptions {
    double theta = kDefaultTheta;
    UpsampleMode upsample = UpsampleMode::bilinear;
    bool normalize_input = false;
};

struct InferenceResult {
    MultiDefectMap multi;
    ScoreMap anomaly;
    double global_anomaly = 0.0;  // a_x
    Decision decision;
};

/// Zero-shot inference for one embedded image. The roster of `text` selects
/// full or filtered mode.
inline InferenceResult infer_embeddings(const ImageEmbeddings& emb, const AdapterParams& params,
                                        const StateTextEmbeddings& text, std::size_t H, std::size_t W,
                                        const InferenceOptions& opt = {}) {
    const auto stack = similarity_stack(params, emb, text, opt.normalize_input);
    InferenceResult r;
    r.multi = multi_defect_map(stack, H, W, opt.upsample);
    r.anomaly = anomaly_map(stack, H, W, opt.upsample);
    r.global_anomaly = global_score(params, text, emb.global).anomaly;
    r.decision = image_decision(r.anomaly, r.global_anomaly, opt.theta);
    return r;
}

/// Encode then infer. `pixels` may be null for file-backed backends.
inline InferenceResult infer_image(const ImageBackend& backend, std::string_view relative_path, const Image* pixels,
                                   const AdapterParams& params, const StateTextEmbeddings& text, std::size_t H,
                                   std::size_t W, const InferenceOptions& opt = {}) {
    params.check_layout(backend.layout());
    return infer_embeddings(backend.encode(relative_path, pixels), params, text, H, W, opt);
}

}  // namespace multiads
