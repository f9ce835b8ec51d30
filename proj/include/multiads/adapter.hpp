#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "multiads/binary_io.hpp"
#include "multiads/encoder.hpp"
#include "multiads/rng.hpp"
#include "multiads/tensor.hpp"

namespace multiads {

inline constexpr double kDefaultTau = 0.07;

/// Linear map from one stage's width N_i to the joint width N_z.
struct StageAdapter {
    Tensor2<double> weight;  // N_z × N_i
    std::vector<double> bias;  // N_z

    [[nodiscard]] std::size_t in_width() const noexcept { return weight.cols(); }
    [[nodiscard]] std::size_t out_width() const noexcept { return weight.rows(); }

    bool operator==(const StageAdapter&) const = default;
};

struct AdapterParams {
    std::vector<StageAdapter> stages;
    double tau = kDefaultTau;

    /// Fan-in uniform init W ~ U(±1/√N_i), zero bias.
    static AdapterParams initialize(const EmbeddingLayout& layout, std::uint64_t seed, double tau = kDefaultTau) {
        layout.validate();
        AdapterParams p;
        p.tau = tau;
        for (std::size_t i = 0; i < layout.stages.size(); ++i) {
            const std::size_t n_in = layout.stages[i].width;
            StageAdapter s{Tensor2<double>(layout.joint_width, n_in), std::vector<double>(layout.joint_width, 0.0)};
            SplitMix64 rng(mix_seed(seed, 7000 + i));
            const double bound = 1.0 / std::sqrt(static_cast<double>(n_in));
            for (auto& w : s.weight.values()) w = rng.uniform(-bound, bound);
            p.stages.push_back(std::move(s));
        }
        p.validate();
        return p;
    }

    [[nodiscard]] std::size_t stage_count() const noexcept { return stages.size(); }
    [[nodiscard]] std::size_t joint_width() const noexcept { return stages.empty() ? 0 : stages.front().out_width(); }

    void validate() const {
        if (stages.empty()) throw ConfigError("adapter has no stages");
        if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be a positive finite number");
        for (std::size_t i = 0; i < stages.size(); ++i) {
            const auto& s = stages[i];
            if (s.out_width() != joint_width() || s.bias.size() != joint_width())
                throw ShapeMismatch("stage " + std::to_string(i) + " adapter output width differs");
            for (double v : s.weight.values())
                if (!std::isfinite(v)) throw NumericError("non-finite adapter weight in stage " + std::to_string(i));
            for (double v : s.bias)
                if (!std::isfinite(v)) throw NumericError("non-finite adapter bias in stage " + std::to_string(i));
        }
    }

    /// Throws unless the adapters fit the backend's stage layout.
    void check_layout(const EmbeddingLayout& layout) const {
        if (stages.size() != layout.stages.size())
            throw DimensionMismatch("adapter has " + std::to_string(stages.size()) + " stages, backend has " +
                                    std::to_string(layout.stages.size()));
        if (joint_width() != layout.joint_width) throw DimensionMismatch("adapter N_z differs from backend N_z");
        for (std::size_t i = 0; i < stages.size(); ++i) {
            if (stages[i].in_width() != layout.stages[i].width)
                throw DimensionMismatch("stage " + std::to_string(i) + " width differs from backend");
        }
    }

    bool operator==(const AdapterParams&) const = default;
};

/// Per-pixel state probabilities for every stage.
struct SimilarityMapStack {
    std::vector<ProbStack> maps;  // m × (K+1, h_i, w_i)
    std::vector<std::string> state_ids;
};

/// Projection output with the pre-normalization norms kept for backprop.
struct Projection {
    AdaptedGrid unit;     // h × w × N_z, unit fibers
    Tensor2<double> norm;  // h × w, ‖W e + b‖
};

inline Projection project_with_norms(const AdapterParams& params, const PatchGrid& stage, std::size_t stage_index,
                                     bool normalize_input = false) {
    if (stage_index >= params.stages.size()) throw ShapeMismatch("stage index out of range");
    const auto& a = params.stages[stage_index];
    if (stage.dim2() != a.in_width())
        throw ShapeMismatch("stage " + std::to_string(stage_index) + " width " + std::to_string(stage.dim2()) +
                            " does not match adapter input " + std::to_string(a.in_width()));
    const std::size_t n_in = a.in_width();
    const std::size_t n_out = a.out_width();
    Projection out{AdaptedGrid(stage.dim0(), stage.dim1(), n_out), Tensor2<double>(stage.dim0(), stage.dim1())};
    std::vector<double> e(n_in);
    for (std::size_t y = 0; y < stage.dim0(); ++y) {
        for (std::size_t x = 0; x < stage.dim1(); ++x) {
            const auto src = stage.fiber(y, x);
            std::copy(src.begin(), src.end(), e.begin());
            if (normalize_input) e = normalize(std::span<const double>(e));
            auto z = out.unit.fiber(y, x);
            double sq = 0.0;
            for (std::size_t r = 0; r < n_out; ++r) {
                const auto wrow = a.weight.row(r);
                double acc = a.bias[r];
                for (std::size_t c = 0; c < n_in; ++c) acc += wrow[c] * e[c];
                z[r] = acc;
                sq += acc * acc;
            }
            const double n = std::sqrt(sq);
            if (!(n > 0.0) || !std::isfinite(n))
                throw ZeroVector("adapted patch (" + std::to_string(y) + "," + std::to_string(x) + ") of stage " +
                                 std::to_string(stage_index) + " has norm " + std::to_string(n));
            for (auto& v : z) v /= n;
            out.norm(y, x) = n;
        }
    }
    return out;
}

/// Per pixel z = normalize(W_i e + b_i).
inline AdaptedGrid project(const AdapterParams& params, const PatchGrid& stage, std::size_t stage_index,
                           bool normalize_input = false) {
    return project_with_norms(params, stage, stage_index, normalize_input).unit;
}

/// Softmax over states of cosine / tau, stabilized by max subtraction.
inline void softmax_cosines(std::span<const double> cosines, double tau, std::span<double> out) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double c : cosines) hi = std::max(hi, c / tau);
    double sum = 0.0;
    for (std::size_t j = 0; j < cosines.size(); ++j) {
        out[j] = std::exp(cosines[j] / tau - hi);
        sum += out[j];
    }
    for (auto& p : out) p /= sum;
}

/// (K+1)×h×w map of state probabilities for unit-norm adapted patches.
inline ProbStack similarity_map(const AdaptedGrid& adapted, const StateTextEmbeddings& text, double tau) {
    if (adapted.dim2() != text.width())
        throw ShapeMismatch("adapted width " + std::to_string(adapted.dim2()) + " != text width " +
                            std::to_string(text.width()));
    if (text.state_count() == 0) throw ShapeMismatch("no text states");
    const std::size_t states = text.state_count();
    ProbStack out(states, adapted.dim0(), adapted.dim1());
    std::vector<double> cos(states);
    std::vector<double> p(states);
    for (std::size_t y = 0; y < adapted.dim0(); ++y) {
        for (std::size_t x = 0; x < adapted.dim1(); ++x) {
            const auto z = adapted.fiber(y, x);
            for (std::size_t j = 0; j < states; ++j) cos[j] = dot(z, text.row(j));
            softmax_cosines(cos, tau, p);
            for (std::size_t j = 0; j < states; ++j) out(j, y, x) = p[j];
        }
    }
    return out;
}

inline SimilarityMapStack similarity_stack(const AdapterParams& params, const ImageEmbeddings& emb,
                                           const StateTextEmbeddings& text, bool normalize_input = false) {
    if (emb.stages.size() != params.stages.size())
        throw ShapeMismatch("embedding stage count differs from adapter stage count");
    SimilarityMapStack stack;
    stack.state_ids = text.state_ids;
    for (std::size_t i = 0; i < emb.stages.size(); ++i) {
        stack.maps.push_back(similarity_map(project(params, emb.stages[i], i, normalize_input), text, params.tau));
    }
    return stack;
}

struct GlobalScore {
    std::vector<double> probs;  // K+1
    double anomaly = 0.0;       // a_x = 1 - probs[normal]
};

/// Image-level state probabilities from the frozen global embedding; it
/// bypasses the adapters and takes no gradient.
inline GlobalScore global_score(const AdapterParams& params, const StateTextEmbeddings& text,
                                std::span<const float> global_embedding) {
    if (global_embedding.size() != text.width()) throw ShapeMismatch("global embedding width != text width");
    const auto g = normalize(global_embedding);
    std::vector<double> cos(text.state_count());
    for (std::size_t j = 0; j < cos.size(); ++j) cos[j] = dot(g, text.row(j));
    GlobalScore s;
    s.probs.resize(cos.size());
    softmax_cosines(cos, params.tau, s.probs);
    s.anomaly = 1.0 - s.probs[0];
    return s;
}

// Checkpoint "MADSADP1": u32 version | u32 m | u32 N_z | f32 tau
//   | m × (u32 N_i | f32 W[N_z × N_i] row-major | f32 b[N_z])

inline constexpr std::string_view kAdapterMagic = "MADSADP1";

inline binio::Writer encode_adapters(const AdapterParams& params) {
    params.validate();
    binio::Writer w;
    w.bytes(kAdapterMagic);
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(params.stages.size()));
    w.u32(static_cast<std::uint32_t>(params.joint_width()));
    w.f32(static_cast<float>(params.tau));
    for (const auto& s : params.stages) {
        w.u32(static_cast<std::uint32_t>(s.in_width()));
        w.f32s(s.weight.values());
        w.f32s(std::span<const double>(s.bias));
    }
    return w;
}

inline void save_adapters(const std::filesystem::path& path, const AdapterParams& params) {
    encode_adapters(params).save(path);
}

inline AdapterParams decode_adapters(binio::Reader r) {
    if (r.bytes(kAdapterMagic.size()) != kAdapterMagic) throw DataError("bad adapter checkpoint magic in " + r.origin());
    if (r.u32() != 1) throw DataError("unsupported adapter checkpoint version");
    const auto m = r.u32();
    const auto nz = r.u32();
    AdapterParams p;
    p.tau = r.f32();
    for (std::uint32_t i = 0; i < m; ++i) {
        const auto n_in = r.u32();
        StageAdapter s{Tensor2<double>(nz, n_in), std::vector<double>(nz)};
        for (auto& v : s.weight.values()) v = r.f32();
        for (auto& v : s.bias) v = r.f32();
        p.stages.push_back(std::move(s));
    }
    if (r.remaining() != 0) throw DataError("trailing bytes in adapter checkpoint " + r.origin());
    p.validate();
    return p;
}

inline AdapterParams load_adapters(const std::filesystem::path& path) {
    return decode_adapters(binio::Reader::from_file(path));
}

}  // namespace multiads
