#pragma once

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <array>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "multiads/error.hpp"
#include "multiads/prompts.hpp"
#include "multiads/rng.hpp"
#include "multiads/tensor.hpp"

namespace multiads {

struct StageShape {
    std::uint32_t h = 0;
    std::uint32_t w = 0;
    std::uint32_t width = 0;  // N_i

    bool operator==(const StageShape&) const = default;
};

/// Shapes the backbone produces: m stage grids and the joint width N_z.
struct EmbeddingLayout {
    std::vector<StageShape> stages;
    std::uint32_t joint_width = 0;

    [[nodiscard]] std::size_t stage_count() const noexcept { return stages.size(); }

    void validate() const {
        if (stages.empty()) throw ConfigError("embedding layout needs at least one stage");
        if (joint_width == 0) throw ConfigError("joint width N_z must be positive");
        for (std::size_t i = 0; i < stages.size(); ++i) {
            const auto& s = stages[i];
            if (s.h == 0 || s.w == 0 || s.width == 0)
                throw ConfigError("stage " + std::to_string(i) + " has a zero dimension");
        }
    }

    bool operator==(const EmbeddingLayout&) const = default;
};

/// Backbone output for one image: per-stage patch grids and a global vector.
struct ImageEmbeddings {
    std::vector<PatchGrid> stages;
    std::vector<float> global;

    void check(const EmbeddingLayout& layout) const {
        if (stages.size() != layout.stages.size())
            throw DimensionMismatch("embedding has " + std::to_string(stages.size()) + " stages, layout expects " +
                                    std::to_string(layout.stages.size()));
        for (std::size_t i = 0; i < stages.size(); ++i) {
            const auto& s = layout.stages[i];
            if (stages[i].dim0() != s.h || stages[i].dim1() != s.w || stages[i].dim2() != s.width)
                throw DimensionMismatch("stage " + std::to_string(i) + " shape does not match layout");
        }
        if (global.size() != layout.joint_width) throw DimensionMismatch("global embedding width != N_z");
    }

    bool operator==(const ImageEmbeddings&) const = default;
};

/// K+1 unit-norm text embeddings, row 0 the normal state.
struct StateTextEmbeddings {
    std::vector<std::string> state_ids;
    Tensor2<double> vectors;  // (K+1) × N_z

    [[nodiscard]] std::size_t state_count() const noexcept { return vectors.rows(); }
    [[nodiscard]] std::size_t width() const noexcept { return vectors.cols(); }
    [[nodiscard]] std::span<const double> row(std::size_t j) const { return vectors.row(j); }

    /// Copy restricted to the given states, in the given order.
    [[nodiscard]] StateTextEmbeddings select(const std::vector<std::string>& ids) const {
        StateTextEmbeddings out{ids, Tensor2<double>(ids.size(), width())};
        for (std::size_t r = 0; r < ids.size(); ++r) {
            auto it = std::find(state_ids.begin(), state_ids.end(), ids[r]);
            if (it == state_ids.end()) throw UnknownState("no text embedding for state '" + ids[r] + "'");
            auto src = row(static_cast<std::size_t>(it - state_ids.begin()));
            std::copy(src.begin(), src.end(), out.vectors.row(r).begin());
        }
        return out;
    }

    bool operator==(const StateTextEmbeddings&) const = default;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

/// v / ‖v‖₂.
inline std::vector<double> normalize(std::span<const double> v) {
    const double n = l2_norm(v);
    if (!(n > 0.0) || !std::isfinite(n)) throw ZeroVector("cannot normalize a vector of norm " + std::to_string(n));
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

inline std::vector<double> normalize(std::span<const float> v) {
    std::vector<double> d(v.begin(), v.end());
    return normalize(std::span<const double>(d));
}

/// Produces image embeddings. Implementations are read-only after
/// construction and safe to call concurrently.
class ImageBackend {
  public:
    virtual ~ImageBackend() = default;
    [[nodiscard]] virtual const EmbeddingLayout& layout() const = 0;
    /// True when `encode` reads pixels; false for file-backed exports keyed by path.
    [[nodiscard]] virtual bool needs_pixels() const = 0;
    [[nodiscard]] virtual ImageEmbeddings encode(std::string_view relative_path, const Image* pixels) const = 0;
};

/// Produces one averaged, unit-norm embedding per prompt set.
class TextBackend {
  public:
    virtual ~TextBackend() = default;
    [[nodiscard]] virtual std::uint32_t width() const = 0;
    [[nodiscard]] virtual std::vector<double> encode_state(const PromptSet& set) const = 0;
};

/// Mean of already-normalized per-prompt vectors, re-normalized.
inline std::vector<double> average_prompt_embeddings(const std::vector<std::vector<double>>& per_prompt) {
    if (per_prompt.empty()) throw ConfigError("prompt set is empty");
    std::vector<double> mean(per_prompt.front().size(), 0.0);
    for (const auto& v : per_prompt) {
        const auto unit = normalize(std::span<const double>(v));
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += unit[i];
    }
    for (auto& x : mean) x /= static_cast<double>(per_prompt.size());
    return normalize(std::span<const double>(mean));
}

inline StateTextEmbeddings encode_text_states(const TextBackend& backend, const Kba& kba, std::string_view product,
                                              const std::vector<std::string>& roster) {
    StateTextEmbeddings out{roster, Tensor2<double>(roster.size(), backend.width())};
    for (std::size_t j = 0; j < roster.size(); ++j) {
        const auto v = backend.encode_state(build_prompt_set(kba, product, roster[j]));
        if (v.size() != backend.width()) throw BackendError("text embedding width mismatch");
        std::copy(v.begin(), v.end(), out.vectors.row(j).begin());
    }
    return out;
}

/// Deterministic stand-in for the frozen backbone.
///
/// Patch embeddings are a seeded random linear projection of local pixel
/// statistics (per-channel mean and standard deviation plus a constant), so
/// regions with different colour or texture map to different features. Text
/// embeddings are seeded Gaussian vectors keyed by the prompt string.
class MockBackend final : public ImageBackend, public TextBackend {
  public:
    static constexpr std::size_t kChannels = 3;
    static constexpr std::size_t kFeatures = 2 * kChannels + 1;

    MockBackend(EmbeddingLayout layout, std::uint64_t seed) : layout_(std::move(layout)), seed_(seed) {
        layout_.validate();
        for (std::size_t i = 0; i < layout_.stages.size(); ++i) {
            projections_.push_back(random_matrix(layout_.stages[i].width, kFeatures, mix_seed(seed_, 100 + i)));
        }
        global_projection_ = random_matrix(layout_.joint_width, kFeatures, mix_seed(seed_, 99));
    }

    [[nodiscard]] const EmbeddingLayout& layout() const override { return layout_; }
    [[nodiscard]] bool needs_pixels() const override { return true; }
    [[nodiscard]] std::uint32_t width() const override { return layout_.joint_width; }

    [[nodiscard]] ImageEmbeddings encode(std::string_view relative_path, const Image* pixels) const override {
        if (pixels == nullptr) throw BackendError("mock backend needs pixels for '" + std::string(relative_path) + "'");
        const Image& img = *pixels;
        if (img.dim2() != kChannels || img.dim0() == 0 || img.dim1() == 0)
            throw BackendError("mock backend expects an H×W×3 image");

        ImageEmbeddings out;
        for (std::size_t i = 0; i < layout_.stages.size(); ++i) {
            const auto& s = layout_.stages[i];
            if (img.dim0() < s.h || img.dim1() < s.w) throw BackendError("image smaller than stage grid");
            PatchGrid grid(s.h, s.w, s.width);
            for (std::size_t a = 0; a < s.h; ++a) {
                const std::size_t r0 = a * img.dim0() / s.h;
                const std::size_t r1 = (a + 1) * img.dim0() / s.h;
                for (std::size_t b = 0; b < s.w; ++b) {
                    const std::size_t c0 = b * img.dim1() / s.w;
                    const std::size_t c1 = (b + 1) * img.dim1() / s.w;
                    const auto f = region_features(img, r0, r1, c0, c1);
                    project_into(projections_[i], f, grid.fiber(a, b));
                }
            }
            out.stages.push_back(std::move(grid));
        }
        const auto g = region_features(img, 0, img.dim0(), 0, img.dim1());
        std::vector<float> global(layout_.joint_width);
        project_into(global_projection_, g, global);
        const auto unit = normalize(std::span<const float>(global));
        out.global.assign(unit.begin(), unit.end());
        return out;
    }

    /// One prompt's embedding (unit norm).
    [[nodiscard]] std::vector<double> encode_prompt(std::string_view prompt) const {
        SplitMix64 rng(mix_seed(seed_, fnv1a64(prompt)));
        std::vector<double> v(layout_.joint_width);
        for (auto& x : v) x = rng.normal();
        return normalize(std::span<const double>(v));
    }

    [[nodiscard]] std::vector<double> encode_state(const PromptSet& set) const override {
        std::vector<std::vector<double>> per_prompt;
        per_prompt.reserve(set.prompts.size());
        for (const auto& p : set.prompts) per_prompt.push_back(encode_prompt(p));
        return average_prompt_embeddings(per_prompt);
    }

  private:
    using Matrix = Tensor2<double>;

    static Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
        SplitMix64 rng(seed);
        Matrix m(rows, cols);
        const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
        for (auto& x : m.values()) x = rng.normal() * scale;
        return m;
    }

    static std::array<double, kFeatures> region_features(const Image& img, std::size_t r0, std::size_t r1,
                                                         std::size_t c0, std::size_t c1) {
        std::array<double, kFeatures> f{};
        const double n = static_cast<double>((r1 - r0) * (c1 - c0));
        for (std::size_t ch = 0; ch < kChannels; ++ch) {
            double sum = 0.0;
            double sq = 0.0;
            for (std::size_t r = r0; r < r1; ++r) {
                for (std::size_t c = c0; c < c1; ++c) {
                    const double v = img(r, c, ch);
                    sum += v;
                    sq += v * v;
                }
            }
            const double mean = sum / n;
            f[ch] = mean;
            f[kChannels + ch] = std::sqrt(std::max(0.0, sq / n - mean * mean));
        }
        f[kFeatures - 1] = 1.0;
        return f;
    }

    static void project_into(const Matrix& p, const std::array<double, kFeatures>& f, std::span<float> out) {
        for (std::size_t r = 0; r < p.rows(); ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < kFeatures; ++c) acc += p(r, c) * f[c];
            out[r] = static_cast<float>(acc);
        }
    }

    EmbeddingLayout layout_;
    std::uint64_t seed_;
    std::vector<Matrix> projections_;
    Matrix global_projection_;
};

}  // namespace multiads
