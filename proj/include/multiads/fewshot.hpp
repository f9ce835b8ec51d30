#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "multiads/adapter.hpp"
#include "multiads/binary_io.hpp"
#include "multiads/infer.hpp"
#include "multiads/upsample.hpp"

namespace multiads {

inline constexpr double kDefaultAlphaQuantile = 0.99;

/// Adapted unit-norm patch vectors pooled per stage.
struct MemoryBank {
    std::vector<Tensor2<double>> stages;  // m × (count × N_z)

    [[nodiscard]] std::size_t stage_count() const noexcept { return stages.size(); }
    [[nodiscard]] std::size_t size(std::size_t stage) const { return stages.at(stage).rows(); }
    [[nodiscard]] std::size_t joint_width() const noexcept { return stages.empty() ? 0 : stages.front().cols(); }

    bool operator==(const MemoryBank&) const = default;
};

namespace detail {

inline void append_rows(Tensor2<double>& dst, const AdaptedGrid& grid) {
    const std::size_t n = grid.dim0() * grid.dim1();
    Tensor2<double> grown(dst.rows() + n, grid.dim2());
    std::copy(dst.values().begin(), dst.values().end(), grown.values().begin());
    std::copy(grid.values().begin(), grid.values().end(), grown.values().begin() + static_cast<std::ptrdiff_t>(dst.size()));
    dst = std::move(grown);
}

/// 1 - max over bank rows of z·v for every patch of an adapted grid.
inline ScoreMap nearest_scores(const AdaptedGrid& query, const Tensor2<double>& bank) {
    if (bank.rows() == 0) throw EmptyReferences("memory bank stage is empty");
    if (bank.cols() != query.dim2()) throw ShapeMismatch("bank width differs from query width");
    ScoreMap out(query.dim0(), query.dim1());
    for (std::size_t y = 0; y < query.dim0(); ++y) {
        for (std::size_t x = 0; x < query.dim1(); ++x) {
            const auto z = query.fiber(y, x);
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < bank.rows(); ++r) best = std::max(best, dot(z, bank.row(r)));
            out(y, x) = 1.0 - best;
        }
    }
    return out;
}

/// Mean over stages of up-sampled per-stage score grids.
inline ScoreMap average_upsampled(const std::vector<ScoreMap>& per_stage, std::size_t H, std::size_t W,
                                  UpsampleMode mode) {
    if (per_stage.empty()) throw EmptyStack("no stage maps to average");
    ScoreMap out(H, W);
    for (const auto& s : per_stage) {
        const auto up = upsample(s, H, W, mode);
        for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] += up.data()[k];
    }
    for (auto& v : out.values()) v /= static_cast<double>(per_stage.size());
    return out;
}

}  // namespace detail

inline MemoryBank build_bank(const std::vector<ImageEmbeddings>& refs, const AdapterParams& params,
                             bool normalize_input = false) {
    if (refs.empty()) throw EmptyReferences("few-shot needs at least one reference image");
    MemoryBank bank;
    bank.stages.assign(params.stage_count(), Tensor2<double>(0, params.joint_width()));
    for (const auto& ref : refs) {
        if (ref.stages.size() != params.stage_count()) throw ShapeMismatch("reference stage count differs from adapter");
        for (std::size_t i = 0; i < ref.stages.size(); ++i)
            detail::append_rows(bank.stages[i], project(params, ref.stages[i], i, normalize_input));
    }
    return bank;
}

/// Per stage r = 1 - max cos to the bank, up-sampled and averaged.
inline ScoreMap reference_map(const ImageEmbeddings& query, const MemoryBank& bank, const AdapterParams& params,
                              std::size_t H, std::size_t W, UpsampleMode mode = UpsampleMode::bilinear,
                              bool normalize_input = false) {
    if (query.stages.size() != bank.stage_count()) throw ShapeMismatch("query and bank stage counts differ");
    std::vector<ScoreMap> per_stage;
    for (std::size_t i = 0; i < query.stages.size(); ++i)
        per_stage.push_back(detail::nearest_scores(project(params, query.stages[i], i, normalize_input), bank.stages[i]));
    return detail::average_upsampled(per_stage, H, W, mode);
}

/// ½ (zero-shot + reference), pixelwise.
inline ScoreMap final_map(const ScoreMap& zero_shot, const ScoreMap& reference) {
    if (zero_shot.shape() != reference.shape()) throw ShapeMismatch("zero-shot and reference maps differ in size");
    ScoreMap out(zero_shot.rows(), zero_shot.cols());
    for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] = 0.5 * (zero_shot.data()[k] + reference.data()[k]);
    return out;
}

inline Decision fewshot_decision(const ScoreMap& final, double a_x, double theta = kDefaultTheta) {
    return image_decision(final, a_x, theta);
}

inline void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha quantile must lie in the open interval (0,1)");
}

/// Linear interpolation between order statistics at position α(n-1).
/// Reorders `values`.
inline double quantile(std::vector<double>& values, double alpha) {
    check_alpha(alpha);
    if (values.empty()) throw InsufficientBatch("quantile of an empty set");
    const double pos = alpha * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    auto nth = values.begin() + static_cast<std::ptrdiff_t>(lo);
    std::nth_element(values.begin(), nth, values.end());
    const double a = *nth;
    if (frac == 0.0 || lo + 1 >= values.size()) return a;
    const double b = *std::min_element(nth + 1, values.end());
    return a + frac * (b - a);
}

/// Mutual scoring over a test batch: for each patch, the α-quantile of its
/// cosine similarities to every other patch of the same stage across the
/// batch (itself excluded by index), then 1 - s. Returns per-image maps.
inline std::vector<ScoreMap> batched_reference_maps(const std::vector<ImageEmbeddings>& batch,
                                                    const AdapterParams& params, double alpha, std::size_t H,
                                                    std::size_t W, UpsampleMode mode = UpsampleMode::bilinear,
                                                    bool normalize_input = false) {
    check_alpha(alpha);
    if (batch.size() < 2) throw InsufficientBatch("batched scoring needs at least two images");
    const std::size_t m = params.stage_count();
    std::vector<std::vector<ScoreMap>> per_image(batch.size());
    std::vector<double> sims;
    for (std::size_t i = 0; i < m; ++i) {
        Tensor2<double> pool(0, params.joint_width());
        std::vector<std::size_t> offsets;
        std::size_t h = 0;
        std::size_t w = 0;
        for (std::size_t k = 0; k < batch.size(); ++k) {
            if (batch[k].stages.size() != m) throw ShapeMismatch("batch image stage count differs from adapter");
            const auto z = project(params, batch[k].stages[i], i, normalize_input);
            if (k == 0) {
                h = z.dim0();
                w = z.dim1();
            } else if (z.dim0() != h || z.dim1() != w) {
                throw ShapeMismatch("batch images disagree on stage grid size");
            }
            offsets.push_back(pool.rows());
            detail::append_rows(pool, z);
        }
        sims.reserve(pool.rows());
        for (std::size_t k = 0; k < batch.size(); ++k) {
            ScoreMap s(h, w);
            for (std::size_t p = 0; p < h * w; ++p) {
                const std::size_t self = offsets[k] + p;
                const auto z = pool.row(self);
                sims.clear();
                for (std::size_t r = 0; r < pool.rows(); ++r)
                    if (r != self) sims.push_back(dot(z, pool.row(r)));
                s.data()[p] = 1.0 - quantile(sims, alpha);
            }
            per_image[k].push_back(std::move(s));
        }
    }
    std::vector<ScoreMap> out;
    out.reserve(batch.size());
    for (const auto& stages : per_image) out.push_back(detail::average_upsampled(stages, H, W, mode));
    return out;
}

/// Batched zero-shot: ½ (zero-shot map + batched reference map) per image.
inline std::vector<ScoreMap> batched_scores(const std::vector<ImageEmbeddings>& batch, const AdapterParams& params,
                                            const StateTextEmbeddings& text, double alpha, std::size_t H,
                                            std::size_t W, UpsampleMode mode = UpsampleMode::bilinear,
                                            bool normalize_input = false) {
    const auto refs = batched_reference_maps(batch, params, alpha, H, W, mode, normalize_input);
    std::vector<ScoreMap> out;
    out.reserve(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const auto zs = anomaly_map(similarity_stack(params, batch[k], text, normalize_input), H, W, mode);
        out.push_back(final_map(zs, refs[k]));
    }
    return out;
}

// Bank file "MADSBNK1": u32 version | u32 m | u32 N_z | m × (u64 count | f32[count × N_z])

inline constexpr std::string_view kBankMagic = "MADSBNK1";

inline binio::Writer encode_bank(const MemoryBank& bank) {
    binio::Writer w;
    w.bytes(kBankMagic);
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(bank.stage_count()));
    w.u32(static_cast<std::uint32_t>(bank.joint_width()));
    for (const auto& s : bank.stages) {
        if (s.cols() != bank.joint_width()) throw ShapeMismatch("bank stages disagree on N_z");
        w.u64(s.rows());
        w.f32s(s.values());
    }
    return w;
}

inline void save_bank(const std::filesystem::path& path, const MemoryBank& bank) { encode_bank(bank).save(path); }

inline MemoryBank decode_bank(binio::Reader r) {
    if (r.bytes(kBankMagic.size()) != kBankMagic) throw DataError("bad memory bank magic in " + r.origin());
    if (r.u32() != 1) throw DataError("unsupported memory bank version");
    const auto m = r.u32();
    const auto nz = r.u32();
    MemoryBank bank;
    for (std::uint32_t i = 0; i < m; ++i) {
        const auto count = r.u64();
        if (count > r.remaining() / 4) throw DataError("truncated memory bank " + r.origin());
        Tensor2<double> s(count, nz);
        for (auto& v : s.values()) v = r.f32();
        bank.stages.push_back(std::move(s));
    }
    if (r.remaining() != 0) throw DataError("trailing bytes in memory bank " + r.origin());
    return bank;
}

inline MemoryBank load_bank(const std::filesystem::path& path) { return decode_bank(binio::Reader::from_file(path)); }

}  // namespace multiads
