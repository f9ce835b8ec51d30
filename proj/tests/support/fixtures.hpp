#pragma once

// Seeded random instances shared by unit tests and the acceptance binary.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "multiads/multiads.hpp"

namespace fixture {

using namespace multiads;

inline EmbeddingLayout layout(std::size_t m, std::size_t grid, std::uint32_t width, std::uint32_t nz) {
    EmbeddingLayout l;
    l.joint_width = nz;
    for (std::size_t i = 0; i < m; ++i)
        l.stages.push_back({static_cast<std::uint32_t>(grid), static_cast<std::uint32_t>(grid), width + static_cast<std::uint32_t>(i)});
    return l;
}

inline ImageEmbeddings random_embeddings(const EmbeddingLayout& l, SplitMix64& rng) {
    ImageEmbeddings e;
    for (const auto& s : l.stages) {
        PatchGrid g(s.h, s.w, s.width);
        for (auto& v : g.values()) v = static_cast<float>(rng.normal());
        e.stages.push_back(std::move(g));
    }
    std::vector<double> global(l.joint_width);
    for (auto& v : global) v = rng.normal();
    const auto unit = normalize(std::span<const double>(global));
    e.global.assign(unit.begin(), unit.end());
    return e;
}

inline StateTextEmbeddings random_text(std::size_t states, std::size_t width, SplitMix64& rng) {
    StateTextEmbeddings t;
    t.vectors = Tensor2<double>(states, width);
    for (std::size_t j = 0; j < states; ++j) {
        t.state_ids.push_back(j == 0 ? "normal" : "defect" + std::to_string(j));
        std::vector<double> v(width);
        for (auto& x : v) x = rng.normal();
        const auto u = normalize(std::span<const double>(v));
        std::copy(u.begin(), u.end(), t.vectors.row(j).begin());
    }
    return t;
}

inline ProbStack random_probs(std::size_t states, std::size_t h, std::size_t w, SplitMix64& rng) {
    ProbStack p(states, h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double sum = 0.0;
            for (std::size_t j = 0; j < states; ++j) sum += p(j, y, x) = rng.uniform() + 1e-3;
            for (std::size_t j = 0; j < states; ++j) p(j, y, x) /= sum;
        }
    return p;
}

/// Label map with a random rectangle per defect class; binary mask is its support.
inline std::pair<LabelMap, BinaryMask> random_ground_truth(std::size_t H, std::size_t W, int defects, SplitMix64& rng) {
    LabelMap multi(H, W, 0);
    for (int d = 1; d <= defects; ++d) {
        const auto y0 = rng.below(H), x0 = rng.below(W);
        const auto y1 = std::min(H, y0 + 1 + rng.below(H / 2 + 1));
        const auto x1 = std::min(W, x0 + 1 + rng.below(W / 2 + 1));
        for (auto y = y0; y < y1; ++y)
            for (auto x = x0; x < x1; ++x) multi(y, x) = d;
    }
    return {multi, binary_from_labels(multi)};
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    // per-process, so parallel test runs never share a directory
    const auto dir = std::filesystem::path(MULTIADS_TEST_TMP) / (name + "." + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fixture
