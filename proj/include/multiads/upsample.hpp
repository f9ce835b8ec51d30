#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "multiads/error.hpp"
#include "multiads/tensor.hpp"

namespace multiads {

enum class UpsampleMode { bilinear, nearest };

/// Source taps along one axis: out[i] = (1 - frac[i]) * in[lo[i]] + frac[i] * in[hi[i]].
///
/// Bilinear uses half-pixel centres without corner alignment: the source
/// coordinate of output index i is (i + 0.5) * in / out - 0.5, clamped at 0.
struct AxisTaps {
    std::vector<std::size_t> lo;
    std::vector<std::size_t> hi;
    std::vector<double> frac;

    static AxisTaps make(std::size_t in, std::size_t out, UpsampleMode mode) {
        AxisTaps t;
        t.lo.resize(out);
        t.hi.resize(out);
        t.frac.resize(out);
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t i = 0; i < out; ++i) {
            if (mode == UpsampleMode::nearest) {
                const auto src = std::min(in - 1, static_cast<std::size_t>(std::floor(static_cast<double>(i) * scale)));
                t.lo[i] = t.hi[i] = src;
                t.frac[i] = 0.0;
                continue;
            }
            const double src = std::max(0.0, (static_cast<double>(i) + 0.5) * scale - 0.5);
            const auto lo = std::min(in - 1, static_cast<std::size_t>(std::floor(src)));
            t.lo[i] = lo;
            t.hi[i] = std::min(lo + 1, in - 1);
            t.frac[i] = t.hi[i] == lo ? 0.0 : src - static_cast<double>(lo);
        }
        return t;
    }
};

/// Separable resampling operator from h×w to H×W, plus its adjoint for
/// back-propagating gradients.
class Upsampler {
  public:
    Upsampler(std::size_t h, std::size_t w, std::size_t H, std::size_t W, UpsampleMode mode = UpsampleMode::bilinear)
        : h_(h), w_(w), H_(H), W_(W) {
        if (h == 0 || w == 0 || H < h || W < w)
            throw ShapeMismatch("cannot upsample " + std::to_string(h) + "x" + std::to_string(w) + " to " +
                                std::to_string(H) + "x" + std::to_string(W));
        rows_ = AxisTaps::make(h, H, mode);
        cols_ = AxisTaps::make(w, W, mode);
    }

    /// Channelwise C×h×w → C×H×W.
    [[nodiscard]] ProbStack apply(const ProbStack& in) const {
        check_in(in.dim1(), in.dim2());
        ProbStack out(in.dim0(), H_, W_);
        for (std::size_t c = 0; c < in.dim0(); ++c) {
            for (std::size_t y = 0; y < H_; ++y) {
                const double fy = rows_.frac[y];
                const std::size_t y0 = rows_.lo[y];
                const std::size_t y1 = rows_.hi[y];
                for (std::size_t x = 0; x < W_; ++x) {
                    const double fx = cols_.frac[x];
                    const std::size_t x0 = cols_.lo[x];
                    const std::size_t x1 = cols_.hi[x];
                    const double top = (1.0 - fx) * in(c, y0, x0) + fx * in(c, y0, x1);
                    const double bot = (1.0 - fx) * in(c, y1, x0) + fx * in(c, y1, x1);
                    out(c, y, x) = (1.0 - fy) * top + fy * bot;
                }
            }
        }
        return out;
    }

    /// Transpose of `apply`: scatters C×H×W gradients back to C×h×w.
    [[nodiscard]] ProbStack adjoint(const ProbStack& grad) const {
        if (grad.dim1() != H_ || grad.dim2() != W_) throw ShapeMismatch("adjoint input has wrong spatial size");
        ProbStack out(grad.dim0(), h_, w_);
        for (std::size_t c = 0; c < grad.dim0(); ++c) {
            for (std::size_t y = 0; y < H_; ++y) {
                const double fy = rows_.frac[y];
                const std::size_t y0 = rows_.lo[y];
                const std::size_t y1 = rows_.hi[y];
                for (std::size_t x = 0; x < W_; ++x) {
                    const double g = grad(c, y, x);
                    if (g == 0.0) continue;
                    const double fx = cols_.frac[x];
                    const std::size_t x0 = cols_.lo[x];
                    const std::size_t x1 = cols_.hi[x];
                    out(c, y0, x0) += (1.0 - fy) * (1.0 - fx) * g;
                    out(c, y0, x1) += (1.0 - fy) * fx * g;
                    out(c, y1, x0) += fy * (1.0 - fx) * g;
                    out(c, y1, x1) += fy * fx * g;
                }
            }
        }
        return out;
    }

  private:
    void check_in(std::size_t h, std::size_t w) const {
        if (h != h_ || w != w_) throw ShapeMismatch("upsampler built for a different input size");
    }

    std::size_t h_, w_, H_, W_;
    AxisTaps rows_;
    AxisTaps cols_;
};

/// UP(map): C×h×w → C×H×W, requires H ≥ h and W ≥ w.
inline ProbStack upsample(const ProbStack& map, std::size_t H, std::size_t W,
                          UpsampleMode mode = UpsampleMode::bilinear) {
    return Upsampler(map.dim1(), map.dim2(), H, W, mode).apply(map);
}

inline ScoreMap upsample(const ScoreMap& map, std::size_t H, std::size_t W, UpsampleMode mode = UpsampleMode::bilinear) {
    ProbStack one(1, map.rows(), map.cols());
    std::copy(map.values().begin(), map.values().end(), one.values().begin());
    const auto up = upsample(one, H, W, mode);
    ScoreMap out(H, W);
    std::copy(up.values().begin(), up.values().end(), out.values().begin());
    return out;
}

/// Nearest-neighbour resampling of a label map to any size (used to bring
/// ground truth to grid resolution).
template <class T>
Tensor2<T> resample_nearest(const Tensor2<T>& in, std::size_t H, std::size_t W) {
    Tensor2<T> out(H, W);
    for (std::size_t y = 0; y < H; ++y) {
        const auto sy = std::min(in.rows() - 1, y * in.rows() / H);
        for (std::size_t x = 0; x < W; ++x) {
            const auto sx = std::min(in.cols() - 1, x * in.cols() / W);
            out(y, x) = in(sy, sx);
        }
    }
    return out;
}

}  // namespace multiads
