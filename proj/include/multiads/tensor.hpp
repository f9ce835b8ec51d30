#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace multiads {

/// Dense row-major 2-D array. Used for H×W score maps, label maps and masks.
template <class T>
class Tensor2 {
  public:
    Tensor2() = default;
    Tensor2(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }
    [[nodiscard]] std::array<std::size_t, 2> shape() const noexcept { return {rows_, cols_}; }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    bool operator==(const Tensor2&) const = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

/// Dense row-major 3-D array.
///
/// Two layouts are used across the library and both map onto this type:
/// patch grids are (h, w, channels) so that `fiber(a, b)` is one patch vector,
/// and probability stacks are (channels, H, W) so that `plane(c)` is one map.
template <class T>
class Tensor3 {
  public:
    Tensor3() = default;
    Tensor3(std::size_t d0, std::size_t d1, std::size_t d2, T fill = T{})
        : d0_(d0), d1_(d1), d2_(d2), data_(d0 * d1 * d2, fill) {}

    [[nodiscard]] std::size_t dim0() const noexcept { return d0_; }
    [[nodiscard]] std::size_t dim1() const noexcept { return d1_; }
    [[nodiscard]] std::size_t dim2() const noexcept { return d2_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }
    [[nodiscard]] std::array<std::size_t, 3> shape() const noexcept { return {d0_, d1_, d2_}; }

    T& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * d1_ + j) * d2_ + k];
    }
    const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * d1_ + j) * d2_ + k];
    }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    /// Innermost run at (i, j): length dim2.
    std::span<T> fiber(std::size_t i, std::size_t j) { return {data_.data() + (i * d1_ + j) * d2_, d2_}; }
    std::span<const T> fiber(std::size_t i, std::size_t j) const {
        return {data_.data() + (i * d1_ + j) * d2_, d2_};
    }

    /// Slab at index i of the outer axis: dim1 × dim2 values.
    std::span<T> plane(std::size_t i) { return {data_.data() + i * d1_ * d2_, d1_ * d2_}; }
    std::span<const T> plane(std::size_t i) const { return {data_.data() + i * d1_ * d2_, d1_ * d2_}; }

    bool operator==(const Tensor3&) const = default;

  private:
    std::size_t d0_ = 0;
    std::size_t d1_ = 0;
    std::size_t d2_ = 0;
    std::vector<T> data_;
};

using Image = Tensor3<float>;          // H × W × 3, preprocessed
using PatchGrid = Tensor3<float>;      // h × w × N_i, backbone output
using AdaptedGrid = Tensor3<double>;   // h × w × N_z, unit-norm fibers
using ProbStack = Tensor3<double>;     // C × H × W
using ScoreMap = Tensor2<double>;      // H × W
using LabelMap = Tensor2<int>;         // H × W, values in {0..K}
using BinaryMask = Tensor2<unsigned char>;

}  // namespace multiads
