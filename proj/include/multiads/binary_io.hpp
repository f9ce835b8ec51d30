#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "multiads/error.hpp"

namespace multiads::binio {

/// Little-endian byte sink, independent of host endianness.
class Writer {
  public:
    void bytes(std::string_view raw) { buf_.insert(buf_.end(), raw.begin(), raw.end()); }

    void u16(std::uint16_t v) { put_le(v, 2); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void u64(std::uint64_t v) { put_le(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

    void f32s(std::span<const float> values) {
        for (float v : values) f32(v);
    }
    void f32s(std::span<const double> values) {
        for (double v : values) f32(static_cast<float>(v));
    }

    [[nodiscard]] const std::vector<char>& buffer() const noexcept { return buf_; }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw DataError("write failed: '" + path.string() + "'");
    }

  private:
    void put_le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
    }

    std::vector<char> buf_;
};

/// Little-endian byte source. Copies share the underlying buffer and keep
/// independent cursors.
class Reader {
  public:
    explicit Reader(std::vector<char> data, std::string origin = {})
        : buf_(std::make_shared<const std::vector<char>>(std::move(data))), origin_(std::move(origin)) {}

    static Reader from_file(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open '" + path.string() + "'");
        std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return Reader(std::move(data), path.string());
    }

    std::string bytes(std::size_t n) {
        require(n);
        std::string out(buf_->data() + pos_, n);
        pos_ += n;
        return out;
    }

    std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
    std::uint64_t u64() { return get_le(8); }
    float f32() { return std::bit_cast<float>(u32()); }

    void f32s(std::span<float> out) {
        for (float& v : out) v = f32();
    }

    [[nodiscard]] std::size_t position() const noexcept { return pos_; }
    [[nodiscard]] std::size_t remaining() const noexcept { return buf_->size() - pos_; }
    void seek(std::size_t pos) {
        if (pos > buf_->size()) throw DataError("seek past end of " + origin_);
        pos_ = pos;
    }
    [[nodiscard]] const std::string& origin() const noexcept { return origin_; }

  private:
    void require(std::size_t n) const {
        if (buf_->size() - pos_ < n) throw DataError("truncated file " + origin_);
    }

    std::uint64_t get_le(int n) {
        require(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>((*buf_)[pos_ + i])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::shared_ptr<const std::vector<char>> buf_;
    std::string origin_;
    std::size_t pos_ = 0;
};

}  // namespace multiads::binio
