#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "multiads/binary_io.hpp"
#include "multiads/encoder.hpp"

namespace multiads {

// MEB image-embedding container, little-endian:
//   "MADSEMB1" | u32 version | u32 m | u32 N_z | m × (u32 h, u32 w, u32 N)
//   | u64 count | count × (u64 key | stage grids f32 (h,w,c) | global f32[N_z])
// key = FNV-1a 64 of the UTF-8 image path relative to the dataset root.

inline constexpr std::string_view kMebMagic = "MADSEMB1";
inline constexpr std::string_view kTextMagic = "MADSTXT1";
inline constexpr std::uint32_t kFormatVersion = 1;

inline std::uint64_t image_key(std::string_view relative_path) { return fnv1a64(relative_path); }

struct MebRecord {
    std::uint64_t key = 0;
    ImageEmbeddings embeddings;
};

inline binio::Writer encode_meb(const EmbeddingLayout& layout, const std::vector<MebRecord>& records) {
    layout.validate();
    binio::Writer w;
    w.bytes(kMebMagic);
    w.u32(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(layout.stages.size()));
    w.u32(layout.joint_width);
    for (const auto& s : layout.stages) {
        w.u32(s.h);
        w.u32(s.w);
        w.u32(s.width);
    }
    w.u64(records.size());
    for (const auto& rec : records) {
        rec.embeddings.check(layout);
        w.u64(rec.key);
        for (const auto& grid : rec.embeddings.stages) w.f32s(grid.values());
        w.f32s(std::span<const float>(rec.embeddings.global));
    }
    return w;
}

inline void write_meb(const std::filesystem::path& path, const EmbeddingLayout& layout,
                      const std::vector<MebRecord>& records) {
    encode_meb(layout, records).save(path);
}

/// Parsed MEB file. Records are decoded on demand from the in-memory image.
class MebFile {
  public:
    explicit MebFile(binio::Reader reader) : reader_(std::move(reader)) {
        try {
            if (reader_.bytes(kMebMagic.size()) != kMebMagic) throw BackendError("bad MEB magic in " + reader_.origin());
            if (reader_.u32() != kFormatVersion) throw BackendError("unsupported MEB version in " + reader_.origin());
            const auto m = reader_.u32();
            layout_.joint_width = reader_.u32();
            for (std::uint32_t i = 0; i < m; ++i) {
                StageShape s;
                s.h = reader_.u32();
                s.w = reader_.u32();
                s.width = reader_.u32();
                layout_.stages.push_back(s);
            }
            layout_.validate();
            std::size_t floats = layout_.joint_width;
            for (const auto& s : layout_.stages) floats += std::size_t{s.h} * s.w * s.width;
            const std::size_t record_bytes = 8 + 4 * floats;
            const auto count = reader_.u64();
            if (reader_.remaining() != count * record_bytes)
                throw BackendError("MEB size does not match header in " + reader_.origin());
            keys_.reserve(count);
            for (std::uint64_t r = 0; r < count; ++r) {
                const auto offset = reader_.position();
                const auto key = reader_.u64();
                if (!index_.emplace(key, offset).second)
                    throw BackendError("duplicate MEB key " + std::to_string(key) + " in " + reader_.origin());
                keys_.push_back(key);
                reader_.seek(offset + record_bytes);
            }
        } catch (const BackendError&) {
            throw;
        } catch (const Error& e) {
            throw BackendError(e.what());
        }
    }

    static MebFile open(const std::filesystem::path& path) {
        try {
            return MebFile(binio::Reader::from_file(path));
        } catch (const BackendError&) {
            throw;
        } catch (const Error& e) {
            throw BackendError(e.what());
        }
    }

    [[nodiscard]] const EmbeddingLayout& layout() const noexcept { return layout_; }
    [[nodiscard]] const std::vector<std::uint64_t>& keys() const noexcept { return keys_; }
    [[nodiscard]] bool contains(std::uint64_t key) const { return index_.contains(key); }

    [[nodiscard]] ImageEmbeddings read(std::uint64_t key) const {
        auto it = index_.find(key);
        if (it == index_.end()) throw BackendError("no MEB record for key " + std::to_string(key));
        binio::Reader r = reader_;
        r.seek(it->second + 8);
        ImageEmbeddings e;
        for (const auto& s : layout_.stages) {
            PatchGrid grid(s.h, s.w, s.width);
            r.f32s(grid.values());
            e.stages.push_back(std::move(grid));
        }
        e.global.resize(layout_.joint_width);
        r.f32s(e.global);
        return e;
    }

    [[nodiscard]] std::vector<MebRecord> records() const {
        std::vector<MebRecord> out;
        for (auto k : keys_) out.push_back({k, read(k)});
        return out;
    }

  private:
    binio::Reader reader_;
    EmbeddingLayout layout_;
    std::vector<std::uint64_t> keys_;
    std::unordered_map<std::uint64_t, std::size_t> index_;
};

/// Image backend over an exported MEB file; lookups by relative path.
class PrecomputedImageBackend final : public ImageBackend {
  public:
    explicit PrecomputedImageBackend(MebFile file, std::optional<EmbeddingLayout> expected = std::nullopt)
        : file_(std::move(file)) {
        if (expected && !(*expected == file_.layout()))
            throw BackendError("MEB layout does not match the configured manifest");
    }

    [[nodiscard]] const EmbeddingLayout& layout() const override { return file_.layout(); }
    [[nodiscard]] bool needs_pixels() const override { return false; }

    [[nodiscard]] ImageEmbeddings encode(std::string_view relative_path, const Image*) const override {
        const auto key = image_key(relative_path);
        if (!file_.contains(key)) throw BackendError("image '" + std::string(relative_path) + "' was not exported");
        return file_.read(key);
    }

  private:
    MebFile file_;
};

// Text-state file: "MADSTXT1" | u32 version | u32 K+1 | u32 N_z
//   | (K+1) × (u16 len | UTF-8 state id | f32[N_z])

inline binio::Writer encode_text_file(const StateTextEmbeddings& text) {
    binio::Writer w;
    w.bytes(kTextMagic);
    w.u32(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(text.state_count()));
    w.u32(static_cast<std::uint32_t>(text.width()));
    for (std::size_t j = 0; j < text.state_count(); ++j) {
        const auto& id = text.state_ids[j];
        if (id.size() > 0xffff) throw ConfigError("state id too long");
        w.u16(static_cast<std::uint16_t>(id.size()));
        w.bytes(id);
        w.f32s(text.row(j));
    }
    return w;
}

inline void write_text_file(const std::filesystem::path& path, const StateTextEmbeddings& text) {
    encode_text_file(text).save(path);
}

inline StateTextEmbeddings decode_text_file(binio::Reader r) {
    try {
        if (r.bytes(kTextMagic.size()) != kTextMagic) throw BackendError("bad MADSTXT magic in " + r.origin());
        if (r.u32() != kFormatVersion) throw BackendError("unsupported MADSTXT version in " + r.origin());
        const auto states = r.u32();
        const auto width = r.u32();
        StateTextEmbeddings out{{}, Tensor2<double>(states, width)};
        std::vector<float> row(width);
        for (std::uint32_t j = 0; j < states; ++j) {
            out.state_ids.push_back(r.bytes(r.u16()));
            r.f32s(row);
            std::copy(row.begin(), row.end(), out.vectors.row(j).begin());
        }
        if (r.remaining() != 0) throw BackendError("trailing bytes in " + r.origin());
        return out;
    } catch (const BackendError&) {
        throw;
    } catch (const Error& e) {
        throw BackendError(e.what());
    }
}

inline StateTextEmbeddings read_text_file(const std::filesystem::path& path) {
    try {
        return decode_text_file(binio::Reader::from_file(path));
    } catch (const BackendError&) {
        throw;
    } catch (const Error& e) {
        throw BackendError(e.what());
    }
}

/// Text backend over exported per-state embeddings; lookups by state id.
class PrecomputedTextBackend final : public TextBackend {
  public:
    explicit PrecomputedTextBackend(StateTextEmbeddings table) : table_(std::move(table)) {}

    [[nodiscard]] std::uint32_t width() const override { return static_cast<std::uint32_t>(table_.width()); }

    [[nodiscard]] std::vector<double> encode_state(const PromptSet& set) const override {
        // product-qualified ids ("cable/hole") take precedence over bare ones
        const std::string qualified = set.product + "/" + set.state_id;
        for (const auto* id : {&qualified, &set.state_id}) {
            for (std::size_t j = 0; j < table_.state_count(); ++j) {
                if (table_.state_ids[j] == *id) return normalize(table_.row(j));
            }
        }
        throw BackendError("no exported text embedding for state '" + qualified + "'");
    }

  private:
    StateTextEmbeddings table_;
};

}  // namespace multiads
