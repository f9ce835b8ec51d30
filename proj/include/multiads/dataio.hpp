#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <png.h>

#include "multiads/binary_io.hpp"
#include "multiads/error.hpp"
#include "multiads/kba.hpp"
#include "multiads/prompts.hpp"
#include "multiads/rng.hpp"
#include "multiads/tensor.hpp"

namespace multiads {

namespace fs = std::filesystem;

inline constexpr std::string_view kGoodFolder = "good";
inline constexpr std::string_view kCombinedFolder = "combined";

/// One image found in an MVTec-style tree.
struct SampleInfo {
    std::string relative_path;  // "product/split/folder/file", generic separators
    fs::path image_path;
    std::string product;
    std::string split;          // "train" or "test"
    std::string defect_folder;  // "good" or the dataset's variation folder
    std::string defect_id;      // KBA superclass id; empty for good and combined
    bool combined = false;
    std::optional<fs::path> mask_path;

    [[nodiscard]] bool anomalous() const noexcept { return defect_folder != kGoodFolder; }
};

namespace detail {

inline bool is_image_file(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

inline std::vector<fs::path> sorted_entries(const fs::path& dir, bool dirs) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (dirs ? e.is_directory() : (e.is_regular_file() && is_image_file(e.path()))) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline std::optional<fs::path> find_mask(const fs::path& product_dir, const std::string& folder, const fs::path& image) {
    const auto dir = product_dir / "ground_truth" / folder;
    for (const char* ext : {".png", ".bmp", ".jpg"}) {
        const auto p = dir / (image.stem().string() + "_mask" + ext);
        if (fs::exists(p)) return p;
    }
    return std::nullopt;
}

}  // namespace detail

/// Lists every image under root/product/{train,test}/{good,<defect>}/. Products
/// come from `products` or, when empty, from every root subdirectory the KBA
/// knows. Order is deterministic (sorted paths).
inline std::vector<SampleInfo> scan_dataset(const fs::path& root, const Kba& kba,
                                            const std::vector<std::string>& products = {}) {
    if (!fs::is_directory(root)) throw LayoutError("dataset root '" + root.string() + "' is not a directory");
    std::vector<std::string> names = products;
    if (names.empty()) {
        for (const auto& d : detail::sorted_entries(root, true)) {
            const auto name = d.filename().string();
            if (kba.has_product(name)) names.push_back(name);
        }
    }
    std::vector<SampleInfo> out;
    for (const auto& product : names) {
        if (!kba.has_product(product)) throw UnknownProduct("'" + product + "' is not in the knowledge base");
        const auto product_dir = root / product;
        if (!fs::is_directory(product_dir)) throw LayoutError("missing product directory '" + product_dir.string() + "'");
        for (const char* split : {"train", "test"}) {
            const auto split_dir = product_dir / split;
            if (!fs::is_directory(split_dir)) continue;
            for (const auto& folder_dir : detail::sorted_entries(split_dir, true)) {
                const auto folder = folder_dir.filename().string();
                const bool good = folder == kGoodFolder;
                const bool combined = folder == kCombinedFolder;
                std::string defect_id;
                if (!good && !combined) {
                    try {
                        defect_id = kba.resolve_superclass(folder);
                    } catch (const UnknownVariation&) {
                        throw LayoutError("defect folder '" + folder_dir.string() +
                                          "' does not resolve to a knowledge-base defect type");
                    }
                }
                for (const auto& img : detail::sorted_entries(folder_dir, false)) {
                    SampleInfo s;
                    s.relative_path = fs::relative(img, root).generic_string();
                    s.image_path = img;
                    s.product = product;
                    s.split = split;
                    s.defect_folder = folder;
                    s.defect_id = defect_id;
                    s.combined = combined;
                    if (!good) {
                        s.mask_path = detail::find_mask(product_dir, folder, img);
                        if (!s.mask_path)
                            throw LayoutError("no ground-truth mask for anomalous image '" + img.string() + "'");
                    }
                    out.push_back(std::move(s));
                }
            }
        }
    }
    return out;
}

struct PreprocessConfig {
    std::size_t image_size = 518;
    std::array<double, 3> mean{0.48145466, 0.4578275, 0.40821073};
    std::array<double, 3> std{0.26862954, 0.26130258, 0.27577711};

    void validate() const {
        if (image_size == 0) throw ConfigError("image_size must be positive");
        for (double s : std)
            if (!(s > 0.0)) throw ConfigError("normalization std must be positive");
    }
};

/// Resize (bilinear) to image_size², scale to [0,1], standardize per RGB
/// channel. Input is an 8-bit BGR matrix as OpenCV decodes it.
inline Image preprocess(const cv::Mat& bgr, const PreprocessConfig& cfg = {}) {
    cfg.validate();
    if (bgr.empty() || bgr.type() != CV_8UC3) throw DecodeError("expected an 8-bit 3-channel image");
    const int n = static_cast<int>(cfg.image_size);
    cv::Mat sized;
    if (bgr.rows == n && bgr.cols == n)
        sized = bgr;
    else
        cv::resize(bgr, sized, cv::Size(n, n), 0, 0, cv::INTER_LINEAR);
    Image out(cfg.image_size, cfg.image_size, 3);
    for (int y = 0; y < n; ++y) {
        const auto* row = sized.ptr<cv::Vec3b>(y);
        for (int x = 0; x < n; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = row[x][2 - c] / 255.0;  // BGR -> RGB
                out(static_cast<std::size_t>(y), static_cast<std::size_t>(x), static_cast<std::size_t>(c)) =
                    static_cast<float>((v - cfg.mean[c]) / cfg.std[c]);
            }
        }
    }
    return out;
}

inline cv::Mat decode_image(const fs::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw DecodeError("cannot decode image '" + path.string() + "'");
    return m;
}

inline Image preprocess_bytes(std::span<const unsigned char> bytes, const PreprocessConfig& cfg = {}) {
    const cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<unsigned char*>(bytes.data()));
    cv::Mat m = cv::imdecode(raw, cv::IMREAD_COLOR);
    if (m.empty()) throw DecodeError("cannot decode image bytes");
    return preprocess(m, cfg);
}

inline Image load_image(const fs::path& path, const PreprocessConfig& cfg = {}) {
    return preprocess(decode_image(path), cfg);
}

/// Grayscale mask binarized at > 127 and resized nearest to size².
inline BinaryMask load_mask(const fs::path& path, std::size_t size) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw DecodeError("cannot decode mask '" + path.string() + "'");
    const int n = static_cast<int>(size);
    if (m.rows != n || m.cols != n) {
        cv::Mat r;
        cv::resize(m, r, cv::Size(n, n), 0, 0, cv::INTER_NEAREST);
        m = r;
    }
    BinaryMask out(size, size);
    for (int y = 0; y < n; ++y) {
        const auto* row = m.ptr<unsigned char>(y);
        for (int x = 0; x < n; ++x) out(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = row[x] > 127 ? 1 : 0;
    }
    return out;
}

/// Label map from per-defect masks: each covered pixel takes the roster index
/// of its defect; on overlap the earliest roster index wins.
inline LabelMap build_multi_defect_map(const std::vector<std::pair<std::string, BinaryMask>>& masks,
                                       const std::vector<std::string>& roster, std::size_t H, std::size_t W) {
    LabelMap out(H, W, 0);
    for (const auto& [id, mask] : masks) {
        if (mask.rows() != H || mask.cols() != W) throw ShapeMismatch("mask for '" + id + "' has a different size");
        const auto it = std::find(roster.begin(), roster.end(), id);
        if (it == roster.end() || it == roster.begin())
            throw UnknownState("defect '" + id + "' is not a defect state of the roster");
        const int idx = static_cast<int>(it - roster.begin());
        for (std::size_t k = 0; k < out.size(); ++k) {
            if (!mask.data()[k]) continue;
            int& cur = out.data()[k];
            if (cur == 0 || idx < cur) cur = idx;
        }
    }
    return out;
}

inline BinaryMask binary_from_labels(const LabelMap& labels) {
    BinaryMask out(labels.rows(), labels.cols());
    for (std::size_t k = 0; k < labels.size(); ++k) out.data()[k] = labels.data()[k] != 0 ? 1 : 0;
    return out;
}

/// Ground truth at image_size² for one sample. Combined images keep their
/// binary mask but an all-zero label map, and are flagged for MTAS exclusion.
struct GroundTruth {
    BinaryMask binary;
    LabelMap multi;
    bool multi_valid = true;
};

inline GroundTruth load_ground_truth(const SampleInfo& s, const std::vector<std::string>& roster, std::size_t size) {
    GroundTruth gt{BinaryMask(size, size), LabelMap(size, size, 0), !s.combined};
    if (!s.anomalous()) return gt;
    if (!s.mask_path) throw LayoutError("no ground-truth mask for '" + s.relative_path + "'");
    gt.binary = load_mask(*s.mask_path, size);
    if (!s.combined) gt.multi = build_multi_defect_map({{s.defect_id, gt.binary}}, roster, size, size);
    return gt;
}

// ---- result emission ---------------------------------------------------

/// Raw row-major little-endian float32 values.
template <class T>
void write_f32(const fs::path& path, std::span<const T> values) {
    binio::Writer w;
    for (T v : values) w.f32(static_cast<float>(v));
    w.save(path);
}

inline std::vector<float> read_f32(const fs::path& path, std::size_t expected) {
    auto r = binio::Reader::from_file(path);
    if (r.remaining() != expected * 4)
        throw DataError("'" + path.string() + "' holds " + std::to_string(r.remaining() / 4) + " values, expected " +
                        std::to_string(expected));
    std::vector<float> out(expected);
    r.f32s(out);
    return out;
}

inline ScoreMap read_score_map(const fs::path& path, std::size_t H, std::size_t W) {
    const auto v = read_f32(path, H * W);
    ScoreMap out(H, W);
    std::copy(v.begin(), v.end(), out.values().begin());
    return out;
}

inline ProbStack read_prob_stack(const fs::path& path, std::size_t C, std::size_t H, std::size_t W) {
    const auto v = read_f32(path, C * H * W);
    ProbStack out(C, H, W);
    std::copy(v.begin(), v.end(), out.values().begin());
    return out;
}

/// 8-bit grayscale PNG of round(clamp(score)·255) plus a `.f32` sidecar.
inline void write_heatmap(const fs::path& png_path, const ScoreMap& map) {
    cv::Mat img(static_cast<int>(map.rows()), static_cast<int>(map.cols()), CV_8UC1);
    for (std::size_t y = 0; y < map.rows(); ++y) {
        for (std::size_t x = 0; x < map.cols(); ++x) {
            const double v = std::clamp(map(y, x), 0.0, 1.0);
            img.at<unsigned char>(static_cast<int>(y), static_cast<int>(x)) =
                static_cast<unsigned char>(std::lround(v * 255.0));
        }
    }
    if (!cv::imwrite(png_path.string(), img)) throw DataError("cannot write '" + png_path.string() + "'");
    auto sidecar = png_path;
    sidecar.replace_extension(".f32");
    write_f32(sidecar, map.values());
}

inline std::array<unsigned char, 3> palette_color(std::size_t index) {
    static constexpr std::array<std::array<unsigned char, 3>, 12> kColors{{{0, 0, 0},
                                                                          {230, 25, 75},
                                                                          {60, 180, 75},
                                                                          {255, 225, 25},
                                                                          {0, 130, 200},
                                                                          {245, 130, 48},
                                                                          {145, 30, 180},
                                                                          {70, 240, 240},
                                                                          {240, 50, 230},
                                                                          {210, 245, 60},
                                                                          {250, 190, 212},
                                                                          {0, 128, 128}}};
    if (index < kColors.size()) return kColors[index];
    const auto h = fnv1a64(std::to_string(index));
    return {static_cast<unsigned char>(h), static_cast<unsigned char>(h >> 8), static_cast<unsigned char>(h >> 16)};
}

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct FreeDeleter {
    void operator()(void* p) const noexcept { std::free(p); }
};

// libpng reports errors by longjmp, so the calls live in helpers whose
// locals are all trivially copyable.

inline bool png_write_indexed(std::FILE* fp, png_uint_32 w, png_uint_32 h, png_bytepp rows, png_colorp palette,
                              int colors) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) return false;
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        return false;
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_set_PLTE(png, info, palette, colors);
    png_write_info(png, info);
    png_write_image(png, rows);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

enum class PngRead { ok, failed, not_indexed };

/// On success `*pixels` holds w·h palette indices allocated with malloc.
inline PngRead png_read_indexed(std::FILE* fp, png_uint_32* w, png_uint_32* h, png_bytep* pixels) {
    *pixels = nullptr;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) return PngRead::failed;
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        return PngRead::failed;
    }
    png_bytepp volatile rows = nullptr;
    if (setjmp(png_jmpbuf(png))) {
        std::free(rows);
        std::free(*pixels);
        *pixels = nullptr;
        png_destroy_read_struct(&png, &info, nullptr);
        return PngRead::failed;
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    *w = png_get_image_width(png, info);
    *h = png_get_image_height(png, info);
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_PALETTE || png_get_bit_depth(png, info) != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        return PngRead::not_indexed;
    }
    *pixels = static_cast<png_bytep>(std::malloc(std::size_t{*w} * *h));
    rows = static_cast<png_bytepp>(std::malloc(sizeof(png_bytep) * *h));
    if (!*pixels || !rows) png_error(png, "out of memory");
    for (png_uint_32 y = 0; y < *h; ++y) rows[y] = *pixels + std::size_t{y} * *w;
    png_read_image(png, rows);
    png_read_end(png, nullptr);
    std::free(rows);
    png_destroy_read_struct(&png, &info, nullptr);
    return PngRead::ok;
}

}  // namespace detail

/// 8-bit indexed PNG; index j is state j of the roster.
inline void write_label_png(const fs::path& path, const LabelMap& labels, std::size_t state_count) {
    if (state_count == 0 || state_count > 256) throw ConfigError("palette PNG supports 1..256 states");
    for (int v : labels.values())
        if (v < 0 || static_cast<std::size_t>(v) >= state_count) throw LabelOutOfRange(std::to_string(v));
    std::vector<png_byte> pixels(labels.size());
    for (std::size_t k = 0; k < labels.size(); ++k) pixels[k] = static_cast<png_byte>(labels.data()[k]);
    std::vector<png_bytep> rows(labels.rows());
    for (std::size_t y = 0; y < labels.rows(); ++y) rows[y] = pixels.data() + y * labels.cols();
    std::vector<png_color> palette(state_count);
    for (std::size_t j = 0; j < state_count; ++j) {
        const auto c = palette_color(j);
        palette[j] = {c[0], c[1], c[2]};
    }
    detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw DataError("cannot open '" + path.string() + "' for writing");
    if (!detail::png_write_indexed(fp.get(), static_cast<png_uint_32>(labels.cols()),
                                   static_cast<png_uint_32>(labels.rows()), rows.data(), palette.data(),
                                   static_cast<int>(state_count)))
        throw DataError("libpng failed writing '" + path.string() + "'");
}

/// Palette indices of an 8-bit indexed PNG.
inline LabelMap read_label_png(const fs::path& path) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw DataError("cannot open '" + path.string() + "'");
    png_uint_32 w = 0;
    png_uint_32 h = 0;
    png_bytep raw = nullptr;
    const auto status = detail::png_read_indexed(fp.get(), &w, &h, &raw);
    const std::unique_ptr<png_byte, detail::FreeDeleter> pixels(raw);
    if (status == detail::PngRead::not_indexed)
        throw DecodeError("'" + path.string() + "' is not an 8-bit indexed PNG");
    if (status != detail::PngRead::ok) throw DecodeError("cannot decode label PNG '" + path.string() + "'");
    LabelMap out(h, w);
    for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] = pixels.get()[k];
    return out;
}

/// {"0": "normal", "1": "<defect>", ...} with the palette RGB per index.
inline ordered_json palette_json(const std::vector<std::string>& roster) {
    ordered_json j = ordered_json::object();
    for (std::size_t k = 0; k < roster.size(); ++k) {
        const auto c = palette_color(k);
        j[std::to_string(k)] = {{"state_id", roster[k]}, {"rgb", {c[0], c[1], c[2]}}};
    }
    return j;
}

}  // namespace multiads
