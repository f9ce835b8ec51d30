#include <gtest/gtest.h>

#include <fstream>

#include <opencv2/imgcodecs.hpp>

#include "support/fixtures.hpp"
#include "support/synthetic.hpp"

using namespace multiads;
namespace fs = std::filesystem;

namespace {

struct Tree {
    fs::path root;
    Kba kba;
};

Tree small_tree(const std::string& name) {
    const auto dir = fixture::scratch_dir(name);
    synthetic::Spec spec;
    spec.test_good = 2, spec.test_spot = 2, spec.test_scratch = 1;
    synthetic::write_dataset(dir, spec);
    return {dir / "test_set", load_kba(synthetic::write_kba(dir))};
}

}  // namespace

TEST(Scan, SyntheticTree) {
    const auto t = small_tree("scan");
    const auto samples = scan_dataset(t.root, t.kba);
    ASSERT_EQ(samples.size(), 2U + 2U + 1U + 5U);
    // sorted: test/good, test/scratches, test/stain, then train/good
    EXPECT_EQ(samples[0].relative_path, "widget/train/good/000.png");
    std::size_t spots = 0;
    for (const auto& s : samples) {
        EXPECT_EQ(s.product, "widget");
        if (s.defect_folder == "stain") {
            ++spots;
            EXPECT_EQ(s.defect_id, "spot");
            ASSERT_TRUE(s.mask_path.has_value());
            EXPECT_TRUE(fs::exists(*s.mask_path));
        }
        if (s.defect_folder == "good") {
            EXPECT_FALSE(s.anomalous());
        }
    }
    EXPECT_EQ(spots, 2U);
}

TEST(Scan, MissingMaskIsLayoutError) {
    const auto t = small_tree("scan_missing_mask");
    fs::remove(t.root / "widget/ground_truth/stain/000_mask.png");
    EXPECT_THROW(scan_dataset(t.root, t.kba), LayoutError);
}

TEST(Scan, UnknownFolderIsLayoutError) {
    const auto t = small_tree("scan_unknown_folder");
    fs::create_directories(t.root / "widget/test/melted");
    EXPECT_THROW(scan_dataset(t.root, t.kba), LayoutError);
}

TEST(Scan, UnknownProductRejected) {
    const auto t = small_tree("scan_unknown_product");
    EXPECT_THROW(scan_dataset(t.root, t.kba, {"sprocket"}), UnknownProduct);
    EXPECT_THROW(scan_dataset(t.root, t.kba, {"gadget"}), LayoutError);
    EXPECT_THROW(scan_dataset(t.root / "nope", t.kba), LayoutError);
}

TEST(Scan, CombinedFolderFlagged) {
    const auto t = small_tree("scan_combined");
    const auto src = t.root / "widget/test/stain/000.png";
    fs::create_directories(t.root / "widget/test/combined");
    fs::create_directories(t.root / "widget/ground_truth/combined");
    fs::copy_file(src, t.root / "widget/test/combined/000.png");
    fs::copy_file(t.root / "widget/ground_truth/stain/000_mask.png", t.root / "widget/ground_truth/combined/000_mask.png");
    const auto samples = scan_dataset(t.root, t.kba);
    const auto it = std::find_if(samples.begin(), samples.end(), [](const auto& s) { return s.combined; });
    ASSERT_NE(it, samples.end());
    EXPECT_TRUE(it->defect_id.empty());
    const auto gt = load_ground_truth(*it, build_state_roster(t.kba, "widget", false), 32);
    EXPECT_FALSE(gt.multi_valid);
    EXPECT_GT(std::count(gt.binary.values().begin(), gt.binary.values().end(), 1), 0);
    for (int v : gt.multi.values()) EXPECT_EQ(v, 0);
}

TEST(Preprocess, ConstantColourStandardized) {
    const cv::Mat img(10, 7, CV_8UC3, cv::Scalar(0, 128, 255));  // BGR
    PreprocessConfig cfg;
    cfg.image_size = 16;
    const auto out = preprocess(img, cfg);
    ASSERT_EQ(out.shape(), (std::array<std::size_t, 3>{16, 16, 3}));
    const double rgb[3] = {1.0, 128.0 / 255.0, 0.0};
    for (std::size_t c = 0; c < 3; ++c) {
        const auto expected = static_cast<float>((rgb[c] - cfg.mean[c]) / cfg.std[c]);
        EXPECT_FLOAT_EQ(out(0, 0, c), expected);
        EXPECT_FLOAT_EQ(out(15, 15, c), expected);
    }
}

TEST(Preprocess, BytesMatchFile) {
    const auto dir = fixture::scratch_dir("preprocess_bytes");
    SplitMix64 rng(1);
    const auto img = synthetic::normal_texture(20, rng);
    cv::imwrite((dir / "a.png").string(), img);
    std::ifstream in(dir / "a.png", std::ios::binary);
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    PreprocessConfig cfg;
    cfg.image_size = 32;
    EXPECT_EQ(preprocess_bytes(bytes, cfg), load_image(dir / "a.png", cfg));
    const std::vector<unsigned char> junk{1, 2, 3};
    EXPECT_THROW(preprocess_bytes(junk, cfg), DecodeError);
}

TEST(Masks, BinarizedAndNearestResized) {
    const auto dir = fixture::scratch_dir("masks");
    cv::Mat m(4, 4, CV_8UC1, cv::Scalar(0));
    m.at<uchar>(0, 0) = 200;
    m.at<uchar>(3, 3) = 127;  // not above threshold
    m.at<uchar>(2, 1) = 128;
    cv::imwrite((dir / "m.png").string(), m);
    const auto mask = load_mask(dir / "m.png", 8);
    EXPECT_EQ(mask(0, 0), 1);
    EXPECT_EQ(mask(1, 1), 1);
    EXPECT_EQ(mask(7, 7), 0);
    EXPECT_EQ(mask(4, 2), 1);
    EXPECT_EQ(std::count(mask.values().begin(), mask.values().end(), 1), 8);
}

TEST(MultiDefectGroundTruth, EarliestRosterIndexWinsOverlap) {
    const std::vector<std::string> roster{"normal", "hole", "crack", "scratch"};
    BinaryMask a(2, 2), b(2, 2);
    a(0, 0) = a(0, 1) = 1;
    b(0, 1) = b(1, 1) = 1;
    const auto lab = build_multi_defect_map({{"scratch", a}, {"crack", b}}, roster, 2, 2);
    EXPECT_EQ(lab(0, 0), 3);
    EXPECT_EQ(lab(0, 1), 2);
    EXPECT_EQ(lab(1, 1), 2);
    EXPECT_EQ(lab(1, 0), 0);
    EXPECT_EQ(binary_from_labels(lab)(0, 1), 1);
    EXPECT_THROW(build_multi_defect_map({{"dent", a}}, roster, 2, 2), UnknownState);
    EXPECT_THROW(build_multi_defect_map({{"normal", a}}, roster, 2, 2), UnknownState);
    EXPECT_THROW(build_multi_defect_map({{"hole", BinaryMask(3, 3)}}, roster, 2, 2), ShapeMismatch);
}

TEST(LabelPng, RoundTripAndPalette) {
    const auto dir = fixture::scratch_dir("label_png");
    LabelMap lab(5, 7);
    for (std::size_t k = 0; k < lab.size(); ++k) lab.data()[k] = static_cast<int>(k % 4);
    write_label_png(dir / "l.png", lab, 4);
    EXPECT_EQ(read_label_png(dir / "l.png"), lab);
    // an indexed PNG decodes to palette colours in OpenCV
    const cv::Mat rgb = cv::imread((dir / "l.png").string(), cv::IMREAD_COLOR);
    const auto c = palette_color(1);
    const auto px = rgb.at<cv::Vec3b>(0, 1);
    EXPECT_EQ(px[2], c[0]);
    EXPECT_EQ(px[1], c[1]);
    EXPECT_EQ(px[0], c[2]);
    EXPECT_THROW(write_label_png(dir / "bad.png", lab, 3), LabelOutOfRange);
    const auto pj = palette_json({"normal", "hole"});
    EXPECT_EQ(pj["1"]["state_id"], "hole");
}

TEST(LabelPng, RejectsNonIndexedAndCorrupt) {
    const auto dir = fixture::scratch_dir("label_png_bad");
    cv::imwrite((dir / "gray.png").string(), cv::Mat(3, 3, CV_8UC1, cv::Scalar(7)));
    EXPECT_THROW(read_label_png(dir / "gray.png"), DecodeError);
    write_label_png(dir / "ok.png", LabelMap(16, 16, 1), 2);
    fs::resize_file(dir / "ok.png", fs::file_size(dir / "ok.png") / 2);
    EXPECT_THROW(read_label_png(dir / "ok.png"), DecodeError);
    EXPECT_THROW(read_label_png(dir / "missing.png"), DataError);
}

TEST(Heatmap, PngAndSidecar) {
    const auto dir = fixture::scratch_dir("heatmap");
    ScoreMap m(3, 2);
    m(0, 0) = 1.0, m(1, 1) = 0.5, m(2, 0) = 1.7;
    write_heatmap(dir / "h.png", m);
    const auto back = read_score_map(dir / "h.f32", 3, 2);
    for (std::size_t k = 0; k < m.size(); ++k) EXPECT_FLOAT_EQ(static_cast<float>(back.data()[k]), static_cast<float>(m.data()[k]));
    const cv::Mat png = cv::imread((dir / "h.png").string(), cv::IMREAD_GRAYSCALE);
    EXPECT_EQ(png.at<uchar>(0, 0), 255);
    EXPECT_EQ(png.at<uchar>(1, 1), 128);
    EXPECT_EQ(png.at<uchar>(2, 0), 255);
    EXPECT_THROW(read_score_map(dir / "h.f32", 2, 2), DataError);
}
