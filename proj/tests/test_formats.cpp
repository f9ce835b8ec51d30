#include <gtest/gtest.h>

#include "support/fixtures.hpp"

using namespace multiads;

namespace {

std::vector<char> flip(std::vector<char> b, std::size_t at) {
    b.at(at) ^= 0x5a;
    return b;
}

}  // namespace

TEST(MebFormat, ByteRoundTrip) {
    const auto layout = fixture::layout(3, 4, 5, 6);
    SplitMix64 rng(2);
    std::vector<MebRecord> recs;
    for (std::uint64_t k = 0; k < 3; ++k) recs.push_back({image_key("p/test/good/00" + std::to_string(k) + ".png"), fixture::random_embeddings(layout, rng)});
    const auto bytes = encode_meb(layout, recs).buffer();
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "MADSEMB1");
    const MebFile file{binio::Reader(bytes)};
    EXPECT_EQ(file.layout(), layout);
    ASSERT_EQ(file.keys().size(), 3U);
    EXPECT_EQ(file.read(recs[1].key), recs[1].embeddings);
    EXPECT_EQ(encode_meb(file.layout(), file.records()).buffer(), bytes);
    EXPECT_THROW(MebFile{binio::Reader(flip(bytes, 0))}, DataError);
    auto cut = bytes;
    cut.resize(cut.size() - 3);
    EXPECT_THROW(MebFile{binio::Reader(cut)}, DataError);
}

TEST(TextFormat, ByteRoundTrip) {
    SplitMix64 rng(3);
    auto t = fixture::random_text(4, 8, rng);
    t.state_ids[2] = "widget/defect2";
    const auto bytes = encode_text_file(t).buffer();
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "MADSTXT1");
    const auto back = decode_text_file(binio::Reader(bytes));
    EXPECT_EQ(back.state_ids, t.state_ids);
    EXPECT_EQ(encode_text_file(back).buffer(), bytes);
    EXPECT_THROW(decode_text_file(binio::Reader(flip(bytes, 1))), DataError);
}

TEST(AdapterFormat, ByteRoundTrip) {
    const auto layout = fixture::layout(4, 2, 7, 5);
    auto p = AdapterParams::initialize(layout, 9, 0.05);
    p.stages[2].bias[1] = 0.25;
    const auto bytes = encode_adapters(p).buffer();
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "MADSADP1");
    const auto back = decode_adapters(binio::Reader(bytes));
    EXPECT_EQ(back.stage_count(), 4U);
    EXPECT_FLOAT_EQ(static_cast<float>(back.tau), 0.05F);
    EXPECT_EQ(back.stages[2].bias[1], 0.25);
    EXPECT_EQ(encode_adapters(back).buffer(), bytes);
    EXPECT_NO_THROW(back.check_layout(layout));
    EXPECT_THROW(back.check_layout(fixture::layout(4, 2, 8, 5)), Error);
    auto cut = bytes;
    cut.pop_back();
    EXPECT_THROW(decode_adapters(binio::Reader(cut)), DataError);
}

TEST(AdapterFormat, FileRoundTrip) {
    const auto dir = fixture::scratch_dir("adapter_file");
    const auto p = AdapterParams::initialize(fixture::layout(2, 2, 3, 4), 1);
    save_adapters(dir / "a.bin", p);
    EXPECT_EQ(encode_adapters(load_adapters(dir / "a.bin")).buffer(), encode_adapters(p).buffer());
    EXPECT_THROW(load_adapters(dir / "missing.bin"), DataError);
}

TEST(BankFormat, FileRoundTrip) {
    const auto dir = fixture::scratch_dir("bank_file");
    const auto layout = fixture::layout(2, 2, 3, 4);
    SplitMix64 rng(5);
    const auto params = AdapterParams::initialize(layout, 1);
    const auto bank = build_bank({fixture::random_embeddings(layout, rng)}, params);
    save_bank(dir / "b.bin", bank);
    EXPECT_EQ(encode_bank(load_bank(dir / "b.bin")).buffer(), encode_bank(bank).buffer());
}
