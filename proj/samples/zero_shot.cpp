// Zero-shot scoring of one synthetic image with the mock backend and
// untrained adapters. Shows the library calls a real pipeline chains together.

#include <cstdio>

#include "multiads/multiads.hpp"

int main() {
    using namespace multiads;

    const auto kba = load_kba(std::filesystem::path(MULTIADS_KBA_DIR) / "mvtec.json");
    const std::string product = "cable";

    EmbeddingLayout layout;
    layout.joint_width = 32;
    layout.stages = {{16, 16, 24}, {8, 8, 24}};
    const MockBackend backend(layout, 7);

    // Grey background with a bright square in one corner.
    const std::size_t H = 64, W = 64;
    Image img(H, W, 3, 0.0F);
    for (std::size_t y = 40; y < 56; ++y)
        for (std::size_t x = 40; x < 56; ++x)
            for (std::size_t c = 0; c < 3; ++c) img(y, x, c) = 2.0F;

    const auto roster = build_state_roster(kba, product, /*filtered=*/true);
    const auto text = encode_text_states(backend, kba, product, roster);
    const auto params = AdapterParams::initialize(layout, 1);

    const auto r = infer_image(backend, "cable/test/demo.png", &img, params, text, H, W);
    const auto labels = classify_pixels(r.multi);

    std::printf("states: %zu\n", roster.size());
    std::printf("global anomaly a_x = %.4f\n", r.global_anomaly);
    std::printf("image score = %.4f, anomalous = %s\n", r.decision.score, r.decision.anomalous ? "yes" : "no");
    std::printf("label at (48,48) = %s\n", roster[static_cast<std::size_t>(labels(48, 48))].c_str());
    return 0;
}
