#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <utility>

#include "multiads/cli.hpp"
#include "support/fixtures.hpp"
#include "support/synthetic.hpp"

using namespace multiads;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "multiads");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string bundled(const std::string& name) { return (fs::path(MULTIADS_KBA_DIR) / (name + ".json")).string(); }

/// Trained synthetic fixture shared by the pipeline tests.
struct Pipeline {
    fs::path dir, config, checkpoint;
};

const Pipeline& pipeline() {
    static const Pipeline p = [] {
        Pipeline q;
        q.dir = fixture::scratch_dir("cli_pipeline");
        synthetic::write_dataset(q.dir);
        q.config = synthetic::write_config(q.dir, synthetic::write_kba(q.dir));
        q.checkpoint = q.dir / "adapters.bin";
        const auto r = cli({"train", "--config", q.config.string(), "--out", q.checkpoint.string(), "--log",
                            (q.dir / "train_log.json").string()});
        EXPECT_EQ(r.code, 0) << r.err;
        return q;
    }();
    return p;
}

ordered_json read(const fs::path& p) {
    std::ifstream in(p);
    return ordered_json::parse(in);
}

}  // namespace

TEST(Cli, KbaValidateBundled) {
    const auto r = cli({"kba", "validate", bundled("mvtec")});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("15 products"), std::string::npos);
    EXPECT_EQ(cli({"kba", "validate", "visa"}).code, 0);
}

TEST(Cli, KbaValidateRejectsDuplicateIds) {
    const auto dir = fixture::scratch_dir("cli_dup");
    std::ofstream(dir / "dup.json") << R"({"normal_phrases": ["[cls]"], "templates": ["a {}."],
      "defect_types": {"hole": {"superclass": "Hole", "variations": [], "phrases": ["[cls] with a hole"], "attributes": []},
                       "hole": {"superclass": "Hole", "variations": [], "phrases": ["holed [cls]"], "attributes": []}},
      "products": {"x": {"defects": ["hole"]}}})";
    const auto r = cli({"kba", "validate", (dir / "dup.json").string()});
    EXPECT_EQ(r.code, kExitConfig);
    EXPECT_FALSE(r.err.empty());
}

TEST(Cli, KbaValidateMissingFile) { EXPECT_NE(cli({"kba", "validate", "/nonexistent/dir/kba.json"}).code, 0); }

TEST(Cli, PromptsGen) {
    const auto r = cli({"prompts", "gen", "mvtec", "cable"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = ordered_json::parse(r.out);
    ASSERT_TRUE(j.is_array());
    EXPECT_EQ(j.front()["state_id"], "normal");
}

TEST(Cli, PromptsGenFilteredTubes) {
    const auto r = cli({"prompts", "gen", "mpdd", "tubes", "--filtered"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(ordered_json::parse(r.out).size(), 2U);
}

TEST(Cli, PromptsGenUnknownProduct) { EXPECT_EQ(cli({"prompts", "gen", "mvtec", "sprocket"}).code, kExitConfig); }

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(cli({}).code, kExitConfig);
    EXPECT_EQ(cli({"train"}).code, kExitConfig);
    EXPECT_EQ(cli({"frobnicate"}).code, kExitConfig);
}

TEST(Cli, ConfigUnknownKeyRejected) {
    const auto dir = fixture::scratch_dir("cli_badcfg");
    std::ofstream(dir / "c.json") << R"({"epochs": 1, "learning_rate": 0.1})";
    const auto r = cli({"train", "--config", (dir / "c.json").string(), "--out", (dir / "a.bin").string()});
    EXPECT_EQ(r.code, kExitConfig);
    EXPECT_NE(r.err.find("learning_rate"), std::string::npos);
}

TEST(Cli, ExportManifest) {
    const auto& p = pipeline();
    const auto r = cli({"export-manifest", "--config", p.config.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = ordered_json::parse(r.out);
    EXPECT_EQ(j["images"].size(), 60U);
    EXPECT_TRUE(j["prompts"].contains("widget"));
}

TEST(Cli, TrainWritesCheckpointAndLog) {
    const auto& p = pipeline();
    const auto params = load_adapters(p.checkpoint);
    EXPECT_EQ(params.stage_count(), 2U);
    const auto log = read(p.dir / "train_log.json");
    EXPECT_LT(log["epoch_loss"].back().get<double>(), log["epoch_loss"].front().get<double>());
}

TEST(Cli, TrainIsSeedDeterministic) {
    const auto& p = pipeline();
    const auto again = p.dir / "again.bin";
    ASSERT_EQ(cli({"--jobs", "3", "train", "--config", p.config.string(), "--out", again.string()}).code, 0);
    EXPECT_EQ(encode_adapters(load_adapters(again)).buffer(), encode_adapters(load_adapters(p.checkpoint)).buffer());
    const auto other = p.dir / "other.bin";
    ASSERT_EQ(cli({"--seed", "99", "train", "--config", p.config.string(), "--out", other.string()}).code, 0);
    EXPECT_NE(encode_adapters(load_adapters(other)).buffer(), encode_adapters(load_adapters(p.checkpoint)).buffer());
}

TEST(Cli, InferThenEval) {
    const auto& p = pipeline();
    const auto out = p.dir / "zs";
    auto r = cli({"infer", "--config", p.config.string(), "--checkpoint", p.checkpoint.string(), "--input",
                  (p.dir / "test_set").string(), "--out", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto doc = read(out / "results.json");
    EXPECT_EQ(doc["images"].size(), 40U);
    EXPECT_EQ(doc["products"]["widget"]["states"].size(), 4U);  // full roster: normal + 3 defects
    const auto first = doc["images"][0];
    EXPECT_TRUE(fs::exists(out / first["anomaly_map"].get<std::string>()));
    EXPECT_TRUE(fs::exists(out / first["labels"].get<std::string>()));
    EXPECT_TRUE(fs::exists(out / "widget_palette.json"));

    r = cli({"eval", "--config", p.config.string(), "--results", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rep = ordered_json::parse(r.out);
    EXPECT_GT(rep["per_product"]["widget"]["pixel"]["auroc"].get<double>(), 0.9);
    EXPECT_GT(rep["per_product"]["widget"]["image"]["auroc"].get<double>(), 0.9);
    EXPECT_GT(rep["mean"]["mtas"]["auroc"].get<double>(), 0.5);
}

TEST(Cli, FewShotDiffersFromZeroShot) {
    const auto& p = pipeline();
    const auto zs = p.dir / "zs2", fs_out = p.dir / "fs", banks = p.dir / "banks";
    const auto input = (p.dir / "test_set").string();
    ASSERT_EQ(cli({"infer", "--config", p.config.string(), "--checkpoint", p.checkpoint.string(), "--input", input,
                   "--out", zs.string()})
                  .code,
              0);
    const auto r = cli({"infer", "--config", p.config.string(), "--checkpoint", p.checkpoint.string(), "--input",
                        input, "--out", fs_out.string(), "--fewshot", input, "--shots", "2", "--save-bank",
                        banks.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto a = read(zs / "results.json"), b = read(fs_out / "results.json");
    EXPECT_EQ(b["mode"], "few-shot");
    bool differs = false;
    for (std::size_t k = 0; k < a["images"].size(); ++k)
        differs |= a["images"][k]["score"].get<double>() != b["images"][k]["score"].get<double>();
    EXPECT_TRUE(differs);
    EXPECT_TRUE(fs::exists(banks / "widget.madsbnk"));
    EXPECT_EQ(load_bank(banks / "widget.madsbnk").size(0), 2U * 16U * 16U);
}

TEST(Cli, FewShotAndBatchedExclusive) {
    const auto& p = pipeline();
    const auto input = (p.dir / "test_set").string();
    EXPECT_EQ(cli({"infer", "--config", p.config.string(), "--checkpoint", p.checkpoint.string(), "--input", input,
                   "--out", (p.dir / "x").string(), "--fewshot", input, "--batched"})
                  .code,
              kExitConfig);
}

TEST(Cli, BatchedMode) {
    const auto& p = pipeline();
    const auto out = p.dir / "batched";
    const auto r = cli({"infer", "--config", p.config.string(), "--checkpoint", p.checkpoint.string(), "--input",
                        (p.dir / "test_set").string(), "--out", out.string(), "--batched"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read(out / "results.json")["mode"], "batched");
}

TEST(Cli, FilteredInferenceUsesRelevantStates) {
    const auto& p = pipeline();
    const auto out = p.dir / "filtered";
    ASSERT_EQ(cli({"infer", "--config", p.config.string(), "--checkpoint", p.checkpoint.string(), "--input",
                   (p.dir / "test_set").string(), "--out", out.string(), "--filtered"})
                  .code,
              0);
    const auto doc = read(out / "results.json");
    EXPECT_TRUE(doc["filtered"].get<bool>());
    EXPECT_EQ(doc["products"]["widget"]["states"], (ordered_json{"normal", "spot", "scratch"}));
}

TEST(Cli, EvalOfPerfectResultsIsOne) {
    const auto dir = fixture::scratch_dir("cli_perfect");
    synthetic::Spec spec;
    spec.test_good = 3, spec.test_spot = 3, spec.test_scratch = 3;
    synthetic::write_dataset(dir, spec);
    const auto kba_path = synthetic::write_kba(dir);
    const auto kba = load_kba(kba_path);
    const auto root = dir / "test_set";
    const std::size_t size = 32;
    const std::vector<std::string> roster{"normal", "spot", "scratch"};
    const auto out = dir / "results";
    ordered_json doc{{"input_root", root.string()}, {"image_size", size}, {"mode", "zero_shot"}, {"filtered", false},
                     {"theta", 0.5}, {"products", {{"widget", {{"states", roster}, {"palette", "widget_palette.json"}}}}},
                     {"images", ordered_json::array()}};
    for (const auto& s : scan_dataset(root, kba)) {
        if (s.split != "test") continue;
        const auto gt = load_ground_truth(s, roster, size);
        ScoreMap map(size, size);
        ProbStack probs(3, size, size);
        for (std::size_t k = 0; k < map.size(); ++k) {
            map.data()[k] = gt.binary.data()[k];
            probs.values()[static_cast<std::size_t>(gt.multi.data()[k]) * map.size() + k] = 1.0;
        }
        auto stem = fs::path(s.relative_path).replace_extension().generic_string();
        fs::create_directories((out / stem).parent_path());
        write_f32(out / (stem + ".f32"), std::as_const(map).values());
        write_f32(out / (stem + ".mdm.f32"), std::as_const(probs).values());
        doc["images"].push_back({{"relative_path", s.relative_path}, {"product", "widget"}, {"scores", stem + ".f32"},
                                 {"multi_defect", stem + ".mdm.f32"}, {"score", s.anomalous() ? 1.0 : 0.0}});
    }
    std::ofstream(out / "results.json") << doc.dump(2);
    std::ofstream(dir / "cfg.json") << ordered_json{{"kba", kba_path.string()}, {"image_size", size}}.dump();
    const auto r = cli({"eval", "--config", (dir / "cfg.json").string(), "--results", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rep = ordered_json::parse(r.out);
    for (const char* group : {"pixel", "image", "mtas"})
        for (const auto& [name, v] : rep["mean"][group].items()) EXPECT_DOUBLE_EQ(v.get<double>(), 1.0) << group << "." << name;
    EXPECT_EQ(rep["mean"]["pixel"].size(), 4U);
}

TEST(Cli, EvalMissingResultsIsDataError) {
    const auto& p = pipeline();
    EXPECT_EQ(cli({"eval", "--config", p.config.string(), "--results", (p.dir / "nowhere").string()}).code, kExitData);
}
