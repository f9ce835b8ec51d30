#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "multiads/config.hpp"
#include "multiads/dataio.hpp"
#include "multiads/embedding_files.hpp"
#include "multiads/fewshot.hpp"
#include "multiads/infer.hpp"
#include "multiads/metrics.hpp"
#include "multiads/train.hpp"

namespace multiads {

/// Image and text backends selected by a run config.
class Backends {
  public:
    explicit Backends(const RunConfig& cfg) {
        if (cfg.backend.kind == BackendKind::mock) {
            mock_ = std::make_unique<MockBackend>(cfg.mock_layout(), cfg.backend.mock_seed);
        } else {
            image_ = std::make_unique<PrecomputedImageBackend>(MebFile::open(cfg.backend.images));
            text_ = std::make_unique<PrecomputedTextBackend>(read_text_file(cfg.backend.text));
        }
        if (image().layout().stage_count() != cfg.m)
            throw DimensionMismatch("backend has " + std::to_string(image().layout().stage_count()) +
                                    " stages, config m = " + std::to_string(cfg.m));
        if (text().width() != image().layout().joint_width)
            throw DimensionMismatch("text width differs from image joint width");
    }

    [[nodiscard]] const ImageBackend& image() const { return mock_ ? static_cast<const ImageBackend&>(*mock_) : *image_; }
    [[nodiscard]] const TextBackend& text() const { return mock_ ? static_cast<const TextBackend&>(*mock_) : *text_; }

    /// Embeddings of one scanned image; pixels are decoded only when needed.
    [[nodiscard]] ImageEmbeddings embed(const SampleInfo& s, const PreprocessConfig& pre) const {
        const auto& backend = image();
        ImageEmbeddings e;
        if (backend.needs_pixels()) {
            const auto img = load_image(s.image_path, pre);
            e = backend.encode(s.relative_path, &img);
        } else {
            e = backend.encode(s.relative_path, nullptr);
        }
        e.check(backend.layout());
        return e;
    }

  private:
    std::unique_ptr<MockBackend> mock_;
    std::unique_ptr<PrecomputedImageBackend> image_;
    std::unique_ptr<PrecomputedTextBackend> text_;
};

/// Distinct products of the scanned samples, in first-seen order.
inline std::vector<std::string> products_of(const std::vector<SampleInfo>& samples) {
    std::vector<std::string> out;
    for (const auto& s : samples)
        if (std::find(out.begin(), out.end(), s.product) == out.end()) out.push_back(s.product);
    return out;
}

inline TrainResult train_from_config(const RunConfig& cfg, const Kba& kba, std::size_t jobs = 1) {
    const Backends backends(cfg);
    const auto samples = scan_dataset(cfg.dataset_root, kba, cfg.products);
    if (samples.empty()) throw EmptyDataset("no images under '" + cfg.dataset_root.string() + "'");
    const auto products = products_of(samples);
    std::vector<StateTextEmbeddings> texts;
    std::map<std::string, std::size_t> text_index;
    std::map<std::string, std::vector<std::string>> rosters;
    for (const auto& p : products) {
        rosters[p] = build_state_roster(kba, p, false);
        text_index[p] = texts.size();
        texts.push_back(encode_text_states(backends.text(), kba, p, rosters[p]));
    }
    auto tcfg = cfg.train_config();
    tcfg.jobs = jobs;
    std::vector<TrainSample> train(samples.size());
    detail::parallel_for(samples.size(), jobs, [&](std::size_t k) {
        const auto& s = samples[k];
        auto& t = train[k];
        t.combined = s.combined;
        t.text_index = text_index.at(s.product);
        if (s.combined && cfg.exclude_combined) return;
        t.embeddings = backends.embed(s, cfg.preprocess);
        auto gt = load_ground_truth(s, rosters.at(s.product), cfg.preprocess.image_size);
        t.gt_multi = std::move(gt.multi);
        t.gt_binary = std::move(gt.binary);
    });
    return train_adapters(train, backends.image().layout(), texts, tcfg);
}

inline ordered_json train_log_json(const TrainLog& log) {
    return {{"samples_used", log.samples_used},
            {"samples_skipped", log.samples_skipped},
            {"step_loss", log.step_loss},
            {"epoch_loss", log.epoch_loss}};
}

enum class InferMode { zero_shot, few_shot, batched };

struct InferRequest {
    std::filesystem::path input_root;
    std::vector<std::string> products;  // empty = all KBA products under the root
    std::string split = "test";
    bool filtered = false;
    InferMode mode = InferMode::zero_shot;
    std::filesystem::path fewshot_root;  // few-shot references: <root>/<product>/train/good
    std::size_t shots = 1;
    std::optional<std::filesystem::path> save_bank_dir;
    std::filesystem::path out_dir;
    std::size_t jobs = 1;
};

namespace detail {

inline std::string mode_name(InferMode m) {
    switch (m) {
        case InferMode::zero_shot: return "zero-shot";
        case InferMode::few_shot: return "few-shot";
        case InferMode::batched: return "batched";
    }
    return "?";
}

inline void write_json(const std::filesystem::path& path, const ordered_json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

inline ordered_json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return ordered_json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed JSON in '" + path.string() + "': " + e.what());
    }
}

struct ImageOutcome {
    ScoreMap anomaly;
    ProbStack multi;
    double global = 0.0;
    Decision decision;
};

}  // namespace detail

/// Runs inference over a scanned tree and writes per-image artifacts plus
/// results.json into `req.out_dir`. Returns the results document.
inline ordered_json run_inference(const RunConfig& cfg, const Kba& kba, const AdapterParams& params,
                                  const InferRequest& req) {
    const Backends backends(cfg);
    params.check_layout(backends.image().layout());
    const auto opt = cfg.inference_options();
    const std::size_t size = cfg.preprocess.image_size;

    std::vector<SampleInfo> samples;
    for (auto& s : scan_dataset(req.input_root, kba, req.products))
        if (req.split.empty() || s.split == req.split) samples.push_back(std::move(s));
    if (samples.empty()) throw EmptyDataset("no '" + req.split + "' images under '" + req.input_root.string() + "'");
    std::filesystem::create_directories(req.out_dir);

    ordered_json doc{{"input_root", std::filesystem::absolute(req.input_root).generic_string()},
                     {"image_size", size},
                     {"mode", detail::mode_name(req.mode)},
                     {"filtered", req.filtered},
                     {"theta", cfg.theta},
                     {"products", ordered_json::object()},
                     {"images", ordered_json::array()}};

    std::vector<detail::ImageOutcome> outcomes(samples.size());
    for (const auto& product : products_of(samples)) {
        const auto roster = build_state_roster(kba, product, req.filtered);
        const auto text = encode_text_states(backends.text(), kba, product, roster);
        doc["products"][product] = {{"states", roster}, {"palette", product + "_palette.json"}};
        detail::write_json(req.out_dir / (product + "_palette.json"), palette_json(roster));

        std::vector<std::size_t> idx;
        for (std::size_t k = 0; k < samples.size(); ++k)
            if (samples[k].product == product) idx.push_back(k);
        std::vector<ImageEmbeddings> emb(idx.size());
        detail::parallel_for(idx.size(), req.jobs, [&](std::size_t k) {
            emb[k] = backends.embed(samples[idx[k]], cfg.preprocess);
        });

        std::optional<MemoryBank> bank;
        if (req.mode == InferMode::few_shot) {
            std::vector<ImageEmbeddings> refs;
            for (const auto& r : scan_dataset(req.fewshot_root, kba, {product})) {
                if (r.split != "train" || r.anomalous()) continue;
                refs.push_back(backends.embed(r, cfg.preprocess));
                if (refs.size() == req.shots) break;
            }
            bank = build_bank(refs, params, cfg.pre_normalize);
            if (req.save_bank_dir) {
                std::filesystem::create_directories(*req.save_bank_dir);
                save_bank(*req.save_bank_dir / (product + ".madsbnk"), *bank);
            }
        }
        std::vector<ScoreMap> batched;
        if (req.mode == InferMode::batched)
            batched = batched_scores(emb, params, text, cfg.alpha_quantile, size, size, cfg.upsample, cfg.pre_normalize);

        detail::parallel_for(idx.size(), req.jobs, [&](std::size_t k) {
            auto r = infer_embeddings(emb[k], params, text, size, size, opt);
            auto& o = outcomes[idx[k]];
            o.global = r.global_anomaly;
            o.multi = std::move(r.multi.probs);
            if (req.mode == InferMode::few_shot) {
                o.anomaly = final_map(r.anomaly, reference_map(emb[k], *bank, params, size, size, cfg.upsample,
                                                               cfg.pre_normalize));
                o.decision = fewshot_decision(o.anomaly, o.global, cfg.theta);
            } else if (req.mode == InferMode::batched) {
                o.anomaly = batched[k];
                o.decision = image_decision(o.anomaly, o.global, cfg.theta);
            } else {
                o.anomaly = std::move(r.anomaly);
                o.decision = r.decision;
            }
        });
    }

    for (std::size_t k = 0; k < samples.size(); ++k) {
        const auto& s = samples[k];
        const auto& o = outcomes[k];
        auto stem = std::filesystem::path(s.relative_path);
        stem.replace_extension();
        const auto base = req.out_dir / stem;
        std::filesystem::create_directories(base.parent_path());
        const auto rel = stem.generic_string();
        write_heatmap(base.string() + ".png", o.anomaly);
        write_f32(base.string() + ".mdm.f32", o.multi.values());
        write_label_png(base.string() + "_labels.png", classify_pixels(o.multi), o.multi.dim0());
        doc["images"].push_back({{"relative_path", s.relative_path},
                                 {"product", s.product},
                                 {"anomaly_map", rel + ".png"},
                                 {"scores", rel + ".f32"},
                                 {"labels", rel + "_labels.png"},
                                 {"multi_defect", rel + ".mdm.f32"},
                                 {"global_anomaly", o.global},
                                 {"score", o.decision.score},
                                 {"anomalous", o.decision.anomalous}});
    }
    detail::write_json(req.out_dir / "results.json", doc);
    return doc;
}

namespace detail {

/// Metric value or null when the metric is undefined for the data.
template <class Fn>
ordered_json metric_or_null(Fn&& fn) {
    try {
        const double v = fn();
        return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr);
    } catch (const DataError&) {
        return nullptr;
    }
}

inline void accumulate_mean(ordered_json& sums, ordered_json& counts, const ordered_json& block) {
    for (const auto& [group, metrics] : block.items()) {
        for (const auto& [name, v] : metrics.items()) {
            if (v.is_null()) continue;
            auto& sum = sums[group][name];
            auto& count = counts[group][name];
            sum = (sum.is_null() ? 0.0 : sum.get<double>()) + v.get<double>();
            count = (count.is_null() ? 0 : count.get<int>()) + 1;
        }
    }
}

}  // namespace detail

/// Metrics report for a results directory against the ground truth under
/// `gt_root`: per product and averaged over products.
inline ordered_json evaluate_results(const std::filesystem::path& results_dir, const Kba& kba,
                                     const std::filesystem::path& gt_root) {
    const auto doc = detail::read_json(results_dir / "results.json");
    const std::size_t size = doc.at("image_size").get<std::size_t>();
    std::vector<std::string> products;
    for (const auto& [p, _] : doc.at("products").items()) products.push_back(p);
    std::map<std::string, SampleInfo> by_path;
    for (auto& s : scan_dataset(gt_root, kba, products)) by_path.emplace(s.relative_path, std::move(s));

    struct Pool {
        ScoredSet pixels;
        ScoredSet images;
        std::vector<ScoreMap> maps;
        std::vector<BinaryMask> masks;
        std::vector<ProbStack> probs;
        std::vector<LabelMap> labels;
        std::size_t mtas_excluded = 0;
    };
    std::map<std::string, Pool> pools;
    for (const auto& entry : doc.at("images")) {
        const auto rel = entry.at("relative_path").get<std::string>();
        const auto product = entry.at("product").get<std::string>();
        const auto it = by_path.find(rel);
        if (it == by_path.end()) throw LayoutError("no ground truth for '" + rel + "' under '" + gt_root.string() + "'");
        const auto roster = doc.at("products").at(product).at("states").get<std::vector<std::string>>();
        const auto gt = load_ground_truth(it->second, roster, size);
        auto& pool = pools[product];
        auto map = read_score_map(results_dir / entry.at("scores").get<std::string>(), size, size);
        for (std::size_t k = 0; k < map.size(); ++k) pool.pixels.add(map.data()[k], gt.binary.data()[k] != 0);
        pool.images.add(entry.at("score").get<double>(), it->second.anomalous());
        pool.maps.push_back(std::move(map));
        pool.masks.push_back(gt.binary);
        if (gt.multi_valid) {
            pool.probs.push_back(read_prob_stack(results_dir / entry.at("multi_defect").get<std::string>(),
                                                 roster.size(), size, size));
            pool.labels.push_back(gt.multi);
        } else {
            ++pool.mtas_excluded;
        }
    }

    ordered_json report{{"per_product", ordered_json::object()}};
    ordered_json sums = ordered_json::object();
    ordered_json counts = ordered_json::object();
    for (const auto& [product, pool] : pools) {
        std::optional<MtasMetrics> mtas;
        if (!pool.probs.empty()) {
            try {
                mtas = mtas_metrics(pool.probs, pool.labels);
            } catch (const DataError&) {
            }
        }
        auto finite = [](double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); };
        ordered_json block{
            {"pixel",
             {{"auroc", detail::metric_or_null([&] { return auroc(pool.pixels); })},
              {"f1max", detail::metric_or_null([&] { return f1_max(pool.pixels); })},
              {"ap", detail::metric_or_null([&] { return average_precision(pool.pixels); })},
              {"aupro", detail::metric_or_null([&] { return aupro(pool.maps, pool.masks); })}}},
            {"image",
             {{"auroc", detail::metric_or_null([&] { return auroc(pool.images); })},
              {"f1max", detail::metric_or_null([&] { return f1_max(pool.images); })},
              {"ap", detail::metric_or_null([&] { return average_precision(pool.images); })}}},
            {"mtas",
             {{"auroc", mtas ? finite(mtas->auroc) : ordered_json(nullptr)},
              {"f1", mtas ? finite(mtas->f1) : ordered_json(nullptr)},
              {"ap", mtas ? finite(mtas->ap) : ordered_json(nullptr)}}}};
        detail::accumulate_mean(sums, counts, block);
        block["images"] = pool.images.scores.size();
        block["mtas_excluded_images"] = pool.mtas_excluded;
        report["per_product"][product] = std::move(block);
    }
    ordered_json mean = ordered_json::object();
    for (const char* group : {"pixel", "image", "mtas"}) {
        mean[group] = ordered_json::object();
        if (!sums.contains(group)) continue;
        for (const auto& [name, v] : sums[group].items())
            mean[group][name] = v.get<double>() / counts[group][name].get<double>();
    }
    report["mean"] = std::move(mean);
    return report;
}

}  // namespace multiads
