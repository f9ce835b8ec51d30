#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "multiads/pipeline.hpp"

#ifndef MULTIADS_KBA_DIR
#define MULTIADS_KBA_DIR "kba"
#endif

namespace multiads {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

inline int exit_code(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::config: return kExitConfig;
        case ErrorCategory::data: return kExitData;
        case ErrorCategory::numeric: return kExitNumeric;
    }
    return kExitData;
}

/// Directory of the bundled knowledge bases; MULTIADS_KBA_DIR overrides.
inline std::filesystem::path bundled_kba_dir() {
    if (const char* env = std::getenv("MULTIADS_KBA_DIR"); env != nullptr && *env != '\0') return env;
    return MULTIADS_KBA_DIR;
}

/// A KBA file path, or the name of a bundled KBA ("mvtec", "visa", ...).
inline std::filesystem::path resolve_kba(const std::filesystem::path& ref) {
    if (std::filesystem::exists(ref)) return ref;
    auto name = ref.filename();
    name.replace_extension(".json");
    const auto bundled = bundled_kba_dir() / name;
    if (ref.parent_path().empty() || !std::filesystem::exists(ref.parent_path())) {
        if (std::filesystem::exists(bundled)) return bundled;
    }
    return ref;  // load_kba reports the missing file
}

namespace detail {

struct CommonOptions {
    std::size_t jobs = std::max(1U, std::thread::hardware_concurrency());
    bool deterministic = false;
    std::optional<std::uint64_t> seed;
};

inline RunConfig load_config_for_cli(const std::filesystem::path& path, const CommonOptions& common) {
    auto cfg = load_run_config(path);
    if (common.seed) cfg.seed = *common.seed;
    if (cfg.kba.empty()) throw ConfigError("run config needs a 'kba' entry");
    cfg.kba = resolve_kba(cfg.kba);
    return cfg;
}

}  // namespace detail

/// Entry point of the `multiads` tool. Returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Zero- and few-shot multi-type anomaly detection and segmentation", "multiads"};
    app.require_subcommand(1);
    app.fallthrough();
    detail::CommonOptions common;
    app.add_option("--jobs", common.jobs, "Worker threads for per-image work")->check(CLI::PositiveNumber);
    app.add_flag("--deterministic", common.deterministic,
                 "Ordered reductions (always on: results never depend on --jobs)");
    app.add_option("--seed", common.seed, "Override the run seed (after MULTIADS_SEED)");

    auto* kba_cmd = app.add_subcommand("kba", "Knowledge base utilities");
    kba_cmd->require_subcommand(1);
    auto* kba_validate = kba_cmd->add_subcommand("validate", "Validate a knowledge-base JSON file");
    std::string kba_path;
    kba_validate->add_option("path", kba_path, "KBA file or bundled name")->required();

    auto* prompts_cmd = app.add_subcommand("prompts", "Prompt generation");
    prompts_cmd->require_subcommand(1);
    auto* prompts_gen = prompts_cmd->add_subcommand("gen", "Print the prompt sets of one product as JSON");
    std::string prompts_kba;
    std::string prompts_product;
    bool prompts_filtered = false;
    prompts_gen->add_option("kba", prompts_kba, "KBA file or bundled name")->required();
    prompts_gen->add_option("product", prompts_product, "Product key")->required();
    prompts_gen->add_flag("--filtered", prompts_filtered, "Only the product's relevant defect states");

    std::string config_path;
    auto* manifest_cmd = app.add_subcommand("export-manifest", "List prompts and image paths for an external encoder");
    std::string manifest_out;
    manifest_cmd->add_option("--config", config_path, "Run config JSON")->required();
    manifest_cmd->add_option("--out", manifest_out, "Output file (default stdout)");

    auto* train_cmd = app.add_subcommand("train", "Train the adapters");
    std::string train_out;
    std::string train_log;
    train_cmd->add_option("--config", config_path, "Run config JSON")->required();
    train_cmd->add_option("--out", train_out, "Checkpoint path")->required();
    train_cmd->add_option("--log", train_log, "Training log JSON path");

    auto* infer_cmd = app.add_subcommand("infer", "Zero-shot, few-shot or batched inference");
    InferRequest req;
    std::string checkpoint;
    std::string fewshot_root;
    std::string bank_dir;
    bool batched = false;
    std::vector<std::string> infer_products;
    infer_cmd->add_option("--config", config_path, "Run config JSON")->required();
    infer_cmd->add_option("--checkpoint", checkpoint, "Adapter checkpoint")->required();
    infer_cmd->add_option("--input", req.input_root, "Dataset root to score")->required();
    infer_cmd->add_option("--out", req.out_dir, "Output directory")->required();
    infer_cmd->add_option("--split", req.split, "Split to score (empty = all)");
    infer_cmd->add_option("--product", infer_products, "Restrict to these products");
    infer_cmd->add_flag("--filtered", req.filtered, "Filtered variant: only relevant defect states");
    auto* fs_opt = infer_cmd->add_option("--fewshot", fewshot_root, "Reference root (<product>/train/good)");
    infer_cmd->add_option("--shots", req.shots, "Reference images per product")->check(CLI::PositiveNumber);
    infer_cmd->add_option("--save-bank", bank_dir, "Write each product's memory bank here");
    auto* batched_opt = infer_cmd->add_flag("--batched", batched, "Batched zero-shot mutual scoring");
    fs_opt->excludes(batched_opt);

    auto* eval_cmd = app.add_subcommand("eval", "Score inference results against ground truth");
    std::string results_dir;
    std::string gt_root;
    std::string report_out;
    eval_cmd->add_option("--config", config_path, "Run config JSON")->required();
    eval_cmd->add_option("--results", results_dir, "Inference output directory")->required();
    eval_cmd->add_option("--gt", gt_root, "Ground-truth root (default: the results' input root)");
    eval_cmd->add_option("--out", report_out, "Report path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*kba_validate) {
            const auto kba = load_kba(resolve_kba(kba_path));
            out << "ok: " << kba.defect_types().size() << " defect types, " << kba.products().size() << " products\n";
            return kExitOk;
        }
        if (*prompts_gen) {
            const auto kba = load_kba(resolve_kba(prompts_kba));
            out << prompt_sets_to_json(build_prompt_sets(kba, prompts_product, prompts_filtered)).dump(2) << '\n';
            return kExitOk;
        }

        const auto cfg = detail::load_config_for_cli(config_path, common);
        const auto kba = load_kba(cfg.kba);

        if (*manifest_cmd) {
            const auto samples = scan_dataset(cfg.dataset_root, kba, cfg.products);
            ordered_json doc{{"dataset_root", std::filesystem::absolute(cfg.dataset_root).generic_string()},
                             {"image_size", cfg.preprocess.image_size},
                             {"images", ordered_json::array()},
                             {"prompts", ordered_json::object()}};
            for (const auto& s : samples)
                doc["images"].push_back({{"relative_path", s.relative_path}, {"key", image_key(s.relative_path)}});
            for (const auto& p : products_of(samples)) doc["prompts"][p] = prompt_sets_to_json(build_prompt_sets(kba, p, false));
            if (manifest_out.empty())
                out << doc.dump(2) << '\n';
            else
                detail::write_json(manifest_out, doc);
            return kExitOk;
        }
        if (*train_cmd) {
            const auto result = train_from_config(cfg, kba, common.jobs);
            save_adapters(train_out, result.params);
            if (!train_log.empty()) detail::write_json(train_log, train_log_json(result.log));
            out << "trained " << result.log.step_loss.size() << " steps on " << result.log.samples_used
                << " images; final epoch loss " << result.log.epoch_loss.back() << '\n';
            return kExitOk;
        }
        if (*infer_cmd) {
            const auto params = load_adapters(checkpoint);
            req.products = infer_products;
            req.jobs = common.jobs;
            if (!fewshot_root.empty()) {
                req.mode = InferMode::few_shot;
                req.fewshot_root = fewshot_root;
            } else if (batched) {
                req.mode = InferMode::batched;
            }
            if (!bank_dir.empty()) req.save_bank_dir = bank_dir;
            const auto doc = run_inference(cfg, kba, params, req);
            out << "scored " << doc["images"].size() << " images into " << req.out_dir.string() << '\n';
            return kExitOk;
        }
        if (*eval_cmd) {
            std::filesystem::path gt = gt_root;
            if (gt.empty()) gt = detail::read_json(std::filesystem::path(results_dir) / "results.json").at("input_root").get<std::string>();
            const auto report = evaluate_results(results_dir, kba, gt);
            if (report_out.empty())
                out << report.dump(2) << '\n';
            else
                detail::write_json(report_out, report);
            return kExitOk;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code(e.category());
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const nlohmann::json::exception& e) {
        err << "error: malformed document: " << e.what() << '\n';
        return kExitData;
    }
    return kExitConfig;
}

}  // namespace multiads
