// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "deltadeno/evalkit.hpp"
#include "deltadeno/io.hpp"
#include "deltadeno/pipeline.hpp"

namespace fs = std::filesystem;
using namespace deltadeno;

namespace {

std::string error_type(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const ShapeError*>(&e)) return "shape";
    if (dynamic_cast<const CapabilityError*>(&e)) return "capability";
    if (dynamic_cast<const IoError*>(&e)) return "io";
    return "runtime";
}

DeltaDenoConfig load_or_default(const std::string& path) {
    return path.empty() ? DeltaDenoConfig{} : load_config(path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Training-free anomaly generation with two-branch delta attribution"};
    app.require_subcommand(1);

    std::string config_path, image_path, images_path, out_dir, grid_path, inspect_dir;
    std::optional<std::uint64_t> seed;
    bool timings = false, trace = false;

    auto* gen = app.add_subcommand("generate", "Generate one anomaly image and mask");
    gen->add_option("--config", config_path, "JSON config (defaults when omitted)");
    gen->add_option("--image", image_path, "Normal reference PNG")->required();
    gen->add_option("--out", out_dir, "Output directory (config output_dir when omitted)");
    gen->add_option("--seed", seed, "Override the config seed");
    gen->add_flag("--timings", timings, "Record stage timings in metadata.json");
    gen->add_flag("--trace", trace, "Write per-step delta maps to trace/");

    auto* batch = app.add_subcommand("batch", "Generate a batch with a manifest");
    batch->add_option("--config", config_path, "JSON config");
    batch->add_option("--images", images_path, "Directory of PNGs or a text file listing them")->required();
    batch->add_option("--out", out_dir, "Output directory");
    batch->add_option("--seed", seed, "Override the base seed");

    auto* inspect = app.add_subcommand("inspect", "Summarise a result directory as JSON");
    inspect->add_option("dir", inspect_dir, "Result directory")->required();

    auto* sweep_cmd = app.add_subcommand("sweep", "Run a parameter sweep on toy scenarios");
    sweep_cmd->add_option("--config", config_path, "Base JSON config");
    sweep_cmd->add_option("--grid", grid_path, "Sweep grid JSON")->required();
    sweep_cmd->add_option("--out", out_dir, "Report directory")->required();
    sweep_cmd->add_flag("--timings", timings, "Fill the runtime_ms column");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            DeltaDenoConfig cfg = load_or_default(config_path);
            if (seed) cfg.seed = *seed;
            const fs::path dir = out_dir.empty() ? fs::path(cfg.output_dir) : fs::path(out_dir);
            GenerateOptions options;
            options.record_timings = timings;
            options.trace = trace;
            const GenerationResult r = generate_to_dir(cfg, image_path, dir, options);
            std::cout << nlohmann::json{{"output", dir.string()},
                                        {"mask_pixels", r.final_mask.pixel_count()},
                                        {"anomaly_tokens", nlohmann::json::parse(r.metadata["prompts"]["anomaly_tokens"].dump())}}
                             .dump()
                      << "\n";
        } else if (*batch) {
            DeltaDenoConfig cfg = load_or_default(config_path);
            if (seed) cfg.seed = *seed;
            const fs::path dir = out_dir.empty() ? fs::path(cfg.output_dir) : fs::path(out_dir);
            const BatchManifest m = generate_batch(cfg, list_batch_images(images_path), dir);
            std::size_t failed = 0;
            for (const auto& row : m.rows) failed += row.ok ? 0 : 1;
            std::cout << nlohmann::json{{"manifest", m.path.string()}, {"items", m.rows.size()}, {"failed", failed}}.dump()
                      << "\n";
            return failed == 0 ? 0 : 3;
        } else if (*inspect) {
            std::cout << inspect_result(inspect_dir).dump(2) << "\n";
        } else if (*sweep_cmd) {
            const DeltaDenoConfig cfg = load_or_default(config_path);
            const SweepGrid grid = sweep_grid_from_json(nlohmann::json::parse(read_text_file(grid_path)));
            SweepOptions options;
            options.record_timings = timings;
            const SweepReport report = sweep(cfg, grid, options);
            write_sweep_report(report, out_dir);
            std::cout << report.summary;
        }
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", e.what()}, {"type", error_type(e)}}.dump() << "\n";
        return 2;
    }
    return 0;
}
