// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "deltadeno/attribution.hpp"
#include "deltadeno/backend.hpp"
#include "deltadeno/config.hpp"
#include "deltadeno/promptopt.hpp"

namespace deltadeno {

// Executed window of round(gamma * T) steps, split at its midpoint.
Schedule make_schedule(const DeltaDenoConfig& cfg);
StagePlan plan_stages(const DeltaDenoConfig& cfg);

using ExternalBackendFactory = std::function<std::unique_ptr<DenoiserBackend>(const BackendSettings&)>;
// Installs the factory used for backend.kind == "external".
void register_external_backend(ExternalBackendFactory factory);

// Toy backends are specialised to the reference image: the normal prompt (and
// the unconditional branch) reproduce its latent, and the anomaly prompt adds a
// seeded defect pattern.
std::unique_ptr<DenoiserBackend> make_backend(const DeltaDenoConfig& cfg, const ImageGrid& normal_image);

// Foreground provider from the config, or the environment variable when the
// config leaves the command empty. Null means the whole-surface fallback.
std::unique_ptr<ForegroundProvider> make_foreground_provider(const DeltaDenoConfig& cfg);

struct PreparedPrompts {
    PromptEmbedding normal;
    PromptEmbedding anomaly;  // refined when anomaly tokens exist and num_iters > 0
    std::vector<double> anchor;
    std::vector<double> loss_trace;
    std::string token_source;  // "config", "located" or "none"
};

PreparedPrompts prepare_prompts(const DeltaDenoConfig& cfg, const DenoiserBackend& backend);

struct LatentRun {
    DualBranchResult branches;
    BinaryMask final_mask_latent;
    PreparedPrompts prompts;
    StagePlan plan;
    LatentGrid z0;
};

// The latent-space part of a generation: warm start, prompt refinement, dual
// branch run and final mask. `observer` sees every step.
LatentRun run_latent(const DeltaDenoConfig& cfg, const DenoiserBackend& backend, const LatentGrid& z0,
                     const Grid2D& foreground_prior, const StepObserver& observer = {});

struct GenerateOptions {
    bool record_timings = false;
    bool trace = false;  // keep per-step delta maps for trace/ output
};

struct GenerationResult {
    ImageGrid anomaly_image;
    BinaryMask final_mask;  // image resolution
    BinaryMask mask_mid;    // latent resolution
    Grid2D s_mid;
    Grid2D s_final;
    LatentGrid z0;
    LatentGrid z_final;
    std::vector<Grid2D> step_deltas;  // filled when tracing
    nlohmann::ordered_json metadata;
};

GenerationResult generate(const DeltaDenoConfig& cfg, const ImageGrid& normal_image, const DenoiserBackend& backend,
                          ForegroundProvider* provider, const GenerateOptions& options = {});

// Writes anomaly.png, mask.png, mask_mid.png, delta_{mid,final}.f32 (+ .json)
// and metadata.json. Files written before a failure are removed.
void write_artifacts(const GenerationResult& result, const std::filesystem::path& dir);

// Reads, generates and writes one item using config-built backend and provider.
GenerationResult generate_to_dir(const DeltaDenoConfig& cfg, const std::filesystem::path& image_path,
                                 const std::filesystem::path& out_dir, const GenerateOptions& options = {});

struct ManifestRow {
    std::size_t index = 0;
    std::string source;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string image;
    std::string mask;
    std::string metadata;
    std::string error;
};

struct BatchManifest {
    std::vector<ManifestRow> rows;
    std::filesystem::path path;
};

// Item i uses image i mod n and seed cfg.seed + i, writing into item_NNNN/.
// Failures are recorded per row; the batch keeps going.
BatchManifest generate_batch(const DeltaDenoConfig& cfg, const std::vector<std::filesystem::path>& images,
                             const std::filesystem::path& out_dir);

std::vector<std::filesystem::path> list_batch_images(const std::filesystem::path& dir_or_list);

// Metadata plus mask and delta-map statistics for a result directory.
nlohmann::ordered_json inspect_result(const std::filesystem::path& dir);

}  // namespace deltadeno
