// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "deltadeno/backend.hpp"
#include "deltadeno/config.hpp"
#include "deltadeno/tensor.hpp"

namespace deltadeno {

// |pred ∩ gt| / |pred ∪ gt|, 1 when both are empty.
double mask_iou(const BinaryMask& pred, const BinaryMask& gt);

// Share of the total mass of S that falls inside gt grown by `dilate` pixels.
double region_energy_ratio(const Grid2D& s, const BinaryMask& gt, int dilate);

// Mean absolute latent change over positions outside gt (all channels).
double outside_change(const LatentGrid& before, const LatentGrid& after, const BinaryMask& gt);

// Latent-space test case with a known defect region.
struct ToyScenario {
    LatentGrid mu_normal;
    LatentGrid mu_anomaly;  // differs from mu_normal exactly on gt
    BinaryMask gt;
    Grid2D foreground;      // prior handed to the run
    LatentGrid z0_normal;   // mu_normal + sigma0 * noise
    std::vector<double> offset;
    double sigma0 = 0.3;
    std::uint64_t seed = 0;
};

struct ScenarioOptions {
    Shape3 latent{32, 32, 4};
    int min_side = 8;
    int max_side = 14;
    double offset_norm = 1.5;
    double sigma0 = 0.3;
};

// Random rectangle; the foreground prior is the whole surface.
ToyScenario make_rect_scenario(std::uint64_t seed, const ScenarioOptions& options = {});
// Same rectangle layout, but the rectangle is also the foreground prior. The
// synthetic-attention backend only knows a token offset, so localisation comes
// from where attention lands.
ToyScenario make_prior_scenario(std::uint64_t seed, const ScenarioOptions& options = {});

// Backend of kind cfg.backend.kind ("analytic" or "synthetic_attention") built
// around the scenario's means.
std::unique_ptr<DenoiserBackend> make_scenario_backend(const DeltaDenoConfig& cfg, const ToyScenario& scenario);

struct ScenarioOutcome {
    double iou = 0.0;
    double energy_ratio = 0.0;
    std::size_t mask_pixels = 0;
    std::size_t mid_mask_pixels = 0;
    double outside_change = 0.0;
    bool loss_trace_present = false;
    BinaryMask final_mask;
    Grid2D s_final;
};

ScenarioOutcome run_scenario(const DeltaDenoConfig& cfg, const ToyScenario& scenario);

// Trial i uses scenario seed and run seed cfg.seed + i.
ToyScenario scenario_for_trial(const DeltaDenoConfig& cfg, std::size_t trial, const ScenarioOptions& options = {});

struct SweepGrid {
    std::vector<std::pair<std::string, std::vector<nlohmann::json>>> parameters;
    int trials = 5;
};

// {"trials": n, "parameters": {"beta": [0, 2], "refine.num_iters": [0, 10]}}
SweepGrid sweep_grid_from_json(const nlohmann::json& doc);

struct SweepCell {
    std::size_t index = 0;
    std::vector<std::pair<std::string, nlohmann::json>> values;
    bool ok = false;
    double iou = 0.0;            // median over trials
    double energy_ratio = 0.0;   // median over trials
    double mask_pixels = 0.0;    // mean over trials
    double outside_change = 0.0; // mean over trials
    bool loss_trace_present = false;
    double runtime_ms = 0.0;
    std::string error;
};

struct SweepOptions {
    bool record_timings = false;
    ScenarioOptions scenario;
};

struct SweepReport {
    std::vector<SweepCell> cells;
    std::string csv;
    std::string summary;
};

// Cartesian product of the grid; cells run on cfg.workers threads and a failing
// cell is reported without stopping the others.
SweepReport sweep(const DeltaDenoConfig& cfg, const SweepGrid& grid, const SweepOptions& options = {});

// sweep.csv, summary.txt and iou.png.
void write_sweep_report(const SweepReport& report, const std::filesystem::path& dir);

}  // namespace deltadeno
