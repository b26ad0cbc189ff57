// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "deltadeno/backend.hpp"
#include "deltadeno/maskops.hpp"
#include "deltadeno/prompt.hpp"
#include "deltadeno/schedule.hpp"
#include "deltadeno/tensor.hpp"

namespace deltadeno {

enum class Stage { Early, Late };
std::string to_string(Stage stage);

// Per-position channel L2 norm of z_n - z_a.
Grid2D step_delta(const LatentGrid& z_n, const LatentGrid& z_a);

// Running sum of nonnegative per-step deltas; starts at zero.
class DeltaAccumulator {
public:
    DeltaAccumulator(int height, int width) : sum_(height, width) {}

    void accumulate(const Grid2D& delta);
    void reset();

    const Grid2D& map() const { return sum_; }
    int steps_absorbed() const { return steps_; }

private:
    Grid2D sum_;
    int steps_ = 0;
};

// mask * z_edit + (1 - mask) * z_src, the mask broadcast across channels.
LatentGrid blend_inpaint(const LatentGrid& z_edit, const LatentGrid& z_src, const Grid2D& mask);
LatentGrid blend_inpaint(const LatentGrid& z_edit, const LatentGrid& z_src, const BinaryMask& mask);

// Reference latent noised to t with the run's shared noise draw.
LatentGrid src_latent_at(const Schedule& schedule, const LatentGrid& z0_normal, Timestep t,
                         const LatentGrid& eps_shared);

struct StagePlan {
    std::vector<Timestep> steps;  // timesteps the reverse updates start from
    std::vector<Stage> stages;
    std::size_t mid_after = 0;  // mask extraction happens after this many steps
    Timestep t_start = 0;
    Timestep t_mid = 0;  // timestep reached when the mid mask is extracted

    std::size_t size() const { return steps.size(); }
    void validate() const;
};

// Splits the schedule's executed window at its midpoint (floor(k/2) early steps).
StagePlan make_stage_plan(const Schedule& schedule);

struct BranchState {
    LatentGrid z_normal;
    LatentGrid z_anomaly;
    Timestep t = 0;
    Stage stage = Stage::Early;
};

struct DualBranchSettings {
    GuidanceConfig guidance;
    double beta = 2.0;
    double tau_mid = 0.6;
    MaskParams mask;
    bool late_inpainting = true;
    std::set<std::string> layer_filter;
    std::uint64_t noise_seed = 0;  // only consumed when guidance.eta > 0
};

struct DualBranchInputs {
    const LatentGrid& z0_normal;
    const LatentGrid& eps_shared;
    const PromptEmbedding& normal;
    const PromptEmbedding& anomaly;  // anomaly_indices select the biased columns
    const Grid2D& foreground_prior;
};

// Snapshot handed to an observer after each step's update, blend and delta.
struct StepRecord {
    std::size_t index;
    Timestep t;
    Timestep t_prev;
    Stage stage;
    const LatentGrid& z_normal;
    const LatentGrid& z_anomaly;
    const LatentGrid* z_src;     // late stage with inpainting only
    const BinaryMask* mask_mid;  // late stage only
    const Grid2D& delta;
    const Grid2D& accumulated;
};
using StepObserver = std::function<void(const StepRecord&)>;

struct DualBranchResult {
    LatentGrid z_final_anomaly;
    LatentGrid z_final_normal;
    LatentGrid z_warm_start;
    Grid2D s_mid;
    Grid2D s_final;
    BinaryMask mask_mid;
    bool bias_applied = false;
};

// Both branches start from the same warm latent and walk the same timesteps.
// Early steps bias the anomaly prompt's attention with the foreground prior;
// at the stage boundary the accumulated delta becomes the mid mask and the
// accumulator restarts; late steps bias with the mid mask and, when
// inpainting is on, pin both branches to the noised reference outside it.
DualBranchResult run_dual_branch(const DenoiserBackend& backend, const Schedule& schedule, const StagePlan& plan,
                                 const DualBranchInputs& inputs, const DualBranchSettings& settings,
                                 const StepObserver& observer = {});

}  // namespace deltadeno
