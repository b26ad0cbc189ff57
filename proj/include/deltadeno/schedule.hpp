// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "deltadeno/tensor.hpp"

namespace deltadeno {

// Index into the native training schedule. kTerminalTimestep marks the
// clean endpoint after the last executed step, where alpha_bar == 1.
using Timestep = int;
inline constexpr Timestep kTerminalTimestep = -1;

enum class BetaScheduleKind { ScaledLinear, Linear };

struct BetaScheduleConfig {
    BetaScheduleKind kind = BetaScheduleKind::ScaledLinear;
    double beta_start = 0.00085;
    double beta_end = 0.012;

    bool operator==(const BetaScheduleConfig&) const = default;
};

std::string to_string(BetaScheduleKind kind);
BetaScheduleKind beta_schedule_kind_from_string(const std::string& name);

struct GuidanceConfig {
    double guidance_scale = 7.5;
    double eta = 0.0;

    void validate() const;
    bool operator==(const GuidanceConfig&) const = default;
};

// alpha_bar and the inference timestep subsequence. Immutable once built.
class Schedule {
public:
    // Evenly spaced ("leading") timesteps over the native range, run truncated to
    // start at executed position `start_index`.
    static Schedule build(int num_train_steps, int num_inference_steps, int start_index,
                          const BetaScheduleConfig& betas = {});

    // Explicit schedule for toy setups. alphas_bar must satisfy the usual
    // invariants; executed must be strictly decreasing indices into it.
    static Schedule from_alphas_bar(std::vector<double> alphas_bar, std::vector<Timestep> executed);

    int num_train_steps() const { return static_cast<int>(alphas_bar_.size()); }
    int num_inference_steps() const { return num_inference_steps_; }
    int start_index() const { return start_index_; }

    double alpha_bar(Timestep t) const;
    double sigma(Timestep t) const;
    std::span<const double> alphas_bar() const { return alphas_bar_; }

    std::span<const Timestep> executed_timesteps() const { return executed_; }
    // The timestep reached after executing step i; terminal after the last one.
    Timestep next_timestep(std::size_t i) const;

private:
    Schedule() = default;
    void validate() const;

    std::vector<double> alphas_bar_;
    std::vector<Timestep> executed_;
    int num_inference_steps_ = 0;
    int start_index_ = 0;
};

std::vector<double> make_alphas_bar(int num_train_steps, const BetaScheduleConfig& betas);

LatentGrid q_sample(const LatentGrid& z0, double alpha_bar, const LatentGrid& eps);
LatentGrid q_sample(const Schedule& schedule, const LatentGrid& z0, Timestep t, const LatentGrid& eps);

LatentGrid cfg_combine(const LatentGrid& eps_cond, const LatentGrid& eps_uncond, double w);

// Predicted clean latent from a noise prediction.
LatentGrid predict_x0(const LatentGrid& z_t, const LatentGrid& eps_hat, double alpha_bar_t);

// DDIM update from noise level alpha_bar_t to alpha_bar_prev. With eta > 0 a
// noise draw must be supplied; it is ignored when eta == 0.
LatentGrid reverse_step(const LatentGrid& z_t, const LatentGrid& eps_hat, double alpha_bar_t,
                        double alpha_bar_prev, double eta = 0.0, const LatentGrid* noise = nullptr);

LatentGrid reverse_step(const Schedule& schedule, const LatentGrid& z_t, const LatentGrid& eps_hat,
                        Timestep t, Timestep t_prev, double eta = 0.0,
                        const LatentGrid* noise = nullptr);

}  // namespace deltadeno
