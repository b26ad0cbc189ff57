// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltadeno/attribution.hpp"

#include <cassert>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "deltadeno/random.hpp"

namespace deltadeno {

std::string to_string(Stage stage) { return stage == Stage::Early ? "early" : "late"; }

Grid2D step_delta(const LatentGrid& z_n, const LatentGrid& z_a) {
    require_same_shape(z_n, z_a, "step_delta");
    Grid2D d(z_n.height(), z_n.width());
    for (int y = 0; y < z_n.height(); ++y) {
        for (int x = 0; x < z_n.width(); ++x) {
            double sq = 0.0;
            for (int c = 0; c < z_n.channels(); ++c) {
                const double diff = z_n.at(y, x, c) - z_a.at(y, x, c);
                sq += diff * diff;
            }
            d.at(y, x) = std::sqrt(sq);
        }
    }
    return d;
}

void DeltaAccumulator::accumulate(const Grid2D& delta) {
    if (delta.height() != sum_.height() || delta.width() != sum_.width()) {
        throw ShapeError("delta map does not match the accumulator");
    }
    for (double v : delta.values()) {
        if (!(v >= 0.0)) {
            throw std::invalid_argument("delta maps must be nonnegative");
        }
    }
    for (std::size_t i = 0; i < sum_.size(); ++i) sum_[i] += delta[i];
    ++steps_;
}

void DeltaAccumulator::reset() {
    sum_ = Grid2D(sum_.height(), sum_.width());
    steps_ = 0;
}

LatentGrid blend_inpaint(const LatentGrid& z_edit, const LatentGrid& z_src, const Grid2D& mask) {
    require_same_shape(z_edit, z_src, "blend_inpaint");
    if (mask.height() != z_edit.height() || mask.width() != z_edit.width()) {
        throw ShapeError("inpainting mask must be at latent resolution");
    }
    LatentGrid out(z_edit.shape());
    for (int y = 0; y < z_edit.height(); ++y) {
        for (int x = 0; x < z_edit.width(); ++x) {
            const double m = mask.at(y, x);
            for (int c = 0; c < z_edit.channels(); ++c) {
                out.at(y, x, c) = m * z_edit.at(y, x, c) + (1.0 - m) * z_src.at(y, x, c);
            }
        }
    }
    return out;
}

LatentGrid blend_inpaint(const LatentGrid& z_edit, const LatentGrid& z_src, const BinaryMask& mask) {
    return blend_inpaint(z_edit, z_src, mask.to_grid());
}

LatentGrid src_latent_at(const Schedule& schedule, const LatentGrid& z0_normal, Timestep t,
                         const LatentGrid& eps_shared) {
    return q_sample(schedule, z0_normal, t, eps_shared);
}

void StagePlan::validate() const {
    if (steps.size() < 2) {
        throw std::invalid_argument("a stage plan needs at least two executed steps");
    }
    if (stages.size() != steps.size()) {
        throw std::logic_error("stage labels do not match steps");
    }
    if (mid_after == 0 || mid_after >= steps.size()) {
        throw std::logic_error("mid-stage split must fall strictly inside the executed window");
    }
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const Stage expected = i < mid_after ? Stage::Early : Stage::Late;
        if (stages[i] != expected) {
            throw std::logic_error("early stage must precede late stage");
        }
    }
}

StagePlan make_stage_plan(const Schedule& schedule) {
    const auto executed = schedule.executed_timesteps();
    if (executed.size() < 2) {
        throw std::invalid_argument("at least two executed steps are needed to split stages, got " +
                                    std::to_string(executed.size()));
    }
    StagePlan plan;
    plan.steps.assign(executed.begin(), executed.end());
    plan.mid_after = executed.size() / 2;
    for (std::size_t i = 0; i < executed.size(); ++i) {
        plan.stages.push_back(i < plan.mid_after ? Stage::Early : Stage::Late);
    }
    plan.t_start = executed.front();
    plan.t_mid = executed[plan.mid_after];
    plan.validate();
    return plan;
}

namespace {

LatentGrid guided_eps(const DenoiserBackend& backend, const LatentGrid& z, NoiseLevel level,
                      const PromptEmbedding& prompt, const AttentionBias* bias, double w) {
    const LatentGrid cond = backend.predict_eps(z, level, &prompt, bias);
    const LatentGrid uncond = backend.predict_eps(z, level, nullptr, nullptr);
    return cfg_combine(cond, uncond, w);
}

}  // namespace

DualBranchResult run_dual_branch(const DenoiserBackend& backend, const Schedule& schedule, const StagePlan& plan,
                                 const DualBranchInputs& inputs, const DualBranchSettings& settings,
                                 const StepObserver& observer) {
    plan.validate();
    settings.guidance.validate();
    require_same_shape(inputs.z0_normal, inputs.eps_shared, "run_dual_branch");
    const Shape3 latent = inputs.z0_normal.shape();
    if (inputs.foreground_prior.height() != latent.height || inputs.foreground_prior.width() != latent.width) {
        throw ShapeError("foreground prior must be at latent resolution");
    }
    const auto executed = schedule.executed_timesteps();
    if (executed.size() != plan.size()) {
        throw std::logic_error("stage plan does not match the schedule");
    }

    const bool use_bias =
        backend.capabilities().supports_attention_bias && !inputs.anomaly.anomaly_indices.empty();
    AttentionBias bias{inputs.foreground_prior, inputs.anomaly.anomaly_indices, settings.beta, settings.layer_filter};

    const LatentGrid warm = src_latent_at(schedule, inputs.z0_normal, plan.t_start, inputs.eps_shared);
    BranchState state{warm, warm, plan.t_start, Stage::Early};
    DeltaAccumulator acc(latent.height, latent.width);
    DualBranchResult result{warm, warm, warm, Grid2D(latent.height, latent.width),
                            Grid2D(latent.height, latent.width), BinaryMask(latent.height, latent.width), use_bias};
    std::optional<NormalSampler> noise_rng;
    if (settings.guidance.eta > 0.0) noise_rng.emplace(settings.noise_seed);

    for (std::size_t i = 0; i < plan.size(); ++i) {
        const Timestep t = plan.steps[i];
        const Timestep t_prev = schedule.next_timestep(i);
        if (t != executed[i] || state.t != t) {
            throw std::logic_error("branches fell out of step with the schedule");
        }
        state.stage = plan.stages[i];
        const bool late = state.stage == Stage::Late;
        const NoiseLevel level = noise_level(schedule, t);

        const LatentGrid eps_n =
            guided_eps(backend, state.z_normal, level, inputs.normal, nullptr, settings.guidance.guidance_scale);
        const LatentGrid eps_a = guided_eps(backend, state.z_anomaly, level, inputs.anomaly,
                                            use_bias ? &bias : nullptr, settings.guidance.guidance_scale);

        std::optional<LatentGrid> noise;
        if (noise_rng) noise = noise_rng->latent(latent);
        const LatentGrid* noise_ptr = noise ? &*noise : nullptr;
        LatentGrid next_n = reverse_step(schedule, state.z_normal, eps_n, t, t_prev, settings.guidance.eta, noise_ptr);
        LatentGrid next_a = reverse_step(schedule, state.z_anomaly, eps_a, t, t_prev, settings.guidance.eta, noise_ptr);

        std::optional<LatentGrid> z_src;
        if (late && settings.late_inpainting) {
            z_src = src_latent_at(schedule, inputs.z0_normal, t_prev, inputs.eps_shared);
            next_a = blend_inpaint(next_a, *z_src, result.mask_mid);
            next_n = blend_inpaint(next_n, *z_src, result.mask_mid);
        }
        state.z_normal = std::move(next_n);
        state.z_anomaly = std::move(next_a);
        state.t = t_prev;

        const Grid2D delta = step_delta(state.z_normal, state.z_anomaly);
        acc.accumulate(delta);
        if (observer) {
            observer(StepRecord{i, t, t_prev, state.stage, state.z_normal, state.z_anomaly, z_src ? &*z_src : nullptr,
                                late ? &result.mask_mid : nullptr, delta, acc.map()});
        }

        if (i + 1 == plan.mid_after) {
            assert(state.t == plan.t_mid);
            result.s_mid = acc.map();
            result.mask_mid = extract_mask(result.s_mid, settings.tau_mid, settings.mask, DeltaProvenance::Mid);
            acc.reset();
            bias.mask = result.mask_mid.to_grid();
        }
    }

    result.s_final = acc.map();
    result.z_final_anomaly = std::move(state.z_anomaly);
    result.z_final_normal = std::move(state.z_normal);
    return result;
}

}  // namespace deltadeno
