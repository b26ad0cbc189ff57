// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltadeno/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace deltadeno {

std::string to_string(BetaScheduleKind kind) {
    return kind == BetaScheduleKind::ScaledLinear ? "scaled_linear" : "linear";
}

BetaScheduleKind beta_schedule_kind_from_string(const std::string& name) {
    if (name == "scaled_linear") return BetaScheduleKind::ScaledLinear;
    if (name == "linear") return BetaScheduleKind::Linear;
    throw std::invalid_argument("unknown beta schedule '" + name + "'");
}

void GuidanceConfig::validate() const {
    if (!(guidance_scale >= 0.0)) {
        throw std::invalid_argument("guidance_scale must be >= 0");
    }
    if (!(eta >= 0.0 && eta <= 1.0)) {
        throw std::invalid_argument("eta must lie in [0, 1]");
    }
}

std::vector<double> make_alphas_bar(int num_train_steps, const BetaScheduleConfig& betas) {
    if (num_train_steps <= 0) {
        throw std::invalid_argument("num_train_steps must be positive");
    }
    if (!(betas.beta_start > 0.0 && betas.beta_end >= betas.beta_start && betas.beta_end < 1.0)) {
        throw std::invalid_argument("beta endpoints must satisfy 0 < start <= end < 1");
    }
    std::vector<double> alphas_bar(static_cast<std::size_t>(num_train_steps));
    const double denom = num_train_steps > 1 ? static_cast<double>(num_train_steps - 1) : 1.0;
    double running = 1.0;
    for (int i = 0; i < num_train_steps; ++i) {
        const double frac = static_cast<double>(i) / denom;
        double beta = 0.0;
        if (betas.kind == BetaScheduleKind::ScaledLinear) {
            const double root = std::sqrt(betas.beta_start) +
                                frac * (std::sqrt(betas.beta_end) - std::sqrt(betas.beta_start));
            beta = root * root;
        } else {
            beta = betas.beta_start + frac * (betas.beta_end - betas.beta_start);
        }
        running *= 1.0 - beta;
        alphas_bar[static_cast<std::size_t>(i)] = running;
    }
    return alphas_bar;
}

Schedule Schedule::build(int num_train_steps, int num_inference_steps, int start_index,
                         const BetaScheduleConfig& betas) {
    if (num_train_steps <= 0) {
        throw std::invalid_argument("num_train_steps must be positive");
    }
    if (num_inference_steps <= 0 || num_inference_steps > num_train_steps) {
        throw std::invalid_argument("num_inference_steps must lie in (0, num_train_steps]");
    }
    if (start_index < 0 || start_index >= num_inference_steps) {
        throw std::invalid_argument("start_index must lie in [0, num_inference_steps)");
    }
    Schedule s;
    s.alphas_bar_ = make_alphas_bar(num_train_steps, betas);
    s.num_inference_steps_ = num_inference_steps;
    s.start_index_ = start_index;
    const int ratio = num_train_steps / num_inference_steps;
    for (int i = start_index; i < num_inference_steps; ++i) {
        s.executed_.push_back((num_inference_steps - 1 - i) * ratio);
    }
    s.validate();
    return s;
}

Schedule Schedule::from_alphas_bar(std::vector<double> alphas_bar, std::vector<Timestep> executed) {
    Schedule s;
    s.alphas_bar_ = std::move(alphas_bar);
    s.num_inference_steps_ = static_cast<int>(executed.size());
    s.executed_ = std::move(executed);
    s.validate();
    return s;
}

void Schedule::validate() const {
    if (alphas_bar_.empty()) {
        throw std::invalid_argument("schedule has no timesteps");
    }
    for (std::size_t i = 0; i < alphas_bar_.size(); ++i) {
        const double a = alphas_bar_[i];
        if (!(a > 0.0 && a <= 1.0)) {
            throw std::invalid_argument("alphas_bar entries must lie in (0, 1]");
        }
        if (i > 0 && !(a < alphas_bar_[i - 1])) {
            throw std::invalid_argument("alphas_bar must be strictly decreasing");
        }
    }
    if (executed_.empty()) {
        throw std::invalid_argument("schedule executes no steps");
    }
    for (std::size_t i = 0; i < executed_.size(); ++i) {
        if (executed_[i] < 0 || executed_[i] >= num_train_steps()) {
            throw std::invalid_argument("executed timestep outside the native range");
        }
        if (i > 0 && !(executed_[i] < executed_[i - 1])) {
            throw std::invalid_argument("executed timesteps must be strictly decreasing");
        }
    }
}

double Schedule::alpha_bar(Timestep t) const {
    if (t == kTerminalTimestep) {
        return 1.0;
    }
    if (t < 0 || t >= num_train_steps()) {
        throw std::out_of_range("timestep " + std::to_string(t) + " outside schedule");
    }
    return alphas_bar_[static_cast<std::size_t>(t)];
}

double Schedule::sigma(Timestep t) const { return std::sqrt(1.0 - alpha_bar(t)); }

Timestep Schedule::next_timestep(std::size_t i) const {
    if (i >= executed_.size()) {
        throw std::out_of_range("step index past the executed window");
    }
    return i + 1 < executed_.size() ? executed_[i + 1] : kTerminalTimestep;
}

LatentGrid q_sample(const LatentGrid& z0, double alpha_bar, const LatentGrid& eps) {
    require_same_shape(z0, eps, "q_sample");
    if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) {
        throw std::invalid_argument("alpha_bar must lie in [0, 1]");
    }
    const double a = std::sqrt(alpha_bar);
    const double s = std::sqrt(1.0 - alpha_bar);
    LatentGrid out(z0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a * z0[i] + s * eps[i];
    }
    return out;
}

LatentGrid q_sample(const Schedule& schedule, const LatentGrid& z0, Timestep t, const LatentGrid& eps) {
    return q_sample(z0, schedule.alpha_bar(t), eps);
}

LatentGrid cfg_combine(const LatentGrid& eps_cond, const LatentGrid& eps_uncond, double w) {
    require_same_shape(eps_cond, eps_uncond, "cfg_combine");
    LatentGrid out(eps_cond.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = eps_uncond[i] + w * (eps_cond[i] - eps_uncond[i]);
    }
    return out;
}

LatentGrid predict_x0(const LatentGrid& z_t, const LatentGrid& eps_hat, double alpha_bar_t) {
    require_same_shape(z_t, eps_hat, "predict_x0");
    if (!(alpha_bar_t > 0.0)) {
        throw std::invalid_argument("alpha_bar_t must be positive to invert the noising");
    }
    const double a = std::sqrt(alpha_bar_t);
    const double s = std::sqrt(1.0 - alpha_bar_t);
    LatentGrid x0(z_t.shape());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        x0[i] = (z_t[i] - s * eps_hat[i]) / a;
    }
    return x0;
}

LatentGrid reverse_step(const LatentGrid& z_t, const LatentGrid& eps_hat, double alpha_bar_t,
                        double alpha_bar_prev, double eta, const LatentGrid* noise) {
    if (!(alpha_bar_prev > 0.0 && alpha_bar_prev <= 1.0)) {
        throw std::invalid_argument("alpha_bar_prev must lie in (0, 1]");
    }
    if (!(alpha_bar_prev >= alpha_bar_t)) {
        throw std::invalid_argument("reverse step must move toward lower noise");
    }
    if (!(eta >= 0.0 && eta <= 1.0)) {
        throw std::invalid_argument("eta must lie in [0, 1]");
    }
    const LatentGrid x0 = predict_x0(z_t, eps_hat, alpha_bar_t);
    const double a_prev = std::sqrt(alpha_bar_prev);

    double sigma_eta = 0.0;
    if (eta > 0.0) {
        if (noise == nullptr) {
            throw std::invalid_argument("stochastic reverse step needs a noise draw");
        }
        require_same_shape(z_t, *noise, "reverse_step noise");
        const double variance = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar_t) *
                                (1.0 - alpha_bar_t / alpha_bar_prev);
        sigma_eta = eta * std::sqrt(std::max(variance, 0.0));
    }
    const double dir = std::sqrt(std::max(1.0 - alpha_bar_prev - sigma_eta * sigma_eta, 0.0));

    LatentGrid out(z_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a_prev * x0[i] + dir * eps_hat[i];
    }
    if (sigma_eta > 0.0) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += sigma_eta * (*noise)[i];
        }
    }
    return out;
}

LatentGrid reverse_step(const Schedule& schedule, const LatentGrid& z_t, const LatentGrid& eps_hat,
                        Timestep t, Timestep t_prev, double eta, const LatentGrid* noise) {
    if (t == kTerminalTimestep || (t_prev != kTerminalTimestep && t_prev >= t)) {
        throw std::invalid_argument("reverse step requires t > t_prev");
    }
    return reverse_step(z_t, eps_hat, schedule.alpha_bar(t), schedule.alpha_bar(t_prev), eta, noise);
}

}  // namespace deltadeno
