// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "deltadeno/maskops.hpp"
#include "deltadeno/promptopt.hpp"
#include "deltadeno/schedule.hpp"

namespace deltadeno {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct BackendSettings {
    std::string kind = "analytic";  // analytic | synthetic_attention | external
    std::string codec = "pool2x";   // pool2x | identity
    int image_height = 64;
    int image_width = 64;
    double data_std = 0.0;
    int embedding_dim = 64;
    double defect_strength = 1.5;
    int num_train_steps = 1000;
    BetaScheduleConfig betas;
    // Passed through to an external adapter factory.
    std::string model_id;
    std::string device = "cpu";

    bool operator==(const BackendSettings&) const = default;
};

struct PromptSettings {
    std::string object = "bottle";
    std::string anomaly_type = "crack";
    std::string normal = "a photo of a {object}";
    std::string anomaly = "a photo of a {object} with {anomaly_type}";
    std::string descriptor;  // empty: the anomaly type itself
    std::vector<std::size_t> anomaly_token_indices;  // empty: locate automatically

    std::string normal_prompt() const;
    std::string anomaly_prompt() const;
    std::string descriptor_prompt() const;

    bool operator==(const PromptSettings&) const = default;
};

struct ForegroundSettings {
    std::string command;  // empty: $DELTADENO_FG_PROVIDER, else the whole-surface fallback
    int timeout_ms = 30000;

    bool operator==(const ForegroundSettings&) const = default;
};

struct DeltaDenoConfig {
    int T = 100;
    double gamma = 0.3;
    double tau_mid = 0.6;
    double tau_final = 0.35;
    double beta = 2.0;
    double guidance_scale = 7.5;
    double ddim_eta = 0.0;
    RefinementConfig refine;
    double smooth_sigma = 1.0;
    CleanParams clean;
    bool late_inpainting = true;
    std::vector<std::string> attention_layers;  // empty: every site
    std::uint64_t seed = 0;
    BackendSettings backend;
    PromptSettings prompts;
    ForegroundSettings foreground;
    std::string output_dir = "deltadeno_out";
    int batch_count = 0;  // 0: one item per input image
    int workers = 1;

    void validate() const;
    MaskParams mask_params() const { return MaskParams{smooth_sigma, clean}; }
    bool operator==(const DeltaDenoConfig&) const = default;
};

nlohmann::ordered_json config_to_json(const DeltaDenoConfig& cfg);
// Missing keys keep their defaults; unknown keys and wrong types are errors.
DeltaDenoConfig config_from_json(const nlohmann::json& doc);
DeltaDenoConfig load_config(const std::filesystem::path& path);

// Replaces the value at a dotted key path ("refine.num_iters") and re-validates.
DeltaDenoConfig with_override(const DeltaDenoConfig& cfg, const std::string& dotted_key, const nlohmann::json& value);

}  // namespace deltadeno
