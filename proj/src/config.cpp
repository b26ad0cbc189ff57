// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltadeno/config.hpp"

#include <set>

#include "deltadeno/io.hpp"

namespace deltadeno {
namespace {

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
    return text;
}

// Reads fields out of one JSON object, rejecting keys nobody asked for.
class ObjectReader {
public:
    ObjectReader(const nlohmann::json& obj, std::string context) : obj_(obj), context_(std::move(context)) {
        if (!obj_.is_object()) {
            throw ConfigError(where() + " must be a JSON object");
        }
    }

    template <class T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        const auto it = obj_.find(key);
        if (it == obj_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(where(key) + " has the wrong type");
        }
    }

    const nlohmann::json* child(const char* key) {
        seen_.insert(key);
        const auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& item : obj_.items()) {
            if (!seen_.count(item.key())) {
                throw ConfigError("unknown config key '" + where(item.key().c_str()) + "'");
            }
        }
    }

    std::string where(const char* key = nullptr) const {
        std::string path = context_;
        if (key) path += path.empty() ? key : std::string(".") + key;
        return path.empty() ? "config" : path;
    }

private:
    const nlohmann::json& obj_;
    std::string context_;
    std::set<std::string> seen_;
};

}  // namespace

std::string PromptSettings::normal_prompt() const {
    return replace_all(replace_all(normal, "{object}", object), "{anomaly_type}", anomaly_type);
}

std::string PromptSettings::anomaly_prompt() const {
    return replace_all(replace_all(anomaly, "{object}", object), "{anomaly_type}", anomaly_type);
}

std::string PromptSettings::descriptor_prompt() const {
    if (descriptor.empty()) return anomaly_type;
    return replace_all(replace_all(descriptor, "{object}", object), "{anomaly_type}", anomaly_type);
}

void DeltaDenoConfig::validate() const {
    if (T < 2) throw ConfigError("T must be at least 2");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    if (!(tau_mid >= 0.0 && tau_mid <= 1.0)) throw ConfigError("tau_mid must lie in [0, 1]");
    if (!(tau_final >= 0.0 && tau_final <= 1.0)) throw ConfigError("tau_final must lie in [0, 1]");
    if (!(beta >= 0.0)) throw ConfigError("beta must be nonnegative");
    if (!(smooth_sigma >= 0.0)) throw ConfigError("smooth_sigma must be nonnegative");
    if (clean.kernel < 1 || clean.kernel % 2 == 0) throw ConfigError("clean.kernel must be odd and >= 1");
    if (clean.min_component < 0) throw ConfigError("clean.min_component must be nonnegative");
    if (batch_count < 0) throw ConfigError("batch_count must be nonnegative");
    if (workers < 1) throw ConfigError("workers must be at least 1");
    if (backend.num_train_steps < T) throw ConfigError("backend.num_train_steps must be >= T");
    if (backend.image_height <= 0 || backend.image_width <= 0) throw ConfigError("image size must be positive");
    if (backend.embedding_dim <= 0) throw ConfigError("backend.embedding_dim must be positive");
    if (!(backend.data_std >= 0.0)) throw ConfigError("backend.data_std must be nonnegative");
    if (backend.kind != "analytic" && backend.kind != "synthetic_attention" && backend.kind != "external") {
        throw ConfigError("backend.kind must be analytic, synthetic_attention or external");
    }
    if (backend.codec != "pool2x" && backend.codec != "identity") {
        throw ConfigError("backend.codec must be pool2x or identity");
    }
    if (foreground.timeout_ms <= 0) throw ConfigError("foreground.timeout_ms must be positive");
    try {
        GuidanceConfig{guidance_scale, ddim_eta}.validate();
        refine.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

nlohmann::ordered_json config_to_json(const DeltaDenoConfig& cfg) {
    nlohmann::ordered_json j;
    j["T"] = cfg.T;
    j["gamma"] = cfg.gamma;
    j["tau_mid"] = cfg.tau_mid;
    j["tau_final"] = cfg.tau_final;
    j["beta"] = cfg.beta;
    j["guidance_scale"] = cfg.guidance_scale;
    j["ddim_eta"] = cfg.ddim_eta;
    j["refine"] = {{"lambda", cfg.refine.lambda},
                   {"eta", cfg.refine.eta},
                   {"refine_lr", cfg.refine.refine_lr},
                   {"num_iters", cfg.refine.num_iters}};
    j["smooth_sigma"] = cfg.smooth_sigma;
    j["clean"] = {{"kernel", cfg.clean.kernel}, {"min_component", cfg.clean.min_component}};
    j["late_inpainting"] = cfg.late_inpainting;
    j["attention_layers"] = cfg.attention_layers;
    j["seed"] = cfg.seed;
    j["backend"] = {{"kind", cfg.backend.kind},
                    {"codec", cfg.backend.codec},
                    {"image_height", cfg.backend.image_height},
                    {"image_width", cfg.backend.image_width},
                    {"data_std", cfg.backend.data_std},
                    {"embedding_dim", cfg.backend.embedding_dim},
                    {"defect_strength", cfg.backend.defect_strength},
                    {"num_train_steps", cfg.backend.num_train_steps},
                    {"beta_schedule", to_string(cfg.backend.betas.kind)},
                    {"beta_start", cfg.backend.betas.beta_start},
                    {"beta_end", cfg.backend.betas.beta_end},
                    {"model_id", cfg.backend.model_id},
                    {"device", cfg.backend.device}};
    j["prompts"] = {{"object", cfg.prompts.object},
                    {"anomaly_type", cfg.prompts.anomaly_type},
                    {"normal", cfg.prompts.normal},
                    {"anomaly", cfg.prompts.anomaly},
                    {"descriptor", cfg.prompts.descriptor},
                    {"anomaly_token_indices", cfg.prompts.anomaly_token_indices}};
    j["foreground"] = {{"command", cfg.foreground.command}, {"timeout_ms", cfg.foreground.timeout_ms}};
    j["output_dir"] = cfg.output_dir;
    j["batch_count"] = cfg.batch_count;
    j["workers"] = cfg.workers;
    return j;
}

DeltaDenoConfig config_from_json(const nlohmann::json& doc) {
    DeltaDenoConfig cfg;
    ObjectReader top(doc, "");
    top.read("T", cfg.T);
    top.read("gamma", cfg.gamma);
    top.read("tau_mid", cfg.tau_mid);
    top.read("tau_final", cfg.tau_final);
    top.read("beta", cfg.beta);
    top.read("guidance_scale", cfg.guidance_scale);
    top.read("ddim_eta", cfg.ddim_eta);
    if (const auto* r = top.child("refine")) {
        ObjectReader in(*r, "refine");
        in.read("lambda", cfg.refine.lambda);
        in.read("eta", cfg.refine.eta);
        in.read("refine_lr", cfg.refine.refine_lr);
        in.read("num_iters", cfg.refine.num_iters);
        in.finish();
    }
    top.read("smooth_sigma", cfg.smooth_sigma);
    if (const auto* c = top.child("clean")) {
        ObjectReader in(*c, "clean");
        in.read("kernel", cfg.clean.kernel);
        in.read("min_component", cfg.clean.min_component);
        in.finish();
    }
    top.read("late_inpainting", cfg.late_inpainting);
    top.read("attention_layers", cfg.attention_layers);
    top.read("seed", cfg.seed);
    if (const auto* b = top.child("backend")) {
        ObjectReader in(*b, "backend");
        in.read("kind", cfg.backend.kind);
        in.read("codec", cfg.backend.codec);
        in.read("image_height", cfg.backend.image_height);
        in.read("image_width", cfg.backend.image_width);
        in.read("data_std", cfg.backend.data_std);
        in.read("embedding_dim", cfg.backend.embedding_dim);
        in.read("defect_strength", cfg.backend.defect_strength);
        in.read("num_train_steps", cfg.backend.num_train_steps);
        std::string schedule_kind = to_string(cfg.backend.betas.kind);
        in.read("beta_schedule", schedule_kind);
        try {
            cfg.backend.betas.kind = beta_schedule_kind_from_string(schedule_kind);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        in.read("beta_start", cfg.backend.betas.beta_start);
        in.read("beta_end", cfg.backend.betas.beta_end);
        in.read("model_id", cfg.backend.model_id);
        in.read("device", cfg.backend.device);
        in.finish();
    }
    if (const auto* p = top.child("prompts")) {
        ObjectReader in(*p, "prompts");
        in.read("object", cfg.prompts.object);
        in.read("anomaly_type", cfg.prompts.anomaly_type);
        in.read("normal", cfg.prompts.normal);
        in.read("anomaly", cfg.prompts.anomaly);
        in.read("descriptor", cfg.prompts.descriptor);
        in.read("anomaly_token_indices", cfg.prompts.anomaly_token_indices);
        in.finish();
    }
    if (const auto* f = top.child("foreground")) {
        ObjectReader in(*f, "foreground");
        in.read("command", cfg.foreground.command);
        in.read("timeout_ms", cfg.foreground.timeout_ms);
        in.finish();
    }
    top.read("output_dir", cfg.output_dir);
    top.read("batch_count", cfg.batch_count);
    top.read("workers", cfg.workers);
    top.finish();
    cfg.validate();
    return cfg;
}

DeltaDenoConfig load_config(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return config_from_json(doc);
}

DeltaDenoConfig with_override(const DeltaDenoConfig& cfg, const std::string& dotted_key, const nlohmann::json& value) {
    nlohmann::json doc = config_to_json(cfg);
    nlohmann::json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = dotted_key.find('.', start);
        const std::string part = dotted_key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(part)) {
            throw ConfigError("unknown config key '" + dotted_key + "'");
        }
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = value;
    return config_from_json(doc);
}

}  // namespace deltadeno
