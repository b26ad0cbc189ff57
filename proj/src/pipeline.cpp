// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltadeno/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "deltadeno/io.hpp"
#include "deltadeno/random.hpp"

namespace deltadeno {

namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;

std::mutex& external_factory_mutex() {
    static std::mutex m;
    return m;
}

ExternalBackendFactory& external_factory() {
    static ExternalBackendFactory factory;
    return factory;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

std::vector<double> seeded_unit_vector(std::uint64_t seed, int dim) {
    NormalSampler rng(seed);
    std::vector<double> v(static_cast<std::size_t>(dim));
    double n2 = 0.0;
    for (double& x : v) {
        x = rng.next();
        n2 += x * x;
    }
    const double n = std::sqrt(n2);
    for (double& x : v) x /= n;
    return v;
}

// Rectangular offset pattern placed by a hash of the anomaly prompt and the seed.
LatentGrid defect_pattern(const DeltaDenoConfig& cfg, const Shape3& latent) {
    const std::uint64_t key = mix_seed(cfg.seed, fnv1a64(canonicalize_prompt(cfg.prompts.anomaly_prompt())));
    NormalSampler rng(key);
    auto pick = [&](int lo, int hi) {
        return lo + static_cast<int>(rng.uniform() * static_cast<double>(hi - lo + 1));
    };
    const int min_h = std::max(2, latent.height / 5);
    const int max_h = std::max(min_h, latent.height / 3);
    const int min_w = std::max(2, latent.width / 5);
    const int max_w = std::max(min_w, latent.width / 3);
    const int h = std::min(latent.height, pick(min_h, max_h));
    const int w = std::min(latent.width, pick(min_w, max_w));
    const int y0 = pick(0, latent.height - h);
    const int x0 = pick(0, latent.width - w);
    const auto direction = seeded_unit_vector(rng.bits(), latent.channels);
    LatentGrid pattern(latent);
    for (int y = y0; y < y0 + h; ++y) {
        for (int x = x0; x < x0 + w; ++x) {
            for (int c = 0; c < latent.channels; ++c) {
                pattern.at(y, x, c) = cfg.backend.defect_strength * direction[static_cast<std::size_t>(c)];
            }
        }
    }
    return pattern;
}

LinearCodec make_codec(const BackendSettings& settings) {
    return LinearCodec(codec_kind_from_string(settings.codec), Shape3{settings.image_height, settings.image_width, 3});
}

nlohmann::ordered_json shape_json(const Shape3& s) { return nlohmann::ordered_json::array({s.height, s.width, s.channels}); }

std::string csv_field(const std::string& value) {
    if (value.find_first_of(",\"\n") == std::string::npos) return value;
    std::string out = "\"";
    for (char ch : value) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

std::string item_dir_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "item_%04zu", index);
    return buf;
}

}  // namespace

Schedule make_schedule(const DeltaDenoConfig& cfg) {
    cfg.validate();
    const long executed = std::lround(cfg.gamma * cfg.T);
    if (executed < 2) {
        throw ConfigError("gamma * T = " + std::to_string(cfg.gamma * cfg.T) +
                          " leaves fewer than two executed steps; stages cannot be split");
    }
    const int start_index = cfg.T - static_cast<int>(executed);
    return Schedule::build(cfg.backend.num_train_steps, cfg.T, start_index, cfg.backend.betas);
}

StagePlan plan_stages(const DeltaDenoConfig& cfg) { return make_stage_plan(make_schedule(cfg)); }

void register_external_backend(ExternalBackendFactory factory) {
    std::lock_guard lock(external_factory_mutex());
    external_factory() = std::move(factory);
}

std::unique_ptr<DenoiserBackend> make_backend(const DeltaDenoConfig& cfg, const ImageGrid& normal_image) {
    cfg.validate();
    const BackendSettings& settings = cfg.backend;
    if (settings.kind == "external") {
        ExternalBackendFactory factory;
        {
            std::lock_guard lock(external_factory_mutex());
            factory = external_factory();
        }
        if (!factory) {
            throw CapabilityError("no external backend adapter is registered for model '" + settings.model_id + "'");
        }
        return factory(settings);
    }

    const LinearCodec codec = make_codec(settings);
    const LatentGrid z0 = codec.encode(normal_image);
    const Shape3 latent = codec.latent_shape();

    if (settings.kind == "analytic") {
        auto backend = std::make_unique<AnalyticGaussianBackend>(codec, settings.data_std, cfg.seed, settings.embedding_dim);
        const LatentGrid pattern = defect_pattern(cfg, latent);
        LatentGrid anomalous = z0;
        for (std::size_t i = 0; i < anomalous.size(); ++i) anomalous[i] += pattern[i];
        backend->register_mean(cfg.prompts.anomaly_prompt(), std::move(anomalous));
        backend->register_mean(cfg.prompts.normal_prompt(), z0);
        backend->register_unconditional_mean(z0);
        return backend;
    }

    SyntheticAttentionBackend::Options options;
    options.data_std = settings.data_std;
    options.embedding_dim = settings.embedding_dim;
    auto backend = std::make_unique<SyntheticAttentionBackend>(codec, cfg.seed, options);
    backend->set_base_latent(z0);
    const auto normal_tokens = tokenize(cfg.prompts.normal_prompt());
    const std::set<std::string> normal_set(normal_tokens.begin(), normal_tokens.end());
    for (const std::string& token : tokenize(cfg.prompts.anomaly_prompt())) {
        if (normal_set.count(token)) continue;
        auto offset = seeded_unit_vector(mix_seed(cfg.seed, fnv1a64(token)), latent.channels);
        for (double& v : offset) v *= settings.defect_strength;
        backend->set_token_target(token, std::move(offset));
    }
    return backend;
}

std::unique_ptr<ForegroundProvider> make_foreground_provider(const DeltaDenoConfig& cfg) {
    std::string command = cfg.foreground.command;
    if (command.empty()) {
        if (const char* env = std::getenv(kForegroundProviderEnv)) command = env;
    }
    if (command.empty()) {
        return nullptr;
    }
    return std::make_unique<CommandForegroundProvider>(command, std::chrono::milliseconds(cfg.foreground.timeout_ms));
}

PreparedPrompts prepare_prompts(const DeltaDenoConfig& cfg, const DenoiserBackend& backend) {
    PreparedPrompts out{backend.encode_text(cfg.prompts.normal_prompt()),
                        backend.encode_text(cfg.prompts.anomaly_prompt()),
                        {},
                        {},
                        "none"};
    if (!cfg.prompts.anomaly_token_indices.empty()) {
        out.anomaly.anomaly_indices = cfg.prompts.anomaly_token_indices;
        try {
            out.anomaly.validate();
        } catch (const std::exception& e) {
            throw ConfigError(std::string("prompts.anomaly_token_indices: ") + e.what());
        }
        out.token_source = "config";
    } else if (auto located = locate_anomaly_tokens(out.normal, out.anomaly)) {
        out.anomaly.anomaly_indices = std::move(*located);
        out.token_source = "located";
    }
    if (out.anomaly.anomaly_indices.empty()) {
        return out;
    }
    out.anchor = distill_anchor(backend.encode_text(cfg.prompts.descriptor_prompt()));
    if (cfg.refine.num_iters > 0) {
        RefinementResult refined = refine(out.anomaly, out.anchor, cfg.refine);
        out.anomaly = std::move(refined.embedding);
        out.loss_trace = std::move(refined.loss_trace);
    }
    return out;
}

LatentRun run_latent(const DeltaDenoConfig& cfg, const DenoiserBackend& backend, const LatentGrid& z0,
                     const Grid2D& foreground_prior, const StepObserver& observer) {
    const Schedule schedule = make_schedule(cfg);
    StagePlan plan = make_stage_plan(schedule);
    PreparedPrompts prompts = prepare_prompts(cfg, backend);

    NormalSampler eps_rng(mix_seed(cfg.seed, fnv1a64("warm-start-noise")));
    const LatentGrid eps_shared = eps_rng.latent(z0.shape());

    DualBranchSettings settings;
    settings.guidance = GuidanceConfig{cfg.guidance_scale, cfg.ddim_eta};
    settings.beta = cfg.beta;
    settings.tau_mid = cfg.tau_mid;
    settings.mask = cfg.mask_params();
    settings.late_inpainting = cfg.late_inpainting;
    settings.layer_filter = std::set<std::string>(cfg.attention_layers.begin(), cfg.attention_layers.end());
    settings.noise_seed = mix_seed(cfg.seed, fnv1a64("ddim-noise"));

    const DualBranchInputs inputs{z0, eps_shared, prompts.normal, prompts.anomaly, foreground_prior};
    DualBranchResult branches = run_dual_branch(backend, schedule, plan, inputs, settings, observer);
    BinaryMask final_mask = extract_mask(branches.s_final, cfg.tau_final, cfg.mask_params(), DeltaProvenance::Final);
    return LatentRun{std::move(branches), std::move(final_mask), std::move(prompts), std::move(plan), z0};
}

GenerationResult generate(const DeltaDenoConfig& cfg, const ImageGrid& normal_image, const DenoiserBackend& backend,
                          ForegroundProvider* provider, const GenerateOptions& options) {
    cfg.validate();
    const auto started = std::chrono::steady_clock::now();
    const BackendCapabilities& caps = backend.capabilities();
    if (normal_image.shape() != caps.image_shape) {
        throw ShapeError("input image " + to_string(normal_image.shape()) + " does not match backend resolution " +
                         to_string(caps.image_shape));
    }

    const ForegroundPrior prior =
        foreground_prior(normal_image, provider, caps.latent_shape.height, caps.latent_shape.width);
    const LatentGrid z0 = backend.encode(normal_image);
    const auto encoded = std::chrono::steady_clock::now();

    GenerationResult result;
    StepObserver observer;
    if (options.trace) {
        observer = [&result](const StepRecord& step) { result.step_deltas.push_back(step.delta); };
    }
    LatentRun run = run_latent(cfg, backend, z0, prior.mask, observer);
    const auto denoised = std::chrono::steady_clock::now();

    result.anomaly_image = backend.decode(run.branches.z_final_anomaly);
    result.final_mask = to_image_mask(run.final_mask_latent, caps.image_shape.height, caps.image_shape.width);
    result.mask_mid = run.branches.mask_mid;
    result.s_mid = run.branches.s_mid;
    result.s_final = run.branches.s_final;
    result.z0 = z0;
    result.z_final = run.branches.z_final_anomaly;

    const Schedule schedule = make_schedule(cfg);
    nlohmann::ordered_json meta;
    meta["format_version"] = kFormatVersion;
    meta["config"] = config_to_json(cfg);
    meta["seed"] = cfg.seed;
    const double psnr = codec_round_trip_psnr(backend, normal_image);
    const nlohmann::ordered_json psnr_json =
        std::isfinite(psnr) ? nlohmann::ordered_json(psnr) : nlohmann::ordered_json(nullptr);
    meta["backend"] = {{"name", backend.name()},
                       {"latent_shape", shape_json(caps.latent_shape)},
                       {"image_shape", shape_json(caps.image_shape)},
                       {"supports_attention_bias", caps.supports_attention_bias},
                       {"attention_sites", caps.attention_sites},
                       {"codec_round_trip_psnr", psnr_json},
                       {"codec_exact_round_trip", !std::isfinite(psnr)}};
    meta["schedule"] = {{"num_train_steps", schedule.num_train_steps()},
                        {"num_inference_steps", schedule.num_inference_steps()},
                        {"start_index", schedule.start_index()},
                        {"timestep_spacing", "leading"},
                        {"executed_timesteps", std::vector<int>(schedule.executed_timesteps().begin(),
                                                                schedule.executed_timesteps().end())}};
    std::vector<std::string> stage_names;
    for (Stage s : run.plan.stages) stage_names.push_back(to_string(s));
    meta["stage_plan"] = {{"executed_steps", run.plan.size()},
                          {"t_start", run.plan.t_start},
                          {"t_mid", run.plan.t_mid},
                          {"mid_after_steps", run.plan.mid_after},
                          {"stages", stage_names}};
    std::vector<std::string> anomaly_tokens;
    for (std::size_t i : run.prompts.anomaly.anomaly_indices) anomaly_tokens.push_back(run.prompts.anomaly.tokens[i]);
    meta["prompts"] = {{"normal", cfg.prompts.normal_prompt()},
                       {"anomaly", cfg.prompts.anomaly_prompt()},
                       {"descriptor", cfg.prompts.descriptor_prompt()},
                       {"anomaly_tokens", anomaly_tokens},
                       {"anomaly_token_indices", run.prompts.anomaly.anomaly_indices},
                       {"anomaly_token_source", run.prompts.token_source}};
    meta["refinement"] = {{"applied", !run.prompts.loss_trace.empty()}, {"loss_trace", run.prompts.loss_trace}};
    std::string bias_state = "applied";
    if (run.prompts.anomaly.anomaly_indices.empty()) {
        bias_state = "no_anomaly_token";
    } else if (!caps.supports_attention_bias) {
        bias_state = "unsupported_by_backend";
    }
    meta["attention_bias"] = {{"state", bias_state}, {"beta", cfg.beta}, {"layers", cfg.attention_layers}};
    meta["foreground"] = {{"source", prior.source}, {"fallback", prior.fallback}, {"warning", prior.warning}};
    meta["late_inpainting"] = cfg.late_inpainting;
    meta["mask_pipeline"] = {"normalize", "smooth", "threshold", "clean"};
    meta["masks"] = {{"mid_pixel_count", result.mask_mid.pixel_count()},
                     {"final_latent_pixel_count", run.final_mask_latent.pixel_count()},
                     {"final_pixel_count", result.final_mask.pixel_count()}};
    meta["artifacts"] = {{"image", "anomaly.png"},
                         {"mask", "mask.png"},
                         {"mask_mid", "mask_mid.png"},
                         {"delta_mid", "delta_mid.f32"},
                         {"delta_final", "delta_final.f32"}};
    if (options.trace) {
        meta["artifacts"]["trace_dir"] = "trace";
    }
    if (options.record_timings) {
        meta["timings_ms"] = {{"encode", std::chrono::duration<double, std::milli>(encoded - started).count()},
                              {"denoise", std::chrono::duration<double, std::milli>(denoised - encoded).count()},
                              {"total", elapsed_ms(started)}};
    }
    result.metadata = std::move(meta);
    return result;
}

void write_artifacts(const GenerationResult& result, const fs::path& dir) {
    fs::create_directories(dir);
    std::vector<fs::path> written;
    auto track = [&](const fs::path& p) {
        written.push_back(p);
        return p;
    };
    try {
        write_png_rgb(track(dir / "anomaly.png"), result.anomaly_image);
        write_png_mask(track(dir / "mask.png"), result.final_mask);
        write_png_mask(track(dir / "mask_mid.png"), result.mask_mid);
        write_f32_map(track(dir / "delta_mid.f32"), result.s_mid);
        track(dir / "delta_mid.json");
        write_f32_map(track(dir / "delta_final.f32"), result.s_final);
        track(dir / "delta_final.json");
        if (!result.step_deltas.empty()) {
            const fs::path trace = track(dir / "trace");
            fs::create_directories(trace);
            for (std::size_t i = 0; i < result.step_deltas.size(); ++i) {
                char name[32];
                std::snprintf(name, sizeof(name), "step_%03zu.f32", i);
                write_f32_map(trace / name, result.step_deltas[i]);
            }
        }
        write_text_file(track(dir / "metadata.json"), result.metadata.dump(2) + "\n");
    } catch (...) {
        std::error_code ec;
        for (const auto& p : written) fs::remove_all(p, ec);
        throw;
    }
}

GenerationResult generate_to_dir(const DeltaDenoConfig& cfg, const fs::path& image_path, const fs::path& out_dir,
                                 const GenerateOptions& options) {
    const ImageGrid image = read_png_rgb(image_path);
    const auto backend = make_backend(cfg, image);
    const auto provider = make_foreground_provider(cfg);
    GenerationResult result = generate(cfg, image, *backend, provider.get(), options);
    write_artifacts(result, out_dir);
    return result;
}

BatchManifest generate_batch(const DeltaDenoConfig& cfg, const std::vector<fs::path>& images, const fs::path& out_dir) {
    cfg.validate();
    if (images.empty()) {
        throw std::invalid_argument("batch needs at least one input image");
    }
    const std::size_t count = cfg.batch_count > 0 ? static_cast<std::size_t>(cfg.batch_count) : images.size();
    fs::create_directories(out_dir);

    BatchManifest manifest;
    manifest.rows.resize(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next++; i < count; i = next++) {
            ManifestRow& row = manifest.rows[i];
            row.index = i;
            row.source = images[i % images.size()].string();
            row.seed = cfg.seed + i;
            const std::string item = item_dir_name(i);
            try {
                DeltaDenoConfig item_cfg = cfg;
                item_cfg.seed = row.seed;
                generate_to_dir(item_cfg, images[i % images.size()], out_dir / item);
                row.ok = true;
                row.image = item + "/anomaly.png";
                row.mask = item + "/mask.png";
                row.metadata = item + "/metadata.json";
            } catch (const std::exception& e) {
                row.ok = false;
                row.error = e.what();
            }
        }
    };
    const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), count);
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    std::ostringstream csv;
    csv << "index,source,seed,status,image,mask,metadata,error\n";
    for (const ManifestRow& row : manifest.rows) {
        csv << row.index << ',' << csv_field(row.source) << ',' << row.seed << ',' << (row.ok ? "ok" : "failed") << ','
            << csv_field(row.image) << ',' << csv_field(row.mask) << ',' << csv_field(row.metadata) << ','
            << csv_field(row.error) << '\n';
    }
    manifest.path = out_dir / "manifest.csv";
    write_text_file(manifest.path, csv.str());
    return manifest;
}

std::vector<fs::path> list_batch_images(const fs::path& dir_or_list) {
    std::vector<fs::path> images;
    if (fs::is_directory(dir_or_list)) {
        for (const auto& entry : fs::directory_iterator(dir_or_list)) {
            if (entry.is_regular_file() && entry.path().extension() == ".png") images.push_back(entry.path());
        }
        std::sort(images.begin(), images.end());
    } else {
        std::istringstream in(read_text_file(dir_or_list));
        std::string line;
        while (std::getline(in, line)) {
            line.erase(std::remove(line.begin(), line.end(), '\r'), line.end());
            if (line.empty() || line[0] == '#') continue;
            fs::path p(line);
            if (p.is_relative()) p = dir_or_list.parent_path() / p;
            images.push_back(p);
        }
    }
    if (images.empty()) {
        throw IoError("no input images found in '" + dir_or_list.string() + "'");
    }
    return images;
}

nlohmann::ordered_json inspect_result(const fs::path& dir) {
    nlohmann::ordered_json out;
    out["metadata"] = nlohmann::ordered_json::parse(read_text_file(dir / "metadata.json"));

    auto mask_stats = [](const Grid2D& mask) {
        std::size_t count = 0;
        int y_min = mask.height(), y_max = -1, x_min = mask.width(), x_max = -1;
        for (int y = 0; y < mask.height(); ++y) {
            for (int x = 0; x < mask.width(); ++x) {
                if (mask.at(y, x) < 0.5) continue;
                ++count;
                y_min = std::min(y_min, y);
                y_max = std::max(y_max, y);
                x_min = std::min(x_min, x);
                x_max = std::max(x_max, x);
            }
        }
        nlohmann::ordered_json j = {{"height", mask.height()},
                                    {"width", mask.width()},
                                    {"pixel_count", count},
                                    {"fraction", static_cast<double>(count) / static_cast<double>(mask.size())}};
        j["bbox"] = count ? nlohmann::ordered_json{{"y0", y_min}, {"x0", x_min}, {"y1", y_max}, {"x1", x_max}}
                          : nlohmann::ordered_json(nullptr);
        return j;
    };
    out["mask"] = mask_stats(read_png_gray(dir / "mask.png"));
    out["mask_mid"] = mask_stats(read_png_gray(dir / "mask_mid.png"));
    for (const char* name : {"delta_mid", "delta_final"}) {
        const Grid2D map = read_f32_map(dir / (std::string(name) + ".f32"));
        out[name] = {{"height", map.height()}, {"width", map.width()}, {"min", map.min()},
                     {"max", map.max()},       {"sum", map.sum()}};
    }
    return out;
}

}  // namespace deltadeno
