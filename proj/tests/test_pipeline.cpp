// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>

#include "deltadeno/io.hpp"
#include "deltadeno/pipeline.hpp"
#include "support.hpp"

using namespace deltadeno;
namespace fs = std::filesystem;

TEST_CASE("config json round trip and strictness") {
    DeltaDenoConfig cfg;
    cfg.beta = 4.0;
    cfg.prompts.object = "screw";
    cfg.attention_layers = {"full"};
    cfg.backend.betas.kind = BetaScheduleKind::Linear;
    const auto j = config_to_json(cfg);
    CHECK(config_from_json(nlohmann::json::parse(j.dump())) == cfg);
    CHECK(config_from_json(nlohmann::json::object()) == DeltaDenoConfig{});
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"gama", 0.3}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"backend", {{"kind", "analytic"}, {"foo", 1}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"T", "many"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"gamma", 1.5}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"clean", {{"kernel", 4}}}}), ConfigError);
    const auto over = with_override(cfg, "refine.num_iters", 0);
    CHECK(over.refine.num_iters == 0);
    CHECK_THROWS_AS(with_override(cfg, "refine.steps", 1), ConfigError);
    CHECK(cfg.prompts.normal_prompt() == "a photo of a screw");
    CHECK(cfg.prompts.anomaly_prompt() == "a photo of a screw with crack");
    CHECK(cfg.prompts.descriptor_prompt() == "crack");
}

TEST_CASE("config file loading reports bad JSON") {
    const fs::path dir = testing::scratch_dir("config");
    write_text_file(dir / "bad.json", "{\"T\": ");
    CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
    write_text_file(dir / "ok.json", "{\"T\": 50, \"gamma\": 0.5}");
    const DeltaDenoConfig cfg = load_config(dir / "ok.json");
    CHECK(cfg.T == 50);
    CHECK(plan_stages(cfg).size() == 25);
}

TEST_CASE("too few executed steps are rejected") {
    DeltaDenoConfig cfg;
    cfg.gamma = 0.01;
    CHECK_THROWS_AS(make_schedule(cfg), ConfigError);
}

TEST_CASE("generation writes a complete, deterministic artifact set") {
    const DeltaDenoConfig cfg;
    const ImageGrid image = testing::pattern_image();
    const auto backend = make_backend(cfg, image);
    const GenerationResult a = generate(cfg, image, *backend, nullptr);
    const GenerationResult b = generate(cfg, image, *backend, nullptr);
    CHECK(a.anomaly_image == b.anomaly_image);
    CHECK(a.metadata == b.metadata);
    CHECK(a.final_mask.height() == 64);
    CHECK(a.mask_mid.height() == 32);
    CHECK_FALSE(a.final_mask.empty_mask());
    CHECK(a.metadata["prompts"]["anomaly_tokens"] == nlohmann::json::array({"with", "crack"}));
    CHECK(a.metadata["attention_bias"]["state"] == "unsupported_by_backend");
    CHECK(a.metadata["foreground"]["fallback"] == true);
    CHECK(a.metadata["schedule"]["executed_timesteps"].size() == 30);
    CHECK_FALSE(a.metadata.contains("timings_ms"));
    CHECK(a.metadata["refinement"]["loss_trace"].size() == 11);

    const fs::path dir = testing::scratch_dir("generate");
    write_artifacts(a, dir);
    for (const char* f : {"anomaly.png", "mask.png", "mask_mid.png", "delta_mid.f32", "delta_mid.json",
                          "delta_final.f32", "delta_final.json", "metadata.json"})
        CHECK(fs::exists(dir / f));
    const Grid2D delta = read_f32_map(dir / "delta_final.f32");
    CHECK(delta.sum() == doctest::Approx(a.s_final.sum()).epsilon(1e-5));
    const auto info = inspect_result(dir);
    CHECK(info["mask"]["pixel_count"] == a.final_mask.pixel_count());
    CHECK(info["metadata"]["seed"] == 0);

    GenerateOptions opts;
    opts.record_timings = true;
    opts.trace = true;
    const GenerationResult traced = generate(cfg, image, *backend, nullptr, opts);
    CHECK(traced.metadata.contains("timings_ms"));
    CHECK(traced.step_deltas.size() == 30);
}

TEST_CASE("identical prompts make a null run") {
    DeltaDenoConfig cfg;
    cfg.prompts.anomaly = cfg.prompts.normal;
    const ImageGrid image = testing::pattern_image();
    const auto backend = make_backend(cfg, image);
    const GenerationResult r = generate(cfg, image, *backend, nullptr);
    CHECK(r.s_mid.max() == 0.0);
    CHECK(r.s_final.max() == 0.0);
    CHECK(r.final_mask.empty_mask());
    CHECK(r.anomaly_image == backend->decode(backend->encode(image)));
    CHECK(r.metadata["prompts"]["anomaly_token_source"] == "none");
    CHECK(r.metadata["refinement"]["applied"] == false);
}

TEST_CASE("configured token indices override the located span") {
    DeltaDenoConfig cfg;
    cfg.prompts.anomaly_token_indices = {7};
    const ImageGrid image = testing::pattern_image();
    const auto backend = make_backend(cfg, image);
    const PreparedPrompts p = prepare_prompts(cfg, *backend);
    CHECK(p.token_source == "config");
    CHECK(p.anomaly.anomaly_indices == std::vector<std::size_t>{7});
    cfg.prompts.anomaly_token_indices = {0};
    CHECK_THROWS_AS(prepare_prompts(cfg, *backend), ConfigError);
}

TEST_CASE("resolution mismatches and missing adapters are errors") {
    DeltaDenoConfig cfg;
    const auto backend = make_backend(cfg, testing::pattern_image());
    CHECK_THROWS_AS(generate(cfg, testing::pattern_image(32, 32), *backend, nullptr), ShapeError);
    DeltaDenoConfig ext = cfg;
    ext.backend.kind = "external";
    ext.backend.model_id = "sd15";
    CHECK_THROWS_AS(make_backend(ext, testing::pattern_image()), CapabilityError);
}

TEST_CASE("registered external adapters are used") {
    register_external_backend([](const BackendSettings& s) -> std::unique_ptr<DenoiserBackend> {
        const LinearCodec codec(LinearCodec::Kind::Pool2x, Shape3{s.image_height, s.image_width, 3});
        auto b = std::make_unique<AnalyticGaussianBackend>(codec, 0.0, 1);
        b->register_unconditional_mean(LatentGrid(codec.latent_shape()));
        b->register_mean("a photo of a bottle", LatentGrid(codec.latent_shape()));
        b->register_mean("a photo of a bottle with crack", LatentGrid(codec.latent_shape(), 0.1));
        return b;
    });
    DeltaDenoConfig cfg;
    cfg.backend.kind = "external";
    const auto backend = make_backend(cfg, testing::pattern_image());
    CHECK(backend->name() == "analytic");
    register_external_backend({});
}

TEST_CASE("batch generation with per-item seeds and failure rows") {
    const fs::path dir = testing::scratch_dir("batch");
    write_png_rgb(dir / "a.png", testing::pattern_image(64, 64, 0));
    write_png_rgb(dir / "b.png", testing::pattern_image(64, 64, 3));
    write_png_rgb(dir / "small.png", testing::pattern_image(32, 32));
    write_text_file(dir / "list.txt", "a.png\n# comment\nb.png\nsmall.png\n");
    const auto images = list_batch_images(dir / "list.txt");
    REQUIRE(images.size() == 3);
    CHECK(list_batch_images(dir).size() == 3);

    DeltaDenoConfig cfg;
    cfg.seed = 10;
    cfg.batch_count = 5;
    cfg.workers = 3;
    const BatchManifest m = generate_batch(cfg, images, dir / "out");
    REQUIRE(m.rows.size() == 5);
    CHECK(m.rows[0].ok);
    CHECK(m.rows[3].ok);
    CHECK(m.rows[3].seed == 13);
    CHECK_FALSE(m.rows[2].ok);
    CHECK_FALSE(m.rows[2].error.empty());
    CHECK(fs::exists(dir / "out" / "item_0004" / "metadata.json"));
    const std::string csv = testing::slurp(m.path);
    CHECK(csv.rfind("index,source,seed,status", 0) == 0);

    // An item equals a standalone run of its image and derived seed.
    DeltaDenoConfig single = cfg;
    single.seed = 13;
    generate_to_dir(single, images[0], dir / "single");
    CHECK(testing::tree_hashes(dir / "single") == testing::tree_hashes(dir / "out" / "item_0003"));
}
