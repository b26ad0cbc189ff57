// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "deltadeno/backend.hpp"
#include "deltadeno/random.hpp"
#include "support.hpp"

using namespace deltadeno;

TEST_CASE("posterior noise estimate matches the Monte Carlo regression slope") {
    // For scalar x0 ~ N(mu, s^2), E[eps | z] is linear in z; its slope is Cov(eps, z) / Var(z).
    const double mu = 0.7, s = 0.4, ab = 0.35;
    NormalSampler rng(11);
    double sum_z = 0, sum_e = 0, sum_zz = 0, sum_ze = 0;
    const int n = 400000;
    for (int i = 0; i < n; ++i) {
        const double x0 = mu + s * rng.next();
        const double e = rng.next();
        const double z = std::sqrt(ab) * x0 + std::sqrt(1 - ab) * e;
        sum_z += z;
        sum_e += e;
        sum_zz += z * z;
        sum_ze += z * e;
    }
    const double mz = sum_z / n, me = sum_e / n;
    const double slope = (sum_ze / n - mz * me) / (sum_zz / n - mz * mz);

    const LatentGrid mean(Shape3{1, 1, 1}, mu);
    const LatentGrid z1(Shape3{1, 1, 1}, 1.0), z2(Shape3{1, 1, 1}, 2.0);
    const double formula_slope =
        gaussian_posterior_eps(z2, mean, ab, s)[0] - gaussian_posterior_eps(z1, mean, ab, s)[0];
    CHECK(formula_slope == doctest::Approx(slope).epsilon(0.01));
    const LatentGrid at_mean(Shape3{1, 1, 1}, std::sqrt(ab) * mu);
    CHECK(gaussian_posterior_eps(at_mean, mean, ab, s)[0] == doctest::Approx(0.0));
}

TEST_CASE("zero data spread gives the exact noise") {
    NormalSampler rng(12);
    const Shape3 shape{3, 3, 2};
    const LatentGrid mu = rng.latent(shape), eps = rng.latent(shape);
    const LatentGrid z = q_sample(mu, 0.5, eps);
    const LatentGrid est = gaussian_posterior_eps(z, mu, 0.5, 0.0);
    for (std::size_t i = 0; i < est.size(); ++i) CHECK(est[i] == doctest::Approx(eps[i]));
}

TEST_CASE("pooled codec") {
    const LinearCodec codec(LinearCodec::Kind::Pool2x, Shape3{64, 64, 3});
    CHECK(codec.latent_shape() == Shape3{32, 32, 4});
    const ImageGrid img = testing::pattern_image();
    const LatentGrid z = codec.encode(img);
    const double expect0 = 2.0 * img.at(0, 0, 0) - 1.0;
    CHECK(z.at(0, 0, 0) == doctest::Approx(expect0));
    CHECK(z.at(0, 0, 3) == doctest::Approx((z.at(0, 0, 0) + z.at(0, 0, 1) + z.at(0, 0, 2)) / 3.0));
    const ImageGrid back = codec.decode(z);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-12));
    CHECK_THROWS_AS(LinearCodec(LinearCodec::Kind::Pool2x, Shape3{63, 64, 3}), ShapeError);
    CHECK_THROWS_AS(codec.encode(ImageGrid(Shape3{32, 32, 3})), ShapeError);
}

TEST_CASE("identity codec round trip is exact") {
    const LinearCodec codec(LinearCodec::Kind::Identity, Shape3{8, 8, 3});
    const ImageGrid img = testing::pattern_image(8, 8);
    CHECK(codec.decode(codec.encode(img)) == img);
    CHECK(codec_kind_from_string(to_string(LinearCodec::Kind::Identity)) == LinearCodec::Kind::Identity);
    CHECK_THROWS(codec_kind_from_string("vae"));
}

TEST_CASE("analytic backend looks up prompt means and rejects bias") {
    const LinearCodec codec(LinearCodec::Kind::Pool2x, Shape3{16, 16, 3});
    AnalyticGaussianBackend backend(codec, 0.0, 1);
    const LatentGrid a(codec.latent_shape(), 0.5), b(codec.latent_shape(), -0.5);
    backend.register_mean("A photo of a bottle", a);
    backend.register_unconditional_mean(b);
    const PromptEmbedding emb = backend.encode_text("a photo of a bottle!");
    CHECK(&backend.mean_for(&emb) != &backend.mean_for(nullptr));
    CHECK(backend.mean_for(&emb) == a);
    const PromptEmbedding other = backend.encode_text("something else");
    CHECK_THROWS_AS(backend.mean_for(&other), UnknownPromptError);

    const LatentGrid z(codec.latent_shape(), 0.1);
    AttentionBias bias{Grid2D(8, 8, 1.0), {1}, 2.0, {}};
    CHECK_FALSE(backend.capabilities().supports_attention_bias);
    CHECK_THROWS_AS(backend.predict_eps(z, NoiseLevel{10, 0.9}, &emb, &bias), CapabilityError);
    CHECK_THROWS_AS(backend.predict_eps(LatentGrid(Shape3{4, 4, 4}), NoiseLevel{10, 0.9}, &emb), ShapeError);
    CHECK(backend.predict_eps(z, NoiseLevel{10, 0.9}, &emb) ==
          gaussian_posterior_eps(z, a, 0.9, 0.0));
}

TEST_CASE("synthetic attention backend") {
    const LinearCodec codec(LinearCodec::Kind::Pool2x, Shape3{32, 32, 3});
    SyntheticAttentionBackend backend(codec, 7);
    const auto& caps = backend.capabilities();
    CHECK(caps.supports_attention_bias);
    REQUIRE(caps.attention_sites.size() == 2);
    NormalSampler rng(8);
    const LatentGrid base = rng.latent(codec.latent_shape());
    backend.set_base_latent(base);
    backend.set_token_target("crack", {1.0, 0.0, 0.0, 0.0});

    PromptEmbedding emb = backend.encode_text("a bottle with crack");
    emb.anomaly_indices = {3, 4};
    const auto maps = backend.attention_maps(emb, nullptr);
    REQUIRE(maps.size() == 2);
    CHECK(maps[0].rows == 16);
    CHECK(maps[1].rows == 8);
    for (const auto& site : maps) {
        for (std::size_t r = 0; r < site.weights.rows(); ++r) {
            double sum = 0.0;
            for (double v : site.weights.row(r)) sum += v;
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    CHECK(backend.target_latent(nullptr, nullptr) == base);

    // Only the "crack" target is non-zero, so the change is confined to channel 0.
    const LatentGrid target = backend.target_latent(&emb, nullptr);
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (i % 4 != 0) CHECK(target[i] == doctest::Approx(base[i]));
        else CHECK(target[i] > base[i]);
    }

    Grid2D mask(16, 16, 0.0);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) mask.at(y, x) = 1.0;
    AttentionBias bias{mask, emb.anomaly_indices, 2.0, {"full"}};
    const auto biased = backend.attention_maps(emb, &bias);
    CHECK(biased[1].weights == maps[1].weights);
    CHECK_FALSE(biased[0].weights == maps[0].weights);
    bias.mask = Grid2D(4, 4, 1.0);
    CHECK_THROWS(backend.predict_eps(LatentGrid(codec.latent_shape()), NoiseLevel{5, 0.9}, &emb, &bias));
}

TEST_CASE("external adapter routes through hooks") {
    BackendCapabilities caps{Shape3{2, 2, 1}, Shape3{2, 2, 3}, false, 4, {}};
    int plain_calls = 0, biased_calls = 0;
    ExternalBackendAdapter::Hooks hooks;
    hooks.encode = [](const ImageGrid&) { return LatentGrid(Shape3{2, 2, 1}, 0.25); };
    hooks.decode = [](const LatentGrid&) { return ImageGrid(Shape3{2, 2, 3}, 0.5); };
    hooks.encode_text = [](std::string_view p) { return ToyTextEncoder(1, 4).encode(p); };
    hooks.predict_eps = [&](const LatentGrid& z, NoiseLevel, const PromptEmbedding*) {
        ++plain_calls;
        return z;
    };
    ExternalBackendAdapter plain("toy", caps, hooks);
    CHECK(plain.name() == "external:toy");
    CHECK_FALSE(plain.capabilities().supports_attention_bias);
    const PromptEmbedding emb = plain.encode_text("a b c");
    AttentionBias bias{Grid2D(2, 2, 1.0), {1}, 2.0, {}};
    CHECK_THROWS_AS(plain.predict_eps(LatentGrid(Shape3{2, 2, 1}), NoiseLevel{}, &emb, &bias), CapabilityError);

    hooks.predict_eps_biased = [&](const LatentGrid& z, NoiseLevel, const PromptEmbedding*, const AttentionBias&) {
        ++biased_calls;
        return z;
    };
    ExternalBackendAdapter biased("toy", caps, hooks);
    CHECK(biased.capabilities().supports_attention_bias);
    biased.predict_eps(LatentGrid(Shape3{2, 2, 1}), NoiseLevel{}, &emb, &bias);
    biased.predict_eps(LatentGrid(Shape3{2, 2, 1}), NoiseLevel{}, &emb);
    CHECK(biased_calls == 1);
    CHECK(plain_calls == 1);
    CHECK(std::isinf(codec_round_trip_psnr(biased, ImageGrid(Shape3{2, 2, 3}, 0.5))));
}
