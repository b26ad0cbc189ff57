// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "deltadeno/attnbias.hpp"
#include "deltadeno/prompt.hpp"
#include "deltadeno/schedule.hpp"
#include "deltadeno/tensor.hpp"

namespace deltadeno {

class CapabilityError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class UnknownPromptError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct BackendCapabilities {
    Shape3 latent_shape;
    Shape3 image_shape;
    bool supports_attention_bias = false;
    int embedding_dim = 0;
    std::vector<std::string> attention_sites;
};

struct NoiseLevel {
    Timestep t = 0;
    double alpha_bar = 1.0;
};

inline NoiseLevel noise_level(const Schedule& schedule, Timestep t) { return {t, schedule.alpha_bar(t)}; }

// Noise predictor shared by both branches. Implementations are read-only after
// construction; predict_eps may be called concurrently.
class DenoiserBackend {
public:
    virtual ~DenoiserBackend() = default;

    virtual const BackendCapabilities& capabilities() const = 0;
    virtual std::string name() const = 0;

    // A null embedding requests the unconditional prediction. Passing a bias to a
    // backend without attention-bias support throws CapabilityError.
    LatentGrid predict_eps(const LatentGrid& z_t, NoiseLevel level, const PromptEmbedding* embedding,
                           const AttentionBias* bias = nullptr) const;

    virtual LatentGrid encode(const ImageGrid& image) const = 0;
    virtual ImageGrid decode(const LatentGrid& z0) const = 0;
    virtual PromptEmbedding encode_text(std::string_view prompt) const = 0;

protected:
    virtual LatentGrid predict_eps_impl(const LatentGrid& z_t, NoiseLevel level, const PromptEmbedding* embedding,
                                        const AttentionBias* bias) const = 0;
};

// Fixed linear image <-> latent map used by the toy backends.
//   Identity: latent == image.
//   Pool2x:   2x2 average pool; channels 0..2 carry 2*rgb-1, channel 3 their mean.
//             Decoding unpools channels 0..2 by nearest neighbour.
class LinearCodec {
public:
    enum class Kind { Identity, Pool2x };

    LinearCodec(Kind kind, Shape3 image_shape);

    Kind kind() const { return kind_; }
    const Shape3& image_shape() const { return image_shape_; }
    const Shape3& latent_shape() const { return latent_shape_; }

    LatentGrid encode(const ImageGrid& image) const;
    ImageGrid decode(const LatentGrid& z0) const;

private:
    Kind kind_;
    Shape3 image_shape_;
    Shape3 latent_shape_;
};

std::string to_string(LinearCodec::Kind kind);
LinearCodec::Kind codec_kind_from_string(const std::string& name);

// E[eps | z_t] for x0 ~ N(mu, data_std^2 I):
//   sqrt(1-ab) * (z_t - sqrt(ab) * mu) / (ab * data_std^2 + 1 - ab)
LatentGrid gaussian_posterior_eps(const LatentGrid& z_t, const LatentGrid& mu, double alpha_bar, double data_std);

// Closed-form denoiser: each prompt (by content key) names a Gaussian class mean.
// The unconditional prediction uses the mean registered under the empty key.
class AnalyticGaussianBackend : public DenoiserBackend {
public:
    AnalyticGaussianBackend(LinearCodec codec, double data_std, std::uint64_t seed, int embedding_dim = 64);

    void register_mean(std::string_view prompt, LatentGrid mean);
    void register_unconditional_mean(LatentGrid mean);
    const LatentGrid& mean_for(const PromptEmbedding* embedding) const;

    double data_std() const { return data_std_; }
    const LinearCodec& codec() const { return codec_; }

    const BackendCapabilities& capabilities() const override { return caps_; }
    std::string name() const override { return "analytic"; }
    LatentGrid encode(const ImageGrid& image) const override { return codec_.encode(image); }
    ImageGrid decode(const LatentGrid& z0) const override { return codec_.decode(z0); }
    PromptEmbedding encode_text(std::string_view prompt) const override { return text_.encode(prompt); }

protected:
    LatentGrid predict_eps_impl(const LatentGrid& z_t, NoiseLevel level, const PromptEmbedding* embedding,
                                const AttentionBias* bias) const override;

private:
    LinearCodec codec_;
    double data_std_;
    ToyTextEncoder text_;
    BackendCapabilities caps_;
    std::map<std::string, LatentGrid> means_;
};

// Toy cross-attention denoiser. Queries come from fixed positional features,
// keys from the token embeddings, and each token carries a target offset in
// latent space. The clean-latent estimate is
//   base(u) + mean over sites of sum_j A_site(u, j) * target_j
// and the noise prediction is the Gaussian posterior around it. Projections
// are drawn once from the seed.
class SyntheticAttentionBackend : public DenoiserBackend {
public:
    struct Options {
        int head_dim = 4;
        int num_frequencies = 3;
        double query_scale = 2.0;
        double data_std = 0.0;
        int embedding_dim = 64;
    };

    struct SiteAttention {
        std::string site;
        int rows = 0;
        int cols = 0;
        Matrix weights;  // (rows*cols) x Z, post-softmax
    };

    SyntheticAttentionBackend(LinearCodec codec, std::uint64_t seed, Options options);
    SyntheticAttentionBackend(LinearCodec codec, std::uint64_t seed)
        : SyntheticAttentionBackend(std::move(codec), seed, Options{}) {}

    void set_base_latent(LatentGrid base);
    // Offset (one value per latent channel) contributed where `token` is attended.
    void set_token_target(std::string_view token, std::vector<double> offset);

    std::vector<SiteAttention> attention_maps(const PromptEmbedding& embedding, const AttentionBias* bias) const;
    // Clean-latent estimate for a prompt; the base latent when embedding is null.
    LatentGrid target_latent(const PromptEmbedding* embedding, const AttentionBias* bias) const;

    const Options& options() const { return options_; }
    const LinearCodec& codec() const { return codec_; }

    const BackendCapabilities& capabilities() const override { return caps_; }
    std::string name() const override { return "synthetic_attention"; }
    LatentGrid encode(const ImageGrid& image) const override { return codec_.encode(image); }
    ImageGrid decode(const LatentGrid& z0) const override { return codec_.decode(z0); }
    PromptEmbedding encode_text(std::string_view prompt) const override { return text_.encode(prompt); }

protected:
    LatentGrid predict_eps_impl(const LatentGrid& z_t, NoiseLevel level, const PromptEmbedding* embedding,
                                const AttentionBias* bias) const override;

private:
    struct Site {
        std::string name;
        int rows;
        int cols;
        Matrix queries;  // (rows*cols) x head_dim
    };

    LinearCodec codec_;
    Options options_;
    ToyTextEncoder text_;
    BackendCapabilities caps_;
    std::vector<Site> sites_;
    Matrix key_projection_;  // embedding_dim x head_dim
    LatentGrid base_;
    std::map<std::string, std::vector<double>> token_targets_;
};

// Thin adapter over an external latent-diffusion stack supplied as callables.
// No weights ship with this library; the hooks own model loading and device
// placement. The attention-bias hook receives the bias at predict time only.
class ExternalBackendAdapter : public DenoiserBackend {
public:
    struct Hooks {
        std::function<LatentGrid(const ImageGrid&)> encode;
        std::function<ImageGrid(const LatentGrid&)> decode;
        std::function<PromptEmbedding(std::string_view)> encode_text;
        std::function<LatentGrid(const LatentGrid&, NoiseLevel, const PromptEmbedding*)> predict_eps;
        // Optional. When set, the adapter reports attention-bias support and routes
        // biased predictions here.
        std::function<LatentGrid(const LatentGrid&, NoiseLevel, const PromptEmbedding*, const AttentionBias&)>
            predict_eps_biased;
    };

    ExternalBackendAdapter(std::string model_id, BackendCapabilities caps, Hooks hooks);

    const BackendCapabilities& capabilities() const override { return caps_; }
    std::string name() const override { return "external:" + model_id_; }
    LatentGrid encode(const ImageGrid& image) const override;
    ImageGrid decode(const LatentGrid& z0) const override;
    PromptEmbedding encode_text(std::string_view prompt) const override;

protected:
    LatentGrid predict_eps_impl(const LatentGrid& z_t, NoiseLevel level, const PromptEmbedding* embedding,
                                const AttentionBias* bias) const override;

private:
    std::string model_id_;
    BackendCapabilities caps_;
    Hooks hooks_;
};

// Reconstruction PSNR of decode(encode(image)) in dB; infinity for exact round trips.
double codec_round_trip_psnr(const DenoiserBackend& backend, const ImageGrid& image);

}  // namespace deltadeno
