// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltadeno/backend.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "deltadeno/random.hpp"

namespace deltadeno {

LatentGrid DenoiserBackend::predict_eps(const LatentGrid& z_t, NoiseLevel level, const PromptEmbedding* embedding,
                                        const AttentionBias* bias) const {
    const auto& caps = capabilities();
    if (z_t.shape() != caps.latent_shape) {
        throw ShapeError("latent " + to_string(z_t.shape()) + " does not match backend latent shape " +
                         to_string(caps.latent_shape));
    }
    if (bias != nullptr) {
        if (!caps.supports_attention_bias) {
            throw CapabilityError("backend '" + name() + "' does not support attention bias");
        }
        bias->validate();
        if (bias->mask.height() != caps.latent_shape.height || bias->mask.width() != caps.latent_shape.width) {
            throw ShapeError("attention prior must be at latent resolution");
        }
    }
    if (embedding != nullptr && static_cast<int>(embedding->dim()) != caps.embedding_dim) {
        throw ShapeError("embedding dimension " + std::to_string(embedding->dim()) + " does not match backend " +
                         std::to_string(caps.embedding_dim));
    }
    return predict_eps_impl(z_t, level, embedding, bias);
}

// ---------------------------------------------------------------------------
// LinearCodec

std::string to_string(LinearCodec::Kind kind) { return kind == LinearCodec::Kind::Identity ? "identity" : "pool2x"; }

LinearCodec::Kind codec_kind_from_string(const std::string& name) {
    if (name == "identity") return LinearCodec::Kind::Identity;
    if (name == "pool2x") return LinearCodec::Kind::Pool2x;
    throw std::invalid_argument("unknown codec '" + name + "'");
}

LinearCodec::LinearCodec(Kind kind, Shape3 image_shape) : kind_(kind), image_shape_(image_shape) {
    if (image_shape.height <= 0 || image_shape.width <= 0 || image_shape.channels <= 0) {
        throw ShapeError("codec image shape must be positive");
    }
    if (kind == Kind::Identity) {
        latent_shape_ = image_shape;
        return;
    }
    if (image_shape.channels != 3 || image_shape.height % 2 != 0 || image_shape.width % 2 != 0) {
        throw ShapeError("pool2x codec needs an even-sized RGB image, got " + to_string(image_shape));
    }
    latent_shape_ = Shape3{image_shape.height / 2, image_shape.width / 2, 4};
}

LatentGrid LinearCodec::encode(const ImageGrid& image) const {
    if (image.shape() != image_shape_) {
        throw ShapeError("image " + to_string(image.shape()) + " does not match codec input " +
                         to_string(image_shape_));
    }
    if (kind_ == Kind::Identity) {
        return LatentGrid(latent_shape_, std::vector<double>(image.values().begin(), image.values().end()));
    }
    LatentGrid z(latent_shape_);
    for (int y = 0; y < latent_shape_.height; ++y) {
        for (int x = 0; x < latent_shape_.width; ++x) {
            double mean_all = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double avg = (image.at(2 * y, 2 * x, c) + image.at(2 * y, 2 * x + 1, c) +
                                    image.at(2 * y + 1, 2 * x, c) + image.at(2 * y + 1, 2 * x + 1, c)) /
                                   4.0;
                z.at(y, x, c) = 2.0 * avg - 1.0;
                mean_all += z.at(y, x, c);
            }
            z.at(y, x, 3) = mean_all / 3.0;
        }
    }
    return z;
}

ImageGrid LinearCodec::decode(const LatentGrid& z0) const {
    if (z0.shape() != latent_shape_) {
        throw ShapeError("latent " + to_string(z0.shape()) + " does not match codec latent " +
                         to_string(latent_shape_));
    }
    if (kind_ == Kind::Identity) {
        return ImageGrid(image_shape_, std::vector<double>(z0.values().begin(), z0.values().end()));
    }
    ImageGrid image(image_shape_);
    for (int y = 0; y < image_shape_.height; ++y) {
        for (int x = 0; x < image_shape_.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                image.at(y, x, c) = std::clamp((z0.at(y / 2, x / 2, c) + 1.0) / 2.0, 0.0, 1.0);
            }
        }
    }
    return image;
}

LatentGrid gaussian_posterior_eps(const LatentGrid& z_t, const LatentGrid& mu, double alpha_bar, double data_std) {
    require_same_shape(z_t, mu, "gaussian_posterior_eps");
    const double a = std::sqrt(alpha_bar);
    const double s = std::sqrt(1.0 - alpha_bar);
    const double denom = alpha_bar * data_std * data_std + (1.0 - alpha_bar);
    if (!(denom > 0.0)) {
        throw std::invalid_argument("posterior undefined at a noise-free level with zero data spread");
    }
    LatentGrid eps(z_t.shape());
    for (std::size_t i = 0; i < eps.size(); ++i) {
        eps[i] = s * (z_t[i] - a * mu[i]) / denom;
    }
    return eps;
}

// ---------------------------------------------------------------------------
// AnalyticGaussianBackend

AnalyticGaussianBackend::AnalyticGaussianBackend(LinearCodec codec, double data_std, std::uint64_t seed,
                                                 int embedding_dim)
    : codec_(std::move(codec)), data_std_(data_std), text_(seed, embedding_dim) {
    if (!(data_std >= 0.0)) {
        throw std::invalid_argument("data_std must be nonnegative");
    }
    caps_.latent_shape = codec_.latent_shape();
    caps_.image_shape = codec_.image_shape();
    caps_.supports_attention_bias = false;
    caps_.embedding_dim = embedding_dim;
}

void AnalyticGaussianBackend::register_mean(std::string_view prompt, LatentGrid mean) {
    if (mean.shape() != caps_.latent_shape) {
        throw ShapeError("class mean must match the latent shape");
    }
    means_.insert_or_assign(canonicalize_prompt(prompt), std::move(mean));
}

void AnalyticGaussianBackend::register_unconditional_mean(LatentGrid mean) {
    if (mean.shape() != caps_.latent_shape) {
        throw ShapeError("class mean must match the latent shape");
    }
    means_.insert_or_assign(std::string(), std::move(mean));
}

const LatentGrid& AnalyticGaussianBackend::mean_for(const PromptEmbedding* embedding) const {
    const std::string key = embedding ? embedding->content_key() : std::string();
    const auto it = means_.find(key);
    if (it == means_.end()) {
        throw UnknownPromptError(key.empty() ? "no unconditional mean registered"
                                             : "no class mean registered for prompt '" + key + "'");
    }
    return it->second;
}

LatentGrid AnalyticGaussianBackend::predict_eps_impl(const LatentGrid& z_t, NoiseLevel level,
                                                     const PromptEmbedding* embedding, const AttentionBias*) const {
    return gaussian_posterior_eps(z_t, mean_for(embedding), level.alpha_bar, data_std_);
}

// ---------------------------------------------------------------------------
// SyntheticAttentionBackend

namespace {

Matrix positional_features(int rows, int cols, int num_frequencies) {
    const std::size_t dim = 1 + 4 * static_cast<std::size_t>(num_frequencies);
    Matrix f(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), dim);
    for (int y = 0; y < rows; ++y) {
        for (int x = 0; x < cols; ++x) {
            const std::size_t u = static_cast<std::size_t>(y) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(x);
            const double py = (y + 0.5) / rows;
            const double px = (x + 0.5) / cols;
            f(u, 0) = 1.0;
            for (int k = 1; k <= num_frequencies; ++k) {
                const std::size_t base = 1 + 4 * static_cast<std::size_t>(k - 1);
                f(u, base + 0) = std::sin(std::numbers::pi * k * py);
                f(u, base + 1) = std::cos(std::numbers::pi * k * py);
                f(u, base + 2) = std::sin(std::numbers::pi * k * px);
                f(u, base + 3) = std::cos(std::numbers::pi * k * px);
            }
        }
    }
    return f;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    }
    return out;
}

Matrix gaussian_matrix(NormalSampler& rng, std::size_t rows, std::size_t cols, double scale) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.next() * scale;
    }
    return m;
}

}  // namespace

SyntheticAttentionBackend::SyntheticAttentionBackend(LinearCodec codec, std::uint64_t seed, Options options)
    : codec_(std::move(codec)), options_(options), text_(seed, options.embedding_dim) {
    if (options_.head_dim <= 0 || options_.num_frequencies < 0 || options_.embedding_dim <= 0) {
        throw std::invalid_argument("invalid synthetic attention options");
    }
    if (!(options_.data_std >= 0.0)) {
        throw std::invalid_argument("data_std must be nonnegative");
    }
    const Shape3 latent = codec_.latent_shape();
    caps_.latent_shape = latent;
    caps_.image_shape = codec_.image_shape();
    caps_.supports_attention_bias = true;
    caps_.embedding_dim = options_.embedding_dim;

    NormalSampler rng(mix_seed(seed, fnv1a64("synthetic-attention-projections")));
    const std::size_t feature_dim = 1 + 4 * static_cast<std::size_t>(options_.num_frequencies);
    const Matrix query_projection = gaussian_matrix(rng, feature_dim, static_cast<std::size_t>(options_.head_dim),
                                                    options_.query_scale / std::sqrt(static_cast<double>(feature_dim)));
    key_projection_ = gaussian_matrix(rng, static_cast<std::size_t>(options_.embedding_dim),
                                      static_cast<std::size_t>(options_.head_dim), 1.0);

    auto add_site = [&](std::string site_name, int rows, int cols) {
        sites_.push_back(
            Site{site_name, rows, cols, matmul(positional_features(rows, cols, options_.num_frequencies), query_projection)});
        caps_.attention_sites.push_back(std::move(site_name));
    };
    add_site("full", latent.height, latent.width);
    if (latent.height % 2 == 0 && latent.width % 2 == 0 && latent.height >= 4 && latent.width >= 4) {
        add_site("half", latent.height / 2, latent.width / 2);
    }
    base_ = LatentGrid(latent);
}

void SyntheticAttentionBackend::set_base_latent(LatentGrid base) {
    if (base.shape() != caps_.latent_shape) {
        throw ShapeError("base latent must match the latent shape");
    }
    base_ = std::move(base);
}

void SyntheticAttentionBackend::set_token_target(std::string_view token, std::vector<double> offset) {
    if (static_cast<int>(offset.size()) != caps_.latent_shape.channels) {
        throw ShapeError("token target needs one value per latent channel");
    }
    token_targets_.insert_or_assign(std::string(token), std::move(offset));
}

std::vector<SyntheticAttentionBackend::SiteAttention> SyntheticAttentionBackend::attention_maps(
    const PromptEmbedding& embedding, const AttentionBias* bias) const {
    if (static_cast<int>(embedding.dim()) != options_.embedding_dim) {
        throw ShapeError("embedding dimension does not match backend");
    }
    const Matrix keys = matmul(embedding.vectors, key_projection_);  // Z x head_dim
    std::vector<SiteAttention> out;
    for (const Site& site : sites_) {
        Matrix scores(site.queries.rows(), keys.rows());
        for (std::size_t u = 0; u < site.queries.rows(); ++u) {
            for (std::size_t j = 0; j < keys.rows(); ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < keys.cols(); ++k) s += site.queries(u, k) * keys(j, k);
                scores(u, j) = s;
            }
        }
        Matrix weights;
        if (bias != nullptr && bias->applies_to(site.name)) {
            const Grid2D prior = resize_prior(bias->mask, site.rows, site.cols);
            weights = attention_weights(scores, options_.head_dim, bias, prior.values());
        } else {
            weights = attention_weights(scores, options_.head_dim);
        }
        out.push_back(SiteAttention{site.name, site.rows, site.cols, std::move(weights)});
    }
    return out;
}

LatentGrid SyntheticAttentionBackend::target_latent(const PromptEmbedding* embedding, const AttentionBias* bias) const {
    LatentGrid target = base_;
    if (embedding == nullptr) {
        return target;
    }
    const Shape3 latent = caps_.latent_shape;
    const std::size_t channels = static_cast<std::size_t>(latent.channels);
    std::vector<const std::vector<double>*> targets(embedding->num_tokens(), nullptr);
    for (std::size_t j = 0; j < embedding->num_tokens(); ++j) {
        const auto it = token_targets_.find(embedding->tokens[j]);
        if (it != token_targets_.end()) targets[j] = &it->second;
    }
    const auto maps = attention_maps(*embedding, bias);
    const double site_weight = 1.0 / static_cast<double>(maps.size());
    for (const SiteAttention& site : maps) {
        for (int y = 0; y < latent.height; ++y) {
            for (int x = 0; x < latent.width; ++x) {
                const int sy = y * site.rows / latent.height;
                const int sx = x * site.cols / latent.width;
                const std::size_t u = static_cast<std::size_t>(sy) * static_cast<std::size_t>(site.cols) +
                                      static_cast<std::size_t>(sx);
                for (std::size_t j = 0; j < targets.size(); ++j) {
                    if (targets[j] == nullptr) continue;
                    const double w = site_weight * site.weights(u, j);
                    for (std::size_t c = 0; c < channels; ++c) {
                        target.at(y, x, static_cast<int>(c)) += w * (*targets[j])[c];
                    }
                }
            }
        }
    }
    return target;
}

LatentGrid SyntheticAttentionBackend::predict_eps_impl(const LatentGrid& z_t, NoiseLevel level,
                                                       const PromptEmbedding* embedding,
                                                       const AttentionBias* bias) const {
    return gaussian_posterior_eps(z_t, target_latent(embedding, bias), level.alpha_bar, options_.data_std);
}

// ---------------------------------------------------------------------------
// ExternalBackendAdapter

ExternalBackendAdapter::ExternalBackendAdapter(std::string model_id, BackendCapabilities caps, Hooks hooks)
    : model_id_(std::move(model_id)), caps_(std::move(caps)), hooks_(std::move(hooks)) {
    if (!hooks_.encode || !hooks_.decode || !hooks_.encode_text || !hooks_.predict_eps) {
        throw std::invalid_argument("external adapter needs encode, decode, encode_text and predict_eps hooks");
    }
    caps_.supports_attention_bias = static_cast<bool>(hooks_.predict_eps_biased);
}

LatentGrid ExternalBackendAdapter::encode(const ImageGrid& image) const {
    if (image.shape() != caps_.image_shape) {
        throw ShapeError("image does not match the adapter's input shape");
    }
    LatentGrid z = hooks_.encode(image);
    if (z.shape() != caps_.latent_shape) {
        throw ShapeError("adapter encode returned " + to_string(z.shape()));
    }
    return z;
}

ImageGrid ExternalBackendAdapter::decode(const LatentGrid& z0) const {
    if (z0.shape() != caps_.latent_shape) {
        throw ShapeError("latent does not match the adapter's latent shape");
    }
    return hooks_.decode(z0);
}

PromptEmbedding ExternalBackendAdapter::encode_text(std::string_view prompt) const {
    if (canonicalize_prompt(prompt).empty()) {
        throw std::invalid_argument("prompt is empty");
    }
    return hooks_.encode_text(prompt);
}

LatentGrid ExternalBackendAdapter::predict_eps_impl(const LatentGrid& z_t, NoiseLevel level,
                                                    const PromptEmbedding* embedding, const AttentionBias* bias) const {
    LatentGrid eps = bias ? hooks_.predict_eps_biased(z_t, level, embedding, *bias)
                          : hooks_.predict_eps(z_t, level, embedding);
    if (eps.shape() != z_t.shape()) {
        throw ShapeError("adapter noise prediction has shape " + to_string(eps.shape()));
    }
    return eps;
}

double codec_round_trip_psnr(const DenoiserBackend& backend, const ImageGrid& image) {
    const ImageGrid recon = backend.decode(backend.encode(image));
    require_same_shape(image, recon, "codec_round_trip_psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < image.size(); ++i) {
        const double d = image[i] - recon[i];
        mse += d * d;
    }
    mse /= static_cast<double>(image.size());
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace deltadeno
