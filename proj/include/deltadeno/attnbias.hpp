// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "deltadeno/tensor.hpp"

namespace deltadeno {

// Spatial prior added to the cross-attention logits of the anomaly tokens.
struct AttentionBias {
    Grid2D mask;  // latent resolution, values in [0, 1]
    std::vector<std::size_t> anomaly_indices;
    double beta = 2.0;
    std::set<std::string> layer_filter;  // empty: every attention site

    void validate() const;
    bool applies_to(const std::string& site) const;
};

// logits[u][j] + beta * mask[u] for j in anomaly_indices; every other column
// is copied unchanged.
Matrix bias_logits(const Matrix& logits, std::span<const double> mask_flat,
                   std::span<const std::size_t> anomaly_indices, double beta);

// Row-wise softmax of (scores + bias) / sqrt(head_dim). The bias, when given,
// is added to the raw scores before the scaling.
Matrix attention_weights(const Matrix& scores, double head_dim, const AttentionBias* bias = nullptr,
                         std::span<const double> mask_flat = {});

void softmax_rows(Matrix& m);

// Area-average downsample or nearest upsample to rows x cols, clamped to [0, 1].
Grid2D resize_prior(const Grid2D& mask, int rows, int cols);
inline Grid2D resize_prior(const Grid2D& mask, int side) { return resize_prior(mask, side, side); }

// Coarse foreground segmentation source. Implementations may fail by throwing.
class ForegroundProvider {
public:
    virtual ~ForegroundProvider() = default;
    virtual std::string name() const = 0;
    virtual Grid2D segment(const ImageGrid& image) = 0;
};

// Runs `command <image.png> <mask.png>` and reads the single-channel 0/255 mask
// the command writes. A run that exceeds the timeout is killed.
class CommandForegroundProvider : public ForegroundProvider {
public:
    CommandForegroundProvider(std::string command, std::chrono::milliseconds timeout);

    std::string name() const override { return "command"; }
    Grid2D segment(const ImageGrid& image) override;

private:
    std::string command_;
    std::chrono::milliseconds timeout_;
};

inline constexpr const char* kForegroundProviderEnv = "DELTADENO_FG_PROVIDER";

struct ForegroundPrior {
    Grid2D mask;  // latent resolution
    bool fallback = false;
    std::string source;
    std::string warning;
};

// Provider output resized to the latent grid and clamped; the all-ones mask when
// no provider is given or the provider fails.
ForegroundPrior foreground_prior(const ImageGrid& image, ForegroundProvider* provider,
                                 int latent_height, int latent_width);

}  // namespace deltadeno
