// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "deltadeno/prompt.hpp"
#include "deltadeno/tensor.hpp"

namespace deltadeno {

struct RefinementConfig {
    double lambda = 0.1;     // L2 weight inside the anomaly loss
    double eta = 1.0;        // context-loss weight
    double refine_lr = 1e-2;
    int num_iters = 10;

    void validate() const;
    bool operator==(const RefinementConfig&) const = default;
};

// Anchor vector for the anomaly tokens: mean of the descriptor's content
// tokens, rescaled to their mean norm.
std::vector<double> distill_anchor(const PromptEmbedding& descriptor);

// 1 - cos(e, anchor) + lambda * |e - anchor|^2
double loss_anom(std::span<const double> e, std::span<const double> anchor, double lambda);
std::vector<double> grad_anom(std::span<const double> e, std::span<const double> anchor, double lambda);

// Mean squared distance of the rows to their centroid.
double loss_ctx(const Matrix& rows);
Matrix grad_ctx(const Matrix& rows);

// Rows of E_a taking part in the context term: neither anomaly nor special.
std::vector<std::size_t> context_indices(const PromptEmbedding& embedding);

// L_anom summed over anomaly tokens plus eta * L_ctx over the context rows.
double prompt_loss(const PromptEmbedding& embedding, std::span<const double> anchor,
                   const RefinementConfig& cfg);
// Gradient of prompt_loss with respect to every row; special rows get zero.
Matrix prompt_loss_gradient(const PromptEmbedding& embedding, std::span<const double> anchor,
                            const RefinementConfig& cfg);

struct RefinementResult {
    PromptEmbedding embedding;
    // Loss at each iterate, initial one included; empty when refinement is off.
    std::vector<double> loss_trace;
    std::vector<Matrix> iterates;  // iterates[i] matches loss_trace[i]
};

RefinementResult refine(const PromptEmbedding& anomaly_prompt, std::span<const double> anchor,
                        const RefinementConfig& cfg);

// Span of `anomaly` left after stripping the longest common prefix and suffix
// (by token id) shared with `normal`. nullopt when nothing remains.
std::optional<std::vector<std::size_t>> locate_anomaly_tokens(const PromptEmbedding& normal,
                                                              const PromptEmbedding& anomaly);

}  // namespace deltadeno
