// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltadeno/promptopt.hpp"

#include <cmath>
#include <stdexcept>

namespace deltadeno {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void require_same_dim(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("embedding dimension mismatch");
    }
}

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto src = m.row(rows[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

}  // namespace

void RefinementConfig::validate() const {
    if (!(lambda >= 0.0) || !(eta >= 0.0)) {
        throw std::invalid_argument("refinement weights must be nonnegative");
    }
    if (!(refine_lr > 0.0)) {
        throw std::invalid_argument("refine_lr must be positive");
    }
    if (num_iters < 0) {
        throw std::invalid_argument("num_iters must be nonnegative");
    }
}

std::vector<double> distill_anchor(const PromptEmbedding& descriptor) {
    descriptor.validate();
    std::vector<double> mean(descriptor.dim(), 0.0);
    double mean_norm = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < descriptor.num_tokens(); ++i) {
        if (descriptor.is_special(i)) continue;
        const auto row = descriptor.vectors.row(i);
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += row[k];
        mean_norm += norm(row);
        ++count;
    }
    if (count == 0) {
        throw std::invalid_argument("descriptor prompt has no content tokens");
    }
    for (double& v : mean) v /= static_cast<double>(count);
    mean_norm /= static_cast<double>(count);
    const double n = norm(mean);
    if (n == 0.0) {
        throw std::invalid_argument("descriptor tokens cancel to a zero anchor");
    }
    for (double& v : mean) v *= mean_norm / n;
    return mean;
}

double loss_anom(std::span<const double> e, std::span<const double> anchor, double lambda) {
    require_same_dim(e, anchor);
    const double ne = norm(e);
    const double na = norm(anchor);
    if (ne == 0.0) throw std::invalid_argument("anomaly embedding is the zero vector");
    if (na == 0.0) throw std::invalid_argument("anchor is the zero vector");
    double sq = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        const double d = e[i] - anchor[i];
        sq += d * d;
    }
    return 1.0 - dot(e, anchor) / (ne * na) + lambda * sq;
}

std::vector<double> grad_anom(std::span<const double> e, std::span<const double> anchor, double lambda) {
    require_same_dim(e, anchor);
    const double ne = norm(e);
    const double na = norm(anchor);
    if (ne == 0.0) throw std::invalid_argument("anomaly embedding is the zero vector");
    if (na == 0.0) throw std::invalid_argument("anchor is the zero vector");
    // d/de cos(e, a) = a / (|e||a|) - (e.a) e / (|e|^3 |a|)
    const double ea = dot(e, anchor);
    std::vector<double> g(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
        const double dcos = anchor[i] / (ne * na) - ea * e[i] / (ne * ne * ne * na);
        g[i] = -dcos + 2.0 * lambda * (e[i] - anchor[i]);
    }
    return g;
}

double loss_ctx(const Matrix& rows) {
    if (rows.rows() == 0) {
        throw std::invalid_argument("context loss needs at least one vector");
    }
    const std::size_t n = rows.rows();
    std::vector<double> centroid(rows.cols(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < rows.cols(); ++k) centroid[k] += rows(r, k);
    }
    for (double& c : centroid) c /= static_cast<double>(n);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < rows.cols(); ++k) {
            const double d = rows(r, k) - centroid[k];
            total += d * d;
        }
    }
    return total / static_cast<double>(n);
}

Matrix grad_ctx(const Matrix& rows) {
    if (rows.rows() == 0) {
        throw std::invalid_argument("context loss needs at least one vector");
    }
    const std::size_t n = rows.rows();
    std::vector<double> centroid(rows.cols(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < rows.cols(); ++k) centroid[k] += rows(r, k);
    }
    for (double& c : centroid) c /= static_cast<double>(n);
    // The centroid's own dependence on each row cancels because the
    // deviations sum to zero.
    Matrix g(n, rows.cols());
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < rows.cols(); ++k) {
            g(r, k) = 2.0 / static_cast<double>(n) * (rows(r, k) - centroid[k]);
        }
    }
    return g;
}

std::vector<std::size_t> context_indices(const PromptEmbedding& embedding) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < embedding.num_tokens(); ++i) {
        if (!embedding.is_special(i) && !embedding.is_anomaly(i)) out.push_back(i);
    }
    return out;
}

double prompt_loss(const PromptEmbedding& embedding, std::span<const double> anchor,
                   const RefinementConfig& cfg) {
    double total = 0.0;
    for (std::size_t j : embedding.anomaly_indices) {
        total += loss_anom(embedding.vectors.row(j), anchor, cfg.lambda);
    }
    const auto ctx = context_indices(embedding);
    if (cfg.eta != 0.0 && !ctx.empty()) {
        total += cfg.eta * loss_ctx(gather_rows(embedding.vectors, ctx));
    }
    return total;
}

Matrix prompt_loss_gradient(const PromptEmbedding& embedding, std::span<const double> anchor,
                            const RefinementConfig& cfg) {
    Matrix g(embedding.num_tokens(), embedding.dim());
    for (std::size_t j : embedding.anomaly_indices) {
        const auto gj = grad_anom(embedding.vectors.row(j), anchor, cfg.lambda);
        std::copy(gj.begin(), gj.end(), g.row(j).begin());
    }
    const auto ctx = context_indices(embedding);
    if (cfg.eta != 0.0 && !ctx.empty()) {
        const Matrix gc = grad_ctx(gather_rows(embedding.vectors, ctx));
        for (std::size_t r = 0; r < ctx.size(); ++r) {
            for (std::size_t k = 0; k < g.cols(); ++k) g(ctx[r], k) = cfg.eta * gc(r, k);
        }
    }
    return g;
}

RefinementResult refine(const PromptEmbedding& anomaly_prompt, std::span<const double> anchor,
                        const RefinementConfig& cfg) {
    cfg.validate();
    anomaly_prompt.validate();
    if (anomaly_prompt.anomaly_indices.empty()) {
        throw std::invalid_argument("refinement needs at least one anomaly token");
    }
    if (anchor.size() != anomaly_prompt.dim()) {
        throw std::invalid_argument("anchor dimension does not match the embedding");
    }
    RefinementResult result{anomaly_prompt, {}, {}};
    if (cfg.num_iters == 0) {
        return result;
    }
    PromptEmbedding& e = result.embedding;
    for (int it = 0; it < cfg.num_iters; ++it) {
        result.loss_trace.push_back(prompt_loss(e, anchor, cfg));
        result.iterates.push_back(e.vectors);
        const Matrix g = prompt_loss_gradient(e, anchor, cfg);
        for (std::size_t r = 0; r < e.num_tokens(); ++r) {
            if (e.is_special(r)) continue;
            auto row = e.vectors.row(r);
            for (std::size_t k = 0; k < row.size(); ++k) row[k] -= cfg.refine_lr * g(r, k);
        }
    }
    result.loss_trace.push_back(prompt_loss(e, anchor, cfg));
    result.iterates.push_back(e.vectors);
    return result;
}

std::optional<std::vector<std::size_t>> locate_anomaly_tokens(const PromptEmbedding& normal,
                                                              const PromptEmbedding& anomaly) {
    const std::size_t zn = normal.ids.size();
    const std::size_t za = anomaly.ids.size();
    std::size_t prefix = 0;
    while (prefix < zn && prefix < za && normal.ids[prefix] == anomaly.ids[prefix]) ++prefix;
    std::size_t suffix = 0;
    while (suffix < zn - prefix && suffix < za - prefix &&
           normal.ids[zn - 1 - suffix] == anomaly.ids[za - 1 - suffix]) {
        ++suffix;
    }
    std::vector<std::size_t> span;
    for (std::size_t i = prefix; i < za - suffix; ++i) {
        if (!anomaly.is_special(i)) span.push_back(i);
    }
    if (span.empty()) {
        return std::nullopt;
    }
    return span;
}

}  // namespace deltadeno
