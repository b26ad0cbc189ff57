// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "deltadeno/prompt.hpp"
#include "deltadeno/promptopt.hpp"
#include "deltadeno/random.hpp"

using namespace deltadeno;

namespace {

std::vector<double> random_vector(NormalSampler& rng, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.next();
    return v;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max(scale, std::abs(b[i]));
    }
    return diff / std::max(scale, 1e-12);
}

// Longest common prefix/suffix by token id, recomputed from scratch.
std::vector<std::size_t> brute_span(const PromptEmbedding& n, const PromptEmbedding& a) {
    std::size_t pre = 0;
    while (pre < n.ids.size() && pre < a.ids.size() && n.ids[pre] == a.ids[pre]) ++pre;
    std::size_t suf = 0;
    while (suf < n.ids.size() - pre && suf < a.ids.size() - pre &&
           n.ids[n.ids.size() - 1 - suf] == a.ids[a.ids.size() - 1 - suf])
        ++suf;
    std::vector<std::size_t> out;
    for (std::size_t i = pre; i + suf < a.ids.size(); ++i)
        if (!a.is_special(i)) out.push_back(i);
    return out;
}

}  // namespace

TEST_CASE("tokenizer canonicalises and wraps prompts") {
    CHECK(canonicalize_prompt("A Photo, of a BOTTLE!") == "a photo of a bottle");
    const auto tokens = tokenize("A photo of a bottle");
    REQUIRE(tokens.size() == 7);
    CHECK(tokens.front() == kStartToken);
    CHECK(tokens.back() == kEndToken);
    CHECK(tokens[5] == "bottle");
    CHECK(tokenize("well-worn metal_nut")[2] == "metal_nut");
}

TEST_CASE("toy text encoder is deterministic and validates") {
    const ToyTextEncoder enc(5, 16);
    const PromptEmbedding e = enc.encode("a bottle");
    CHECK(e == enc.encode("A bottle."));
    CHECK(e.dim() == 16);
    CHECK(e.special_indices == std::vector<std::size_t>{0, 3});
    CHECK(e.content_key() == "a bottle");
    CHECK_THROWS(enc.encode("  ,, "));
    const ToyTextEncoder other(6, 16);
    CHECK_FALSE(other.encode("a bottle").vectors == e.vectors);
    PromptEmbedding bad = e;
    bad.anomaly_indices = {0};
    CHECK_THROWS(bad.validate());
}

TEST_CASE("anomaly-loss gradient matches central differences") {
    NormalSampler rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const auto e = random_vector(rng, 12), a = random_vector(rng, 12);
        const double lambda = 0.05 + 0.1 * trial;
        const auto g = grad_anom(e, a, lambda);
        std::vector<double> fd(e.size());
        for (std::size_t k = 0; k < e.size(); ++k) {
            auto p = e, m = e;
            p[k] += 1e-5;
            m[k] -= 1e-5;
            fd[k] = (loss_anom(p, a, lambda) - loss_anom(m, a, lambda)) / 2e-5;
        }
        CHECK(relative_error(g, fd) < 1e-5);
    }
}

TEST_CASE("anomaly loss values") {
    const std::vector<double> a{1.0, 0.0}, same{2.0, 0.0}, ortho{0.0, 1.0};
    CHECK(loss_anom(a, a, 0.3) == doctest::Approx(0.0));
    CHECK(loss_anom(same, a, 0.0) == doctest::Approx(0.0));
    CHECK(loss_anom(ortho, a, 0.5) == doctest::Approx(1.0 + 0.5 * 2.0));
}

TEST_CASE("context loss and gradient") {
    Matrix rows(3, 2);
    rows(0, 0) = 1;
    rows(1, 0) = -1;
    rows(2, 1) = 3;
    // centroid (0, 1); squared distances 2, 2, 4
    CHECK(loss_ctx(rows) == doctest::Approx(8.0 / 3.0));
    const Matrix g = grad_ctx(rows);
    CHECK(g(2, 1) == doctest::Approx(2.0 / 3.0 * 2.0));
    CHECK_THROWS(loss_ctx(Matrix(0, 2)));
}

TEST_CASE("full prompt gradient matches central differences and ignores special rows") {
    const ToyTextEncoder enc(9, 8);
    PromptEmbedding emb = enc.encode("a photo of a bottle with crack");
    emb.anomaly_indices = {6, 7};
    const auto anchor = enc.token_vector("hairline");
    const RefinementConfig cfg;
    const Matrix g = prompt_loss_gradient(emb, anchor, cfg);
    for (std::size_t d = 0; d < emb.dim(); ++d) {
        CHECK(g(0, d) == 0.0);
        CHECK(g(emb.num_tokens() - 1, d) == 0.0);
    }
    std::vector<double> analytic, fd;
    for (std::size_t r = 1; r + 1 < emb.num_tokens(); ++r) {
        for (std::size_t d = 0; d < emb.dim(); ++d) {
            PromptEmbedding p = emb, m = emb;
            p.vectors(r, d) += 1e-5;
            m.vectors(r, d) -= 1e-5;
            fd.push_back((prompt_loss(p, anchor, cfg) - prompt_loss(m, anchor, cfg)) / 2e-5);
            analytic.push_back(g(r, d));
        }
    }
    CHECK(relative_error(analytic, fd) < 1e-5);
    CHECK(context_indices(emb) == std::vector<std::size_t>{1, 2, 3, 4, 5});
}

TEST_CASE("refinement descends and keeps special rows") {
    const ToyTextEncoder enc(4, 32);
    PromptEmbedding emb = enc.encode("a photo of a bottle with crack");
    emb.anomaly_indices = {7};
    const auto anchor = distill_anchor(enc.encode("thin dark crack"));
    const RefinementResult r = refine(emb, anchor, RefinementConfig{});
    REQUIRE(r.loss_trace.size() == 11);
    REQUIRE(r.iterates.size() == 11);
    for (std::size_t i = 1; i < r.loss_trace.size(); ++i) CHECK(r.loss_trace[i] <= r.loss_trace[i - 1]);
    for (std::size_t d = 0; d < emb.dim(); ++d) {
        CHECK(r.embedding.vectors(0, d) == emb.vectors(0, d));
        CHECK(r.embedding.vectors(8, d) == emb.vectors(8, d));
    }
    CHECK(r.embedding.tokens == emb.tokens);
    RefinementConfig off;
    off.num_iters = 0;
    const RefinementResult none = refine(emb, anchor, off);
    CHECK(none.loss_trace.empty());
    CHECK(none.embedding == emb);
    CHECK_THROWS(RefinementConfig{-1.0, 1.0, 1e-2, 10}.validate());
}

TEST_CASE("anchor distillation averages content tokens") {
    const ToyTextEncoder enc(2, 6);
    const PromptEmbedding d = enc.encode("deep scratch");
    const auto anchor = distill_anchor(d);
    const auto a = enc.token_vector("deep"), b = enc.token_vector("scratch");
    double na = 0, nb = 0, nm = 0, nanchor = 0;
    std::vector<double> m(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        m[i] = 0.5 * (a[i] + b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
        nm += m[i] * m[i];
        nanchor += anchor[i] * anchor[i];
    }
    const double target = 0.5 * (std::sqrt(na) + std::sqrt(nb));
    CHECK(std::sqrt(nanchor) == doctest::Approx(target));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(anchor[i] == doctest::Approx(m[i] * target / std::sqrt(nm)));
}

TEST_CASE("anomaly tokens are the span outside the shared prefix and suffix") {
    const ToyTextEncoder enc(1, 8);
    const char* pairs[][2] = {{"a photo of a bottle", "a photo of a bottle with crack"},
                              {"a photo of a bottle", "a photo of a cracked bottle"},
                              {"a bottle", "a scratched dented bottle"},
                              {"photo of a screw", "close photo of a bent screw on table"}};
    for (const auto& pair : pairs) {
        const auto n = enc.encode(pair[0]), a = enc.encode(pair[1]);
        const auto located = locate_anomaly_tokens(n, a);
        REQUIRE(located.has_value());
        CHECK(*located == brute_span(n, a));
    }
    const auto n = enc.encode("a photo of a bottle");
    CHECK_FALSE(locate_anomaly_tokens(n, n).has_value());
    const auto located = locate_anomaly_tokens(n, enc.encode("a photo of a bottle with crack"));
    CHECK(*located == std::vector<std::size_t>{6, 7});
}
