// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "deltadeno/tensor.hpp"

namespace deltadeno {

inline constexpr std::string_view kStartToken = "<start>";
inline constexpr std::string_view kEndToken = "<end>";

// Tokenized prompt with one embedding row per token.
struct PromptEmbedding {
    std::vector<std::string> tokens;
    std::vector<std::uint64_t> ids;
    Matrix vectors;  // Z x d
    std::vector<std::size_t> anomaly_indices;
    std::vector<std::size_t> special_indices;

    std::size_t num_tokens() const { return tokens.size(); }
    std::size_t dim() const { return vectors.cols(); }
    bool is_special(std::size_t i) const;
    bool is_anomaly(std::size_t i) const;

    // Non-special tokens joined by single spaces.
    std::string content_key() const;

    // Throws if index sets overlap, fall outside [0, Z), or row counts disagree.
    void validate() const;

    bool operator==(const PromptEmbedding&) const = default;
};

// Lower-cases, strips punctuation and collapses whitespace.
std::string canonicalize_prompt(std::string_view prompt);

// Whitespace tokenizer over the canonical form, wrapped in start/end tokens.
std::vector<std::string> tokenize(std::string_view prompt);

// Deterministic per-token embedder: each token string hashes (with the seed)
// to a Gaussian vector of norm close to 1. There is no context mixing, so a
// token's row never depends on its neighbours.
class ToyTextEncoder {
public:
    ToyTextEncoder(std::uint64_t seed, int dim);

    int dim() const { return dim_; }
    std::uint64_t token_id(std::string_view token) const;
    std::vector<double> token_vector(std::string_view token) const;

    PromptEmbedding encode(std::string_view prompt) const;

private:
    std::uint64_t seed_;
    int dim_;
};

}  // namespace deltadeno
