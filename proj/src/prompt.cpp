// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltadeno/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "deltadeno/random.hpp"

namespace deltadeno {

bool PromptEmbedding::is_special(std::size_t i) const {
    return std::find(special_indices.begin(), special_indices.end(), i) != special_indices.end();
}

bool PromptEmbedding::is_anomaly(std::size_t i) const {
    return std::find(anomaly_indices.begin(), anomaly_indices.end(), i) != anomaly_indices.end();
}

std::string PromptEmbedding::content_key() const {
    std::string key;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (is_special(i)) continue;
        if (!key.empty()) key += ' ';
        key += tokens[i];
    }
    return key;
}

void PromptEmbedding::validate() const {
    const std::size_t z = tokens.size();
    if (ids.size() != z || vectors.rows() != z) {
        throw std::invalid_argument("prompt embedding rows do not match token count");
    }
    for (std::size_t i : anomaly_indices) {
        if (i >= z) throw std::out_of_range("anomaly index out of range");
        if (is_special(i)) throw std::invalid_argument("anomaly and special indices overlap");
    }
    for (std::size_t i : special_indices) {
        if (i >= z) throw std::out_of_range("special index out of range");
    }
}

std::string canonicalize_prompt(std::string_view prompt) {
    std::string out;
    bool pending_space = false;
    for (char raw : prompt) {
        const auto ch = static_cast<unsigned char>(raw);
        if (std::isalnum(ch) || ch == '_' || ch == '-') {
            if (pending_space && !out.empty()) out += ' ';
            pending_space = false;
            out += static_cast<char>(std::tolower(ch));
        } else {
            pending_space = true;
        }
    }
    return out;
}

std::vector<std::string> tokenize(std::string_view prompt) {
    std::vector<std::string> tokens{std::string(kStartToken)};
    std::istringstream in(canonicalize_prompt(prompt));
    std::string word;
    while (in >> word) {
        tokens.push_back(word);
    }
    tokens.emplace_back(kEndToken);
    return tokens;
}

ToyTextEncoder::ToyTextEncoder(std::uint64_t seed, int dim) : seed_(seed), dim_(dim) {
    if (dim <= 0) {
        throw std::invalid_argument("embedding dimension must be positive");
    }
}

std::uint64_t ToyTextEncoder::token_id(std::string_view token) const { return fnv1a64(token); }

std::vector<double> ToyTextEncoder::token_vector(std::string_view token) const {
    NormalSampler rng(mix_seed(seed_, token_id(token)));
    std::vector<double> v(static_cast<std::size_t>(dim_));
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
    for (double& x : v) {
        x = rng.next() * scale;
    }
    return v;
}

PromptEmbedding ToyTextEncoder::encode(std::string_view prompt) const {
    PromptEmbedding e;
    e.tokens = tokenize(prompt);
    if (e.tokens.size() <= 2) {
        throw std::invalid_argument("prompt is empty");
    }
    e.vectors = Matrix(e.tokens.size(), static_cast<std::size_t>(dim_));
    for (std::size_t i = 0; i < e.tokens.size(); ++i) {
        e.ids.push_back(token_id(e.tokens[i]));
        const auto v = token_vector(e.tokens[i]);
        std::copy(v.begin(), v.end(), e.vectors.row(i).begin());
    }
    e.special_indices = {0, e.tokens.size() - 1};
    return e;
}

}  // namespace deltadeno
