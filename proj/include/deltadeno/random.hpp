// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "deltadeno/tensor.hpp"

namespace deltadeno {

// Gaussian source with a fixed sampling algorithm (Box-Muller over mt19937_64),
// so draws do not depend on the standard library's distribution implementation.
class NormalSampler {
public:
    explicit NormalSampler(std::uint64_t seed) : engine_(seed) {}

    double next();
    double uniform();  // [0, 1)
    std::uint64_t bits() { return engine_(); }

    LatentGrid latent(const Shape3& shape);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t fnv1a64(std::string_view text);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace deltadeno
