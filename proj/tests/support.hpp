// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <string>

#include "deltadeno/tensor.hpp"

namespace testing {

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("deltadeno_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// Smooth colour pattern, constant on 2x2 blocks so the pooled codec round-trips it.
inline deltadeno::ImageGrid pattern_image(int height = 64, int width = 64, int phase = 0) {
    deltadeno::ImageGrid img(deltadeno::Shape3{height, width, 3});
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const int by = y / 2, bx = x / 2;
            img.at(y, x, 0) = 0.5 + 0.4 * std::sin(0.21 * by + phase);
            img.at(y, x, 1) = 0.5 + 0.4 * std::cos(0.17 * bx - phase);
            img.at(y, x, 2) = 0.25 + 0.5 * ((bx + by + phase) % 7) / 6.0;
        }
    }
    return img;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Relative path -> content hash for every regular file below `root`.
inline std::map<std::string, std::uint64_t> tree_hashes(const std::filesystem::path& root) {
    std::map<std::string, std::uint64_t> out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).string()] = fnv1a(slurp(e.path()));
    }
    return out;
}

}  // namespace testing
