// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltadeno/tensor.hpp"

#include <algorithm>
#include <numeric>

namespace deltadeno {

std::string to_string(const Shape3& shape) {
    return std::to_string(shape.height) + "x" + std::to_string(shape.width) + "x" +
           std::to_string(shape.channels);
}

Grid2D::Grid2D(int height, int width, double fill) : height_(height), width_(width) {
    if (height <= 0 || width <= 0) {
        throw ShapeError("grid dimensions must be positive");
    }
    data_.assign(static_cast<std::size_t>(height) * width, fill);
}

Grid2D::Grid2D(int height, int width, std::vector<double> data)
    : height_(height), width_(width), data_(std::move(data)) {
    if (height <= 0 || width <= 0 || data_.size() != static_cast<std::size_t>(height) * width) {
        throw ShapeError("grid data size does not match " + std::to_string(height) + "x" +
                         std::to_string(width));
    }
}

double Grid2D::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
double Grid2D::min() const { return *std::min_element(data_.begin(), data_.end()); }
double Grid2D::max() const { return *std::max_element(data_.begin(), data_.end()); }

BinaryMask::BinaryMask(int height, int width, std::uint8_t fill) : height_(height), width_(width) {
    if (height <= 0 || width <= 0) {
        throw ShapeError("mask dimensions must be positive");
    }
    data_.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
}

std::size_t BinaryMask::pixel_count() const {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

Grid2D BinaryMask::to_grid() const {
    std::vector<double> v(data_.begin(), data_.end());
    return Grid2D(height_, width_, std::move(v));
}

}  // namespace deltadeno
