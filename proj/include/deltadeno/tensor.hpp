// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deltadeno {

struct Shape3 {
    int height = 0;
    int width = 0;
    int channels = 0;

    std::size_t size() const {
        return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
               static_cast<std::size_t>(channels);
    }
    bool operator==(const Shape3&) const = default;
};

std::string to_string(const Shape3& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Height x width x channels array, HWC layout. The tag keeps latents and
// images from being mixed up at compile time.
template <class Tag>
class Grid3 {
public:
    Grid3() = default;
    explicit Grid3(Shape3 shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {
        if (shape.height <= 0 || shape.width <= 0 || shape.channels <= 0) {
            throw ShapeError("grid dimensions must be positive, got " + to_string(shape));
        }
    }
    Grid3(Shape3 shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape.size()) {
            throw ShapeError("grid data size does not match " + to_string(shape));
        }
    }

    const Shape3& shape() const { return shape_; }
    int height() const { return shape_.height; }
    int width() const { return shape_.width; }
    int channels() const { return shape_.channels; }
    std::size_t size() const { return data_.size(); }

    double& at(int y, int x, int c) { return data_[index(y, x, c)]; }
    double at(int y, int x, int c) const { return data_[index(y, x, c)]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    bool operator==(const Grid3&) const = default;

private:
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(shape_.width) +
                static_cast<std::size_t>(x)) *
                   static_cast<std::size_t>(shape_.channels) +
               static_cast<std::size_t>(c);
    }

    Shape3 shape_{};
    std::vector<double> data_;
};

struct LatentTag {};
struct ImageTag {};
using LatentGrid = Grid3<LatentTag>;
// Pixel values in [0, 1].
using ImageGrid = Grid3<ImageTag>;

// Single-channel real map (delta accumulators, soft priors).
class Grid2D {
public:
    Grid2D() = default;
    Grid2D(int height, int width, double fill = 0.0);
    Grid2D(int height, int width, std::vector<double> data);

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }

    double& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    double at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    double sum() const;
    double min() const;
    double max() const;

    bool operator==(const Grid2D&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

// Strictly binary mask; values are 0 or 1.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int height, int width, std::uint8_t fill = 0);

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }

    std::uint8_t at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    void set(int y, int x, bool on) { data_[static_cast<std::size_t>(y) * width_ + x] = on ? 1 : 0; }
    std::uint8_t operator[](std::size_t i) const { return data_[i]; }
    std::span<const std::uint8_t> values() const { return data_; }

    std::size_t pixel_count() const;
    bool empty_mask() const { return pixel_count() == 0; }
    Grid2D to_grid() const;

    bool operator==(const BinaryMask&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> data_;
};

// Row-major dense matrix used for embeddings and attention logits.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> values() const { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

template <class Tag>
void require_same_shape(const Grid3<Tag>& a, const Grid3<Tag>& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
}

}  // namespace deltadeno
