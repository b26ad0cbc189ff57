// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "deltadeno/tensor.hpp"

namespace deltadeno {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// 8-bit PNG. Colour images are read as RGB regardless of the stored layout.
ImageGrid read_png_rgb(const std::filesystem::path& path);
void write_png_rgb(const std::filesystem::path& path, const ImageGrid& image);

// Single-channel masks stored as 0/255.
void write_png_mask(const std::filesystem::path& path, const BinaryMask& mask);
// Grey levels scaled to [0, 1]; colour files are converted to luminance.
Grid2D read_png_gray(const std::filesystem::path& path);
// Grey image from a [0, 1] map, used for plots and debugging output.
void write_png_gray(const std::filesystem::path& path, const Grid2D& values);

// Raw float32 little-endian, row-major, plus `<stem>.json` with
// {height, width, dtype, order}.
void write_f32_map(const std::filesystem::path& raw_path, const Grid2D& map);
Grid2D read_f32_map(const std::filesystem::path& raw_path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace deltadeno
