// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltadeno/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <nlohmann/json.hpp>
#include <sstream>
#include <vector>

namespace deltadeno {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) {
        throw IoError("cannot open '" + path.string() + "': " + std::strerror(errno));
    }
    return f;
}

struct DecodedPng {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 (grey) or 3 (rgb)
    std::vector<std::uint8_t> pixels;
};

DecodedPng decode_png(const std::filesystem::path& path, bool want_gray) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw IoError("cannot read PNG '" + path.string() + "': " + image.message);
    }
    image.format = want_gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    DecodedPng out;
    out.width = static_cast<int>(image.width);
    out.height = static_cast<int>(image.height);
    out.channels = want_gray ? 1 : 3;
    out.pixels.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw IoError("cannot decode PNG '" + path.string() + "': " + msg);
    }
    return out;
}

void encode_png(const std::filesystem::path& path, int width, int height, int channels,
                const std::vector<std::uint8_t>& pixels) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr)) {
        throw IoError("cannot write PNG '" + path.string() + "': " + image.message);
    }
}

std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::filesystem::path sidecar_path(const std::filesystem::path& raw_path) {
    auto p = raw_path;
    p.replace_extension(".json");
    return p;
}

}  // namespace

ImageGrid read_png_rgb(const std::filesystem::path& path) {
    const DecodedPng png = decode_png(path, false);
    ImageGrid image(Shape3{png.height, png.width, 3});
    for (std::size_t i = 0; i < image.size(); ++i) {
        image[i] = png.pixels[i] / 255.0;
    }
    return image;
}

void write_png_rgb(const std::filesystem::path& path, const ImageGrid& image) {
    if (image.channels() != 3) {
        throw ShapeError("RGB PNG needs 3 channels, got " + std::to_string(image.channels()));
    }
    std::vector<std::uint8_t> pixels(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) pixels[i] = quantize(image[i]);
    encode_png(path, image.width(), image.height(), 3, pixels);
}

void write_png_mask(const std::filesystem::path& path, const BinaryMask& mask) {
    std::vector<std::uint8_t> pixels(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) pixels[i] = mask[i] ? 255 : 0;
    encode_png(path, mask.width(), mask.height(), 1, pixels);
}

Grid2D read_png_gray(const std::filesystem::path& path) {
    const DecodedPng png = decode_png(path, true);
    Grid2D g(png.height, png.width);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = png.pixels[i] / 255.0;
    return g;
}

void write_png_gray(const std::filesystem::path& path, const Grid2D& values) {
    std::vector<std::uint8_t> pixels(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) pixels[i] = quantize(values[i]);
    encode_png(path, values.width(), values.height(), 1, pixels);
}

void write_f32_map(const std::filesystem::path& raw_path, const Grid2D& map) {
    std::vector<std::uint8_t> bytes(map.size() * 4);
    for (std::size_t i = 0; i < map.size(); ++i) {
        auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(map[i]));
        for (int b = 0; b < 4; ++b) bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
    {
        FilePtr f = open_file(raw_path, "wb");
        if (std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size()) {
            throw IoError("short write to '" + raw_path.string() + "'");
        }
    }
    const nlohmann::ordered_json meta = {
        {"height", map.height()}, {"width", map.width()}, {"dtype", "float32-le"}, {"order", "row-major"}};
    write_text_file(sidecar_path(raw_path), meta.dump(2) + "\n");
}

Grid2D read_f32_map(const std::filesystem::path& raw_path) {
    const auto meta = nlohmann::json::parse(read_text_file(sidecar_path(raw_path)));
    if (meta.at("dtype") != "float32-le" || meta.at("order") != "row-major") {
        throw IoError("unsupported delta map layout in '" + raw_path.string() + "'");
    }
    const int h = meta.at("height").get<int>();
    const int w = meta.at("width").get<int>();
    const std::string raw = read_text_file(raw_path);
    if (raw.size() != static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 4) {
        throw IoError("delta map '" + raw_path.string() + "' has the wrong byte count");
    }
    Grid2D map(h, w);
    for (std::size_t i = 0; i < map.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[i * 4 + static_cast<std::size_t>(b)])) << (8 * b);
        }
        map[i] = std::bit_cast<float>(bits);
    }
    return map;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write '" + path.string() + "'");
    }
    out << text;
    if (!out) {
        throw IoError("short write to '" + path.string() + "'");
    }
}

}  // namespace deltadeno
