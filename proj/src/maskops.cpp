// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltadeno/maskops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace deltadeno {

double percentile(std::span<const double> values, double q) {
    if (values.empty()) {
        throw std::invalid_argument("percentile of an empty set");
    }
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

DeltaMap normalize(const Grid2D& accumulated, DeltaProvenance provenance) {
    for (double v : accumulated.values()) {
        if (!(v >= 0.0)) {
            throw std::invalid_argument("delta accumulator must be nonnegative");
        }
    }
    DeltaMap out{Grid2D(accumulated.height(), accumulated.width()), provenance};
    const double lo = percentile(accumulated.values(), 1.0);
    const double hi = percentile(accumulated.values(), 99.0);
    if (!(hi > lo)) {
        return out;
    }
    const double range = hi - lo;
    for (std::size_t i = 0; i < accumulated.size(); ++i) {
        out.values[i] = (std::clamp(accumulated[i], lo, hi) - lo) / range;
    }
    return out;
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma >= 0.0)) {
        throw std::invalid_argument("smoothing sigma must be nonnegative");
    }
    if (sigma == 0.0) {
        return {1.0};
    }
    const int radius = std::max(1, static_cast<int>(4.0 * sigma + 0.5));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        total += v;
    }
    for (double& v : k) v /= total;
    return k;
}

namespace {

// Reflect about the edge, repeating the border sample (d c b a | a b c d).
int reflect(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

}  // namespace

DeltaMap smooth(const DeltaMap& map, double sigma) {
    const std::vector<double> kernel = gaussian_kernel(sigma);
    if (kernel.size() == 1) {
        return map;
    }
    const int radius = static_cast<int>(kernel.size() / 2);
    const int h = map.values.height();
    const int w = map.values.width();
    Grid2D tmp(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                s += kernel[static_cast<std::size_t>(k + radius)] * map.values.at(y, reflect(x + k, w));
            }
            tmp.at(y, x) = s;
        }
    }
    DeltaMap out{Grid2D(h, w), map.provenance};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                s += kernel[static_cast<std::size_t>(k + radius)] * tmp.at(reflect(y + k, h), x);
            }
            out.values.at(y, x) = std::clamp(s, 0.0, 1.0);
        }
    }
    return out;
}

BinaryMask threshold(const DeltaMap& map, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) {
        throw std::invalid_argument("threshold must lie in [0, 1]");
    }
    BinaryMask out(map.values.height(), map.values.width());
    for (int y = 0; y < out.height(); ++y) {
        for (int x = 0; x < out.width(); ++x) out.set(y, x, map.values.at(y, x) > tau);
    }
    return out;
}

namespace {

BinaryMask morph(const BinaryMask& mask, int kernel, bool dilation) {
    if (kernel < 1 || kernel % 2 == 0) {
        throw std::invalid_argument("structuring element size must be odd and >= 1");
    }
    const int r = kernel / 2;
    BinaryMask out(mask.height(), mask.width());
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            bool value = !dilation;
            for (int dy = -r; dy <= r; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= mask.height()) continue;
                for (int dx = -r; dx <= r; ++dx) {
                    const int xx = x + dx;
                    if (xx < 0 || xx >= mask.width()) continue;
                    if (dilation && mask.at(yy, xx)) value = true;
                    if (!dilation && !mask.at(yy, xx)) value = false;
                }
            }
            out.set(y, x, value);
        }
    }
    return out;
}

}  // namespace

BinaryMask erode(const BinaryMask& mask, int kernel) { return morph(mask, kernel, false); }
BinaryMask dilate(const BinaryMask& mask, int kernel) { return morph(mask, kernel, true); }

BinaryMask remove_small_components(const BinaryMask& mask, int min_component) {
    if (min_component < 0) {
        throw std::invalid_argument("min_component must be nonnegative");
    }
    const int h = mask.height();
    const int w = mask.width();
    BinaryMask out = mask;
    std::vector<int> label(mask.size(), -1);
    std::vector<int> stack;
    std::vector<int> members;
    for (int start = 0; start < h * w; ++start) {
        if (!mask[static_cast<std::size_t>(start)] || label[static_cast<std::size_t>(start)] >= 0) continue;
        members.clear();
        stack.push_back(start);
        label[static_cast<std::size_t>(start)] = start;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            members.push_back(p);
            const int py = p / w;
            const int px = p % w;
            const int ny[4] = {py - 1, py + 1, py, py};
            const int nx[4] = {px, px, px - 1, px + 1};
            for (int k = 0; k < 4; ++k) {
                if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
                const int q = ny[k] * w + nx[k];
                if (mask[static_cast<std::size_t>(q)] && label[static_cast<std::size_t>(q)] < 0) {
                    label[static_cast<std::size_t>(q)] = start;
                    stack.push_back(q);
                }
            }
        }
        if (static_cast<int>(members.size()) < min_component) {
            for (int p : members) out.set(p / w, p % w, false);
        }
    }
    return out;
}

BinaryMask clean(const BinaryMask& mask, const CleanParams& params) {
    const BinaryMask opened = dilate(erode(mask, params.kernel), params.kernel);
    const BinaryMask closed = erode(dilate(opened, params.kernel), params.kernel);
    return remove_small_components(closed, params.min_component);
}

BinaryMask extract_mask(const Grid2D& accumulated, double tau, const MaskParams& params,
                        DeltaProvenance provenance) {
    const DeltaMap normalized = normalize(accumulated, provenance);
    const DeltaMap smoothed = smooth(normalized, params.smooth_sigma);
    return clean(threshold(smoothed, tau), params.clean);
}

BinaryMask to_image_mask(const BinaryMask& mask, int image_height, int image_width) {
    if (image_height <= 0 || image_width <= 0 || image_height % mask.height() != 0 ||
        image_width % mask.width() != 0) {
        throw std::invalid_argument("image size must be an integer multiple of the mask size");
    }
    const int fy = image_height / mask.height();
    const int fx = image_width / mask.width();
    BinaryMask out(image_height, image_width);
    for (int y = 0; y < image_height; ++y) {
        for (int x = 0; x < image_width; ++x) out.set(y, x, mask.at(y / fy, x / fx));
    }
    return out;
}

}  // namespace deltadeno
