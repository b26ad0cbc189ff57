// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "deltadeno/tensor.hpp"

namespace deltadeno {

enum class DeltaProvenance { Mid, Final };

// Normalized delta map with values in [0, 1].
struct DeltaMap {
    Grid2D values;
    DeltaProvenance provenance = DeltaProvenance::Final;
};

struct CleanParams {
    int kernel = 3;
    int min_component = 4;

    bool operator==(const CleanParams&) const = default;
};

struct MaskParams {
    double smooth_sigma = 1.0;
    CleanParams clean;
};

// Linear-interpolated percentile (q in [0, 100]) of the values.
double percentile(std::span<const double> values, double q);

// Robust min-max: clip to the 1st/99th percentiles then map affinely onto
// [0, 1]. A degenerate range gives all zeros.
DeltaMap normalize(const Grid2D& accumulated, DeltaProvenance provenance = DeltaProvenance::Final);

// Separable sampled-Gaussian blur, radius round(4 sigma), reflective borders.
DeltaMap smooth(const DeltaMap& map, double sigma);
std::vector<double> gaussian_kernel(double sigma);

// 1 where value > tau.
BinaryMask threshold(const DeltaMap& map, double tau);

// Open then close with a kernel x kernel square (neighbourhoods clipped at the
// border), then drop 4-connected components smaller than min_component.
BinaryMask clean(const BinaryMask& mask, const CleanParams& params);
BinaryMask erode(const BinaryMask& mask, int kernel);
BinaryMask dilate(const BinaryMask& mask, int kernel);
BinaryMask remove_small_components(const BinaryMask& mask, int min_component);

// normalize -> smooth -> threshold -> clean
BinaryMask extract_mask(const Grid2D& accumulated, double tau, const MaskParams& params,
                        DeltaProvenance provenance = DeltaProvenance::Final);

// Nearest-neighbour upsample by an integer factor per axis.
BinaryMask to_image_mask(const BinaryMask& mask, int image_height, int image_width);

}  // namespace deltadeno
