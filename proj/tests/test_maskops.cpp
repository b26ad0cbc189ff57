// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "deltadeno/maskops.hpp"
#include "deltadeno/random.hpp"

using namespace deltadeno;

namespace {

BinaryMask random_mask(NormalSampler& rng, int h, int w, double p) {
    BinaryMask m(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m.set(y, x, rng.uniform() < p);
    return m;
}

// Min/max filter over the square neighbourhood, positions outside the grid ignored.
BinaryMask brute_morph(const BinaryMask& m, int k, bool erode_op) {
    const int r = k / 2;
    BinaryMask out(m.height(), m.width());
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            bool all = true, any = false;
            for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || xx < 0 || yy >= m.height() || xx >= m.width()) continue;
                    all = all && m.at(yy, xx);
                    any = any || m.at(yy, xx);
                }
            }
            out.set(y, x, erode_op ? all : any);
        }
    }
    return out;
}

// Flood-fill component sizes, 4-connected.
BinaryMask brute_components(const BinaryMask& m, int min_size) {
    const int h = m.height(), w = m.width();
    std::vector<int> label(static_cast<std::size_t>(h * w), -1);
    std::vector<int> sizes;
    for (int s = 0; s < h * w; ++s) {
        if (!m[s] || label[s] >= 0) continue;
        const int id = static_cast<int>(sizes.size());
        sizes.push_back(0);
        std::vector<int> stack{s};
        label[s] = id;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            ++sizes[id];
            const int y = p / w, x = p % w;
            const int nbr[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
            for (const auto& n : nbr) {
                if (n[0] < 0 || n[1] < 0 || n[0] >= h || n[1] >= w) continue;
                const int q = n[0] * w + n[1];
                if (m[q] && label[q] < 0) {
                    label[q] = id;
                    stack.push_back(q);
                }
            }
        }
    }
    BinaryMask out(h, w);
    for (int s = 0; s < h * w; ++s) out.set(s / w, s % w, label[s] >= 0 && sizes[label[s]] >= min_size);
    return out;
}

}  // namespace

TEST_CASE("percentile interpolates between order statistics") {
    const std::vector<double> v{5, 1, 4, 2, 3};
    CHECK(percentile(v, 0.0) == 1.0);
    CHECK(percentile(v, 100.0) == 5.0);
    CHECK(percentile(v, 50.0) == 3.0);
    CHECK(percentile(v, 10.0) == doctest::Approx(1.4));
    CHECK(percentile(v, 99.0) == doctest::Approx(4.96));
    CHECK_THROWS(percentile(std::vector<double>{}, 50.0));
}

TEST_CASE("robust normalisation") {
    std::vector<double> data(100);
    for (int i = 0; i < 100; ++i) data[i] = i;
    data[99] = 1e6;
    const DeltaMap n = normalize(Grid2D(10, 10, data), DeltaProvenance::Mid);
    CHECK(n.provenance == DeltaProvenance::Mid);
    const double p1 = 0.99, p99 = 98.0 + 0.01 * (1e6 - 98.0);
    CHECK(n.values[50] == doctest::Approx((50.0 - p1) / (p99 - p1)));
    CHECK(n.values[0] == 0.0);
    CHECK(n.values[99] == 1.0);
    CHECK(normalize(Grid2D(3, 3, 2.0)).values.max() == 0.0);
    CHECK_THROWS(normalize(Grid2D(2, 2, -1.0)));
}

TEST_CASE("gaussian kernel and impulse response") {
    const auto k = gaussian_kernel(1.0);
    REQUIRE(k.size() == 9);
    double sum = 0.0;
    for (double v : k) sum += v;
    CHECK(sum == doctest::Approx(1.0));
    CHECK(k[4] / k[5] == doctest::Approx(std::exp(0.5)));
    CHECK(gaussian_kernel(0.0) == std::vector<double>{1.0});

    Grid2D impulse(15, 15, 0.0);
    impulse.at(7, 7) = 1.0;
    const DeltaMap s = smooth(DeltaMap{impulse, DeltaProvenance::Final}, 1.0);
    for (int dy = -4; dy <= 4; ++dy)
        for (int dx = -4; dx <= 4; ++dx) CHECK(s.values.at(7 + dy, 7 + dx) == doctest::Approx(k[dy + 4] * k[dx + 4]));
    // Reflection at the border keeps the total mass.
    Grid2D corner(6, 6, 0.0);
    corner.at(0, 0) = 1.0;
    CHECK(smooth(DeltaMap{corner, DeltaProvenance::Final}, 1.0).values.sum() == doctest::Approx(1.0));
}

TEST_CASE("threshold is strict") {
    const Grid2D g(1, 3, std::vector<double>{0.6, 0.61, 0.2});
    const BinaryMask m = threshold(DeltaMap{g, DeltaProvenance::Mid}, 0.6);
    CHECK_FALSE(m.at(0, 0));
    CHECK(m.at(0, 1));
    CHECK_THROWS(threshold(DeltaMap{g, DeltaProvenance::Mid}, 1.5));
}

TEST_CASE("morphology matches brute force") {
    NormalSampler rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const BinaryMask m = random_mask(rng, 9 + trial % 5, 11, 0.3 + 0.02 * trial);
        for (int k : {1, 3, 5}) {
            CHECK(erode(m, k) == brute_morph(m, k, true));
            CHECK(dilate(m, k) == brute_morph(m, k, false));
        }
        for (int min_size : {1, 3, 6}) CHECK(remove_small_components(m, min_size) == brute_components(m, min_size));
        const CleanParams p{3, 4};
        CHECK(clean(m, p) == brute_components(brute_morph(brute_morph(brute_morph(brute_morph(m, 3, true), 3, false),
                                                                      3, false),
                                                          3, true),
                                              4));
    }
}

TEST_CASE("extract_mask recovers a rectangle") {
    Grid2D s(32, 32, 0.0);
    for (int y = 10; y < 20; ++y)
        for (int x = 5; x < 15; ++x) s.at(y, x) = 3.0;
    const BinaryMask m = extract_mask(s, 0.35, MaskParams{}, DeltaProvenance::Final);
    CHECK(m.pixel_count() >= 90);
    CHECK(m.at(15, 10));
    CHECK_FALSE(m.at(0, 0));
    CHECK(extract_mask(Grid2D(32, 32, 0.0), 0.35, MaskParams{}, DeltaProvenance::Final).empty_mask());
}

TEST_CASE("mask upsampling") {
    BinaryMask m(2, 2);
    m.set(0, 1, true);
    const BinaryMask up = to_image_mask(m, 4, 4);
    CHECK(up.pixel_count() == 4);
    CHECK(up.at(1, 3));
    CHECK_FALSE(up.at(2, 3));
    CHECK_THROWS(to_image_mask(m, 5, 4));
}
