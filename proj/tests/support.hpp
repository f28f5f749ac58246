#pragma once

// Shared fixtures for the test binaries.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sauge/backbone.hpp"
#include "sauge/data.hpp"
#include "sauge/granularity.hpp"
#include "sauge/stn.hpp"
#include "sauge/trainer.hpp"

namespace sauge::testing {

inline BinaryMap random_binary(int rows, int cols, double p, std::mt19937_64& rng) {
    std::bernoulli_distribution b(p);
    BinaryMap m(rows, cols);
    for (auto& v : m.data) v = b(rng) ? 1 : 0;
    return m;
}

inline ProbMap random_prob(int rows, int cols, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    ProbMap m(rows, cols);
    for (auto& v : m.data) v = u(rng);
    return m;
}

inline EdgeMapSet random_edge_maps(int rows, int cols, std::mt19937_64& rng) {
    return {random_prob(rows, cols, rng), random_prob(rows, cols, rng), random_prob(rows, cols, rng),
            random_prob(rows, cols, rng)};
}

inline Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& v : t.values()) v = u(rng);
    return t;
}

/// Relative agreement of an analytic and a finite-difference derivative. Below
/// 1e-8 absolute difference both are treated as equal (difference-quotient noise).
inline bool gradients_agree(double analytic, double numeric, double rel) {
    const double diff = std::abs(analytic - numeric);
    if (diff < 1e-8) return true;
    return diff / std::max(std::abs(analytic), std::abs(numeric)) <= rel;
}

/// Pixels on the lower/right side of a change between the region set and the rest.
inline BinaryMap region_boundary(const Grid<int>& labels, const std::vector<int>& regions) {
    auto in = [&](int l) {
        for (int r : regions)
            if (r == l) return true;
        return false;
    };
    BinaryMap b(labels.rows, labels.cols);
    for (int y = 0; y < labels.rows; ++y)
        for (int x = 0; x < labels.cols; ++x) {
            const int l = labels(y, x);
            const bool up = y > 0 && in(labels(y - 1, x)) != in(l);
            const bool left = x > 0 && in(labels(y, x - 1)) != in(l);
            if (up || left) b(y, x) = 1;
        }
    return b;
}

/// Synthetic image of three nested-contrast shapes with three nested annotators:
/// the first traces the high-contrast rectangle, the second adds the disc, the
/// third adds the faint bar.
inline Sample synthetic_sample(const std::string& id, int rows, int cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> jitter(-2, 2);
    Grid<int> lab(rows, cols, 0);
    const int r0 = rows / 6 + jitter(rng), r1 = rows * 5 / 6 + jitter(rng);
    const int c0 = cols / 6 + jitter(rng), c1 = cols / 2 + jitter(rng);
    const double cy = rows / 2.0 + jitter(rng), cx = cols * 0.72 + jitter(rng), rad = std::min(rows, cols) / 5.0;
    const int br = rows / 3 + jitter(rng);
    for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x) {
            if (y >= r0 && y < r1 && x >= c0 && x < c1) lab(y, x) = 1;
            if ((y - cy) * (y - cy) + (x - cx) * (x - cx) < rad * rad) lab(y, x) = 2;
            if (lab(y, x) == 1 && y >= br && y < br + 3) lab(y, x) = 3;
        }
    const double colours[4][3] = {{0.1, 0.1, 0.15}, {0.9, 0.85, 0.8}, {0.2, 0.6, 0.3}, {0.75, 0.7, 0.65}};
    Sample s;
    s.id = id;
    s.image = Image({3, rows, cols});
    for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x)
            for (int c = 0; c < 3; ++c) s.image.at(c, y, x) = colours[lab(y, x)][c];
    const BinaryMap a = region_boundary(lab, {1, 3});
    const BinaryMap b = logical_or(a, region_boundary(lab, {2}));
    BinaryMap c = logical_or(b, region_boundary(lab, {3}));
    s.annotations.labels = {b, a, c};  // deliberately unsorted
    return s;
}

/// Small toy-provider training configuration for fast tests.
inline TrainConfig tiny_train_config(int image_side) {
    KeyValues kv;
    kv.set("provider.kind", "toy");
    kv.set("provider.seed", "7");
    kv.set("provider.grid_side", "2");
    kv.set("provider.feature_side", std::to_string(image_side / 2));
    kv.set("provider.shallow_channels", "8");
    kv.set("provider.embed_channels", "8");
    kv.set("provider.mask_channels", "4");
    kv.set("provider.mask_side", std::to_string(image_side / 2));
    kv.set("stn.c1", "8");
    kv.set("stn.c2", "2");
    kv.set("stn.ch", "8");
    kv.set("stn.heads", "2");
    kv.set("stn.ffb_depth", "1");
    kv.set("train.seed", "3");
    kv.set("train.batch_size", "2");
    kv.set("train.epochs", "6");
    return TrainConfig::from_key_values(kv);
}

}  // namespace sauge::testing
