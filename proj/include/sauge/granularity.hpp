#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "sauge/stn.hpp"
#include "sauge/tensor.hpp"

namespace sauge {

/// N >= 1 binary edge annotations of one image, one per annotator.
struct AnnotationSet {
    std::vector<BinaryMap> labels;

    int rows() const { return labels.empty() ? 0 : labels.front().rows; }
    int cols() const { return labels.empty() ? 0 : labels.front().cols; }
    /// Throws InputError if empty or non-binary, DimensionError on unequal shapes.
    void validate() const;
};

/// Nested pseudo labels: coarse <= medium <= fine pointwise.
struct GranularityLabels {
    BinaryMap coarse;
    BinaryMap medium;
    BinaryMap fine;
};

/// One Gaussian draw of the consensus label.
struct ConsensusSample {
    BinaryMap label;      // Y^u = [soft > zeta]
    ProbMap soft;         // Ỹ^u, clipped to [0, 1]
    ProbMap mean;         // μ_Y
    ProbMap stddev;       // σ_Y (population)
};

struct LabelLadder {
    GranularityLabels levels;
    ConsensusSample consensus;
    double threshold = 0.2;  // ζ
};

/// Annotations sorted by edge count (ties keep annotator order), then
/// coarse = first, medium = coarse OR median-rank, fine = medium OR last.
GranularityLabels build_ladder(const AnnotationSet& ann);

/// Per-pixel independent Gaussian N(μ, σ) fitted over the annotators; the draw is
/// clipped to [0, 1] and thresholded at `zeta` (0 < zeta < 1).
ConsensusSample sample_consensus(const AnnotationSet& ann, double zeta, std::mt19937_64& rng);
ConsensusSample sample_consensus(const AnnotationSet& ann, double zeta, std::uint64_t seed);

LabelLadder make_label_ladder(const AnnotationSet& ann, double zeta, std::mt19937_64& rng);

/// Piecewise-linear blend of the side outputs at granularity alpha in [0, 1]:
/// coarse->medium on [0, 0.5], medium->fine on (0.5, 1].
ProbMap blend(const EdgeMapSet& maps, double alpha);

/// Granularities k / (m - 1), k = 0..m-1 (m >= 2).
std::vector<double> sweep_alphas(int m);
std::vector<ProbMap> candidate_sweep(const EdgeMapSet& maps, int m);

}  // namespace sauge
