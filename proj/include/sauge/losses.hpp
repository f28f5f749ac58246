#pragma once

#include "sauge/backbone.hpp"
#include "sauge/granularity.hpp"
#include "sauge/stn.hpp"

namespace sauge {

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kDefaultLambda = 0.1;  // weight of the diversity loss
inline constexpr double kDefaultBeta = 0.5;    // weight of the side loss

/// A scalar loss and its gradient with respect to one prediction map.
struct LossValue {
    double value = 0.0;
    ProbMap grad;
};

/// Loss over the three side outputs with per-map gradients.
struct SideLossValue {
    double value = 0.0;
    ProbMap grad_coarse;
    ProbMap grad_medium;
    ProbMap grad_fine;
};

struct LossBreakdown {
    double l_side = 0.0;
    double l_differ = 0.0;
    double l_guide = 0.0;
    double l_total = 0.0;
    bool operator==(const LossBreakdown&) const = default;
};

/// ξ = |negatives| / |all pixels| of the target (1 when there are no positives).
double balance_weight(const BinaryMap& target);

/// Class-balanced BCE summed over pixels:
///   -Σ_j [ ξ y_j log p_j + (1 - ξ)(1 - y_j) log(1 - p_j) ],
/// with p clamped to [ε, 1 - ε]. Optional per-pixel weights multiply each term.
LossValue balanced_bce(const ProbMap& pred, const BinaryMap& target, const ProbMap* pixel_weights = nullptr);

/// Sum of balanced BCE of each side output against its ladder level.
SideLossValue side_loss(const EdgeMapSet& maps, const GranularityLabels& labels);

/// -Σ over pairs (c,m), (c,f), (m,f) of Σ_j |p_i - p_k| · (y_i XOR y_k).
/// Label masks are constants; the subgradient of |·| at 0 is 0.
SideLossValue differ_loss(const EdgeMapSet& maps, const GranularityLabels& labels);

/// Per-pixel weights exp(ψ + ω) with ψ = -m·(m XOR y)·freq and ω = cos(soft).
/// Empty guidance means no mask edges (ψ = 0).
ProbMap guide_weights(const BinaryMap& consensus, const ProbMap& soft_consensus, const MaskGuidance& guidance);

/// Mask-guided balanced BCE on the fused output, weights applied per pixel.
LossValue guide_loss(const ProbMap& pred_fused, const BinaryMap& consensus, const ProbMap& soft_consensus,
                     const MaskGuidance& guidance);

/// l_total = l_guide + λ·l_differ + β·l_side.
LossBreakdown total_loss(double l_guide, double l_differ, double l_side, double lambda = kDefaultLambda,
                         double beta = kDefaultBeta);

}  // namespace sauge
