#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sauge/granularity.hpp"
#include "sauge/tensor.hpp"

namespace sauge {

struct EvalConfig {
    double tolerance = 0.0075;  // fraction of the image diagonal
    int thresholds = 99;        // evenly spaced in (0, 1): k / (thresholds + 1)
    bool apply_nms = true;
    int workers = 1;

    static EvalConfig nyud() { return EvalConfig{0.011, 99, true, 1}; }
    void validate() const;
    std::vector<double> threshold_values() const;
};

/// Match counts of one binarized prediction against an annotation set.
///   tp         predicted pixels matched to some annotator (each annotator pixel used once)
///   fp         predicted pixels left unmatched
///   gt_matched Σ over annotators of matched annotator pixels
///   fn         Σ over annotators of unmatched annotator pixels
struct MatchCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t gt_matched = 0;
    std::int64_t fn = 0;

    std::int64_t predicted() const { return tp + fp; }
    std::int64_t gt_total() const { return gt_matched + fn; }
    MatchCounts& operator+=(const MatchCounts& o);
    bool operator==(const MatchCounts&) const = default;
};

struct PrecisionRecall {
    double precision = 0.0;
    double recall = 0.0;
    double f = 0.0;
};
PrecisionRecall score(const MatchCounts& c);

/// Non-maximum suppression along the edge normal. The normal is the Hessian
/// eigenvector of most negative curvature of the Gaussian-smoothed map (σ = 1).
/// A pixel is zeroed if a neighbour one step along the normal (bilinear) is larger.
ProbMap nms_thin(const ProbMap& prob);

/// Cardinality of a maximum one-to-one matching between `a` and `b` pixels
/// within Euclidean distance `d_max` (Hopcroft-Karp).
std::int64_t max_matching(const BinaryMap& a, const BinaryMap& b, double d_max);

MatchCounts correspond(const BinaryMap& pred, const std::vector<BinaryMap>& gts, double d_max);

/// Maximum matching distance in pixels for an image of the given size.
double match_radius(const EvalConfig& cfg, int rows, int cols);

struct EvalReport {
    std::vector<double> thresholds;
    std::vector<double> precision;
    std::vector<double> recall;
    std::vector<double> f;
    double ods_f = 0.0;
    double ods_threshold = 0.0;
    double ois_f = 0.0;
    double ois_precision = 0.0;
    double ois_recall = 0.0;
    double ap = 0.0;
    std::vector<double> image_best_threshold;
    std::vector<double> image_best_f;
    /// Best-match only: candidate chosen for each image at its best threshold.
    std::vector<int> image_selected_candidate;
};

/// Per-image, per-threshold counts; the input to the aggregation step.
using CountTable = std::vector<std::vector<MatchCounts>>;  // [image][threshold]

/// ODS / OIS / AP from a count table.
EvalReport aggregate(const CountTable& counts, const std::vector<double>& thresholds);

/// Area under the precision-recall curve: precision interpolated linearly over
/// unique recall values (max precision per recall) at recall = 0, 0.01, ..., 1;
/// points outside the observed recall range contribute 0.
double average_precision(const std::vector<double>& recall, const std::vector<double>& precision);

EvalReport evaluate(const std::vector<ProbMap>& preds, const std::vector<AnnotationSet>& gts, const EvalConfig& cfg);

/// For each image and threshold, uses the candidate with the highest image F
/// (lowest index on ties).
EvalReport best_match_evaluate(const std::vector<std::vector<ProbMap>>& candidates, const std::vector<AnnotationSet>& gts,
                               const EvalConfig& cfg);

/// Structured report (JSON) and PR-curve CSV (threshold,precision,recall,f).
std::string report_to_json(const EvalReport& r);
std::string report_to_csv(const EvalReport& r);

}  // namespace sauge
