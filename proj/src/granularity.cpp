#include "sauge/granularity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sauge/errors.hpp"

namespace sauge {

void AnnotationSet::validate() const {
    if (labels.empty()) throw InputError("annotation set is empty");
    for (const auto& l : labels) {
        require_same_grid(l, labels.front(), "annotation set");
        for (auto v : l.data)
            if (v > 1) throw InputError("annotation labels must be binary");
    }
}

GranularityLabels build_ladder(const AnnotationSet& ann) {
    ann.validate();
    const std::size_t n = ann.labels.size();
    std::vector<std::size_t> counts(n), order(n);
    for (std::size_t i = 0; i < n; ++i) counts[i] = popcount(ann.labels[i]);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] < counts[b]; });

    GranularityLabels out;
    out.coarse = ann.labels[order.front()];
    const std::size_t median_rank = (n + 1) / 2;  // ceil(N / 2), 1-based
    out.medium = logical_or(out.coarse, ann.labels[order[median_rank - 1]]);
    out.fine = logical_or(out.medium, ann.labels[order.back()]);
    return out;
}

ConsensusSample sample_consensus(const AnnotationSet& ann, double zeta, std::mt19937_64& rng) {
    if (!(zeta > 0.0 && zeta < 1.0)) throw ConfigError("consensus threshold zeta must lie in (0, 1)");
    ann.validate();
    const int rows = ann.rows(), cols = ann.cols();
    const double n = static_cast<double>(ann.labels.size());
    ConsensusSample s{BinaryMap(rows, cols), ProbMap(rows, cols), ProbMap(rows, cols), ProbMap(rows, cols)};
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t j = 0; j < s.mean.size(); ++j) {
        double sum = 0.0;
        for (const auto& l : ann.labels) sum += l.data[j];
        const double mu = sum / n;
        double var = 0.0;
        for (const auto& l : ann.labels) var += (l.data[j] - mu) * (l.data[j] - mu);
        const double sigma = std::sqrt(var / n);
        s.mean.data[j] = mu;
        s.stddev.data[j] = sigma;
        const double z = normal(rng);
        const double soft = sigma > 0.0 ? std::clamp(mu + sigma * z, 0.0, 1.0) : mu;
        s.soft.data[j] = soft;
        s.label.data[j] = soft > zeta ? 1 : 0;
    }
    return s;
}

ConsensusSample sample_consensus(const AnnotationSet& ann, double zeta, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sample_consensus(ann, zeta, rng);
}

LabelLadder make_label_ladder(const AnnotationSet& ann, double zeta, std::mt19937_64& rng) {
    return {build_ladder(ann), sample_consensus(ann, zeta, rng), zeta};
}

ProbMap blend(const EdgeMapSet& maps, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("granularity alpha must lie in [0, 1]");
    require_same_grid(maps.coarse, maps.medium, "blend");
    require_same_grid(maps.medium, maps.fine, "blend");
    const bool lower = alpha <= 0.5;
    const ProbMap& hi = lower ? maps.medium : maps.fine;
    const ProbMap& lo = lower ? maps.coarse : maps.medium;
    const double t = lower ? alpha / 0.5 : (alpha - 0.5) / 0.5;
    ProbMap out(hi.rows, hi.cols);
    for (std::size_t j = 0; j < out.size(); ++j) out.data[j] = t * hi.data[j] + (1.0 - t) * lo.data[j];
    return out;
}

std::vector<double> sweep_alphas(int m) {
    if (m < 2) throw InputError("candidate sweep needs at least 2 candidates");
    std::vector<double> a(m);
    for (int k = 0; k < m; ++k) a[k] = static_cast<double>(k) / (m - 1);
    return a;
}

std::vector<ProbMap> candidate_sweep(const EdgeMapSet& maps, int m) {
    std::vector<ProbMap> out;
    for (double a : sweep_alphas(m)) out.push_back(blend(maps, a));
    return out;
}

}  // namespace sauge
