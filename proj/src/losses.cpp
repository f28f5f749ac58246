#include "sauge/losses.hpp"

#include <algorithm>
#include <cmath>

#include "sauge/errors.hpp"

namespace sauge {

double balance_weight(const BinaryMap& target) {
    if (target.size() == 0) return 1.0;
    const double pos = static_cast<double>(popcount(target));
    return (static_cast<double>(target.size()) - pos) / static_cast<double>(target.size());
}

LossValue balanced_bce(const ProbMap& pred, const BinaryMap& target, const ProbMap* pixel_weights) {
    require_same_grid(pred, target, "balanced_bce");
    if (pixel_weights) require_same_grid(*pixel_weights, target, "balanced_bce weights");
    const double xi = balance_weight(target);
    LossValue out{0.0, ProbMap(pred.rows, pred.cols)};
    for (std::size_t j = 0; j < pred.size(); ++j) {
        const double raw = pred.data[j];
        const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
        const bool inside = raw > kProbClamp && raw < 1.0 - kProbClamp;
        const double w = pixel_weights ? pixel_weights->data[j] : 1.0;
        double term, dterm;
        if (target.data[j]) {
            term = -xi * std::log(p);
            dterm = -xi / p;
        } else {
            term = -(1.0 - xi) * std::log(1.0 - p);
            dterm = (1.0 - xi) / (1.0 - p);
        }
        out.value += w * term;
        out.grad.data[j] = inside ? w * dterm : 0.0;
    }
    return out;
}

SideLossValue side_loss(const EdgeMapSet& maps, const GranularityLabels& labels) {
    LossValue c = balanced_bce(maps.coarse, labels.coarse);
    LossValue m = balanced_bce(maps.medium, labels.medium);
    LossValue f = balanced_bce(maps.fine, labels.fine);
    return {c.value + m.value + f.value, std::move(c.grad), std::move(m.grad), std::move(f.grad)};
}

SideLossValue differ_loss(const EdgeMapSet& maps, const GranularityLabels& labels) {
    const ProbMap* preds[3] = {&maps.coarse, &maps.medium, &maps.fine};
    const BinaryMap* labs[3] = {&labels.coarse, &labels.medium, &labels.fine};
    for (int i = 0; i < 3; ++i) {
        require_same_grid(*preds[i], *preds[0], "differ_loss");
        require_same_grid(*labs[i], *preds[0], "differ_loss");
    }
    const int rows = maps.coarse.rows, cols = maps.coarse.cols;
    SideLossValue out{0.0, ProbMap(rows, cols), ProbMap(rows, cols), ProbMap(rows, cols)};
    ProbMap* grads[3] = {&out.grad_coarse, &out.grad_medium, &out.grad_fine};
    constexpr int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    for (const auto& pr : pairs) {
        const int i = pr[0], k = pr[1];
        for (std::size_t j = 0; j < maps.coarse.size(); ++j) {
            if (labs[i]->data[j] == labs[k]->data[j]) continue;
            const double d = preds[i]->data[j] - preds[k]->data[j];
            out.value -= std::abs(d);
            const double s = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            grads[i]->data[j] -= s;
            grads[k]->data[j] += s;
        }
    }
    return out;
}

ProbMap guide_weights(const BinaryMap& consensus, const ProbMap& soft_consensus, const MaskGuidance& guidance) {
    require_same_grid(consensus, soft_consensus, "guide_weights");
    const bool has_masks = guidance.edges.size() != 0;
    if (has_masks) {
        require_same_grid(guidance.edges, consensus, "guide_weights");
        require_same_grid(guidance.frequency, consensus, "guide_weights");
    }
    ProbMap w(consensus.rows, consensus.cols);
    for (std::size_t j = 0; j < w.size(); ++j) {
        double psi = 0.0;
        if (has_masks) {
            const double m = guidance.edges.data[j] ? 1.0 : 0.0;
            const double disagree = (guidance.edges.data[j] != 0) != (consensus.data[j] != 0) ? 1.0 : 0.0;
            psi = -m * disagree * guidance.frequency.data[j];
        }
        const double omega = std::cos(soft_consensus.data[j]);
        w.data[j] = std::exp(psi + omega);
    }
    return w;
}

LossValue guide_loss(const ProbMap& pred_fused, const BinaryMap& consensus, const ProbMap& soft_consensus,
                     const MaskGuidance& guidance) {
    const ProbMap w = guide_weights(consensus, soft_consensus, guidance);
    return balanced_bce(pred_fused, consensus, &w);
}

LossBreakdown total_loss(double l_guide, double l_differ, double l_side, double lambda, double beta) {
    if (lambda < 0.0 || beta < 0.0) throw ConfigError("loss coefficients must be non-negative");
    return {l_side, l_differ, l_guide, l_guide + lambda * l_differ + beta * l_side};
}

}  // namespace sauge
