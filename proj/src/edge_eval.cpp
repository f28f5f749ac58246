#include "sauge/edge_eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "sauge/errors.hpp"
#include "sauge/imgproc.hpp"

namespace sauge {

void EvalConfig::validate() const {
    if (!(tolerance > 0.0 && tolerance < 0.1)) throw ConfigError("eval tolerance must lie in (0, 0.1)");
    if (thresholds < 1) throw ConfigError("eval needs at least one threshold");
    if (workers < 1) throw ConfigError("eval workers must be >= 1");
}

std::vector<double> EvalConfig::threshold_values() const {
    std::vector<double> t(thresholds);
    for (int k = 0; k < thresholds; ++k) t[k] = static_cast<double>(k + 1) / (thresholds + 1);
    return t;
}

MatchCounts& MatchCounts::operator+=(const MatchCounts& o) {
    tp += o.tp;
    fp += o.fp;
    gt_matched += o.gt_matched;
    fn += o.fn;
    return *this;
}

PrecisionRecall score(const MatchCounts& c) {
    PrecisionRecall s;
    const auto pred = c.predicted(), gt = c.gt_total();
    s.precision = pred > 0 ? static_cast<double>(c.tp) / static_cast<double>(pred) : 0.0;
    s.recall = gt > 0 ? static_cast<double>(c.gt_matched) / static_cast<double>(gt) : 0.0;
    s.f = (s.precision + s.recall) > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

// ---------------------------------------------------------------------------
// Thinning

namespace {
double sample_clamped(const ProbMap& m, double y, double x) {
    y = std::clamp(y, 0.0, m.rows - 1.0);
    x = std::clamp(x, 0.0, m.cols - 1.0);
    const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    const int y1 = std::min(y0 + 1, m.rows - 1), x1 = std::min(x0 + 1, m.cols - 1);
    const double fy = y - y0, fx = x - x0;
    return (1 - fy) * ((1 - fx) * m(y0, x0) + fx * m(y0, x1)) + fy * ((1 - fx) * m(y1, x0) + fx * m(y1, x1));
}
}  // namespace

ProbMap nms_thin(const ProbMap& prob) {
    const int h = prob.rows, w = prob.cols;
    ProbMap out = prob;
    if (h == 0 || w == 0) return out;
    const ProbMap s = imgproc::gaussian_blur(prob, 1.0);
    auto at = [&](int y, int x) { return s(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1)); };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double e = prob(y, x);
            if (e <= 0.0) continue;
            const double hxx = at(y, x + 1) - 2 * at(y, x) + at(y, x - 1);
            const double hyy = at(y + 1, x) - 2 * at(y, x) + at(y - 1, x);
            const double hxy = 0.25 * (at(y + 1, x + 1) - at(y + 1, x - 1) - at(y - 1, x + 1) + at(y - 1, x - 1));
            // Eigenvector of the smaller eigenvalue (strongest negative curvature).
            const double theta = 0.5 * std::atan2(2 * hxy, hxx - hyy) + std::numbers::pi / 2;
            const double nx = std::cos(theta), ny = std::sin(theta);
            const double e1 = sample_clamped(prob, y + ny, x + nx);
            const double e2 = sample_clamped(prob, y - ny, x - nx);
            if (e < e1 || e < e2) out(y, x) = 0.0;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Matching

namespace {

std::vector<std::pair<int, int>> disc_offsets(double d_max) {
    std::vector<std::pair<int, int>> off;
    const int r = static_cast<int>(std::floor(d_max));
    const double r2 = d_max * d_max * (1.0 + 1e-12);
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (dy * dy + dx * dx <= r2) off.emplace_back(dy, dx);
    return off;
}

std::int64_t hopcroft_karp(const std::vector<std::vector<int>>& adj, int n_right) {
    const int n_left = static_cast<int>(adj.size());
    constexpr int kInf = std::numeric_limits<int>::max();
    std::vector<int> match_l(n_left, -1), match_r(n_right, -1), dist(n_left), it(n_left);
    std::vector<int> queue;
    std::vector<int> stack;
    std::int64_t matched = 0;

    // Greedy warm start.
    for (int u = 0; u < n_left; ++u)
        for (int v : adj[u])
            if (match_r[v] < 0) {
                match_l[u] = v;
                match_r[v] = u;
                ++matched;
                break;
            }

    while (true) {
        queue.clear();
        for (int u = 0; u < n_left; ++u) {
            if (match_l[u] < 0) {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = kInf;
            }
        }
        bool found = false;
        for (std::size_t qi = 0; qi < queue.size(); ++qi) {
            const int u = queue[qi];
            for (int v : adj[u]) {
                const int w = match_r[v];
                if (w < 0) {
                    found = true;
                } else if (dist[w] == kInf) {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        if (!found) break;

        std::fill(it.begin(), it.end(), 0);
        for (int root = 0; root < n_left; ++root) {
            if (match_l[root] >= 0) continue;
            stack.assign(1, root);
            while (!stack.empty()) {
                const int u = stack.back();
                if (it[u] == static_cast<int>(adj[u].size())) {
                    dist[u] = kInf;
                    stack.pop_back();
                    continue;
                }
                const int v = adj[u][it[u]];
                const int w = match_r[v];
                if (w < 0) {
                    for (int k : stack) {
                        const int vk = adj[k][it[k]];
                        match_l[k] = vk;
                        match_r[vk] = k;
                    }
                    ++matched;
                    break;
                }
                if (dist[w] == dist[u] + 1)
                    stack.push_back(w);
                else
                    ++it[u];
            }
        }
    }
    return matched;
}

struct PixelIndex {
    std::vector<std::pair<int, int>> pixels;
    std::vector<int> id;  // rows*cols, -1 where off
};

PixelIndex index_pixels(const BinaryMap& m) {
    PixelIndex p;
    p.id.assign(m.size(), -1);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x)
            if (m(y, x)) {
                p.id[static_cast<std::size_t>(y) * m.cols + x] = static_cast<int>(p.pixels.size());
                p.pixels.emplace_back(y, x);
            }
    return p;
}

}  // namespace

std::int64_t max_matching(const BinaryMap& a, const BinaryMap& b, double d_max) {
    require_same_grid(a, b, "max_matching");
    if (d_max < 0) throw InputError("matching distance must be non-negative");
    const PixelIndex pa = index_pixels(a), pb = index_pixels(b);
    const auto off = disc_offsets(d_max);
    std::vector<std::vector<int>> adj(pa.pixels.size());
    for (std::size_t i = 0; i < pa.pixels.size(); ++i) {
        const auto [y, x] = pa.pixels[i];
        for (const auto& [dy, dx] : off) {
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || nx < 0 || ny >= b.rows || nx >= b.cols) continue;
            const int j = pb.id[static_cast<std::size_t>(ny) * b.cols + nx];
            if (j >= 0) adj[i].push_back(j);
        }
    }
    return hopcroft_karp(adj, static_cast<int>(pb.pixels.size()));
}

MatchCounts correspond(const BinaryMap& pred, const std::vector<BinaryMap>& gts, double d_max) {
    if (d_max < 0) throw InputError("matching distance must be non-negative");
    for (const auto& g : gts) require_same_grid(pred, g, "correspond");
    MatchCounts c;
    const PixelIndex pp = index_pixels(pred);
    const std::int64_t n_pred = static_cast<std::int64_t>(pp.pixels.size());

    // Recall side: each annotation on its own.
    for (const auto& g : gts) {
        const std::int64_t gt_n = static_cast<std::int64_t>(popcount(g));
        const std::int64_t m = max_matching(pred, g, d_max);
        c.gt_matched += m;
        c.fn += gt_n - m;
    }

    // Precision side: a prediction is a hit if it can be paired with any
    // annotator's pixel; annotator pixels are distinct nodes per annotator.
    std::vector<PixelIndex> gi;
    int n_right = 0;
    std::vector<int> base;
    for (const auto& g : gts) {
        gi.push_back(index_pixels(g));
        base.push_back(n_right);
        n_right += static_cast<int>(gi.back().pixels.size());
    }
    const auto off = disc_offsets(d_max);
    std::vector<std::vector<int>> adj(pp.pixels.size());
    for (std::size_t i = 0; i < pp.pixels.size(); ++i) {
        const auto [y, x] = pp.pixels[i];
        for (const auto& [dy, dx] : off) {
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || nx < 0 || ny >= pred.rows || nx >= pred.cols) continue;
            for (std::size_t a = 0; a < gts.size(); ++a) {
                const int j = gi[a].id[static_cast<std::size_t>(ny) * pred.cols + nx];
                if (j >= 0) adj[i].push_back(base[a] + j);
            }
        }
    }
    c.tp = hopcroft_karp(adj, n_right);
    c.fp = n_pred - c.tp;
    return c;
}

double match_radius(const EvalConfig& cfg, int rows, int cols) {
    return cfg.tolerance * std::sqrt(static_cast<double>(rows) * rows + static_cast<double>(cols) * cols);
}

// ---------------------------------------------------------------------------
// Aggregation

double average_precision(const std::vector<double>& recall, const std::vector<double>& precision) {
    if (recall.size() != precision.size()) throw DimensionError("average_precision: array length mismatch");
    std::map<double, double> curve;  // unique recall -> max precision
    for (std::size_t i = 0; i < recall.size(); ++i) {
        auto [it, inserted] = curve.emplace(recall[i], precision[i]);
        if (!inserted) it->second = std::max(it->second, precision[i]);
    }
    if (curve.size() < 2) return 0.0;
    const std::vector<std::pair<double, double>> pts(curve.begin(), curve.end());
    double area = 0.0;
    for (int k = 0; k <= 100; ++k) {
        const double r = k / 100.0;
        if (r < pts.front().first || r > pts.back().first) continue;
        auto hi = std::lower_bound(pts.begin(), pts.end(), r, [](const auto& p, double v) { return p.first < v; });
        double p;
        if (hi->first == r) {
            p = hi->second;
        } else {
            const auto lo = hi - 1;
            const double t = (r - lo->first) / (hi->first - lo->first);
            p = lo->second + t * (hi->second - lo->second);
        }
        area += p;
    }
    return area * 0.01;
}

EvalReport aggregate(const CountTable& counts, const std::vector<double>& thresholds) {
    if (counts.empty()) throw InputError("evaluation needs at least one image");
    const std::size_t nt = thresholds.size();
    EvalReport r;
    r.thresholds = thresholds;
    std::vector<MatchCounts> total(nt);
    for (const auto& row : counts) {
        if (row.size() != nt) throw DimensionError("count table row length differs from threshold count");
        for (std::size_t t = 0; t < nt; ++t) total[t] += row[t];
    }
    for (std::size_t t = 0; t < nt; ++t) {
        const auto s = score(total[t]);
        r.precision.push_back(s.precision);
        r.recall.push_back(s.recall);
        r.f.push_back(s.f);
        if (t == 0 || s.f > r.ods_f) {
            r.ods_f = s.f;
            r.ods_threshold = thresholds[t];
        }
    }
    MatchCounts ois;
    for (const auto& row : counts) {
        std::size_t best = 0;
        double best_f = -1.0;
        for (std::size_t t = 0; t < nt; ++t) {
            const double f = score(row[t]).f;
            if (f > best_f) {
                best_f = f;
                best = t;
            }
        }
        ois += row[best];
        r.image_best_threshold.push_back(thresholds[best]);
        r.image_best_f.push_back(best_f);
    }
    const auto s = score(ois);
    r.ois_f = s.f;
    r.ois_precision = s.precision;
    r.ois_recall = s.recall;
    r.ap = average_precision(r.recall, r.precision);
    return r;
}

namespace {

template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t w = std::min<std::size_t>(workers, n);
    std::vector<std::exception_ptr> errors(w);
    for (std::size_t k = 0; k < w; ++k)
        pool.emplace_back([&, k] {
            try {
                for (std::size_t i = k; i < n; i += w) fn(i);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// Counts of one probability map at every threshold. Consecutive thresholds
// that binarize identically reuse the previous result.
std::vector<MatchCounts> threshold_counts(const ProbMap& prob, const AnnotationSet& gt, const std::vector<double>& thresholds,
                                          double d_max) {
    std::vector<MatchCounts> row;
    row.reserve(thresholds.size());
    BinaryMap prev;
    for (double t : thresholds) {
        BinaryMap bin(prob.rows, prob.cols);
        for (std::size_t j = 0; j < bin.size(); ++j) bin.data[j] = prob.data[j] >= t ? 1 : 0;
        if (!row.empty() && bin == prev) {
            row.push_back(row.back());
        } else {
            row.push_back(correspond(bin, gt.labels, d_max));
            prev = std::move(bin);
        }
    }
    return row;
}

void check_inputs(std::size_t n_pred, const std::vector<AnnotationSet>& gts) {
    if (n_pred == 0 || gts.empty()) throw InputError("evaluation dataset is empty");
    if (n_pred != gts.size()) throw InputError("predictions and ground truth lists differ in length");
}

}  // namespace

EvalReport evaluate(const std::vector<ProbMap>& preds, const std::vector<AnnotationSet>& gts, const EvalConfig& cfg) {
    cfg.validate();
    check_inputs(preds.size(), gts);
    const auto thresholds = cfg.threshold_values();
    CountTable table(preds.size());
    parallel_for(preds.size(), cfg.workers, [&](std::size_t i) {
        gts[i].validate();
        require_same_grid(preds[i], gts[i].labels.front(), "evaluate");
        const ProbMap p = cfg.apply_nms ? nms_thin(preds[i]) : preds[i];
        table[i] = threshold_counts(p, gts[i], thresholds, match_radius(cfg, p.rows, p.cols));
    });
    return aggregate(table, thresholds);
}

EvalReport best_match_evaluate(const std::vector<std::vector<ProbMap>>& candidates, const std::vector<AnnotationSet>& gts,
                               const EvalConfig& cfg) {
    cfg.validate();
    check_inputs(candidates.size(), gts);
    const auto thresholds = cfg.threshold_values();
    const std::size_t nt = thresholds.size();
    CountTable table(candidates.size());
    std::vector<std::vector<int>> chosen(candidates.size());
    parallel_for(candidates.size(), cfg.workers, [&](std::size_t i) {
        if (candidates[i].empty()) throw InputError("best-match evaluation needs at least one candidate per image");
        gts[i].validate();
        std::vector<std::vector<MatchCounts>> per_cand;
        for (const auto& cand : candidates[i]) {
            require_same_grid(cand, gts[i].labels.front(), "best_match_evaluate");
            const ProbMap p = cfg.apply_nms ? nms_thin(cand) : cand;
            per_cand.push_back(threshold_counts(p, gts[i], thresholds, match_radius(cfg, p.rows, p.cols)));
        }
        table[i].resize(nt);
        chosen[i].resize(nt);
        for (std::size_t t = 0; t < nt; ++t) {
            std::size_t best = 0;
            double best_f = -1.0;
            for (std::size_t m = 0; m < per_cand.size(); ++m) {
                const double f = score(per_cand[m][t]).f;
                if (f > best_f) {
                    best_f = f;
                    best = m;
                }
            }
            table[i][t] = per_cand[best][t];
            chosen[i][t] = static_cast<int>(best);
        }
    });
    EvalReport r = aggregate(table, thresholds);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto t = static_cast<std::size_t>(
            std::find(thresholds.begin(), thresholds.end(), r.image_best_threshold[i]) - thresholds.begin());
        r.image_selected_candidate.push_back(chosen[i][t]);
    }
    return r;
}

std::string report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["ods"] = {{"f", r.ods_f}, {"threshold", r.ods_threshold}};
    j["ois"] = {{"f", r.ois_f}, {"precision", r.ois_precision}, {"recall", r.ois_recall}};
    j["ap"] = r.ap;
    j["thresholds"] = r.thresholds;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f"] = r.f;
    j["image_best_threshold"] = r.image_best_threshold;
    j["image_best_f"] = r.image_best_f;
    if (!r.image_selected_candidate.empty()) j["image_selected_candidate"] = r.image_selected_candidate;
    return j.dump(2);
}

std::string report_to_csv(const EvalReport& r) {
    std::ostringstream os;
    os.precision(10);
    os << "threshold,precision,recall,f\n";
    for (std::size_t t = 0; t < r.thresholds.size(); ++t)
        os << r.thresholds[t] << ',' << r.precision[t] << ',' << r.recall[t] << ',' << r.f[t] << '\n';
    return os.str();
}

}  // namespace sauge
