#include <doctest.h>

#include <random>

#include <json.hpp>

#include "eval_oracle.hpp"
#include "sauge/edge_eval.hpp"
#include "sauge/errors.hpp"
#include "support.hpp"

using namespace sauge;

namespace {

ProbMap as_prob(const BinaryMap& b, double on = 1.0) {
    ProbMap p(b.rows, b.cols);
    for (std::size_t j = 0; j < p.size(); ++j) p.data[j] = b.data[j] ? on : 0.0;
    return p;
}

EvalConfig raw_config(double tolerance = 0.0075, int thresholds = 99) {
    EvalConfig c;
    c.tolerance = tolerance;
    c.thresholds = thresholds;
    c.apply_nms = false;
    return c;
}

}  // namespace

TEST_CASE("config validation and thresholds") {
    EvalConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(EvalConfig::nyud().tolerance == 0.011);
    const auto t = c.threshold_values();
    REQUIRE(t.size() == 99);
    CHECK(t.front() == doctest::Approx(0.01));
    CHECK(t.back() == doctest::Approx(0.99));
    c.tolerance = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.tolerance = 0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = EvalConfig{};
    c.thresholds = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("nms keeps a thin line") {
    ProbMap p(8, 8);
    for (int r = 0; r < 8; ++r) p(r, 3) = 0.9;
    CHECK(nms_thin(p) == p);
}

TEST_CASE("nms thins a three pixel ramp to its center") {
    ProbMap p(8, 8);
    for (int r = 0; r < 8; ++r) {
        p(r, 3) = 0.5;
        p(r, 4) = 0.9;
        p(r, 5) = 0.5;
    }
    const ProbMap t = nms_thin(p);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) CHECK(t(r, c) == (c == 4 ? 0.9 : 0.0));
}

TEST_CASE("nms on zeros and horizontal ramps") {
    CHECK(nms_thin(ProbMap(6, 6)) == ProbMap(6, 6));
    ProbMap p(8, 8);
    for (int c = 0; c < 8; ++c) {
        p(2, c) = 0.4;
        p(3, c) = 0.8;
        p(4, c) = 0.4;
    }
    const ProbMap t = nms_thin(p);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) CHECK(t(r, c) == (r == 3 ? 0.8 : 0.0));
}

TEST_CASE("nms leaves surviving values unchanged") {
    std::mt19937_64 rng(1);
    const ProbMap p = testing::random_prob(10, 10, rng);
    const ProbMap t = nms_thin(p);
    for (std::size_t j = 0; j < p.size(); ++j) CHECK((t.data[j] == 0.0 || t.data[j] == p.data[j]));
}

TEST_CASE("correspond basic cases") {
    std::mt19937_64 rng(2);
    const BinaryMap gt = testing::random_binary(8, 8, 0.3, rng);
    const auto exact = correspond(gt, {gt}, 0.0);
    CHECK(exact.tp == static_cast<std::int64_t>(popcount(gt)));
    CHECK(exact.fp == 0);
    CHECK(exact.fn == 0);

    BinaryMap line(6, 6), shifted(6, 6);
    for (int r = 0; r < 6; ++r) line(r, 2) = 1, shifted(r, 3) = 1;
    const auto s = correspond(shifted, {line}, 1.5);
    CHECK(s.tp == 6);
    CHECK(s.fp == 0);
    CHECK(s.fn == 0);

    BinaryMap one(5, 5), two(5, 5);
    one(2, 2) = 1;
    two(2, 1) = 1;
    two(2, 3) = 1;
    const auto c = correspond(two, {one}, 1.0);
    CHECK(c.tp == 1);
    CHECK(c.fp == 1);
    CHECK(c.fn == 0);
    CHECK(c.tp == oracle::reference_correspond(two, {one}, 1.0).tp);

    CHECK_THROWS_AS(correspond(one, {BinaryMap(4, 4)}, 1.0), DimensionError);
    CHECK_THROWS_AS(correspond(one, {one}, -1.0), InputError);
}

TEST_CASE("correspond with several annotators") {
    BinaryMap a(4, 4), b(4, 4), pred(4, 4);
    a(0, 0) = 1;
    b(3, 3) = 1;
    pred(0, 0) = 1;
    pred(3, 3) = 1;
    pred(1, 2) = 1;
    const auto c = correspond(pred, {a, b}, 0.0);
    CHECK(c.tp == 2);  // each prediction matched by some annotator
    CHECK(c.fp == 1);
    CHECK(c.gt_matched == 2);
    CHECK(c.fn == 0);
    // Two annotators marking the same pixel give two targets; one prediction covers one.
    const auto d = correspond(a, {a, a}, 0.0);
    CHECK(d.tp == 1);
    CHECK(d.gt_matched == 2);
}

TEST_CASE("matcher equals exhaustive search on small grids") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> side(1, 8), annotators(1, 3);
    std::uniform_real_distribution<double> dens(0.0, 0.3);
    const double radii[] = {0.0, 1.0, 1.2, 1.5, 2.0};
    for (int trial = 0; trial < 1000; ++trial) {
        const int r = side(rng), c = side(rng);
        const BinaryMap pred = testing::random_binary(r, c, dens(rng), rng);
        std::vector<BinaryMap> gts;
        for (int k = annotators(rng); k > 0; --k) gts.push_back(testing::random_binary(r, c, dens(rng), rng));
        const double d = radii[trial % 5];
        CHECK(max_matching(pred, gts[0], d) ==
              oracle::exhaustive_matching(oracle::pixels_of(pred), oracle::pixels_of(gts[0]), d));
        CHECK(correspond(pred, gts, d) == oracle::reference_correspond(pred, gts, d));
    }
}

TEST_CASE("true positives grow with the matching radius") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const BinaryMap pred = testing::random_binary(10, 10, 0.2, rng);
        const std::vector<BinaryMap> gts{testing::random_binary(10, 10, 0.2, rng), testing::random_binary(10, 10, 0.1, rng)};
        std::int64_t prev_tp = -1, prev_m = -1;
        for (double d : {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0}) {
            const auto c = correspond(pred, gts, d);
            CHECK(c.tp >= prev_tp);
            CHECK(c.gt_matched >= prev_m);
            prev_tp = c.tp;
            prev_m = c.gt_matched;
        }
    }
}

TEST_CASE("evaluate equals the reference on random fixtures") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> side(1, 8), images(1, 3), annotators(1, 3);
    std::uniform_real_distribution<double> dens(0.05, 0.3), tol(0.001, 0.099);
    for (int trial = 0; trial < 1000; ++trial) {
        const EvalConfig cfg = raw_config(tol(rng), 9);
        std::vector<ProbMap> preds;
        std::vector<AnnotationSet> gts;
        for (int i = images(rng); i > 0; --i) {
            const int r = side(rng), c = side(rng);
            ProbMap p = testing::random_prob(r, c, rng);
            // Sparsify so that low thresholds do not flood the grid.
            const BinaryMap keep = testing::random_binary(r, c, 0.4, rng);
            for (std::size_t j = 0; j < p.size(); ++j) p.data[j] *= keep.data[j];
            preds.push_back(p);
            AnnotationSet a;
            for (int k = annotators(rng); k > 0; --k) a.labels.push_back(testing::random_binary(r, c, dens(rng), rng));
            gts.push_back(a);
        }
        const EvalReport rep = evaluate(preds, gts, cfg);
        const auto ref = oracle::reference_evaluate(preds, gts, cfg);
        for (std::size_t t = 0; t < ref.f.size(); ++t) {
            CHECK(std::abs(rep.precision[t] - ref.precision[t]) <= 1e-9);
            CHECK(std::abs(rep.recall[t] - ref.recall[t]) <= 1e-9);
        }
        CHECK(std::abs(rep.ods_f - ref.ods) <= 1e-9);
        CHECK(std::abs(rep.ois_f - ref.ois) <= 1e-9);
        CHECK(std::abs(rep.ap - ref.ap) <= 1e-9);
        CHECK(rep.ods_f <= *std::max_element(rep.f.begin(), rep.f.end()));
    }
}

TEST_CASE("perfect and empty predictions") {
    std::mt19937_64 rng(6);
    std::vector<ProbMap> perfect, zero;
    std::vector<AnnotationSet> gts;
    for (int i = 0; i < 3; ++i) {
        const BinaryMap g = testing::random_binary(12, 10, 0.15, rng);
        gts.push_back({{g}});
        perfect.push_back(as_prob(g));
        zero.push_back(ProbMap(12, 10));
    }
    for (bool nms : {false, true}) {
        EvalConfig cfg;
        cfg.apply_nms = nms;
        if (!nms) {
            const auto r = evaluate(perfect, gts, cfg);
            CHECK(r.ods_f == 1.0);
            CHECK(r.ois_f == 1.0);
        }
        const auto z = evaluate(zero, gts, cfg);
        for (std::size_t t = 0; t < z.f.size(); ++t) {
            CHECK(z.recall[t] == 0.0);
            CHECK(z.f[t] == 0.0);
        }
        CHECK(z.ods_f == 0.0);
    }
    CHECK_THROWS_AS(evaluate({}, {}, EvalConfig{}), InputError);
    CHECK_THROWS_AS(evaluate(perfect, {gts[0]}, EvalConfig{}), InputError);
}

TEST_CASE("perfect thin predictions survive thinning") {
    // One-pixel-wide contours are already maximal.
    BinaryMap g(16, 16);
    for (int k = 2; k < 14; ++k) g(k, 4) = 1, g(3, k) = 1;
    const auto r = evaluate({as_prob(g)}, {{{g}}}, EvalConfig{});
    CHECK(r.ods_f == 1.0);
    CHECK(r.ois_f == 1.0);
}

TEST_CASE("three image count table") {
    // Hand-built counts; scores follow from the definitions.
    CountTable table(3, std::vector<MatchCounts>(2));
    table[0][0] = {8, 2, 8, 2};  // P .8 R .8
    table[0][1] = {5, 0, 5, 5};  // P 1 R .5
    table[1][0] = {3, 7, 6, 0};  // P .3 R 1
    table[1][1] = {3, 1, 3, 3};  // P .75 R .5
    table[2][0] = {0, 4, 0, 4};
    table[2][1] = {0, 0, 0, 4};
    const EvalReport r = aggregate(table, {0.3, 0.6});
    // t = 0.3: tp 11, pred 24, matched 14 of 20.
    CHECK(r.precision[0] == doctest::Approx(11.0 / 24));
    CHECK(r.recall[0] == doctest::Approx(14.0 / 20));
    // t = 0.6: tp 8, pred 9, matched 8 of 20.
    CHECK(r.precision[1] == doctest::Approx(8.0 / 9));
    CHECK(r.recall[1] == doctest::Approx(8.0 / 20));
    const auto ref = oracle::reference_scores(table);
    CHECK(r.ods_f == doctest::Approx(ref.ods).epsilon(1e-12));
    CHECK(r.ois_f == doctest::Approx(ref.ois).epsilon(1e-12));
    CHECK(r.ap == doctest::Approx(ref.ap).epsilon(1e-12));
    // Image 1 is best at 0.6 (F .6 vs .46), image 0 at 0.3.
    CHECK(r.image_best_threshold[0] == 0.3);
    CHECK(r.image_best_threshold[1] == 0.6);
}

TEST_CASE("average precision conventions") {
    CHECK(average_precision({0.5}, {1.0}) == 0.0);
    // A flat curve of precision 1 over recall [0, 1] has area 1.01 on the 101-point grid.
    CHECK(average_precision({0.0, 1.0}, {1.0, 1.0}) == doctest::Approx(1.01));
    // Points outside the observed recall range count as zero.
    CHECK(average_precision({0.5, 1.0}, {1.0, 1.0}) == doctest::Approx(0.51));
    // Duplicate recall keeps the higher precision.
    CHECK(average_precision({0.0, 1.0, 1.0}, {1.0, 0.0, 1.0}) == doctest::Approx(1.01));
}

TEST_CASE("recall does not increase with the threshold") {
    std::mt19937_64 rng(7);
    std::vector<ProbMap> preds;
    std::vector<AnnotationSet> gts;
    for (int i = 0; i < 4; ++i) {
        preds.push_back(testing::random_prob(16, 16, rng));
        gts.push_back({{testing::random_binary(16, 16, 0.1, rng), testing::random_binary(16, 16, 0.1, rng)}});
    }
    for (bool nms : {false, true}) {
        EvalConfig cfg;
        cfg.apply_nms = nms;
        cfg.tolerance = 0.05;
        const auto r = evaluate(preds, gts, cfg);
        for (std::size_t t = 1; t < r.recall.size(); ++t) CHECK(r.recall[t] <= r.recall[t - 1]);
        for (std::size_t t = 0; t < r.recall.size(); ++t) {
            CHECK(std::isfinite(r.precision[t]));
            CHECK(r.precision[t] >= 0.0);
            CHECK(r.precision[t] <= 1.0);
            CHECK(r.recall[t] >= 0.0);
            CHECK(r.recall[t] <= 1.0);
        }
    }
}

TEST_CASE("reports do not depend on the worker count") {
    std::mt19937_64 rng(8);
    std::vector<ProbMap> preds;
    std::vector<AnnotationSet> gts;
    for (int i = 0; i < 7; ++i) {
        preds.push_back(testing::random_prob(20, 18, rng));
        gts.push_back({{testing::random_binary(20, 18, 0.1, rng)}});
    }
    EvalConfig one;
    EvalConfig many = one;
    many.workers = 4;
    const auto a = evaluate(preds, gts, one), b = evaluate(preds, gts, many);
    CHECK(report_to_json(a) == report_to_json(b));
}

TEST_CASE("best match with one candidate equals evaluate") {
    std::mt19937_64 rng(9);
    std::vector<ProbMap> preds;
    std::vector<std::vector<ProbMap>> cands;
    std::vector<AnnotationSet> gts;
    for (int i = 0; i < 3; ++i) {
        preds.push_back(testing::random_prob(12, 12, rng));
        cands.push_back({preds.back()});
        gts.push_back({{testing::random_binary(12, 12, 0.15, rng)}});
    }
    const auto a = evaluate(preds, gts, EvalConfig{}), b = best_match_evaluate(cands, gts, EvalConfig{});
    CHECK(a.f == b.f);
    CHECK(a.ods_f == b.ods_f);
    CHECK(a.ois_f == b.ois_f);
    CHECK(a.ap == b.ap);
    CHECK(b.image_selected_candidate == std::vector<int>{0, 0, 0});
}

TEST_CASE("best match picks the perfect candidate") {
    std::mt19937_64 rng(10);
    std::vector<std::vector<ProbMap>> cands;
    std::vector<AnnotationSet> gts;
    std::vector<ProbMap> perfect;
    for (int i = 0; i < 3; ++i) {
        const BinaryMap g = testing::random_binary(10, 10, 0.2, rng);
        gts.push_back({{g}});
        perfect.push_back(as_prob(g));
        cands.push_back({testing::random_prob(10, 10, rng), as_prob(g), testing::random_prob(10, 10, rng)});
    }
    const EvalConfig cfg = raw_config();
    const auto best = best_match_evaluate(cands, gts, cfg), ref = evaluate(perfect, gts, cfg);
    CHECK(best.ods_f == ref.ods_f);
    CHECK(best.ois_f == ref.ois_f);
    CHECK(best.ods_f == 1.0);
    CHECK_THROWS_AS(best_match_evaluate({{}}, {gts[0]}, cfg), InputError);
}

TEST_CASE("best match selects the medium level of a ladder") {
    std::mt19937_64 rng(11);
    std::vector<std::vector<ProbMap>> cands;
    std::vector<AnnotationSet> gts;
    for (int i = 0; i < 4; ++i) {
        const BinaryMap c = testing::random_binary(12, 12, 0.05, rng);
        const BinaryMap m = logical_or(c, testing::random_binary(12, 12, 0.1, rng));
        const BinaryMap f = logical_or(m, testing::random_binary(12, 12, 0.2, rng));
        gts.push_back({{m}});
        cands.push_back({as_prob(c), as_prob(m), as_prob(f)});
    }
    const auto r = best_match_evaluate(cands, gts, raw_config());
    CHECK(r.image_selected_candidate == std::vector<int>{1, 1, 1, 1});
    CHECK(r.ods_f == 1.0);
}

TEST_CASE("best match dominates each fixed candidate per image") {
    // Per image and threshold the selected candidate has the highest F, so the
    // per-image optimum (and hence each image's best F) can only improve.
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<ProbMap>> cands;
        std::vector<AnnotationSet> gts;
        for (int i = 0; i < 3; ++i) {
            cands.push_back({testing::random_prob(8, 8, rng), testing::random_prob(8, 8, rng), testing::random_prob(8, 8, rng)});
            gts.push_back({{testing::random_binary(8, 8, 0.2, rng)}});
        }
        const EvalConfig cfg = raw_config(0.05, 19);
        const auto best = best_match_evaluate(cands, gts, cfg);
        for (int m = 0; m < 3; ++m) {
            std::vector<ProbMap> fixed;
            for (const auto& c : cands) fixed.push_back(c[m]);
            const auto r = evaluate(fixed, gts, cfg);
            for (std::size_t i = 0; i < gts.size(); ++i) CHECK(best.image_best_f[i] >= r.image_best_f[i]);
        }
    }
}

TEST_CASE("json and csv reports") {
    std::mt19937_64 rng(13);
    const BinaryMap g = testing::random_binary(10, 10, 0.2, rng);
    const auto r = evaluate({testing::random_prob(10, 10, rng)}, {{{g}}}, EvalConfig{});
    const auto j = nlohmann::json::parse(report_to_json(r));
    CHECK(j["ods"]["f"].get<double>() == r.ods_f);
    CHECK(j["ois"]["f"].get<double>() == r.ois_f);
    CHECK(j["ap"].get<double>() == r.ap);
    CHECK(j["precision"].size() == 99);
    const std::string csv = report_to_csv(r);
    CHECK(csv.rfind("threshold,precision,recall,f\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 100);
}
