#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "sauge/errors.hpp"
#include "sauge/losses.hpp"
#include "sauge/trainer.hpp"
#include "support.hpp"

using namespace sauge;

namespace {

ProbMap map_of(int rows, int cols, std::initializer_list<double> v) {
    ProbMap m(rows, cols);
    m.data.assign(v.begin(), v.end());
    return m;
}

BinaryMap bin_of(int rows, int cols, std::initializer_list<int> v) {
    BinaryMap m(rows, cols);
    std::size_t i = 0;
    for (int x : v) m.data[i++] = static_cast<std::uint8_t>(x);
    return m;
}

// Central difference of f with respect to every entry of `p`.
ProbMap numeric_grad(ProbMap& p, const std::function<double()>& f, double h = 1e-5) {
    ProbMap g(p.rows, p.cols);
    for (std::size_t j = 0; j < p.size(); ++j) {
        const double keep = p.data[j];
        p.data[j] = keep + h;
        const double up = f();
        p.data[j] = keep - h;
        const double down = f();
        p.data[j] = keep;
        g.data[j] = (up - down) / (2 * h);
    }
    return g;
}

void check_close(const ProbMap& analytic, const ProbMap& numeric, double rel = 1e-4) {
    for (std::size_t j = 0; j < analytic.size(); ++j) {
        const double a = analytic.data[j], n = numeric.data[j];
        INFO("analytic " << a << " numeric " << n);
        CHECK(testing::gradients_agree(a, n, rel));
    }
}

}  // namespace

TEST_CASE("balanced bce hand example") {
    const BinaryMap t = bin_of(2, 2, {1, 0, 0, 0});
    const ProbMap p = map_of(2, 2, {0.8, 0.2, 0.2, 0.2});
    CHECK(balance_weight(t) == doctest::Approx(0.75));
    const double expected = -(0.75 * std::log(0.8) + 3 * 0.25 * std::log(0.8));
    CHECK(balanced_bce(p, t).value == doctest::Approx(expected).epsilon(1e-14));
    CHECK(std::abs(balanced_bce(p, t).value - 0.3347) < 1e-4);
}

TEST_CASE("balanced bce degenerate and perfect predictions") {
    std::mt19937_64 rng(1);
    const ProbMap p = testing::random_prob(5, 5, rng);
    CHECK(balance_weight(BinaryMap(5, 5)) == 1.0);
    CHECK(balanced_bce(p, BinaryMap(5, 5)).value == 0.0);

    const BinaryMap t = testing::random_binary(5, 5, 0.3, rng);
    ProbMap exact(5, 5);
    for (std::size_t j = 0; j < exact.size(); ++j) exact.data[j] = t.data[j];
    const double xi = balance_weight(t);
    CHECK(balanced_bce(exact, t).value <= 25 * xi * std::abs(std::log(1 - kProbClamp)) + 1e-12);
    CHECK(balanced_bce(exact, t).value >= 0.0);
}

TEST_CASE("balanced bce rejects shape mismatch") {
    CHECK_THROWS_AS(balanced_bce(ProbMap(2, 2), BinaryMap(2, 3)), DimensionError);
}

TEST_CASE("balanced bce gradient is zero where the clamp is active") {
    const BinaryMap t = bin_of(1, 2, {1, 0});
    const ProbMap p = map_of(1, 2, {0.0, 1.0});
    const auto l = balanced_bce(p, t);
    CHECK(std::isfinite(l.value));
    CHECK(l.grad.data[0] == 0.0);
    CHECK(l.grad.data[1] == 0.0);
}

TEST_CASE("side loss is the sum of three balanced terms") {
    std::mt19937_64 rng(2);
    const EdgeMapSet m = testing::random_edge_maps(6, 7, rng);
    GranularityLabels y{testing::random_binary(6, 7, 0.2, rng), testing::random_binary(6, 7, 0.3, rng),
                        testing::random_binary(6, 7, 0.4, rng)};
    const double sum = balanced_bce(m.coarse, y.coarse).value + balanced_bce(m.medium, y.medium).value +
                       balanced_bce(m.fine, y.fine).value;
    CHECK(side_loss(m, y).value == doctest::Approx(sum).epsilon(1e-14));
    CHECK(side_loss(m, y).value >= 0.0);
}

TEST_CASE("side loss doubles under tiling") {
    std::mt19937_64 rng(3);
    const EdgeMapSet m = testing::random_edge_maps(4, 4, rng);
    GranularityLabels y{testing::random_binary(4, 4, 0.3, rng), testing::random_binary(4, 4, 0.3, rng),
                        testing::random_binary(4, 4, 0.3, rng)};
    auto tile_p = [](const ProbMap& a) {
        ProbMap t(4, 8);
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 8; ++c) t(r, c) = a(r, c % 4);
        return t;
    };
    auto tile_b = [](const BinaryMap& a) {
        BinaryMap t(4, 8);
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 8; ++c) t(r, c) = a(r, c % 4);
        return t;
    };
    const EdgeMapSet m2{tile_p(m.coarse), tile_p(m.medium), tile_p(m.fine), tile_p(m.fused)};
    const GranularityLabels y2{tile_b(y.coarse), tile_b(y.medium), tile_b(y.fine)};
    CHECK(side_loss(m2, y2).value == doctest::Approx(2 * side_loss(m, y).value).epsilon(1e-12));
}

TEST_CASE("differ loss hand example") {
    const GranularityLabels y{bin_of(1, 2, {0, 0}), bin_of(1, 2, {0, 1}), bin_of(1, 2, {1, 1})};
    const EdgeMapSet m{map_of(1, 2, {0.1, 0.2}), map_of(1, 2, {0.1, 0.9}), map_of(1, 2, {0.8, 0.9}), ProbMap(1, 2)};
    const double expected = -std::abs(0.2 - 0.9) - (std::abs(0.1 - 0.8) + std::abs(0.2 - 0.9)) - std::abs(0.1 - 0.8);
    CHECK(differ_loss(m, y).value == doctest::Approx(expected).epsilon(1e-14));
    CHECK(std::abs(differ_loss(m, y).value - (-2.8)) < 1e-6);
}

TEST_CASE("differ loss vanishes without disagreement") {
    std::mt19937_64 rng(4);
    const BinaryMap same = testing::random_binary(5, 5, 0.4, rng);
    const EdgeMapSet m = testing::random_edge_maps(5, 5, rng);
    CHECK(differ_loss(m, {same, same, same}).value == 0.0);
    const EdgeMapSet eq{m.coarse, m.coarse, m.coarse, m.fused};
    GranularityLabels y{testing::random_binary(5, 5, 0.2, rng), testing::random_binary(5, 5, 0.4, rng),
                        testing::random_binary(5, 5, 0.6, rng)};
    CHECK(differ_loss(eq, y).value == 0.0);
    CHECK(differ_loss(m, y).value <= 0.0);
}

TEST_CASE("differ loss is symmetric under swapping maps with their labels") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const EdgeMapSet m = testing::random_edge_maps(4, 5, rng);
        GranularityLabels y{testing::random_binary(4, 5, 0.3, rng), testing::random_binary(4, 5, 0.3, rng),
                            testing::random_binary(4, 5, 0.3, rng)};
        const double base = differ_loss(m, y).value;
        CHECK(differ_loss({m.medium, m.coarse, m.fine, m.fused}, {y.medium, y.coarse, y.fine}).value ==
              doctest::Approx(base).epsilon(1e-14));
        CHECK(differ_loss({m.fine, m.medium, m.coarse, m.fused}, {y.fine, y.medium, y.coarse}).value ==
              doctest::Approx(base).epsilon(1e-14));
    }
}

TEST_CASE("guide weights") {
    // Pixel 0: mask edge confirmed; pixel 1: mask edge contradicted with full agreement;
    // pixel 2: no mask edge.
    MaskGuidance g{bin_of(1, 3, {1, 1, 0}), map_of(1, 3, {1.0, 1.0, 0.0})};
    const BinaryMap y = bin_of(1, 3, {1, 0, 1});
    const ProbMap soft = map_of(1, 3, {0.7, 0.1, 1.0});
    const ProbMap w = guide_weights(y, soft, g);
    CHECK(w.data[0] == doctest::Approx(std::exp(std::cos(0.7))));
    CHECK(w.data[1] == doctest::Approx(std::exp(-1.0 + std::cos(0.1))));
    CHECK(w.data[2] == doctest::Approx(std::exp(std::cos(1.0))));
    CHECK(std::exp(1 - std::cos(1.0)) == doctest::Approx(1.584).epsilon(1e-3));
}

TEST_CASE("guide weights stay within their bounds") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        MaskGuidance g{testing::random_binary(6, 6, 0.5, rng), testing::random_prob(6, 6, rng)};
        const ProbMap w = guide_weights(testing::random_binary(6, 6, 0.5, rng), testing::random_prob(6, 6, rng), g);
        for (double v : w.data) {
            CHECK(v >= std::exp(-1 + std::cos(1.0)) - 1e-15);
            CHECK(v <= std::exp(1.0) + 1e-15);
        }
    }
}

TEST_CASE("guide loss applies weights per pixel") {
    std::mt19937_64 rng(7);
    const BinaryMap y = testing::random_binary(5, 5, 0.3, rng);
    const ProbMap soft = testing::random_prob(5, 5, rng);
    const ProbMap p = testing::random_prob(5, 5, rng, 0.05, 0.95);
    MaskGuidance g{testing::random_binary(5, 5, 0.4, rng), testing::random_prob(5, 5, rng)};
    const ProbMap w = guide_weights(y, soft, g);
    const double xi = balance_weight(y);
    double expected = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j)
        expected += w.data[j] * (y.data[j] ? -xi * std::log(p.data[j]) : -(1 - xi) * std::log(1 - p.data[j]));
    CHECK(guide_loss(p, y, soft, g).value == doctest::Approx(expected).epsilon(1e-13));

    // Empty guidance means psi = 0.
    const ProbMap w0 = guide_weights(y, soft, MaskGuidance{});
    for (std::size_t j = 0; j < w0.size(); ++j) CHECK(w0.data[j] == doctest::Approx(std::exp(std::cos(soft.data[j]))));
}

TEST_CASE("total loss") {
    CHECK(total_loss(2.0, -2.8, 1.0).l_total == doctest::Approx(2.22).epsilon(1e-14));
    CHECK(total_loss(1.5, -3.0, 4.0, 0.0, 0.0).l_total == 1.5);
    CHECK(total_loss(0, 0, 0).l_total == 0.0);
    CHECK_THROWS_AS(total_loss(1, 1, 1, -0.1, 0.5), ConfigError);
    CHECK_THROWS_AS(total_loss(1, 1, 1, 0.1, -0.5), ConfigError);
    // Affine in each component.
    const double a = total_loss(1.0, 2.0, 3.0, 0.3, 0.7).l_total;
    CHECK(total_loss(1.0, 3.0, 3.0, 0.3, 0.7).l_total - a == doctest::Approx(0.3));
    CHECK(total_loss(1.0, 2.0, 4.0, 0.3, 0.7).l_total - a == doctest::Approx(0.7));
    CHECK(total_loss(2.0, 2.0, 3.0, 0.3, 0.7).l_total - a == doctest::Approx(1.0));
}

TEST_CASE("loss gradients match central differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(100 + seed);
        EdgeMapSet m = testing::random_edge_maps(4, 4, rng);
        for (ProbMap* p : {&m.coarse, &m.medium, &m.fine, &m.fused})
            for (double& v : p->data) v = 0.02 + 0.96 * v;
        GranularityLabels y{testing::random_binary(4, 4, 0.2, rng), testing::random_binary(4, 4, 0.4, rng),
                            testing::random_binary(4, 4, 0.6, rng)};
        const BinaryMap yu = testing::random_binary(4, 4, 0.3, rng);
        const ProbMap soft = testing::random_prob(4, 4, rng);
        MaskGuidance g{testing::random_binary(4, 4, 0.4, rng), testing::random_prob(4, 4, rng)};

        check_close(balanced_bce(m.fused, yu).grad, numeric_grad(m.fused, [&] { return balanced_bce(m.fused, yu).value; }));
        const SideLossValue side = side_loss(m, y);
        check_close(side.grad_coarse, numeric_grad(m.coarse, [&] { return side_loss(m, y).value; }));
        check_close(side.grad_medium, numeric_grad(m.medium, [&] { return side_loss(m, y).value; }));
        check_close(side.grad_fine, numeric_grad(m.fine, [&] { return side_loss(m, y).value; }));
        const SideLossValue differ = differ_loss(m, y);
        check_close(differ.grad_coarse, numeric_grad(m.coarse, [&] { return differ_loss(m, y).value; }));
        check_close(differ.grad_medium, numeric_grad(m.medium, [&] { return differ_loss(m, y).value; }));
        check_close(differ.grad_fine, numeric_grad(m.fine, [&] { return differ_loss(m, y).value; }));
        check_close(guide_loss(m.fused, yu, soft, g).grad,
                    numeric_grad(m.fused, [&] { return guide_loss(m.fused, yu, soft, g).value; }));

        // The weighted total, through the per-sample training objective.
        TrainingRecord rec;
        rec.ladder.levels = y;
        rec.ladder.consensus.label = yu;
        rec.ladder.consensus.soft = soft;
        rec.guidance = g;
        const TrainConfig cfg;
        const SampleLoss sl = sample_loss(m, rec, cfg);
        auto total = [&] { return sample_loss(m, rec, cfg).loss.l_total; };
        check_close(sl.grad_coarse, numeric_grad(m.coarse, total));
        check_close(sl.grad_medium, numeric_grad(m.medium, total));
        check_close(sl.grad_fine, numeric_grad(m.fine, total));
        check_close(sl.grad_fused, numeric_grad(m.fused, total));
    }
}
