#include <doctest.h>

#include <cstdio>
#include <random>

#include "sauge/errors.hpp"
#include "sauge/stn.hpp"
#include "sauge/trainer.hpp"
#include "support.hpp"

using namespace sauge;

namespace {

// Scalar probe: a fixed random linear functional of one output.
double probe(const ag::Var& out, const Tensor& w) {
    double s = 0;
    for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * out->value[j];
    return s;
}

// Checks d probe(f(x)) / d x against central differences on every input entry.
template <typename F>
void check_op(F&& f, std::vector<ag::Var> inputs, std::mt19937_64& rng) {
    const ag::Var out = f(inputs);
    const Tensor w = testing::random_tensor(out->value.shape(), rng);
    ag::backward(out, w);
    const double h = 1e-6;
    for (auto& in : inputs) {
        REQUIRE(!in->grad.empty());
        for (std::size_t j = 0; j < in->value.size(); ++j) {
            const double keep = in->value[j];
            in->value[j] = keep + h;
            const double up = probe(f(inputs), w);
            in->value[j] = keep - h;
            const double down = probe(f(inputs), w);
            in->value[j] = keep;
            CHECK(testing::gradients_agree(in->grad[j], (up - down) / (2 * h), 1e-5));
        }
    }
}

std::vector<ag::Var> leaves(std::mt19937_64& rng, std::initializer_list<std::vector<int>> shapes) {
    std::vector<ag::Var> out;
    for (const auto& s : shapes) out.push_back(ag::leaf(testing::random_tensor(s, rng)));
    return out;
}

ProviderConfig small_provider(int side) {
    ProviderConfig p;
    p.kind = ProviderKind::toy;
    p.seed = 7;
    p.grid_side = 2;
    p.feature_side = side;
    p.shallow_channels = 6;
    p.embed_channels = 5;
    p.mask_channels = 3;
    p.mask_side = side;
    return p;
}

StnConfig small_stn(const ProviderConfig& p) {
    StnConfig c = StnConfig::for_provider(p);
    c.c1 = 4;
    c.c2 = 2;
    c.ch = 3;
    c.heads = 2;
    c.ffb_depth = 1;
    return c;
}

// Moves every parameter away from its structured initial value.
void randomize(Stn& net, std::mt19937_64& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& [name, v] : net.params().entries())
        for (auto& x : v->value.values()) x += u(rng);
}

double total_of(const Stn& net, const FeatureBundle& b, const TrainingRecord& rec, const TrainConfig& cfg) {
    const EdgeMapVars out = net.forward(net.inputs(b), rec.rows, rec.cols);
    return sample_loss(to_edge_maps(out), rec, cfg).loss.l_total;
}

}  // namespace

TEST_CASE("autograd primitives match finite differences") {
    std::mt19937_64 rng(1);
    check_op([](auto& v) { return ag::add(v[0], v[1]); }, leaves(rng, {{2, 3, 3}, {2, 3, 3}}), rng);
    check_op([](auto& v) { return ag::mul(v[0], v[1]); }, leaves(rng, {{2, 3, 3}, {2, 3, 3}}), rng);
    check_op([](auto& v) { return ag::gelu(v[0]); }, leaves(rng, {{2, 3, 3}}), rng);
    check_op([](auto& v) { return ag::sigmoid(v[0]); }, leaves(rng, {{2, 3, 3}}), rng);
    check_op([](auto& v) { return ag::relu(v[0]); }, leaves(rng, {{2, 3, 3}}), rng);
    check_op([](auto& v) { return ag::conv2d(v[0], v[1], v[2]); }, leaves(rng, {{3, 4, 5}, {2, 3, 3, 3}, {2}}), rng);
    check_op([](auto& v) { return ag::conv2d(v[0], v[1], nullptr); }, leaves(rng, {{3, 4, 4}, {2, 3, 1, 1}}), rng);
    check_op([](auto& v) { return ag::depthwise_conv2d(v[0], v[1], v[2]); }, leaves(rng, {{3, 4, 5}, {3, 1, 3, 3}, {3}}),
             rng);
    check_op([](auto& v) { return ag::layer_norm_channels(v[0], v[1], v[2]); }, leaves(rng, {{4, 3, 3}, {4}, {4}}), rng);
    check_op([](auto& v) { return ag::concat_channels(v); }, leaves(rng, {{1, 2, 3}, {2, 2, 3}}), rng);
    check_op([](auto& v) { return ag::slice_channels(v[0], 1, 2); }, leaves(rng, {{4, 2, 2}}), rng);
    check_op([](auto& v) { return ag::resize_bilinear(v[0], 7, 5); }, leaves(rng, {{2, 3, 4}}), rng);
    check_op([](auto& v) { return ag::resize_bilinear(v[0], 2, 3); }, leaves(rng, {{2, 5, 6}}), rng);
    check_op([](auto& v) { return ag::avg_pool(v[0], 2); }, leaves(rng, {{2, 4, 6}}), rng);
    check_op([](auto& v) { return ag::attention(v[0], v[1], v[2], 2); }, leaves(rng, {{4, 2, 3}, {4, 3, 2}, {4, 3, 2}}),
             rng);
}

TEST_CASE("autograd shape errors") {
    std::mt19937_64 rng(2);
    auto v = leaves(rng, {{2, 3, 3}, {2, 3, 4}, {3, 4, 4}, {2, 4, 3, 3}});
    CHECK_THROWS_AS(ag::add(v[0], v[1]), DimensionError);
    CHECK_THROWS_AS(ag::conv2d(v[2], v[3], nullptr), DimensionError);
    CHECK_THROWS_AS(ag::avg_pool(v[1], 2), DimensionError);
    CHECK_THROWS_AS(ag::attention(v[2], v[2], v[2], 2), DimensionError);
}

TEST_CASE("full network gradients match finite differences") {
    // 4x4 feature grids, 16x16 outputs, every parameter touched by the total loss.
    const ProviderConfig pc = small_provider(4);
    const ToyBackbone provider(pc);
    TrainConfig cfg;
    cfg.provider = pc;
    cfg.stn = small_stn(pc);
    int checked = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        Stn net(cfg.stn, seed);
        randomize(net, rng, 0.3);
        const Sample s = testing::synthetic_sample("s", 16, 16, seed);
        std::mt19937_64 draw(seed);
        const TrainingBatch batch = prepare_batch({s}, provider, nullptr, cfg.zeta, draw);
        const TrainingRecord& rec = batch[0][0];
        const FeatureBundle& b = rec.features;

        const EdgeMapVars out = net.forward(net.inputs(b), rec.rows, rec.cols);
        const SampleLoss sl = sample_loss(to_edge_maps(out), rec, cfg);
        const ag::Var roots[] = {out.coarse, out.medium, out.fine, out.fused};
        const Tensor seeds[] = {to_tensor(sl.grad_coarse), to_tensor(sl.grad_medium), to_tensor(sl.grad_fine),
                                to_tensor(sl.grad_fused)};
        net.params().zero_grad();
        ag::backward(roots, seeds);

        for (auto& [name, v] : net.params().entries()) {
            REQUIRE(!v->grad.empty());
            std::uniform_int_distribution<std::size_t> pick(0, v->value.size() - 1);
            for (int k = 0; k < 2; ++k) {
                const std::size_t j = pick(rng);
                // Fourth-order central stencil: the loss is a sum over every pixel.
                const double keep = v->value[j], h = 1e-5;
                auto at = [&](double x) {
                    v->value[j] = x;
                    return total_of(net, b, rec, cfg);
                };
                const double numeric = (at(keep - 2 * h) - 8 * at(keep - h) + 8 * at(keep + h) - at(keep + 2 * h)) / (12 * h);
                v->value[j] = keep;
                INFO(name, "[", j, "] seed ", seed, ": ", v->grad[j], " vs ", numeric);
                CHECK(testing::gradients_agree(v->grad[j], numeric, 1e-4));
                ++checked;
            }
        }
    }
    CHECK(checked > 20 * 40);
}

TEST_CASE("coarse and medium outputs ignore later features") {
    const ProviderConfig pc = small_provider(4);
    const ToyBackbone provider(pc);
    std::mt19937_64 rng(3);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        StnConfig sc = small_stn(pc);
        sc.ch = 8;
        Stn net(sc, seed);
        randomize(net, rng, 0.1);
        const FeatureBundle b = provider.extract(testing::synthetic_sample("s", 16, 16, seed).image);

        // Output probes check isolation; feature probes (no ReLU in between) check
        // that the expected paths are live.
        auto grads_from = [&](auto pick) {
            FeatureVars in = net.inputs(b, true);
            GranularityVars gf = net.cascade(net.project(in));
            const EdgeMapVars out = net.heads(gf, 16, 16);
            const ag::Var root = pick(out, gf);
            ag::backward(root, testing::random_tensor(root->value.shape(), rng));
            return in;
        };
        auto zero = [](const ag::Var& v) {
            for (double g : v->grad.values())
                if (g != 0.0) return false;
            return true;
        };
        auto masks_zero = [&](const FeatureVars& in) {
            for (const auto& m : in.masks)
                if (!zero(m)) return false;
            return true;
        };

        const FeatureVars c = grads_from([](const EdgeMapVars& o, const GranularityVars&) { return o.coarse; });
        CHECK(zero(c.shallow));
        CHECK(masks_zero(c));
        const FeatureVars m = grads_from([](const EdgeMapVars& o, const GranularityVars&) { return o.medium; });
        CHECK(masks_zero(m));

        const FeatureVars fc = grads_from([](const EdgeMapVars&, const GranularityVars& g) { return g.coarse; });
        CHECK_FALSE(zero(fc.embedding));
        const FeatureVars fm = grads_from([](const EdgeMapVars&, const GranularityVars& g) { return g.medium_fused; });
        CHECK_FALSE(zero(fm.shallow));
        CHECK(masks_zero(fm));
        const FeatureVars ff = grads_from([](const EdgeMapVars&, const GranularityVars& g) { return g.fine_fused; });
        CHECK_FALSE(masks_zero(ff));
        CHECK_FALSE(zero(ff.shallow));
    }
}

TEST_CASE("fuse block is the identity when its value path is zero") {
    std::mt19937_64 rng(4);
    StnParams p;
    FeatureFuseBlock ffb(p, "f", 4, 6, 2, 2, 10, rng);
    for (auto& [name, v] : p.entries())
        if (name.find(".v.") != std::string::npos) v->value.fill(0.0);
    const ag::Var q = ag::constant(testing::random_tensor({4, 3, 5}, rng));
    const ag::Var c = ag::constant(testing::random_tensor({6, 3, 5}, rng));
    CHECK(ffb(q, c)->value.values() == q->value.values());
}

TEST_CASE("fuse block does not depend on the order of context pixels") {
    std::mt19937_64 rng(5);
    StnParams p;
    FeatureFuseBlock ffb(p, "f", 4, 3, 2, 1, 8, rng);
    for (auto& [name, v] : p.entries())
        for (auto& x : v->value.values()) x += std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    const Tensor q = testing::random_tensor({4, 3, 3}, rng), c = testing::random_tensor({3, 3, 3}, rng);
    std::vector<int> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor cp({3, 3, 3});
    for (int ch = 0; ch < 3; ++ch)
        for (int k = 0; k < 9; ++k) cp.at(ch, k / 3, k % 3) = c.at(ch, perm[k] / 3, perm[k] % 3);
    const Tensor a = ffb(ag::constant(q), ag::constant(c))->value;
    const Tensor b = ffb(ag::constant(q), ag::constant(cp))->value;
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == doctest::Approx(b[j]).epsilon(1e-12));
    CHECK_THROWS_AS(ffb(ag::constant(q), ag::constant(testing::random_tensor({3, 2, 3}, rng))), DimensionError);
}

TEST_CASE("base configuration parameter budget") {
    const Stn net(StnConfig::base(), 0);
    const std::size_t n = net.parameter_count();
    std::printf("base STN trainable parameters: %zu\n", n);
    CHECK(n >= 800000);
    CHECK(n <= 2000000);
    std::size_t manual = 0;
    for (const auto& [name, v] : net.params().entries()) manual += v->value.size();
    CHECK(manual == n);
}

TEST_CASE("outputs are probabilities at image resolution") {
    const ProviderConfig pc = small_provider(4);
    const ToyBackbone provider(pc);
    const Stn net(small_stn(pc), 9);
    const Image img = testing::synthetic_sample("s", 20, 24, 1).image;
    const EdgeMapSet m = net.predict(provider.extract(img));
    for (const ProbMap* p : {&m.coarse, &m.medium, &m.fine, &m.fused}) {
        CHECK(p->rows == 20);
        CHECK(p->cols == 24);
        for (double v : p->data) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
    CHECK(net.predict(provider.extract(img)).fused == m.fused);
}

TEST_CASE("network construction and input checks") {
    StnConfig c = StnConfig::base();
    c.heads = 3;
    CHECK_THROWS_AS(Stn(c, 0), ConfigError);
    c = StnConfig::base();
    c.proj_kernel = 2;
    CHECK_THROWS_AS(Stn(c, 0), ConfigError);

    const ProviderConfig pc = small_provider(4);
    const ToyBackbone provider(pc);
    StnConfig wrong = small_stn(pc);
    wrong.embed_channels += 1;
    const Stn net(wrong, 0);
    CHECK_THROWS_AS(net.inputs(provider.extract(testing::synthetic_sample("s", 16, 16, 1).image)), ConfigError);
    CHECK(StnConfig::from_key_values(small_stn(pc).to_key_values()) == small_stn(pc));
}

TEST_CASE("same seed gives the same weights") {
    const ProviderConfig pc = small_provider(4);
    const Stn a(small_stn(pc), 11), b(small_stn(pc), 11), c(small_stn(pc), 12);
    bool all_same = true, any_diff = false;
    for (std::size_t i = 0; i < a.params().entries().size(); ++i) {
        all_same &= a.params().entries()[i].second->value.values() == b.params().entries()[i].second->value.values();
        any_diff |= a.params().entries()[i].second->value.values() != c.params().entries()[i].second->value.values();
    }
    CHECK(all_same);
    CHECK(any_diff);
}
