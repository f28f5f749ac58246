#include "sauge/stn.hpp"

#include <algorithm>
#include <cmath>

#include "sauge/errors.hpp"

namespace sauge {

namespace {

Tensor uniform_tensor(std::vector<int> shape, double bound, std::mt19937_64& gen) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.values()) v = dist(gen);
    return t;
}

Tensor conv_weight(int co, int ci, int k, std::mt19937_64& gen) {
    return uniform_tensor({co, ci, k, k}, 1.0 / std::sqrt(static_cast<double>(ci * k * k)), gen);
}

void add_conv(StnParams& p, const std::string& name, int co, int ci, int k, std::mt19937_64& gen, double bias = 0.0) {
    p.add(name + ".weight", conv_weight(co, ci, k, gen));
    p.add(name + ".bias", Tensor({co}, bias));
}

void add_norm(StnParams& p, const std::string& name, int c) {
    p.add(name + ".weight", Tensor({c}, 1.0));
    p.add(name + ".bias", Tensor({c}, 0.0));
}

int head_width1(const StnConfig& c) { return std::max(1, c.ch / 2); }
int head_width2(const StnConfig& c) { return std::max(1, c.ch / 4); }

}  // namespace

// ---------------------------------------------------------------------------

StnConfig StnConfig::base() { return StnConfig{}; }

StnConfig StnConfig::for_provider(const ProviderConfig& provider) {
    StnConfig c;
    c.shallow_channels = provider.shallow_channels;
    c.embed_channels = provider.embed_channels;
    c.mask_channels = provider.mask_channels;
    c.prompts = provider.grid_side * provider.grid_side;
    return c;
}

void StnConfig::validate() const {
    for (int v : {shallow_channels, embed_channels, mask_channels, prompts, c1, c2, ch, heads, ffb_depth, proj_kernel})
        if (v <= 0) throw ConfigError("stn config: all widths must be positive");
    if (c1 % heads) throw ConfigError("stn config: c1 must be divisible by heads");
    if (proj_kernel % 2 == 0) throw ConfigError("stn config: proj_kernel must be odd");
    if (ffn_expansion <= 0 || ffn_hidden() < 1) throw ConfigError("stn config: ffn_expansion too small");
}

KeyValues StnConfig::to_key_values() const {
    KeyValues kv;
    kv.set("stn.shallow_channels", std::to_string(shallow_channels));
    kv.set("stn.embed_channels", std::to_string(embed_channels));
    kv.set("stn.mask_channels", std::to_string(mask_channels));
    kv.set("stn.prompts", std::to_string(prompts));
    kv.set("stn.c1", std::to_string(c1));
    kv.set("stn.c2", std::to_string(c2));
    kv.set("stn.ch", std::to_string(ch));
    kv.set("stn.heads", std::to_string(heads));
    kv.set("stn.ffb_depth", std::to_string(ffb_depth));
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", ffn_expansion);
    kv.set("stn.ffn_expansion", buf);
    kv.set("stn.proj_kernel", std::to_string(proj_kernel));
    return kv;
}

StnConfig StnConfig::from_key_values(const KeyValues& kv) {
    StnConfig c;
    c.shallow_channels = static_cast<int>(kv.get_int("stn.shallow_channels", c.shallow_channels));
    c.embed_channels = static_cast<int>(kv.get_int("stn.embed_channels", c.embed_channels));
    c.mask_channels = static_cast<int>(kv.get_int("stn.mask_channels", c.mask_channels));
    c.prompts = static_cast<int>(kv.get_int("stn.prompts", c.prompts));
    c.c1 = static_cast<int>(kv.get_int("stn.c1", c.c1));
    c.c2 = static_cast<int>(kv.get_int("stn.c2", c.c2));
    c.ch = static_cast<int>(kv.get_int("stn.ch", c.ch));
    c.heads = static_cast<int>(kv.get_int("stn.heads", c.heads));
    c.ffb_depth = static_cast<int>(kv.get_int("stn.ffb_depth", c.ffb_depth));
    c.ffn_expansion = kv.get_double("stn.ffn_expansion", c.ffn_expansion);
    c.proj_kernel = static_cast<int>(kv.get_int("stn.proj_kernel", c.proj_kernel));
    return c;
}

// ---------------------------------------------------------------------------

ag::Var StnParams::add(const std::string& name, Tensor init) {
    if (contains(name)) throw ConfigError("duplicate parameter name " + name);
    auto v = ag::leaf(std::move(init), true);
    entries_.emplace_back(name, v);
    return v;
}

const ag::Var& StnParams::get(const std::string& name) const {
    for (const auto& [n, v] : entries_)
        if (n == name) return v;
    throw ConfigError("unknown parameter " + name);
}

bool StnParams::contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::size_t StnParams::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : entries_) n += v->value.size();
    return n;
}

void StnParams::zero_grad() {
    for (auto& [name, v] : entries_) v->zero_grad();
}

// ---------------------------------------------------------------------------

FeatureFuseBlock::FeatureFuseBlock(StnParams& p, const std::string& prefix, int channels, int context_channels, int heads,
                                   int depth, int ffn_hidden, std::mt19937_64& gen)
    : channels_(channels), context_channels_(context_channels), heads_(heads), hidden_(ffn_hidden) {
    for (int l = 0; l < depth; ++l) {
        const std::string pre = prefix + "." + std::to_string(l) + ".";
        Layer L;
        add_norm(p, pre + "norm_q", channels);
        add_norm(p, pre + "norm_kv", context_channels);
        add_conv(p, pre + "q", channels, channels, 1, gen);
        add_conv(p, pre + "k", channels, context_channels, 1, gen);
        add_conv(p, pre + "v", channels, context_channels, 1, gen);
        add_conv(p, pre + "out", channels, channels, 1, gen);
        add_norm(p, pre + "norm_ffn", channels);
        add_conv(p, pre + "ffn_in", 2 * ffn_hidden, channels, 1, gen);
        p.add(pre + "ffn_dw.weight", uniform_tensor({2 * ffn_hidden, 1, 3, 3}, 1.0 / 3.0, gen));
        p.add(pre + "ffn_dw.bias", Tensor({2 * ffn_hidden}));
        p.add(pre + "ffn_out.weight", Tensor({channels, ffn_hidden, 1, 1}));
        p.add(pre + "ffn_out.bias", Tensor({channels}));
        auto g = [&](const std::string& n) { return p.get(pre + n); };
        L.norm_q_w = g("norm_q.weight"), L.norm_q_b = g("norm_q.bias");
        L.norm_kv_w = g("norm_kv.weight"), L.norm_kv_b = g("norm_kv.bias");
        L.q_w = g("q.weight"), L.q_b = g("q.bias");
        L.k_w = g("k.weight"), L.k_b = g("k.bias");
        L.v_w = g("v.weight"), L.v_b = g("v.bias");
        L.out_w = g("out.weight"), L.out_b = g("out.bias");
        L.norm_ffn_w = g("norm_ffn.weight"), L.norm_ffn_b = g("norm_ffn.bias");
        L.ffn_in_w = g("ffn_in.weight"), L.ffn_in_b = g("ffn_in.bias");
        L.ffn_dw_w = g("ffn_dw.weight"), L.ffn_dw_b = g("ffn_dw.bias");
        L.ffn_out_w = g("ffn_out.weight"), L.ffn_out_b = g("ffn_out.bias");
        layers_.push_back(std::move(L));
    }
}

ag::Var FeatureFuseBlock::operator()(const ag::Var& query, const ag::Var& context) const {
    const Tensor &qv = query->value, &cv = context->value;
    if (qv.rank() != 3 || cv.rank() != 3) throw DimensionError("ffb: inputs must be (C, H, W)");
    if (qv.dim(1) != cv.dim(1) || qv.dim(2) != cv.dim(2))
        throw DimensionError("ffb: spatial mismatch " + shape_str(qv.shape()) + " vs " + shape_str(cv.shape()));
    if (qv.dim(0) != channels_ || cv.dim(0) != context_channels_)
        throw DimensionError("ffb: channel mismatch " + shape_str(qv.shape()) + " / " + shape_str(cv.shape()));
    ag::Var x = query;
    for (const Layer& L : layers_) {
        const ag::Var qn = ag::layer_norm_channels(x, L.norm_q_w, L.norm_q_b);
        const ag::Var cn = ag::layer_norm_channels(context, L.norm_kv_w, L.norm_kv_b);
        const ag::Var q = ag::conv2d(qn, L.q_w, L.q_b);
        const ag::Var k = ag::conv2d(cn, L.k_w, L.k_b);
        const ag::Var v = ag::conv2d(cn, L.v_w, L.v_b);
        x = ag::add(x, ag::conv2d(ag::attention(q, k, v, heads_), L.out_w, L.out_b));

        const ag::Var y = ag::layer_norm_channels(x, L.norm_ffn_w, L.norm_ffn_b);
        const ag::Var h = ag::depthwise_conv2d(ag::conv2d(y, L.ffn_in_w, L.ffn_in_b), L.ffn_dw_w, L.ffn_dw_b);
        const ag::Var gated = ag::mul(ag::gelu(ag::slice_channels(h, 0, hidden_)), ag::slice_channels(h, hidden_, hidden_));
        x = ag::add(x, ag::conv2d(gated, L.ffn_out_w, L.ffn_out_b));
    }
    return x;
}

// ---------------------------------------------------------------------------

Stn::Stn(StnConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 gen(seed);
    const int k = cfg_.proj_kernel;
    add_conv(params_, "proj.embedding", cfg_.c1, cfg_.embed_channels, k, gen);
    add_conv(params_, "proj.shallow", cfg_.c1, cfg_.shallow_channels, k, gen);
    add_conv(params_, "proj.mask", cfg_.c2, cfg_.mask_channels, k, gen);

    add_conv(params_, "hidden.coarse", cfg_.ch, cfg_.c1, 3, gen);
    // Gates start close to 1: small weights, unit bias.
    params_.add("gate.coarse.weight", uniform_tensor({cfg_.c1, cfg_.ch, 1, 1}, 1e-2, gen));
    params_.add("gate.coarse.bias", Tensor({cfg_.c1}, 1.0));
    ffb1_ = FeatureFuseBlock(params_, "ffb1", cfg_.c1, cfg_.c1, cfg_.heads, cfg_.ffb_depth, cfg_.ffn_hidden(), gen);
    add_conv(params_, "hidden.medium", cfg_.ch, cfg_.c1, 3, gen);
    params_.add("gate.medium.weight", uniform_tensor({cfg_.c1, cfg_.ch, 1, 1}, 1e-2, gen));
    params_.add("gate.medium.bias", Tensor({cfg_.c1}, 1.0));
    ffb2_ = FeatureFuseBlock(params_, "ffb2", cfg_.c1, cfg_.c2 * cfg_.prompts, cfg_.heads, cfg_.ffb_depth,
                             cfg_.ffn_hidden(), gen);
    add_conv(params_, "hidden.fine", cfg_.ch, cfg_.c1, 3, gen);

    add_conv(params_, "fuse.medium", cfg_.ch, 2 * cfg_.ch, 3, gen);
    add_conv(params_, "fuse.fine", cfg_.ch, 2 * cfg_.ch, 3, gen);
    add_conv(params_, "fuse.final", cfg_.ch, 3 * cfg_.ch, 3, gen);

    add_conv(params_, "head.stage1", head_width1(cfg_), cfg_.ch, 3, gen);
    add_conv(params_, "head.stage2", head_width2(cfg_), head_width1(cfg_), 3, gen);
    add_conv(params_, "head.out", 1, head_width2(cfg_), 1, gen);
}

ag::Var Stn::conv(const std::string& name, const ag::Var& x) const {
    return ag::conv2d(x, params_.get(name + ".weight"), params_.get(name + ".bias"));
}

FeatureVars Stn::inputs(const FeatureBundle& bundle, bool requires_grad) const {
    bundle.validate();
    if (bundle.shallow_features.dim(0) != cfg_.shallow_channels || bundle.image_embedding.dim(0) != cfg_.embed_channels ||
        bundle.mask_embeddings.dim(1) != cfg_.mask_channels || bundle.prompt_count() != cfg_.prompts)
        throw ConfigError("stn: feature bundle channels (C_s=" + std::to_string(bundle.shallow_features.dim(0)) +
                          ", C_i=" + std::to_string(bundle.image_embedding.dim(0)) +
                          ", C_m=" + std::to_string(bundle.mask_embeddings.dim(1)) +
                          ", P=" + std::to_string(bundle.prompt_count()) + ") do not match the configured network");
    FeatureVars v;
    v.shallow = ag::leaf(bundle.shallow_features, requires_grad);
    v.embedding = ag::leaf(bundle.image_embedding, requires_grad);
    const int cm = bundle.mask_embeddings.dim(1), dm = bundle.mask_embeddings.dim(2);
    const std::size_t per = static_cast<std::size_t>(cm) * dm * dm;
    for (int p = 0; p < bundle.prompt_count(); ++p) {
        std::vector<double> data(bundle.mask_embeddings.data() + p * per, bundle.mask_embeddings.data() + (p + 1) * per);
        v.masks.push_back(ag::leaf(Tensor({cm, dm, dm}, std::move(data)), requires_grad));
    }
    return v;
}

EdgeAwareVars Stn::project(const FeatureVars& in) const {
    if (in.shallow->value.dim(0) != cfg_.shallow_channels || in.embedding->value.dim(0) != cfg_.embed_channels)
        throw ConfigError("stn.project: input channels do not match configuration");
    if (static_cast<int>(in.masks.size()) != cfg_.prompts)
        throw ConfigError("stn.project: expected " + std::to_string(cfg_.prompts) + " prompt embeddings, got " +
                          std::to_string(in.masks.size()));
    const int d = in.embedding->value.dim(1);
    EdgeAwareVars out;
    out.embedding = conv("proj.embedding", in.embedding);
    out.shallow = conv("proj.shallow", in.shallow);
    std::vector<ag::Var> per_prompt;
    per_prompt.reserve(in.masks.size());
    for (const auto& m : in.masks) {
        if (m->value.dim(0) != cfg_.mask_channels) throw ConfigError("stn.project: mask embedding channel mismatch");
        ag::Var r = conv("proj.mask", m);
        const int dm = r->value.dim(1);
        r = (dm % d == 0 && r->value.dim(2) % d == 0) ? ag::avg_pool(r, dm / d) : ag::resize_bilinear(r, d, d);
        per_prompt.push_back(std::move(r));
    }
    out.masks = ag::concat_channels(per_prompt);
    return out;
}

ag::Var Stn::ffb(int block, const ag::Var& query, const ag::Var& context) const {
    if (block == 1) return ffb1_(query, context);
    if (block == 2) return ffb2_(query, context);
    throw InputError("stn.ffb: block index must be 1 or 2");
}

GranularityVars Stn::cascade(const EdgeAwareVars& ea) const {
    GranularityVars gf;
    gf.coarse = conv("hidden.coarse", ea.embedding);
    const ag::Var em = ffb1_(ag::mul(ea.embedding, conv("gate.coarse", gf.coarse)), ea.shallow);
    gf.medium = conv("hidden.medium", em);
    const ag::Var ef = ag::mul(em, conv("gate.medium", gf.medium));
    gf.fine = conv("hidden.fine", ffb2_(ef, ea.masks));
    return gf;
}

ag::Var Stn::head(const ag::Var& features, int height, int width) const {
    const int d_h = features->value.dim(1), d_w = features->value.dim(2);
    const int mid_h = std::max(1, static_cast<int>(std::lround(std::sqrt(double(d_h) * height))));
    const int mid_w = std::max(1, static_cast<int>(std::lround(std::sqrt(double(d_w) * width))));
    ag::Var x = ag::relu(conv("head.stage1", ag::resize_bilinear(features, mid_h, mid_w)));
    x = ag::relu(conv("head.stage2", ag::resize_bilinear(x, height, width)));
    return ag::sigmoid(conv("head.out", x));
}

EdgeMapVars Stn::heads(GranularityVars& gf, int height, int width) const {
    EdgeMapVars out;
    out.coarse = head(gf.coarse, height, width);
    const ag::Var mc[] = {gf.medium, gf.coarse};
    gf.medium_fused = conv("fuse.medium", ag::concat_channels(mc));
    out.medium = head(gf.medium_fused, height, width);
    const ag::Var fm[] = {gf.fine, gf.medium_fused};
    gf.fine_fused = conv("fuse.fine", ag::concat_channels(fm));
    out.fine = head(gf.fine_fused, height, width);
    const ag::Var all[] = {gf.coarse, gf.medium_fused, gf.fine_fused};
    out.fused = head(conv("fuse.final", ag::concat_channels(all)), height, width);
    return out;
}

EdgeMapVars Stn::forward(const FeatureVars& in, int height, int width) const {
    GranularityVars gf = cascade(project(in));
    return heads(gf, height, width);
}

EdgeMapSet Stn::predict(const FeatureBundle& bundle) const {
    return to_edge_maps(forward(inputs(bundle), bundle.source_height, bundle.source_width));
}

void Stn::set_average_fuse(const std::string& which) {
    const std::string name = "fuse." + which;
    Tensor& w = params_.get(name + ".weight")->value;
    if (w.dim(1) != 2 * cfg_.ch) throw InputError("set_average_fuse: only medium/fine fuse two inputs");
    w.fill(0.0);
    const int k = w.dim(2), c = k / 2;
    for (int o = 0; o < cfg_.ch; ++o) {
        w[((static_cast<std::size_t>(o) * 2 * cfg_.ch + o) * k + c) * k + c] = 0.5;
        w[((static_cast<std::size_t>(o) * 2 * cfg_.ch + cfg_.ch + o) * k + c) * k + c] = 0.5;
    }
    params_.get(name + ".bias")->value.fill(0.0);
}

EdgeMapSet to_edge_maps(const EdgeMapVars& v) {
    return {to_map(v.coarse->value), to_map(v.medium->value), to_map(v.fine->value), to_map(v.fused->value)};
}

}  // namespace sauge
