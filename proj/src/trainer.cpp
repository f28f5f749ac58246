#include "sauge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "sauge/binio.hpp"
#include "sauge/errors.hpp"
#include "sauge/granularity.hpp"
#include "sauge/hashing.hpp"

namespace sauge {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

AblationSwitches AblationSwitches::parse(const std::string& list) {
    AblationSwitches s;
    std::istringstream is(list);
    std::string item;
    while (std::getline(is, item, ',')) {
        item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
        if (item.empty() || item == "none") continue;
        if (item == "soc_off") s.soc_off = true;
        else if (item == "guide_off") s.guide_off = true;
        else if (item == "differ_off") s.differ_off = true;
        else throw ConfigError("unknown ablation switch '" + item + "' (expected soc_off, guide_off, differ_off)");
    }
    return s;
}

std::string AblationSwitches::to_string() const {
    std::vector<std::string> on;
    if (soc_off) on.push_back("soc_off");
    if (guide_off) on.push_back("guide_off");
    if (differ_off) on.push_back("differ_off");
    if (on.empty()) return "none";
    std::string out = on.front();
    for (std::size_t i = 1; i < on.size(); ++i) out += "," + on[i];
    return out;
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<double> parse_list(const std::string& s, const std::string& key) {
    std::vector<double> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (item.find_first_not_of(' ', used) != std::string::npos) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("invalid number '" + item + "' in " + key);
        }
    }
    return out;
}

}  // namespace

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
    TrainConfig c;
    c.learning_rate = kv.get_double("train.learning_rate", c.learning_rate);
    c.weight_decay = kv.get_double("train.weight_decay", c.weight_decay);
    c.epochs = static_cast<int>(kv.get_int("train.epochs", c.epochs));
    c.milestone = static_cast<int>(kv.get_int("train.milestone", c.milestone));
    c.lr_decay = kv.get_double("train.lr_decay", c.lr_decay);
    c.batch_size = static_cast<int>(kv.get_int("train.batch_size", c.batch_size));
    c.lambda = kv.get_double("train.lambda", c.lambda);
    c.beta = kv.get_double("train.beta", c.beta);
    c.zeta = kv.get_double("train.zeta", c.zeta);
    c.clip_norm = kv.get_double("train.clip_norm", c.clip_norm);
    c.max_steps = static_cast<int>(kv.get_int("train.max_steps", c.max_steps));
    c.seed = static_cast<std::uint64_t>(kv.get_int("train.seed", 0));
    c.ablation = AblationSwitches::parse(kv.get("ablate.switches").value_or("none"));

    c.augment.hflip_prob = kv.get_double("augment.hflip_prob", c.augment.hflip_prob);
    c.augment.vflip_prob = kv.get_double("augment.vflip_prob", c.augment.vflip_prob);
    c.augment.rotate90 = kv.get_bool("augment.rotate90", c.augment.rotate90);
    if (auto s = kv.get("augment.scales")) c.augment.scales = parse_list(*s, "augment.scales");
    c.augment.crop_rows = static_cast<int>(kv.get_int("augment.crop_rows", 0));
    c.augment.crop_cols = static_cast<int>(kv.get_int("augment.crop_cols", 0));

    ProviderConfig& p = c.provider;
    p.kind = parse_provider_kind(kv.get("provider.kind").value_or("toy"));
    p.grid_side = static_cast<int>(kv.get_int("provider.grid_side", p.grid_side));
    if (auto path = kv.get("provider.checkpoint"); path && !path->empty()) p.checkpoint_path = *path;
    p.seed = static_cast<std::uint64_t>(kv.get_int("provider.seed", 0));
    p.feature_side = static_cast<int>(kv.get_int("provider.feature_side", p.feature_side));
    p.shallow_channels = static_cast<int>(kv.get_int("provider.shallow_channels", p.shallow_channels));
    p.embed_channels = static_cast<int>(kv.get_int("provider.embed_channels", p.embed_channels));
    p.mask_channels = static_cast<int>(kv.get_int("provider.mask_channels", p.mask_channels));
    p.mask_side = static_cast<int>(kv.get_int("provider.mask_side", p.mask_side));

    KeyValues stn = StnConfig::for_provider(p).to_key_values();
    for (const auto& [k, v] : kv.entries())
        if (k.rfind("stn.", 0) == 0) stn.set(k, v);
    c.stn = StnConfig::from_key_values(stn);
    const KeyValues known = c.to_key_values();
    for (const auto& [k, v] : kv.entries())
        if (!known.has(k)) throw ConfigError("unknown configuration key '" + k + "'");
    return c;
}

KeyValues TrainConfig::to_key_values() const {
    KeyValues kv = stn.to_key_values();
    kv.set("train.learning_rate", fmt_double(learning_rate));
    kv.set("train.weight_decay", fmt_double(weight_decay));
    kv.set("train.epochs", std::to_string(epochs));
    kv.set("train.milestone", std::to_string(milestone));
    kv.set("train.lr_decay", fmt_double(lr_decay));
    kv.set("train.batch_size", std::to_string(batch_size));
    kv.set("train.lambda", fmt_double(lambda));
    kv.set("train.beta", fmt_double(beta));
    kv.set("train.zeta", fmt_double(zeta));
    kv.set("train.clip_norm", fmt_double(clip_norm));
    kv.set("train.max_steps", std::to_string(max_steps));
    kv.set("train.seed", std::to_string(seed));
    kv.set("ablate.switches", ablation.to_string());
    kv.set("augment.hflip_prob", fmt_double(augment.hflip_prob));
    kv.set("augment.vflip_prob", fmt_double(augment.vflip_prob));
    kv.set("augment.rotate90", augment.rotate90 ? "true" : "false");
    std::string scales;
    for (std::size_t i = 0; i < augment.scales.size(); ++i) scales += (i ? "," : "") + fmt_double(augment.scales[i]);
    kv.set("augment.scales", scales);
    kv.set("augment.crop_rows", std::to_string(augment.crop_rows));
    kv.set("augment.crop_cols", std::to_string(augment.crop_cols));
    kv.set("provider.kind", sauge::to_string(provider.kind));
    kv.set("provider.grid_side", std::to_string(provider.grid_side));
    kv.set("provider.checkpoint", provider.checkpoint_path ? provider.checkpoint_path->string() : "");
    kv.set("provider.seed", std::to_string(provider.seed.value_or(0)));
    kv.set("provider.feature_side", std::to_string(provider.feature_side));
    kv.set("provider.shallow_channels", std::to_string(provider.shallow_channels));
    kv.set("provider.embed_channels", std::to_string(provider.embed_channels));
    kv.set("provider.mask_channels", std::to_string(provider.mask_channels));
    kv.set("provider.mask_side", std::to_string(provider.mask_side));
    return kv;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0)) throw ConfigError("train.learning_rate must be positive");
    if (weight_decay < 0) throw ConfigError("train.weight_decay must be non-negative");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (milestone < 0) throw ConfigError("train.milestone must be non-negative");
    if (!(lr_decay > 0)) throw ConfigError("train.lr_decay must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (lambda < 0 || beta < 0) throw ConfigError("train.lambda and train.beta must be non-negative");
    if (!(zeta > 0 && zeta < 1)) throw ConfigError("train.zeta must lie in (0, 1)");
    if (clip_norm < 0) throw ConfigError("train.clip_norm must be non-negative");
    if (max_steps < 0) throw ConfigError("train.max_steps must be non-negative");
    augment.validate();
    provider.validate();
    stn.validate();
}

int TrainConfig::effective_milestone() const {
    return milestone > 0 ? milestone : static_cast<int>(std::lround(2.0 * epochs / 3.0));
}

double TrainConfig::lr_at_epoch(int epoch) const {
    return epoch >= effective_milestone() ? learning_rate * lr_decay : learning_rate;
}

std::uint64_t TrainConfig::hash() const {
    const std::string s = to_key_values().serialize();
    Fnv1a h;
    h.update(std::as_bytes(std::span<const char>(s.data(), s.size())));
    return h.digest();
}

// ---------------------------------------------------------------------------
// Optimizer

void Adam::step(StnParams& params, double lr, double weight_decay) {
    const auto& entries = params.entries();
    if (m_.empty()) {
        for (const auto& [name, var] : entries) {
            m_.push_back(Tensor::zeros_like(var->value));
            v_.push_back(Tensor::zeros_like(var->value));
        }
    }
    if (m_.size() != entries.size()) throw TrainingError("optimizer state does not match the parameter set");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        Tensor& theta = entries[i].second->value;
        const Tensor& grad = entries[i].second->grad;
        const bool has_grad = !grad.empty();
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double g = (has_grad ? grad[j] : 0.0) + weight_decay * theta[j];
            double& m = m_[i][j];
            double& v = v_[i][j];
            m = beta1_ * m + (1.0 - beta1_) * g;
            v = beta2_ * v + (1.0 - beta2_) * g * g;
            const double update = lr * (m / bc1) / (std::sqrt(v / bc2) + eps_);
            theta[j] = static_cast<double>(static_cast<float>(theta[j] - update));
        }
    }
}

void Adam::restore(std::uint64_t t, std::vector<Tensor> m, std::vector<Tensor> v) {
    if (m.size() != v.size()) throw LoadError("optimizer moments are inconsistent");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

double gradient_norm(const StnParams& params) {
    double sq = 0.0;
    for (const auto& [name, var] : params.entries())
        for (double g : var->grad.values()) sq += g * g;
    return std::sqrt(sq);
}

double clip_gradients(StnParams& params, double max_norm) {
    const double norm = gradient_norm(params);
    if (max_norm > 0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (const auto& [name, var] : params.entries())
            for (double& g : var->grad.values()) g *= s;
    }
    return norm;
}

std::string to_json_line(const StepRecord& r) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["l_side"] = r.loss.l_side;
    j["l_differ"] = r.loss.l_differ;
    j["l_guide"] = r.loss.l_guide;
    j["l_total"] = r.loss.l_total;
    j["lr"] = r.lr;
    return j.dump();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'A', 'U', 'G', 'E', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw LoadError("cannot write checkpoint " + path.string());
        binio::Writer w(os);
        w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
        w.u32(kCheckpointVersion);
        w.str(ckpt.config.to_key_values().serialize());
        w.u64(ckpt.config_hash);
        w.u32(static_cast<std::uint32_t>(ckpt.epoch));
        w.u64(ckpt.step);
        const auto& entries = ckpt.model.params().entries();
        w.u32(static_cast<std::uint32_t>(entries.size()));
        for (const auto& [name, var] : entries) {
            w.str(name);
            const Tensor& t = var->value;
            w.u32(static_cast<std::uint32_t>(t.rank()));
            for (int d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
            for (double v : t.values()) w.f32(static_cast<float>(v));
        }
        w.u64(ckpt.optimizer.steps());
        const auto& m = ckpt.optimizer.first_moments();
        const auto& v = ckpt.optimizer.second_moments();
        w.u32(static_cast<std::uint32_t>(m.size()));
        for (std::size_t i = 0; i < m.size(); ++i) {
            for (double x : m[i].values()) w.f64(x);
            for (double x : v[i].values()) w.f64(x);
        }
        if (!os) throw LoadError("failed writing checkpoint " + path.string());
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("cannot open checkpoint " + path.string());
    binio::Reader r(is, path.string());
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (!std::equal(magic, magic + 8, kCheckpointMagic)) throw LoadError(path.string() + ": not a checkpoint file");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw LoadError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    TrainConfig cfg;
    try {
        cfg = TrainConfig::from_key_values(KeyValues::parse(r.str(), path.string()));
        cfg.validate();
    } catch (const ConfigError& e) {
        throw LoadError(path.string() + ": invalid stored configuration: " + e.what());
    }
    Checkpoint ckpt(cfg, Stn(cfg.stn, cfg.seed));
    ckpt.config_hash = r.u64();
    if (ckpt.config_hash != cfg.hash()) throw LoadError(path.string() + ": configuration hash mismatch");
    ckpt.epoch = static_cast<int>(r.u32());
    ckpt.step = r.u64();
    const auto& entries = ckpt.model.params().entries();
    const std::uint32_t n = r.u32();
    if (n != entries.size())
        throw LoadError(path.string() + ": expected " + std::to_string(entries.size()) + " parameter tensors, found " +
                        std::to_string(n));
    for (const auto& [name, var] : entries) {
        const std::string stored = r.str();
        if (stored != name) throw LoadError(path.string() + ": expected parameter '" + name + "', found '" + stored + "'");
        const std::uint32_t rank = r.u32();
        if (rank > 8) throw LoadError(path.string() + ": parameter '" + name + "' has implausible rank");
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(r.u32());
        if (shape != var->value.shape())
            throw LoadError(path.string() + ": parameter '" + name + "' has shape " + shape_str(shape) + ", expected " +
                            shape_str(var->value.shape()));
        for (double& v : var->value.values()) v = static_cast<double>(r.f32());
    }
    const std::uint64_t t = r.u64();
    const std::uint32_t nm = r.u32();
    if (nm != 0 && nm != entries.size()) throw LoadError(path.string() + ": optimizer state does not match parameters");
    std::vector<Tensor> m, v;
    for (std::uint32_t i = 0; i < nm; ++i) {
        Tensor mi = Tensor::zeros_like(entries[i].second->value), vi = mi;
        for (double& x : mi.values()) x = r.f64();
        for (double& x : vi.values()) x = r.f64();
        m.push_back(std::move(mi));
        v.push_back(std::move(vi));
    }
    ckpt.optimizer.restore(t, std::move(m), std::move(v));
    if (!r.at_end()) throw LoadError(path.string() + ": trailing bytes after checkpoint");
    return ckpt;
}

Checkpoint make_checkpoint(const TrainConfig& cfg) {
    cfg.validate();
    Checkpoint ckpt(cfg, Stn(cfg.stn, cfg.seed));
    for (const auto& [name, var] : ckpt.model.params().entries())
        for (double& v : var->value.values()) v = static_cast<double>(static_cast<float>(v));
    ckpt.config_hash = cfg.hash();
    return ckpt;
}

// ---------------------------------------------------------------------------
// Training

SampleLoss sample_loss(const EdgeMapSet& maps, const TrainingRecord& rec, const TrainConfig& cfg) {
    const auto& cons = rec.ladder.consensus;
    const LossValue guide = cfg.ablation.guide_off ? balanced_bce(maps.fused, cons.label)
                                                   : guide_loss(maps.fused, cons.label, cons.soft, rec.guidance);
    SampleLoss out;
    out.grad_fused = guide.grad;
    const int h = maps.fused.rows, w = maps.fused.cols;
    if (cfg.ablation.soc_off) {
        out.loss = total_loss(guide.value, 0.0, 0.0, 0.0, 0.0);
        out.grad_coarse = out.grad_medium = out.grad_fine = ProbMap(h, w);
        return out;
    }
    const double lambda = cfg.ablation.differ_off ? 0.0 : cfg.lambda;
    const SideLossValue side = side_loss(maps, rec.ladder.levels);
    const SideLossValue differ = differ_loss(maps, rec.ladder.levels);
    out.loss = total_loss(guide.value, differ.value, side.value, lambda, cfg.beta);
    auto combine = [&](const ProbMap& s, const ProbMap& d) {
        ProbMap g(h, w);
        for (std::size_t j = 0; j < g.size(); ++j) g.data[j] = cfg.beta * s.data[j] + lambda * d.data[j];
        return g;
    };
    out.grad_coarse = combine(side.grad_coarse, differ.grad_coarse);
    out.grad_medium = combine(side.grad_medium, differ.grad_medium);
    out.grad_fine = combine(side.grad_fine, differ.grad_fine);
    return out;
}

namespace {

/// Keeps features of images seen before; augmentation-free runs extract once.
class MemoProvider final : public FeatureProvider {
public:
    explicit MemoProvider(const FeatureProvider& inner) : inner_(inner) {}

    FeatureBundle extract(const Image& image) const override {
        const std::uint64_t key = image_hash(image);
        {
            std::lock_guard<std::mutex> lock(mu_);
            if (auto it = memo_.find(key); it != memo_.end()) return it->second;
        }
        FeatureBundle b = inner_.extract(image);
        std::lock_guard<std::mutex> lock(mu_);
        memo_.emplace(key, b);
        return b;
    }
    ProviderKind kind() const override { return inner_.kind(); }
    int grid_side() const override { return inner_.grid_side(); }
    std::size_t frozen_parameter_count() const override { return inner_.frozen_parameter_count(); }
    std::uint64_t state_hash() const override { return inner_.state_hash(); }

private:
    const FeatureProvider& inner_;
    mutable std::mutex mu_;
    mutable std::unordered_map<std::uint64_t, FeatureBundle> memo_;
};

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), 0x5a17u};
    std::uint64_t out[1];
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    return out[0];
}

Tensor seed_tensor(const ProbMap& g, double scale) {
    Tensor t = to_tensor(g);
    for (double& v : t.values()) v *= scale;
    return t;
}

}  // namespace

TrainResult train(Checkpoint& ckpt, const std::vector<Sample>& samples, const TrainOptions& opts) {
    const TrainConfig& cfg = ckpt.config;
    cfg.validate();
    if (samples.empty()) throw InputError("training set is empty");
    for (const auto& s : samples) s.validate();
    const auto provider = make_provider(cfg.provider);
    const MemoProvider memo(*provider);
    StnParams& params = ckpt.model.params();

    std::ofstream log_file;
    if (opts.log_path) {
        if (opts.log_path->has_parent_path()) fs::create_directories(opts.log_path->parent_path());
        log_file.open(*opts.log_path, ckpt.step > 0 ? std::ios::app : std::ios::trunc);
        if (!log_file) throw LoadError("cannot open training log " + opts.log_path->string());
    }

    TrainResult result;
    auto save = [&](const std::string& name) {
        if (!opts.checkpoint_dir) return;
        const fs::path p = *opts.checkpoint_dir / name;
        save_checkpoint(p, ckpt);
        if (name == "last.ckpt") result.last_checkpoint = p;
    };

    auto step_limit_reached = [&] { return cfg.max_steps > 0 && ckpt.step >= static_cast<std::uint64_t>(cfg.max_steps); };
    const std::size_t n = samples.size();
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = ckpt.epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at_epoch(epoch);
        std::mt19937_64 rng(epoch_seed(cfg.seed, epoch));
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        bool complete = true;
        for (std::size_t start = 0; start < n; start += bs) {
            if (step_limit_reached()) {
                complete = false;
                break;
            }
            std::vector<Sample> batch;
            for (std::size_t i = start; i < std::min(n, start + bs); ++i) {
                const Sample& s = samples[order[i]];
                batch.push_back(cfg.augment.is_identity() ? s : augment(s, cfg.augment, rng));
            }
            const TrainingBatch groups = prepare_batch(batch, memo, opts.cache, cfg.zeta, rng);
            params.zero_grad();
            const double scale = 1.0 / static_cast<double>(batch.size());
            LossBreakdown mean;
            for (const auto& group : groups)
                for (const TrainingRecord& rec : group) {
                    const EdgeMapVars out = ckpt.model.forward(ckpt.model.inputs(rec.features), rec.rows, rec.cols);
                    const SampleLoss sl = sample_loss(to_edge_maps(out), rec, cfg);
                    if (!std::isfinite(sl.loss.l_total)) {
                        std::string where = "none saved yet";
                        if (opts.checkpoint_dir && fs::exists(*opts.checkpoint_dir / "last.ckpt"))
                            where = (*opts.checkpoint_dir / "last.ckpt").string();
                        throw TrainingError("non-finite loss at step " + std::to_string(ckpt.step + 1) + " (epoch " +
                                            std::to_string(epoch + 1) + ", sample '" + rec.id +
                                            "'); last good checkpoint: " + where);
                    }
                    mean.l_side += scale * sl.loss.l_side;
                    mean.l_differ += scale * sl.loss.l_differ;
                    mean.l_guide += scale * sl.loss.l_guide;
                    mean.l_total += scale * sl.loss.l_total;
                    const ag::Var roots[] = {out.coarse, out.medium, out.fine, out.fused};
                    const Tensor seeds[] = {seed_tensor(sl.grad_coarse, scale), seed_tensor(sl.grad_medium, scale),
                                            seed_tensor(sl.grad_fine, scale), seed_tensor(sl.grad_fused, scale)};
                    ag::backward(roots, seeds);
                }
            clip_gradients(params, cfg.clip_norm);
            ckpt.optimizer.step(params, lr, cfg.weight_decay);
            ++ckpt.step;
            const StepRecord rec{ckpt.step, epoch, mean, lr};
            result.log.push_back(rec);
            if (log_file) log_file << to_json_line(rec) << '\n' << std::flush;
            if (opts.on_step) opts.on_step(rec);
        }
        // An interrupted epoch is not counted; resuming repeats it from the start.
        if (!complete) break;
        ckpt.epoch = epoch + 1;
        save("epoch_" + std::to_string(ckpt.epoch) + ".ckpt");
        save("last.ckpt");
        if (step_limit_reached()) break;
    }
    params.zero_grad();
    save("last.ckpt");
    return result;
}

TrainResult ablate(Checkpoint& ckpt, const AblationSwitches& switches, const std::vector<Sample>& samples,
                   const TrainOptions& opts) {
    ckpt.config.ablation = switches;
    ckpt.config_hash = ckpt.config.hash();
    return train(ckpt, samples, opts);
}

// ---------------------------------------------------------------------------
// Inference

std::vector<ProbMap> infer(const Checkpoint& ckpt, const FeatureProvider& provider, const Image& image,
                           const InferRequest& req) {
    if (req.alpha && req.candidates) throw InputError("infer: give either alpha or a candidate count, not both");
    if (req.alpha && !(*req.alpha >= 0.0 && *req.alpha <= 1.0)) throw InputError("infer: alpha must lie in [0, 1]");
    if (req.candidates && *req.candidates < 2) throw InputError("infer: candidate count must be >= 2");
    if ((req.alpha || req.candidates) && ckpt.config.ablation.soc_off)
        throw InputError("infer: model was trained with soc_off and has no granularity outputs");
    validate_image(image);
    const EdgeMapSet maps = ckpt.model.predict(provider.extract(image));
    if (req.alpha) return {blend(maps, *req.alpha)};
    if (req.candidates) return candidate_sweep(maps, *req.candidates);
    return {maps.fused};
}

std::vector<std::string> infer_file_names(const std::string& stem, const InferRequest& req) {
    if (!req.candidates) return {stem + ".png"};
    std::vector<std::string> out;
    for (int k = 0; k < *req.candidates; ++k) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "_a%02d.png", k);
        out.push_back(stem + buf);
    }
    return out;
}

}  // namespace sauge
