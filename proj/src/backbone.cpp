#include "sauge/backbone.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "sauge/binio.hpp"
#include "sauge/errors.hpp"
#include "sauge/hashing.hpp"
#include "sauge/imgproc.hpp"
#include "sauge/keyvalue.hpp"

namespace sauge {

namespace {

constexpr char kRecordMagic[8] = {'S', 'A', 'U', 'G', 'E', 'F', 'E', 'A'};
constexpr std::uint32_t kRecordVersion = 1;

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void round_to_f32(Tensor& t) {
    for (auto& v : t.values()) v = to_f32(v);
}

// Uniform in [-1, 1) from the raw generator output; independent of the
// standard library's distribution implementations.
std::vector<double> mixing_matrix(std::mt19937_64& gen, int rows, int cols) {
    std::vector<double> m(static_cast<std::size_t>(rows) * cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (auto& v : m) v = scale * (2.0 * static_cast<double>(gen() >> 11) * 0x1.0p-53 - 1.0);
    return m;
}

void mix_into(Tensor& out, const std::vector<double>& mix, const std::vector<ProbMap>& basis, bool squash) {
    const int rows = out.dim(0);
    const int cols = static_cast<int>(basis.size());
    const std::size_t plane = basis.front().size();
    for (int r = 0; r < rows; ++r) {
        double* o = out.data() + r * plane;
        for (int b = 0; b < cols; ++b) {
            const double w = mix[static_cast<std::size_t>(r) * cols + b];
            for (std::size_t i = 0; i < plane; ++i) o[i] += w * basis[b].data[i];
        }
        if (squash)
            for (std::size_t i = 0; i < plane; ++i) o[i] = std::tanh(o[i]);
    }
}

void write_tensor(binio::Writer& w, const Tensor& t) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values()) w.f32(static_cast<float>(v));
}

Tensor read_tensor(binio::Reader& r) {
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw LoadError("feature record: implausible tensor rank");
    std::vector<int> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
        d = static_cast<int>(r.u32());
        n *= static_cast<std::size_t>(d);
        if (n > (std::size_t{1} << 32)) throw LoadError("feature record: implausible tensor size");
    }
    std::vector<double> data(n);
    for (auto& v : data) v = r.f32();
    return Tensor(std::move(shape), std::move(data));
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

std::string to_string(ProviderKind kind) { return kind == ProviderKind::toy ? "toy" : "pretrained_adapter"; }

ProviderKind parse_provider_kind(const std::string& name) {
    if (name == "toy") return ProviderKind::toy;
    if (name == "pretrained_adapter" || name == "pretrained") return ProviderKind::pretrained_adapter;
    throw ConfigError("unknown provider kind '" + name + "'");
}

void FeatureBundle::validate() const {
    if (shallow_features.rank() != 3 || image_embedding.rank() != 3 || mask_embeddings.rank() != 4)
        throw DimensionError("feature bundle: expected (C_s,D,D), (C_i,D,D), (P,C_m,d_m,d_m)");
    const int d = shallow_features.dim(1);
    if (d <= 0 || shallow_features.dim(2) != d || image_embedding.dim(1) != d || image_embedding.dim(2) != d)
        throw DimensionError("feature bundle: shallow features and image embedding must share a square D x D grid");
    for (std::size_t i = 0; i < 4; ++i)
        if (mask_embeddings.dim(i) <= 0) throw DimensionError("feature bundle: empty mask embeddings");
    if (shallow_features.dim(0) <= 0 || image_embedding.dim(0) <= 0)
        throw DimensionError("feature bundle: channel counts must be positive");
    if (mask_embeddings.dim(2) != mask_embeddings.dim(3)) throw DimensionError("feature bundle: mask embeddings not square");
    if (!object_masks.empty() && static_cast<int>(object_masks.size()) != prompt_count())
        throw DimensionError("feature bundle: one object mask per prompt expected");
    for (const auto& m : object_masks)
        if (m.rows != source_height || m.cols != source_width)
            throw DimensionError("feature bundle: object mask size differs from source image");
    if (!shallow_features.all_finite() || !image_embedding.all_finite() || !mask_embeddings.all_finite())
        throw InputError("feature bundle: non-finite entries");
}

bool FeatureBundle::operator==(const FeatureBundle& o) const {
    return shallow_features.shape() == o.shallow_features.shape() &&
           shallow_features.values() == o.shallow_features.values() &&
           image_embedding.shape() == o.image_embedding.shape() &&
           image_embedding.values() == o.image_embedding.values() &&
           mask_embeddings.shape() == o.mask_embeddings.shape() &&
           mask_embeddings.values() == o.mask_embeddings.values() && object_masks == o.object_masks &&
           source_height == o.source_height && source_width == o.source_width;
}

void ProviderConfig::validate() const {
    if (grid_side < 1) throw ConfigError("grid_side must be >= 1");
    if (kind == ProviderKind::toy) {
        if (!seed) throw ConfigError("toy provider requires a seed");
        if (feature_side < 1 || shallow_channels < 1 || embed_channels < 1 || mask_channels < 1 || mask_side < 1)
            throw ConfigError("toy provider geometry must be positive");
    } else if (!checkpoint_path) {
        throw ConfigError("pretrained adapter requires checkpoint_path");
    }
}

void validate_image(const Image& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("image must be (3, H, W), got " + shape_str(image.shape()));
    if (image.dim(1) < 16 || image.dim(2) < 16)
        throw DimensionError("image too small: " + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) +
                             " (minimum 16x16)");
    for (double v : image.values())
        if (!(v >= 0.0 && v <= 1.0)) throw InputError("image values must lie in [0, 1]");
}

std::uint64_t image_hash(const Image& image) {
    Fnv1a h;
    for (int d : image.shape()) h.update_value(static_cast<std::uint32_t>(d));
    for (double v : image.values()) h.update_value(static_cast<float>(v));
    return h.digest();
}

// ---------------------------------------------------------------------------
// Toy backbone

ToyBackbone::ToyBackbone(ProviderConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.kind != ProviderKind::toy) throw ConfigError("ToyBackbone requires provider_kind=toy");
    cfg_.validate();
    std::mt19937_64 gen(*cfg_.seed);
    shallow_mix_ = mixing_matrix(gen, cfg_.shallow_channels, kShallowBasis);
    embed_mix_ = mixing_matrix(gen, cfg_.embed_channels, kEmbedBasis);
    mask_mix_ = mixing_matrix(gen, cfg_.mask_channels, kMaskBasis);
}

std::size_t ToyBackbone::frozen_parameter_count() const {
    return shallow_mix_.size() + embed_mix_.size() + mask_mix_.size();
}

std::uint64_t ToyBackbone::state_hash() const {
    Fnv1a h;
    h.update_value(*cfg_.seed);
    for (int v : {cfg_.grid_side, cfg_.feature_side, cfg_.shallow_channels, cfg_.embed_channels, cfg_.mask_channels,
                  cfg_.mask_side})
        h.update_value(v);
    for (const auto* m : {&shallow_mix_, &embed_mix_, &mask_mix_})
        for (double v : *m) h.update_value(v);
    return h.digest();
}

FeatureBundle ToyBackbone::extract(const Image& image) const {
    validate_image(image);
    const int h = image.dim(1), w = image.dim(2);
    const int d = cfg_.feature_side, dm = cfg_.mask_side, g = cfg_.grid_side;

    std::array<ProbMap, 3> rgb{imgproc::channel(image, 0), imgproc::channel(image, 1), imgproc::channel(image, 2)};
    ProbMap gray(h, w);
    for (std::size_t i = 0; i < gray.size(); ++i)
        gray.data[i] = 0.299 * rgb[0].data[i] + 0.587 * rgb[1].data[i] + 0.114 * rgb[2].data[i];

    // Fine scale: gradient responses only.
    const auto grad = imgproc::sobel(gray);
    ProbMap mag(h, w);
    for (std::size_t i = 0; i < mag.size(); ++i) mag.data[i] = std::hypot(grad.dx.data[i], grad.dy.data[i]);
    std::vector<ProbMap> shallow_basis{grad.dx, grad.dy, mag};
    for (const auto& ch : rgb) {
        const auto gc = imgproc::sobel(ch);
        ProbMap m(h, w);
        for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = std::hypot(gc.dx.data[i], gc.dy.data[i]);
        shallow_basis.push_back(std::move(m));
    }
    for (int k = 0; k < 4; ++k) {
        const double th = k * std::numbers::pi / 4;
        ProbMap e(h, w);
        for (std::size_t i = 0; i < e.size(); ++i)
            e.data[i] = std::abs(std::cos(th) * grad.dx.data[i] + std::sin(th) * grad.dy.data[i]);
        shallow_basis.push_back(std::move(e));
    }
    for (auto& b : shallow_basis) b = imgproc::resize_area(b, d, d);

    // Coarse scale: smoothed intensities and low-frequency structure.
    std::vector<ProbMap> embed_basis;
    for (const auto& ch : rgb) embed_basis.push_back(imgproc::resize_area(ch, d, d));
    const ProbMap coarse_gray = imgproc::resize_area(gray, d, d);
    const ProbMap blur1 = imgproc::gaussian_blur(coarse_gray, 1.0);
    embed_basis.push_back(blur1);
    const auto cg = imgproc::sobel(blur1);
    ProbMap cmag(d, d);
    for (std::size_t i = 0; i < cmag.size(); ++i) cmag.data[i] = std::hypot(cg.dx.data[i], cg.dy.data[i]);
    embed_basis.push_back(cmag);
    embed_basis.push_back(imgproc::gaussian_blur(coarse_gray, 2.0));

    FeatureBundle out;
    out.source_height = h;
    out.source_width = w;
    out.shallow_features = Tensor({cfg_.shallow_channels, d, d});
    out.image_embedding = Tensor({cfg_.embed_channels, d, d});
    mix_into(out.shallow_features, shallow_mix_, shallow_basis, false);
    mix_into(out.image_embedding, embed_mix_, embed_basis, true);

    // Point-prompt grid: each prompt yields the colour-similar region around it.
    std::array<ProbMap, 3> smooth_rgb{imgproc::gaussian_blur(rgb[0], 1.0), imgproc::gaussian_blur(rgb[1], 1.0),
                                      imgproc::gaussian_blur(rgb[2], 1.0)};
    const int prompts = g * g;
    out.mask_embeddings = Tensor({prompts, cfg_.mask_channels, dm, dm});
    out.object_masks.reserve(prompts);
    const double tau2 = 2.0 * 0.1 * 0.1;
    const double spread = 0.25 * std::max(h, w);
    for (int pi = 0; pi < g; ++pi)
        for (int pj = 0; pj < g; ++pj) {
            const int py = std::min(h - 1, static_cast<int>((pi + 0.5) * h / g));
            const int px = std::min(w - 1, static_cast<int>((pj + 0.5) * w / g));
            const double c0 = smooth_rgb[0](py, px), c1 = smooth_rgb[1](py, px), c2 = smooth_rgb[2](py, px);
            ProbMap sim(h, w), sim_edge(h, w), near(h, w);
            BinaryMap above(h, w);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double d0 = smooth_rgb[0](y, x) - c0, d1 = smooth_rgb[1](y, x) - c1,
                                 d2 = smooth_rgb[2](y, x) - c2;
                    const double s = std::exp(-(d0 * d0 + d1 * d1 + d2 * d2) / tau2);
                    sim(y, x) = s;
                    sim_edge(y, x) = s * mag(y, x);
                    above(y, x) = s > 0.5 ? 1 : 0;
                    const double dist2 = double(y - py) * (y - py) + double(x - px) * (x - px);
                    near(y, x) = std::exp(-0.5 * dist2 / (spread * spread));
                }
            BinaryMap mask = imgproc::flood_fill(above, py, px);
            ProbMap mask_f(h, w);
            for (std::size_t i = 0; i < mask_f.size(); ++i) mask_f.data[i] = mask.data[i];
            std::vector<ProbMap> basis{sim, mask_f, sim_edge, near};
            for (auto& b : basis) b = imgproc::resize_area(b, dm, dm);
            Tensor emb({cfg_.mask_channels, dm, dm});
            mix_into(emb, mask_mix_, basis, true);
            const int p = pi * g + pj;
            std::copy(emb.values().begin(), emb.values().end(), out.mask_embeddings.data() + p * emb.size());
            out.object_masks.push_back(std::move(mask));
        }

    round_to_f32(out.shallow_features);
    round_to_f32(out.image_embedding);
    round_to_f32(out.mask_embeddings);
    return out;
}

// ---------------------------------------------------------------------------
// Pretrained adapter over exported features

PretrainedAdapter::PretrainedAdapter(ProviderConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.kind != ProviderKind::pretrained_adapter) throw ConfigError("PretrainedAdapter requires provider_kind=pretrained_adapter");
    if (cfg_.grid_side < 1) throw ConfigError("grid_side must be >= 1");
    if (!cfg_.checkpoint_path) throw LoadError("pretrained adapter: no checkpoint path given");
    dir_ = *cfg_.checkpoint_path;
    if (!std::filesystem::is_directory(dir_)) throw LoadError("pretrained adapter: checkpoint not found: " + dir_.string());
    const auto meta_path = dir_ / "provider.meta";
    if (!std::filesystem::exists(meta_path)) throw LoadError("pretrained adapter: missing " + meta_path.string());
    const KeyValues meta = KeyValues::load(meta_path);
    if (meta.require("format") != "sauge-features-v1")
        throw LoadError("pretrained adapter: incompatible export format '" + meta.require("format") + "'");
    try {
        const int grid = static_cast<int>(meta.get_int("grid_side", -1));
        if (grid != cfg_.grid_side)
            throw LoadError("pretrained adapter: export grid_side " + std::to_string(grid) + " incompatible with configured " +
                            std::to_string(cfg_.grid_side));
        cfg_.feature_side = static_cast<int>(meta.get_int("feature_side", 0));
        cfg_.shallow_channels = static_cast<int>(meta.get_int("shallow_channels", 0));
        cfg_.embed_channels = static_cast<int>(meta.get_int("embed_channels", 0));
        cfg_.mask_channels = static_cast<int>(meta.get_int("mask_channels", 0));
        cfg_.mask_side = static_cast<int>(meta.get_int("mask_side", 0));
        parameter_count_ = static_cast<std::size_t>(meta.get_int("parameter_count", 0));
    } catch (const ConfigError& e) {
        throw LoadError(std::string("pretrained adapter: ") + e.what());
    }
    if (cfg_.feature_side < 1 || cfg_.shallow_channels < 1 || cfg_.embed_channels < 1 || cfg_.mask_channels < 1 ||
        cfg_.mask_side < 1 || parameter_count_ == 0)
        throw LoadError("pretrained adapter: export metadata incomplete in " + meta_path.string());
    mask_hook_ = meta.get("mask_hook").value_or("upscaled_embedding");
}

std::uint64_t PretrainedAdapter::state_hash() const {
    Fnv1a h;
    const std::string d = std::filesystem::absolute(dir_).string();
    h.update(std::as_bytes(std::span(d.data(), d.size())));
    h.update_value(static_cast<std::uint64_t>(parameter_count_));
    return h.digest();
}

FeatureBundle PretrainedAdapter::extract(const Image& image) const {
    validate_image(image);
    const std::uint64_t key = image_hash(image);
    const auto path = dir_ / (hex64(key) + ".feat");
    if (!std::filesystem::exists(path)) throw LoadError("pretrained adapter: no exported features for image " + hex64(key));
    FeatureBundle b = read_feature_record(path, ProviderKind::pretrained_adapter, cfg_.grid_side, key);
    if (b.shallow_features.dim(0) != cfg_.shallow_channels || b.image_embedding.dim(0) != cfg_.embed_channels ||
        b.feature_side() != cfg_.feature_side || b.mask_embeddings.dim(1) != cfg_.mask_channels ||
        b.mask_embeddings.dim(2) != cfg_.mask_side || b.prompt_count() != cfg_.grid_side * cfg_.grid_side)
        throw LoadError("pretrained adapter: record " + path.string() + " disagrees with provider.meta");
    if (b.source_height != image.dim(1) || b.source_width != image.dim(2))
        throw LoadError("pretrained adapter: record " + path.string() + " was exported for a different image size");
    return b;
}

std::unique_ptr<FeatureProvider> make_provider(const ProviderConfig& cfg) {
    if (cfg.kind == ProviderKind::toy) return std::make_unique<ToyBackbone>(cfg);
    return std::make_unique<PretrainedAdapter>(cfg);
}

// ---------------------------------------------------------------------------
// Mask guidance

BinaryMap mask_edges(const BinaryMap& mask) {
    ProbMap f(mask.rows, mask.cols);
    for (std::size_t i = 0; i < f.size(); ++i) f.data[i] = mask.data[i] ? 1.0 : 0.0;
    const auto g = imgproc::sobel(f);
    BinaryMap e(mask.rows, mask.cols);
    for (std::size_t i = 0; i < e.size(); ++i) e.data[i] = (g.dx.data[i] != 0.0 || g.dy.data[i] != 0.0) ? 1 : 0;
    return e;
}

MaskGuidance masks_to_guidance(const std::vector<BinaryMap>& masks) {
    MaskGuidance out;
    if (masks.empty()) return out;
    const int h = masks.front().rows, w = masks.front().cols;
    for (const auto& m : masks) require_same_grid(m, masks.front(), "masks_to_guidance");
    std::vector<int> counts(static_cast<std::size_t>(h) * w, 0);
    for (const auto& m : masks) {
        const BinaryMap e = mask_edges(m);
        for (std::size_t i = 0; i < e.size(); ++i) counts[i] += e.data[i];
    }
    out.edges = BinaryMap(h, w);
    out.frequency = ProbMap(h, w);
    const double n = static_cast<double>(masks.size());
    for (std::size_t i = 0; i < counts.size(); ++i) {
        out.edges.data[i] = counts[i] > 0 ? 1 : 0;
        out.frequency.data[i] = counts[i] / n;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Feature records and cache

void write_feature_record(const std::filesystem::path& path, const FeatureBundle& bundle, ProviderKind kind, int grid_side,
                          std::uint64_t image_key) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw LoadError("cannot write feature record " + path.string());
    binio::Writer w(os);
    w.bytes(kRecordMagic, sizeof kRecordMagic);
    w.u32(kRecordVersion);
    w.u32(static_cast<std::uint32_t>(kind));
    w.u32(static_cast<std::uint32_t>(grid_side));
    w.u64(image_key);
    w.u32(static_cast<std::uint32_t>(bundle.source_height));
    w.u32(static_cast<std::uint32_t>(bundle.source_width));
    write_tensor(w, bundle.shallow_features);
    write_tensor(w, bundle.image_embedding);
    write_tensor(w, bundle.mask_embeddings);
    w.u32(static_cast<std::uint32_t>(bundle.object_masks.size()));
    for (const auto& m : bundle.object_masks) {
        w.u32(static_cast<std::uint32_t>(m.rows));
        w.u32(static_cast<std::uint32_t>(m.cols));
        w.bytes(m.data.data(), m.data.size());
    }
    if (!os) throw LoadError("failed writing feature record " + path.string());
}

FeatureBundle read_feature_record(const std::filesystem::path& path, std::optional<ProviderKind> kind,
                                  std::optional<int> grid_side, std::optional<std::uint64_t> image_key) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("cannot open feature record " + path.string());
    binio::Reader r(is, path.string());
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (!std::equal(magic, magic + 8, kRecordMagic)) throw LoadError(path.string() + ": not a feature record");
    if (const auto v = r.u32(); v != kRecordVersion)
        throw LoadError(path.string() + ": unsupported feature record version " + std::to_string(v));
    const auto rec_kind = static_cast<ProviderKind>(r.u32());
    const int rec_grid = static_cast<int>(r.u32());
    const std::uint64_t rec_key = r.u64();
    if (kind && rec_kind != *kind) throw LoadError(path.string() + ": provider kind mismatch");
    if (grid_side && rec_grid != *grid_side) throw LoadError(path.string() + ": grid_side mismatch");
    if (image_key && rec_key != *image_key) throw LoadError(path.string() + ": image hash mismatch");
    FeatureBundle b;
    b.source_height = static_cast<int>(r.u32());
    b.source_width = static_cast<int>(r.u32());
    b.shallow_features = read_tensor(r);
    b.image_embedding = read_tensor(r);
    b.mask_embeddings = read_tensor(r);
    const std::uint32_t n_masks = r.u32();
    if (n_masks > 4096) throw LoadError(path.string() + ": implausible mask count");
    for (std::uint32_t i = 0; i < n_masks; ++i) {
        const int rows = static_cast<int>(r.u32()), cols = static_cast<int>(r.u32());
        if (rows != b.source_height || cols != b.source_width) throw LoadError(path.string() + ": mask size mismatch");
        BinaryMap m(rows, cols);
        r.bytes(m.data.data(), m.data.size());
        b.object_masks.push_back(std::move(m));
    }
    try {
        b.validate();
    } catch (const std::exception& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
    return b;
}

FeatureCache::FeatureCache(std::filesystem::path dir)
    : dir_(std::move(dir)),
      provider_calls_(std::make_shared<std::atomic<std::size_t>>(0)),
      hits_(std::make_shared<std::atomic<std::size_t>>(0)) {
    std::filesystem::create_directories(dir_);
}

std::optional<FeatureCache> FeatureCache::from_env() {
    const char* dir = std::getenv("SAUGE_CACHE_DIR");
    if (!dir || !*dir) return std::nullopt;
    return FeatureCache(dir);
}

std::filesystem::path FeatureCache::path_for(std::uint64_t image_key, ProviderKind kind, int grid_side) const {
    return dir_ / (hex64(image_key) + "_" + to_string(kind) + "_g" + std::to_string(grid_side) + ".feat");
}

FeatureBundle FeatureCache::get_or_extract(const FeatureProvider& provider, const Image& image) const {
    const std::uint64_t key = image_hash(image);
    const auto path = path_for(key, provider.kind(), provider.grid_side());
    if (std::filesystem::exists(path)) {
        ++*hits_;
        return read_feature_record(path, provider.kind(), provider.grid_side(), key);
    }
    ++*provider_calls_;
    FeatureBundle b = provider.extract(image);
    std::ostringstream tmp_name;
    tmp_name << path.filename().string() << ".tmp" << std::hash<std::thread::id>{}(std::this_thread::get_id());
    const auto tmp = path.parent_path() / tmp_name.str();
    write_feature_record(tmp, b, provider.kind(), provider.grid_side(), key);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) std::filesystem::remove(tmp, ec);
    return b;
}

}  // namespace sauge
