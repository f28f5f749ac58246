#include "sauge/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "sauge/errors.hpp"
#include "sauge/imgproc.hpp"
#include "sauge/png_io.hpp"

namespace sauge {

namespace fs = std::filesystem;

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, '\t')) out.push_back(cur);
    return out;
}

std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
    std::size_t b = 0;
    while (b < s.size() && s[b] == ' ') ++b;
    return s.substr(b);
}

}  // namespace

DatasetManifest parse_manifest(const std::string& text, const fs::path& base_dir, const std::string& origin) {
    DatasetManifest m;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    std::map<std::string, int> seen;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::vector<std::string> fields;
        for (auto& f : split_tabs(t))
            if (!trim(f).empty()) fields.push_back(trim(f));
        if (fields.size() == 2 && fields[0] == "split") {
            m.split = parse_split(fields[1]);
            continue;
        }
        const std::string where = origin + ":" + std::to_string(lineno);
        ManifestEntry e;
        e.image = base_dir / fields[0];
        e.id = e.image.stem().string();
        if (e.id.empty()) throw LoadError(where + ": malformed entry (empty image path)");
        if (seen.count(e.id)) throw LoadError(where + ": entry '" + e.id + "' duplicates line " + std::to_string(seen[e.id]));
        seen[e.id] = lineno;
        if (fields.size() < 2) throw LoadError(where + ": entry '" + e.id + "' has no annotations");
        for (std::size_t i = 1; i < fields.size(); ++i) e.annotations.push_back(base_dir / fields[i]);
        if (!fs::is_regular_file(e.image))
            throw LoadError(where + ": entry '" + e.id + "': missing image " + e.image.string());
        for (const auto& a : e.annotations)
            if (!fs::is_regular_file(a)) throw LoadError(where + ": entry '" + e.id + "': missing annotation " + a.string());
        m.entries.push_back(std::move(e));
    }
    return m;
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open manifest " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_manifest(ss.str(), path.parent_path(), path.string());
}

DatasetManifest scan_dataset(const fs::path& root) {
    const fs::path images = root / "images", anns = root / "annotations";
    if (!fs::is_directory(images) || !fs::is_directory(anns))
        throw LoadError("dataset " + root.string() + " must contain images/ and annotations/");
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(images))
        if (f.is_regular_file() && f.path().extension() == ".png") files.push_back(f.path());
    std::sort(files.begin(), files.end());
    DatasetManifest m;
    for (const auto& f : files) {
        ManifestEntry e{f.stem().string(), f, {}};
        const fs::path dir = anns / e.id;
        if (fs::is_directory(dir))
            for (const auto& a : fs::directory_iterator(dir))
                if (a.is_regular_file() && a.path().extension() == ".png") e.annotations.push_back(a.path());
        std::sort(e.annotations.begin(), e.annotations.end());
        if (e.annotations.empty()) throw LoadError("dataset entry '" + e.id + "' has no annotations in " + dir.string());
        m.entries.push_back(std::move(e));
    }
    return m;
}

std::string format_manifest(const DatasetManifest& m, const fs::path& base_dir) {
    std::ostringstream os;
    os << "split\t" << to_string(m.split) << '\n';
    for (const auto& e : m.entries) {
        os << fs::relative(e.image, base_dir).generic_string();
        for (const auto& a : e.annotations) os << '\t' << fs::relative(a, base_dir).generic_string();
        os << '\n';
    }
    return os.str();
}

void Sample::validate() const {
    if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("sample '" + id + "': image must be (3, H, W)");
    try {
        annotations.validate();
        for (const auto& l : annotations.labels) require_same_grid(l, BinaryMap(rows(), cols()), "annotation vs image");
        for (const auto& m : guidance_masks) require_same_grid(m, BinaryMap(rows(), cols()), "guidance mask vs image");
    } catch (const DimensionError& e) {
        throw DimensionError("sample '" + id + "': " + e.what());
    } catch (const InputError& e) {
        throw InputError("sample '" + id + "': " + e.what());
    }
}

Sample load_sample(const ManifestEntry& entry) {
    Sample s;
    s.id = entry.id;
    s.image = read_png_rgb(entry.image);
    for (const auto& a : entry.annotations) s.annotations.labels.push_back(read_png_mask(a));
    if (s.annotations.labels.empty()) throw LoadError("entry '" + entry.id + "' has no annotations");
    s.validate();
    return s;
}

std::vector<Sample> load_samples(const DatasetManifest& manifest) {
    std::vector<Sample> out;
    out.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) out.push_back(load_sample(e));
    return out;
}

// ---------------------------------------------------------------------------

AugmentConfig AugmentConfig::uaed_style() {
    AugmentConfig c;
    c.hflip_prob = 0.5;
    c.rotate90 = true;
    c.scales = {0.5, 1.0, 1.5};
    return c;
}

void AugmentConfig::validate() const {
    if (hflip_prob < 0 || hflip_prob > 1 || vflip_prob < 0 || vflip_prob > 1)
        throw ConfigError("augment: flip probabilities must lie in [0, 1]");
    if (scales.empty()) throw ConfigError("augment: scale list is empty");
    for (double s : scales)
        if (!(s > 0)) throw ConfigError("augment: scales must be positive");
    if (crop_rows < 0 || crop_cols < 0 || (crop_rows == 0) != (crop_cols == 0))
        throw ConfigError("augment: crop size must be both zero or both positive");
}

bool AugmentConfig::is_identity() const {
    return hflip_prob == 0 && vflip_prob == 0 && !rotate90 && crop_rows == 0 &&
           std::all_of(scales.begin(), scales.end(), [](double s) { return s == 1.0; });
}

namespace {

int scaled(int n, double s) { return std::max(1, static_cast<int>(std::lround(n * s))); }

template <typename T, typename Resize>
Grid<T> transform_grid(const Grid<T>& in, const Transform& t, Resize resize) {
    Grid<T> m = in;
    if (t.hflip)
        for (int y = 0; y < m.rows; ++y) std::reverse(m.data.begin() + y * m.cols, m.data.begin() + (y + 1) * m.cols);
    if (t.vflip) {
        Grid<T> f(m.rows, m.cols);
        for (int y = 0; y < m.rows; ++y)
            std::copy_n(m.data.begin() + (m.rows - 1 - y) * m.cols, m.cols, f.data.begin() + y * m.cols);
        m = std::move(f);
    }
    for (int q = 0; q < ((t.quarter_turns % 4) + 4) % 4; ++q) {
        Grid<T> r(m.cols, m.rows);
        for (int y = 0; y < r.rows; ++y)
            for (int x = 0; x < r.cols; ++x) r(y, x) = m(x, m.cols - 1 - y);
        m = std::move(r);
    }
    if (t.scale != 1.0) m = resize(m, scaled(m.rows, t.scale), scaled(m.cols, t.scale));
    if (t.crop_rows > 0) {
        if (t.crop_y < 0 || t.crop_x < 0 || t.crop_y + t.crop_rows > m.rows || t.crop_x + t.crop_cols > m.cols)
            throw ConfigError("crop " + std::to_string(t.crop_rows) + "x" + std::to_string(t.crop_cols) +
                              " exceeds image " + std::to_string(m.rows) + "x" + std::to_string(m.cols));
        Grid<T> c(t.crop_rows, t.crop_cols);
        for (int y = 0; y < c.rows; ++y)
            for (int x = 0; x < c.cols; ++x) c(y, x) = m(y + t.crop_y, x + t.crop_x);
        m = std::move(c);
    }
    return m;
}

}  // namespace

Transform draw_transform(const AugmentConfig& cfg, int rows, int cols, std::mt19937_64& rng) {
    cfg.validate();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Transform t;
    // Draws happen unconditionally so the stream position does not depend on the config.
    const double h = u(rng), v = u(rng);
    const int q = static_cast<int>(rng() % 4);
    const std::size_t si = static_cast<std::size_t>(rng() % cfg.scales.size());
    t.hflip = h < cfg.hflip_prob;
    t.vflip = v < cfg.vflip_prob;
    t.quarter_turns = cfg.rotate90 ? q : 0;
    t.scale = cfg.scales[si];
    int r = rows, c = cols;
    if (t.quarter_turns % 2) std::swap(r, c);
    if (t.scale != 1.0) r = scaled(r, t.scale), c = scaled(c, t.scale);
    const std::uint64_t oy = rng(), ox = rng();
    if (cfg.crop_rows > 0) {
        if (cfg.crop_rows > r || cfg.crop_cols > c)
            throw ConfigError("crop " + std::to_string(cfg.crop_rows) + "x" + std::to_string(cfg.crop_cols) +
                              " is larger than the image " + std::to_string(r) + "x" + std::to_string(c));
        t.crop_rows = cfg.crop_rows;
        t.crop_cols = cfg.crop_cols;
        t.crop_y = static_cast<int>(oy % static_cast<std::uint64_t>(r - cfg.crop_rows + 1));
        t.crop_x = static_cast<int>(ox % static_cast<std::uint64_t>(c - cfg.crop_cols + 1));
    }
    return t;
}

ProbMap apply_transform(const ProbMap& m, const Transform& t) {
    return transform_grid(m, t, [](const ProbMap& g, int r, int c) { return imgproc::resize_bilinear(g, r, c); });
}

BinaryMap apply_transform(const BinaryMap& m, const Transform& t) {
    return transform_grid(m, t, [](const BinaryMap& g, int r, int c) { return imgproc::resize_nearest(g, r, c); });
}

Image apply_transform(const Image& img, const Transform& t) {
    std::vector<ProbMap> ch;
    for (int c = 0; c < img.dim(0); ++c) ch.push_back(apply_transform(imgproc::channel(img, c), t));
    Image out({img.dim(0), ch.front().rows, ch.front().cols});
    for (int c = 0; c < img.dim(0); ++c) imgproc::set_channel(out, c, ch[c]);
    for (auto& v : out.values()) v = std::clamp(v, 0.0, 1.0);
    return out;
}

Sample apply_transform(const Sample& s, const Transform& t) {
    Sample out;
    out.id = s.id;
    out.image = apply_transform(s.image, t);
    for (const auto& l : s.annotations.labels) out.annotations.labels.push_back(apply_transform(l, t));
    for (const auto& m : s.guidance_masks) out.guidance_masks.push_back(apply_transform(m, t));
    return out;
}

Sample augment(const Sample& s, const AugmentConfig& cfg, std::mt19937_64& rng) {
    s.validate();
    const Transform t = draw_transform(cfg, s.rows(), s.cols(), rng);
    return apply_transform(s, t);
}

// ---------------------------------------------------------------------------

namespace {

template <typename Fn>
auto with_sample_id(const std::string& id, Fn fn) {
    try {
        return fn();
    } catch (const LoadError& e) {
        throw LoadError("sample '" + id + "': " + e.what());
    } catch (const DimensionError& e) {
        throw DimensionError("sample '" + id + "': " + e.what());
    } catch (const InputError& e) {
        throw InputError("sample '" + id + "': " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError("sample '" + id + "': " + e.what());
    }
}

}  // namespace

TrainingBatch prepare_batch(const std::vector<Sample>& samples, const FeatureProvider& provider, const FeatureCache* cache,
                            double zeta, std::mt19937_64& rng) {
    TrainingBatch groups;
    std::vector<std::pair<int, int>> sizes;
    for (const Sample& s : samples) {
        s.validate();
        TrainingRecord r;
        r.id = s.id;
        r.rows = s.rows();
        r.cols = s.cols();
        r.features = with_sample_id(s.id, [&] {
            return cache ? cache->get_or_extract(provider, s.image) : provider.extract(s.image);
        });
        r.ladder = make_label_ladder(s.annotations, zeta, rng);
        r.guidance = masks_to_guidance(s.guidance_masks.empty() ? r.features.object_masks : s.guidance_masks);
        if (r.guidance.edges.size() == 0) r.guidance = {BinaryMap(r.rows, r.cols), ProbMap(r.rows, r.cols)};
        const std::pair<int, int> key{r.rows, r.cols};
        const auto it = std::find(sizes.begin(), sizes.end(), key);
        if (it == sizes.end()) {
            sizes.push_back(key);
            groups.emplace_back();
            groups.back().push_back(std::move(r));
        } else {
            groups[static_cast<std::size_t>(it - sizes.begin())].push_back(std::move(r));
        }
    }
    return groups;
}

}  // namespace sauge
