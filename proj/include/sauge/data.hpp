#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sauge/backbone.hpp"
#include "sauge/granularity.hpp"

namespace sauge {

enum class Split { train, val, test };
std::string to_string(Split s);
Split parse_split(const std::string& name);

struct ManifestEntry {
    std::string id;  // image file stem
    std::filesystem::path image;
    std::vector<std::filesystem::path> annotations;
};

/// Text manifest: one entry per line, tab-separated image path followed by
/// annotation paths, relative to the manifest's directory. Lines starting with
/// '#' are comments; a line `split<TAB>val` sets the split (default train).
struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    Split split = Split::train;
};

/// Throws LoadError naming the entry for malformed lines, entries without
/// annotations and missing files.
DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                               const std::string& origin = "<manifest>");
/// Directory layout `images/<id>.png` + `annotations/<id>/<k>.png`, ids sorted.
DatasetManifest scan_dataset(const std::filesystem::path& root);
std::string format_manifest(const DatasetManifest& m, const std::filesystem::path& base_dir);

struct Sample {
    std::string id;
    Image image;                // (3, H, W)
    AnnotationSet annotations;
    std::vector<BinaryMap> guidance_masks;  // optional provider masks, kept aligned by augment()

    int rows() const { return image.dim(1); }
    int cols() const { return image.dim(2); }
    void validate() const;
};

Sample load_sample(const ManifestEntry& entry);
std::vector<Sample> load_samples(const DatasetManifest& manifest);

// ---------------------------------------------------------------------------
// Augmentation

/// Probabilities and ranges of the random geometric transform. The default
/// configuration is the identity.
struct AugmentConfig {
    double hflip_prob = 0.0;
    double vflip_prob = 0.0;
    bool rotate90 = false;            // uniform quarter turn in {0, 90, 180, 270}
    std::vector<double> scales{1.0};  // one drawn uniformly
    int crop_rows = 0;                // 0 = no crop
    int crop_cols = 0;

    /// Flips, quarter turns and scales {0.5, 1, 1.5}.
    static AugmentConfig uaed_style();
    void validate() const;
    bool is_identity() const;
};

/// One concrete transform. Order: flips, rotation, scaling, crop.
struct Transform {
    bool hflip = false;
    bool vflip = false;
    int quarter_turns = 0;  // counter-clockwise
    double scale = 1.0;
    int crop_y = 0;
    int crop_x = 0;
    int crop_rows = 0;  // 0 = no crop
    int crop_cols = 0;
};

/// Draws a transform for an image of the given size. Throws ConfigError if the
/// crop exceeds the scaled image.
Transform draw_transform(const AugmentConfig& cfg, int rows, int cols, std::mt19937_64& rng);

ProbMap apply_transform(const ProbMap& m, const Transform& t);
/// Binary maps use nearest-neighbour scaling and stay binary.
BinaryMap apply_transform(const BinaryMap& m, const Transform& t);
Image apply_transform(const Image& img, const Transform& t);
Sample apply_transform(const Sample& s, const Transform& t);

Sample augment(const Sample& s, const AugmentConfig& cfg, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Batching

/// One sample ready for the network.
struct TrainingRecord {
    std::string id;
    FeatureBundle features;
    LabelLadder ladder;
    MaskGuidance guidance;
    int rows = 0;
    int cols = 0;
};

/// Samples grouped by image size, groups in order of first appearance.
using TrainingBatch = std::vector<std::vector<TrainingRecord>>;

/// Extracts (or loads cached) features, builds the ladder, draws one consensus
/// sample and computes mask guidance for every sample. Provider errors are
/// rethrown with the sample id prefixed.
TrainingBatch prepare_batch(const std::vector<Sample>& samples, const FeatureProvider& provider, const FeatureCache* cache,
                            double zeta, std::mt19937_64& rng);

}  // namespace sauge
