#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sauge/tensor.hpp"

namespace sauge {

/// RGB image stored channel-first as (3, H, W) with values in [0, 1].
using Image = Tensor;

/// Frozen-backbone outputs for one image.
struct FeatureBundle {
    Tensor shallow_features;   // (C_s, D, D): output of the first encoder block
    Tensor image_embedding;    // (C_i, D, D): encoder output
    Tensor mask_embeddings;    // (P, C_m, d_m, d_m): one decoder embedding per prompt point
    std::vector<BinaryMap> object_masks;  // P masks of H x W
    int source_height = 0;
    int source_width = 0;

    int feature_side() const { return shallow_features.rank() == 3 ? shallow_features.dim(1) : 0; }
    int prompt_count() const { return mask_embeddings.rank() == 4 ? mask_embeddings.dim(0) : 0; }

    /// Throws DimensionError on inconsistent shapes, InputError on non-finite entries.
    void validate() const;
    bool operator==(const FeatureBundle&) const;
};

enum class ProviderKind : std::uint32_t { pretrained_adapter = 0, toy = 1 };

std::string to_string(ProviderKind kind);
ProviderKind parse_provider_kind(const std::string& name);

struct ProviderConfig {
    ProviderKind kind = ProviderKind::toy;
    int grid_side = 8;
    std::optional<std::filesystem::path> checkpoint_path;
    std::optional<std::uint64_t> seed;

    // Toy geometry. The pretrained adapter takes these from its export metadata.
    int feature_side = 16;
    int shallow_channels = 16;
    int embed_channels = 16;
    int mask_channels = 4;
    int mask_side = 16;

    void validate() const;
};

/// Edge maps derived from provider object masks.
struct MaskGuidance {
    BinaryMap edges;     // union of per-mask Sobel edges
    ProbMap frequency;   // fraction of masks whose edge contains each pixel
};

/// Frozen feature provider. Implementations hold no trainable state and are
/// safe to call concurrently.
class FeatureProvider {
public:
    virtual ~FeatureProvider() = default;
    virtual FeatureBundle extract(const Image& image) const = 0;
    virtual ProviderKind kind() const = 0;
    virtual int grid_side() const = 0;
    /// Size of the frozen weight set (for the adapter budget check).
    virtual std::size_t frozen_parameter_count() const = 0;
    /// Fingerprint of the frozen state; must never change over a provider's lifetime.
    virtual std::uint64_t state_hash() const = 0;
};

/// Deterministic stand-in backbone: fixed smoothing/gradient pyramids with seeded
/// channel mixing. Shallow features are built from gradient responses only, so a
/// constant image yields all-zero shallow features.
class ToyBackbone final : public FeatureProvider {
public:
    explicit ToyBackbone(ProviderConfig cfg);

    FeatureBundle extract(const Image& image) const override;
    ProviderKind kind() const override { return ProviderKind::toy; }
    int grid_side() const override { return cfg_.grid_side; }
    std::size_t frozen_parameter_count() const override;
    std::uint64_t state_hash() const override;

    const ProviderConfig& config() const { return cfg_; }

    static constexpr int kShallowBasis = 10;
    static constexpr int kEmbedBasis = 6;
    static constexpr int kMaskBasis = 4;

private:
    ProviderConfig cfg_;
    std::vector<double> shallow_mix_;  // C_s x kShallowBasis
    std::vector<double> embed_mix_;    // C_i x kEmbedBasis
    std::vector<double> mask_mix_;     // C_m x kMaskBasis
};

/// Adapter for a real segmentation foundation model whose features were exported
/// by an external process. `checkpoint_path` names an export directory holding
/// `provider.meta` (key=value lines) and one `<image-hash>.feat` record per image,
/// named by image_hash() as 16 lowercase hex digits.
///
/// Required metadata keys: format=sauge-features-v1, grid_side, feature_side,
/// shallow_channels, embed_channels, mask_channels, mask_side, parameter_count.
/// Mask embeddings are expected from the decoder's upscaled mask-embedding hook,
/// i.e. after the decoder's final upsampling and before the hypernetwork product;
/// the optional `mask_hook` key records what the exporter used.
class PretrainedAdapter final : public FeatureProvider {
public:
    explicit PretrainedAdapter(ProviderConfig cfg);

    FeatureBundle extract(const Image& image) const override;
    ProviderKind kind() const override { return ProviderKind::pretrained_adapter; }
    int grid_side() const override { return cfg_.grid_side; }
    std::size_t frozen_parameter_count() const override { return parameter_count_; }
    std::uint64_t state_hash() const override;

    const ProviderConfig& config() const { return cfg_; }
    const std::string& mask_hook() const { return mask_hook_; }

private:
    ProviderConfig cfg_;
    std::filesystem::path dir_;
    std::size_t parameter_count_ = 0;
    std::string mask_hook_;
};

/// Builds the provider named by `cfg.kind`. Throws LoadError for a missing or
/// incompatible export, ConfigError for invalid settings.
std::unique_ptr<FeatureProvider> make_provider(const ProviderConfig& cfg);

/// Checks image size (H, W >= 16) and range; throws DimensionError / InputError.
void validate_image(const Image& image);

/// Content hash of an image (shape + values at float32 precision).
std::uint64_t image_hash(const Image& image);

MaskGuidance masks_to_guidance(const std::vector<BinaryMap>& masks);
/// Sobel edge of one binary mask with replicated borders: magnitude > 0.
BinaryMap mask_edges(const BinaryMap& mask);

// Binary feature record: versioned header + little-endian float32 arrays with
// shape prologues + object masks as bytes.
void write_feature_record(const std::filesystem::path& path, const FeatureBundle& bundle, ProviderKind kind,
                          int grid_side, std::uint64_t image_key);
/// Reads a record and checks its key fields; throws LoadError on mismatch or corruption.
FeatureBundle read_feature_record(const std::filesystem::path& path, std::optional<ProviderKind> kind = std::nullopt,
                                  std::optional<int> grid_side = std::nullopt,
                                  std::optional<std::uint64_t> image_key = std::nullopt);

/// Disk cache of feature records keyed by (image hash, provider kind, grid side).
/// Creation is single-writer per key: records are written to a temporary file
/// and renamed into place.
class FeatureCache {
public:
    explicit FeatureCache(std::filesystem::path dir);

    /// Directory from $SAUGE_CACHE_DIR, if set.
    static std::optional<FeatureCache> from_env();

    std::filesystem::path path_for(std::uint64_t image_key, ProviderKind kind, int grid_side) const;
    FeatureBundle get_or_extract(const FeatureProvider& provider, const Image& image) const;

    std::size_t provider_calls() const { return provider_calls_->load(); }
    std::size_t hits() const { return hits_->load(); }

private:
    std::filesystem::path dir_;
    std::shared_ptr<std::atomic<std::size_t>> provider_calls_;
    std::shared_ptr<std::atomic<std::size_t>> hits_;
};

}  // namespace sauge
