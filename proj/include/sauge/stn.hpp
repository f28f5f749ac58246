#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sauge/autograd.hpp"
#include "sauge/backbone.hpp"
#include "sauge/keyvalue.hpp"

namespace sauge {

/// Architecture of the Side Transfer Network. Input channel counts must match
/// the feature provider; the rest are free hyperparameters.
struct StnConfig {
    // Provider-facing.
    int shallow_channels = 768;  // C_s
    int embed_channels = 256;    // C_i
    int mask_channels = 32;      // C_m
    int prompts = 64;            // P = grid_side^2

    // Internal widths.
    int c1 = 64;   // edge-aware feature width
    int c2 = 2;    // per-prompt mask feature width
    int ch = 32;   // granularity feature width
    int heads = 4;
    int ffb_depth = 2;             // cross-attention + gated FFN layers per fuse block
    double ffn_expansion = 2.66;
    int proj_kernel = 3;

    /// Widths sized for a ViT-B class provider (256-d embedding, 768-d blocks).
    static StnConfig base();
    /// Input widths taken from a provider configuration; internal widths default.
    static StnConfig for_provider(const ProviderConfig& provider);

    int ffn_hidden() const { return static_cast<int>(c1 * ffn_expansion); }
    void validate() const;
    KeyValues to_key_values() const;
    static StnConfig from_key_values(const KeyValues& kv);
    bool operator==(const StnConfig&) const = default;
};

/// Named, ordered registry of learnable tensors.
class StnParams {
public:
    ag::Var add(const std::string& name, Tensor init);
    const ag::Var& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    const std::vector<std::pair<std::string, ag::Var>>& entries() const { return entries_; }
    std::size_t scalar_count() const;
    void zero_grad();

private:
    std::vector<std::pair<std::string, ag::Var>> entries_;
};

/// Frozen inputs lifted into the graph. `requires_grad` makes them leaves so
/// gradient probes can inspect dataflow.
struct FeatureVars {
    ag::Var shallow;             // E_s
    ag::Var embedding;           // E_i
    std::vector<ag::Var> masks;  // E_m, one (C_m, d_m, d_m) grid per prompt
};

struct EdgeAwareVars {
    ag::Var shallow;    // E_s^e  (C1, D, D)
    ag::Var embedding;  // E_i^e  (C1, D, D)
    ag::Var masks;      // E_m^e  (C2 * P, D, D)
};

struct GranularityVars {
    ag::Var coarse;   // F^c
    ag::Var medium;   // F^m
    ag::Var fine;     // F^f
    ag::Var medium_fused;  // F̈^m, filled by heads()
    ag::Var fine_fused;    // F̈^f, filled by heads()
};

struct EdgeMapVars {
    ag::Var coarse;  // Ŷ^c
    ag::Var medium;  // Ŷ^m
    ag::Var fine;    // Ŷ^f
    ag::Var fused;   // Ŷ^u
};

/// The four network outputs as probability maps at image resolution.
struct EdgeMapSet {
    ProbMap coarse;
    ProbMap medium;
    ProbMap fine;
    ProbMap fused;
};

/// Cross-attention (query from one grid, key/value from another) followed by a
/// gated depthwise-conv feed-forward network, each with a residual path,
/// stacked `depth` times. No positional encoding is added. The feed-forward
/// output projection starts at zero, so a zero value projection makes the block
/// an identity on the query.
class FeatureFuseBlock {
public:
    FeatureFuseBlock() = default;
    FeatureFuseBlock(StnParams& params, const std::string& prefix, int channels, int context_channels, int heads, int depth,
                     int ffn_hidden, std::mt19937_64& gen);

    ag::Var operator()(const ag::Var& query, const ag::Var& context) const;

    int channels() const { return channels_; }
    int context_channels() const { return context_channels_; }

private:
    struct Layer {
        ag::Var norm_q_w, norm_q_b, norm_kv_w, norm_kv_b;
        ag::Var q_w, q_b, k_w, k_b, v_w, v_b, out_w, out_b;
        ag::Var norm_ffn_w, norm_ffn_b, ffn_in_w, ffn_in_b, ffn_dw_w, ffn_dw_b, ffn_out_w, ffn_out_b;
    };
    int channels_ = 0;
    int context_channels_ = 0;
    int heads_ = 1;
    int hidden_ = 0;
    std::vector<Layer> layers_;
};

class Stn {
public:
    Stn(StnConfig cfg, std::uint64_t seed);
    Stn(const Stn&) = delete;
    Stn& operator=(const Stn&) = delete;
    Stn(Stn&&) = default;
    Stn& operator=(Stn&&) = default;

    const StnConfig& config() const { return cfg_; }
    StnParams& params() { return params_; }
    const StnParams& params() const { return params_; }
    std::size_t parameter_count() const { return params_.scalar_count(); }

    /// Wraps a bundle as graph inputs; throws ConfigError on channel mismatch.
    FeatureVars inputs(const FeatureBundle& bundle, bool requires_grad = false) const;

    EdgeAwareVars project(const FeatureVars& in) const;
    ag::Var ffb(int block, const ag::Var& query, const ag::Var& context) const;
    GranularityVars cascade(const EdgeAwareVars& ea) const;
    /// Fuses granularity features (filling the fused members of `gf`) and runs
    /// the shared head on each branch.
    EdgeMapVars heads(GranularityVars& gf, int height, int width) const;
    /// The shared classification head: two resample+conv stages, 1x1 conv, sigmoid.
    ag::Var head(const ag::Var& features, int height, int width) const;

    EdgeMapVars forward(const FeatureVars& in, int height, int width) const;
    EdgeMapSet predict(const FeatureBundle& bundle) const;

    /// Sets a fuse convolution (medium/fine) to the channel-wise mean of its two inputs.
    void set_average_fuse(const std::string& which);

private:
    ag::Var conv(const std::string& name, const ag::Var& x) const;

    StnConfig cfg_;
    StnParams params_;
    FeatureFuseBlock ffb1_;
    FeatureFuseBlock ffb2_;
};

EdgeMapSet to_edge_maps(const EdgeMapVars& v);

}  // namespace sauge
