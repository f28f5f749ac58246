#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sauge/backbone.hpp"
#include "sauge/data.hpp"
#include "sauge/keyvalue.hpp"
#include "sauge/losses.hpp"
#include "sauge/stn.hpp"

namespace sauge {

/// Loss-term switches of the ablation study.
struct AblationSwitches {
    bool soc_off = false;     // train only the fused output (no side/diversity losses)
    bool guide_off = false;   // plain balanced BCE on the consensus label instead of mask guidance
    bool differ_off = false;  // λ = 0

    static AblationSwitches parse(const std::string& list);  // e.g. "soc_off,guide_off"
    std::string to_string() const;
    bool operator==(const AblationSwitches&) const = default;
};

struct TrainConfig {
    double learning_rate = 1e-4;
    double weight_decay = 5e-4;
    int epochs = 6;
    int milestone = 0;        // epoch after which lr *= lr_decay; 0 = round(2 * epochs / 3)
    double lr_decay = 0.1;
    int batch_size = 3;
    double lambda = kDefaultLambda;
    double beta = kDefaultBeta;
    double zeta = 0.2;
    double clip_norm = 1.0;   // global gradient norm; 0 disables
    int max_steps = 0;        // stop after this many optimizer steps; 0 = run all epochs
    std::uint64_t seed = 0;
    AblationSwitches ablation;
    AugmentConfig augment;
    ProviderConfig provider;
    StnConfig stn;

    /// Reads `train.*`, `ablate.*`, `augment.*`, `provider.*` and `stn.*` keys.
    /// Missing STN input widths are taken from the provider settings.
    static TrainConfig from_key_values(const KeyValues& kv);
    KeyValues to_key_values() const;
    void validate() const;
    int effective_milestone() const;
    /// Learning rate in effect during `epoch` (0-based).
    double lr_at_epoch(int epoch) const;
    /// Hash of the serialized configuration.
    std::uint64_t hash() const;
};

/// Adam with L2 weight decay folded into the gradient.
class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    /// One update of every parameter in `params` from its accumulated gradient.
    void step(StnParams& params, double lr, double weight_decay);

    std::uint64_t steps() const { return t_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }
    void restore(std::uint64_t t, std::vector<Tensor> m, std::vector<Tensor> v);

private:
    double beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

/// Global L2 norm of all parameter gradients.
double gradient_norm(const StnParams& params);
/// Scales gradients so their global norm is at most `max_norm`; returns the pre-clip norm.
double clip_gradients(StnParams& params, double max_norm);

struct StepRecord {
    std::uint64_t step = 0;
    int epoch = 0;
    LossBreakdown loss;
    double lr = 0.0;
    bool operator==(const StepRecord&) const = default;
};
std::string to_json_line(const StepRecord& r);

/// Model, optimizer and counters. Parameters are stored at float32 precision
/// (rounded after every update) so a saved checkpoint restores the exact state.
struct Checkpoint {
    TrainConfig config;
    Stn model;
    Adam optimizer;
    int epoch = 0;              // completed epochs
    std::uint64_t step = 0;     // completed optimizer steps
    std::uint64_t config_hash = 0;

    Checkpoint(TrainConfig cfg, Stn net) : config(std::move(cfg)), model(std::move(net)) {}
};

/// Versioned binary container: header, config as key=value text, counters,
/// named parameter tensors as float32 and optimizer moments as float64.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Validates every parameter name and shape against the stored configuration;
/// throws LoadError on any mismatch or corruption.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loss and gradient seeds for one sample's outputs.
struct SampleLoss {
    LossBreakdown loss;
    ProbMap grad_coarse, grad_medium, grad_fine, grad_fused;
};
SampleLoss sample_loss(const EdgeMapSet& maps, const TrainingRecord& rec, const TrainConfig& cfg);

struct TrainOptions {
    std::optional<std::filesystem::path> checkpoint_dir;  // epoch_<k>.ckpt + last.ckpt
    std::optional<std::filesystem::path> log_path;        // JSON lines, one per step
    const FeatureCache* cache = nullptr;
    std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
    std::vector<StepRecord> log;
    std::optional<std::filesystem::path> last_checkpoint;
};

/// Trains a fresh model. Throws TrainingError on a non-finite loss; the last
/// completed epoch's checkpoint is kept on disk.
TrainResult train(Checkpoint& ckpt, const std::vector<Sample>& samples, const TrainOptions& opts = {});
Checkpoint make_checkpoint(const TrainConfig& cfg);

/// Runs a training configuration with the given ablation switches applied.
TrainResult ablate(Checkpoint& ckpt, const AblationSwitches& switches, const std::vector<Sample>& samples,
                   const TrainOptions& opts = {});

/// What inference returns for one image.
struct InferRequest {
    std::optional<double> alpha;
    std::optional<int> candidates;  // M
};

/// Ŷ^u, blend(α) or the M-candidate sweep. Throws InputError for α outside
/// [0, 1], for both α and M, or for granularity requests on a model trained
/// without granularity outputs.
std::vector<ProbMap> infer(const Checkpoint& ckpt, const FeatureProvider& provider, const Image& image,
                           const InferRequest& req);
/// Output file names for one image stem: `<stem>.png` or `<stem>_aKK.png` per candidate.
std::vector<std::string> infer_file_names(const std::string& stem, const InferRequest& req);

}  // namespace sauge
