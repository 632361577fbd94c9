#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "residseg/dataset.hpp"
#include "residseg/metrics.hpp"
#include "residseg/nn/tape.hpp"
#include "residseg/train_config.hpp"
#include "residseg/unet.hpp"

namespace residseg {

enum class Head { kSupervised, kDiscriminative };
enum class Init { kScratch, kPretrained };

std::string to_string(Head head);
std::string to_string(Init init);
Head parse_head(const std::string& text);

struct Regime {
  Head head = Head::kSupervised;
  Init init = Init::kScratch;

  /// e.g. "discriminative-pretrained".
  std::string label() const;
  /// Row title of the comparison table.
  std::string method() const;

  friend bool operator==(const Regime&, const Regime&) = default;
};

/// Comparison table order: the supervised scratch baseline first.
inline constexpr std::array<Regime, 4> kRegimes = {{{Head::kSupervised, Init::kScratch},
                                                     {Head::kSupervised, Init::kPretrained},
                                                     {Head::kDiscriminative, Init::kScratch},
                                                     {Head::kDiscriminative, Init::kPretrained}}};

/// Any network mapping (n,1,S,S) images to (n,1,S,S) outputs.
template <typename T>
using ForwardFn = std::function<nn::Var(nn::Tape<T>&, nn::Var)>;

template <typename T>
ForwardFn<T> forward_of(UNet<T>& model) {
  return [&model](nn::Tape<T>& tape, nn::Var x) { return model.forward(tape, x); };
}

/// P = clamp(I − O, 0, 1), or the raw difference in signed mode.
template <typename T>
nn::Var subtraction_head(nn::Tape<T>& tape, nn::Var input, nn::Var output, ResidualMode mode);

/// Segmentation prediction for a head: O for supervised, I − O for discriminative.
template <typename T>
nn::Var segment(nn::Tape<T>& tape, const ForwardFn<T>& backbone, nn::Var input, Head head, ResidualMode mode);

/// dice_weight · soft_dice(P, M) + bce_weight · bce(P, M).
template <typename T>
nn::Var segmentation_loss(nn::Tape<T>& tape, nn::Var pred, nn::Var target, const TrainConfig& cfg);

/// Stacks images into an (n,1,S,S) tensor.
nn::Tensor4<float> to_batch(const std::vector<const Image2D*>& images);
nn::Tensor4<float> to_batch(const std::vector<BinaryMask>& masks);
Image2D plane_image(const nn::Tensor4<float>& t, int n);

struct ImageDice {
  std::string id;
  double dice = 0.0;
};

/// Per-image DICE of the binarized prediction against the union lesion mask.
std::vector<ImageDice> evaluate(const ForwardFn<float>& backbone, const Dataset& malignant, Head head,
                                double threshold, ResidualMode mode = ResidualMode::kClamp, int batch = 8);

/// Backbone output O and prediction P for each sample, in dataset order.
struct Rendered {
  std::vector<Image2D> output;
  std::vector<Image2D> prediction;
};
Rendered render_outputs(const ForwardFn<float>& backbone, const Dataset& ds, Head head, ResidualMode mode);

/// Everything a training phase produced besides the model's final weights.
struct PhaseResult {
  std::string phase;
  MetricsHistory history;
  /// Ids of every sample the phase read, training and evaluation.
  std::set<std::string> train_ids;
  std::set<std::string> eval_ids;
  /// Hash of the (epoch, sample id) sequence fed to the optimizer.
  std::uint64_t stream_hash = 0;
  /// Hash of the serialized weights the phase started from.
  std::uint64_t init_hash = 0;
  std::uint64_t best_hash = 0;
  std::uint64_t final_hash = 0;
  int best_epoch = 0;
  double learning_rate = 0.0;
  double seconds = 0.0;
  std::vector<nn::Tensor4<float>> best_parameters;
};

/// Called after every epoch; used for progress output.
using EpochCallback = std::function<void(const std::string& phase, const EpochRecord&)>;

/// Reconstruction training on corrupted benign images. Best = lowest epoch loss.
PhaseResult pretrain(UNet<float>& model, const Dataset& benign, const TrainConfig& cfg,
                     const EpochCallback& on_epoch = {});

/// Segmentation training with test DICE every eval_every epochs. Best =
/// highest test DICE. `finetune` selects cfg.lr_finetune over cfg.learning_rate.
PhaseResult train_segmentation(UNet<float>& model, Head head, const Dataset& train, const Dataset& test,
                               const TrainConfig& cfg, bool finetune, const EpochCallback& on_epoch = {});

inline PhaseResult train_discriminative(UNet<float>& model, const Dataset& train, const Dataset& test,
                                        const TrainConfig& cfg, bool finetune = false,
                                        const EpochCallback& on_epoch = {}) {
  return train_segmentation(model, Head::kDiscriminative, train, test, cfg, finetune, on_epoch);
}

inline PhaseResult train_supervised(UNet<float>& model, const Dataset& train, const Dataset& test,
                                    const TrainConfig& cfg, bool finetune = false,
                                    const EpochCallback& on_epoch = {}) {
  return train_segmentation(model, Head::kSupervised, train, test, cfg, finetune, on_epoch);
}

/// Serialized checkpoint bytes; their hash equals file_hash of the saved file.
std::uint64_t weights_hash(const UNet<float>& model);
void set_parameters(UNet<float>& model, const std::vector<nn::Tensor4<float>>& values);

/// Seed of a freshly initialised network for a phase.
std::uint64_t init_seed(std::uint64_t phase_seed);

struct RegimeData {
  Dataset benign;
  Dataset train;
  Dataset test;
};

/// Loads a corpus, filters by class and splits the malignant part.
RegimeData prepare_regime_data(const Dataset& corpus, double train_frac, std::uint64_t split_seed);

/// Throws DataError when any two of the three id sets intersect.
void check_disjoint(const RegimeData& data);

struct PretrainOutcome {
  PhaseResult result;
  UNetConfig config;
};

struct RegimeReport {
  Regime regime;
  std::optional<PhaseResult> pretrain;
  PhaseResult train;
  double dice_max = 0.0;
  double dice_avg = 0.0;
  int dice_avg_window = 10;
  double seconds = 0.0;
  std::uint64_t config_fingerprint = 0;
  std::uint64_t test_id_hash = 0;
  /// Set when phase 2 started from a checkpoint file.
  std::string init_checkpoint;
  std::uint64_t init_checkpoint_hash = 0;
  std::string init_checkpoint_fingerprint;

  std::string to_json() const;
};

struct RegimeOptions {
  int dice_avg_window = 10;
  /// Reused instead of pretraining again when set.
  const PretrainOutcome* cached_pretrain = nullptr;
  EpochCallback on_epoch;
};

/// Runs one comparison regime. Pretrained regimes start phase 2 from the
/// best pretraining weights and use the fine-tuning learning rate.
RegimeReport run_regime(const Regime& regime, const RegimeData& data, const UNetConfig& ucfg,
                        const TrainConfig& pretrain_cfg, const TrainConfig& train_cfg, const RegimeOptions& options = {});

/// Pretraining as run_regime would perform it, for sharing across regimes.
PretrainOutcome run_pretrain(const RegimeData& data, const UNetConfig& ucfg, const TrainConfig& pretrain_cfg,
                             const EpochCallback& on_epoch = {});

}  // namespace residseg
