#pragma once

#include <cstdint>
#include <string>

#include "residseg/transforms.hpp"

namespace residseg {

/// How the discriminative head turns I − O into a prediction.
enum class ResidualMode { kClamp, kSigned };

std::string to_string(ResidualMode mode);
ResidualMode parse_residual_mode(const std::string& text);

/// Hyperparameters of one training phase.
struct TrainConfig {
  int epochs = 20;
  int batch_size = 4;
  double learning_rate = 3e-4;
  /// Used instead of learning_rate when starting from a pretrained checkpoint.
  double lr_finetune = 3e-5;
  std::uint64_t seed = 42;
  /// Corruptions for reconstruction pretraining; ignored by the segmentation phase.
  CorruptionPolicy policy;
  double dice_weight = 1.0;
  double bce_weight = 1.0;
  int eval_every = 1;
  double threshold = 0.5;
  /// Empty disables checkpoint files.
  std::string checkpoint_dir;
  ResidualMode residual_mode = ResidualMode::kClamp;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EvalConfig {
  double train_frac = 0.8;
  std::uint64_t split_seed = 42;
  int dice_avg_window = 10;

  void validate() const;

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

}  // namespace residseg
