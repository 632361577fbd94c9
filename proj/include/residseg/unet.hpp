#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "residseg/nn/parameter.hpp"
#include "residseg/nn/tape.hpp"

namespace residseg {

enum class FinalActivation { kSigmoid, kLinear };

/// Hyperparameters of the encoder/decoder network.
///
/// Channels start at `base_channels` on level 0 (full resolution) and
/// double per level up to `channel_cap`. Long encoder-to-decoder skips are
/// wired only on levels >= `keep_long_skip_from_level`; setting it to
/// `depth` drops every long skip.
struct UNetConfig {
  int depth = 4;
  int base_channels = 16;
  int channel_cap = 128;
  int input_size = 128;
  int keep_long_skip_from_level = 2;
  double leaky_slope = 0.01;
  double norm_eps = 1e-5;
  FinalActivation final_activation = FinalActivation::kSigmoid;

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;
  int channels(int level) const;
  bool has_long_skip(int level) const { return level >= keep_long_skip_from_level; }

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

inline constexpr int kKernelSize = 3;

/// Closed-form trainable element count for `config`.
std::size_t parameter_count(const UNetConfig& config);

/// Residual unit pair: two (separable conv → instance norm → leaky ReLU)
/// stages plus an additive skip from block input to output, projected by
/// a 1×1 conv when the channel count changes.
struct ResidualBlock {
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  struct Stage {
    std::size_t depthwise, pointwise, bias, scale, shift;
  };
  Stage first{};
  Stage second{};
  bool projected = false;
  std::size_t proj_weight = 0;
  std::size_t proj_bias = 0;
};

/// The segmentation/reconstruction backbone. Parameters live in one
/// ordered set; blocks refer to them by index so copies stay consistent.
template <typename T>
class UNet {
 public:
  /// Builds the layout and initialises weights deterministically from `seed`:
  /// He-normal conv weights, zero biases, unit scales, zero shifts.
  UNet(const UNetConfig& config, std::uint64_t seed);

  const UNetConfig& config() const { return config_; }
  nn::ParameterSet<T>& parameters() { return params_; }
  const nn::ParameterSet<T>& parameters() const { return params_; }

  /// (n, 1, S, S) → (n, 1, S, S).
  nn::Var forward(nn::Tape<T>& tape, nn::Var input);
  /// Gradient-free forward pass.
  nn::Tensor4<T> predict(const nn::Tensor4<T>& input);

  const std::vector<ResidualBlock>& blocks() const { return blocks_; }
  const ResidualBlock& block(const std::string& name) const;
  nn::Var run_block(nn::Tape<T>& tape, const ResidualBlock& block, nn::Var input);

  /// Same layout and values in another precision.
  template <typename U>
  UNet<U> cast() const {
    UNet<U> out(config_, 0);
    for (std::size_t i = 0; i < params_.size(); ++i) out.parameters()[i].value = params_[i].value.template cast<U>();
    return out;
  }

 private:
  ResidualBlock make_block(const std::string& name, int cin, int cout);
  std::size_t add_param(const std::string& name, nn::Shape4 shape);
  void initialize(std::uint64_t seed);

  UNetConfig config_;
  nn::ParameterSet<T> params_;
  std::vector<ResidualBlock> blocks_;
  std::vector<std::size_t> encoder_;
  std::size_t bottleneck_ = 0;
  std::vector<std::size_t> decoder_;  // indexed by level
  std::size_t head_weight_ = 0;
  std::size_t head_bias_ = 0;
};

template <typename T>
UNet<T> build_unet(const UNetConfig& config, std::uint64_t seed) {
  return UNet<T>(config, seed);
}

}  // namespace residseg
