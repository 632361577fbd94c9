#include "residseg/unet.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "residseg/error.hpp"
#include "residseg/nn/ops.hpp"

namespace residseg {

void UNetConfig::validate() const {
  if (depth < 1) throw ConfigError("unet.depth must be >= 1, got " + std::to_string(depth));
  if (base_channels < 1) throw ConfigError("unet.base_channels must be >= 1");
  if (channel_cap < base_channels) throw ConfigError("unet.channel_cap must be >= base_channels");
  if (input_size < 1 || input_size % (1 << depth) != 0) {
    throw ConfigError("unet.input_size " + std::to_string(input_size) + " is not divisible by 2^depth = " +
                      std::to_string(1 << depth));
  }
  if (keep_long_skip_from_level < 0 || keep_long_skip_from_level > depth) {
    throw ConfigError("unet.keep_long_skip_from_level must lie in [0, depth]");
  }
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("unet.leaky_slope must lie in [0, 1)");
  if (!(norm_eps > 0.0)) throw ConfigError("unet.norm_eps must be > 0");
}

int UNetConfig::channels(int level) const {
  long long c = base_channels;
  for (int l = 0; l < level && c < channel_cap; ++l) c *= 2;
  return static_cast<int>(std::min<long long>(c, channel_cap));
}

namespace {

std::size_t separable_count(std::size_t cin, std::size_t cout) {
  return cin * kKernelSize * kKernelSize + cin * cout + cout;
}

std::size_t block_count(std::size_t cin, std::size_t cout) {
  std::size_t n = separable_count(cin, cout) + separable_count(cout, cout) + 4 * cout;
  if (cin != cout) n += cin * cout + cout;
  return n;
}

}  // namespace

std::size_t parameter_count(const UNetConfig& config) {
  config.validate();
  std::size_t total = 0;
  for (int l = 0; l < config.depth; ++l) {
    total += block_count(l == 0 ? 1 : config.channels(l - 1), config.channels(l));
  }
  total += block_count(config.channels(config.depth - 1), config.channels(config.depth));
  for (int l = 0; l < config.depth; ++l) {
    std::size_t cin = config.channels(l + 1);
    if (config.has_long_skip(l)) cin += config.channels(l);
    total += block_count(cin, config.channels(l));
  }
  total += config.channels(0) + 1;
  return total;
}

template <typename T>
UNet<T>::UNet(const UNetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  for (int l = 0; l < config_.depth; ++l) {
    encoder_.push_back(blocks_.size());
    blocks_.push_back(make_block("enc" + std::to_string(l), l == 0 ? 1 : config_.channels(l - 1), config_.channels(l)));
  }
  bottleneck_ = blocks_.size();
  blocks_.push_back(make_block("bottleneck", config_.channels(config_.depth - 1), config_.channels(config_.depth)));
  decoder_.assign(config_.depth, 0);
  for (int l = config_.depth - 1; l >= 0; --l) {
    int cin = config_.channels(l + 1);
    if (config_.has_long_skip(l)) cin += config_.channels(l);
    decoder_[l] = blocks_.size();
    blocks_.push_back(make_block("dec" + std::to_string(l), cin, config_.channels(l)));
  }
  head_weight_ = add_param("head.weight", {1, config_.channels(0), 1, 1});
  head_bias_ = add_param("head.bias", {1, 1, 1, 1});
  initialize(seed);
}

template <typename T>
std::size_t UNet<T>::add_param(const std::string& name, nn::Shape4 shape) {
  params_.add(name, nn::Tensor4<T>(shape));
  return params_.size() - 1;
}

template <typename T>
ResidualBlock UNet<T>::make_block(const std::string& name, int cin, int cout) {
  ResidualBlock b;
  b.name = name;
  b.in_channels = cin;
  b.out_channels = cout;
  auto stage = [&](const std::string& prefix, int in) {
    ResidualBlock::Stage s{};
    s.depthwise = add_param(prefix + ".depthwise", {in, 1, kKernelSize, kKernelSize});
    s.pointwise = add_param(prefix + ".pointwise", {cout, in, 1, 1});
    s.bias = add_param(prefix + ".bias", {1, cout, 1, 1});
    s.scale = add_param(prefix + ".norm.scale", {1, cout, 1, 1});
    s.shift = add_param(prefix + ".norm.shift", {1, cout, 1, 1});
    return s;
  };
  b.first = stage(name + ".conv1", cin);
  b.second = stage(name + ".conv2", cout);
  if (cin != cout) {
    b.projected = true;
    b.proj_weight = add_param(name + ".proj.weight", {cout, cin, 1, 1});
    b.proj_bias = add_param(name + ".proj.bias", {1, cout, 1, 1});
  }
  return b;
}

template <typename T>
void UNet<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // gain 2 for convs feeding a rectifier, 1 for the linear projections and head
  auto he = [&](std::size_t index, double gain = 2.0) {
    auto& v = params_[index].value;
    const auto s = v.shape();
    const double fan_in = static_cast<double>(s.c) * s.h * s.w;
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
    for (auto& x : v.values()) x = static_cast<T>(dist(rng));
  };
  for (const auto& b : blocks_) {
    for (const auto* s : {&b.first, &b.second}) {
      he(s->depthwise);
      he(s->pointwise);
      params_[s->scale].value.fill(T{1});
    }
    if (b.projected) he(b.proj_weight, 1.0);
  }
  he(head_weight_, 1.0);
}

template <typename T>
const ResidualBlock& UNet<T>::block(const std::string& name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return b;
  }
  throw Error("no block named '" + name + "'");
}

template <typename T>
nn::Var UNet<T>::run_block(nn::Tape<T>& tape, const ResidualBlock& b, nn::Var input) {
  auto stage = [&](const ResidualBlock::Stage& s, nn::Var x) {
    nn::Var y = nn::separable_conv2d(tape, x, tape.parameter(params_[s.depthwise]),
                                     tape.parameter(params_[s.pointwise]), tape.parameter(params_[s.bias]));
    y = nn::instance_norm(tape, y, tape.parameter(params_[s.scale]), tape.parameter(params_[s.shift]),
                          config_.norm_eps);
    return nn::leaky_relu(tape, y, config_.leaky_slope);
  };
  nn::Var y = stage(b.second, stage(b.first, input));
  nn::Var skip = input;
  if (b.projected) {
    skip = nn::conv2d(tape, input, tape.parameter(params_[b.proj_weight]), tape.parameter(params_[b.proj_bias]), 1, 0);
  }
  return nn::add(tape, y, skip);
}

template <typename T>
nn::Var UNet<T>::forward(nn::Tape<T>& tape, nn::Var input) {
  const auto s = tape.value(input).shape();
  if (s.c != 1 || s.h != config_.input_size || s.w != config_.input_size) {
    throw ShapeError("unet forward: expected (n, 1, " + std::to_string(config_.input_size) + ", " +
                     std::to_string(config_.input_size) + ") input, got " + nn::to_string(s));
  }
  std::vector<nn::Var> skips(config_.depth);
  nn::Var h = input;
  for (int l = 0; l < config_.depth; ++l) {
    h = run_block(tape, blocks_[encoder_[l]], h);
    skips[l] = h;
    h = nn::maxpool2(tape, h);
  }
  h = run_block(tape, blocks_[bottleneck_], h);
  for (int l = config_.depth - 1; l >= 0; --l) {
    h = nn::upsample2(tape, h);
    if (config_.has_long_skip(l)) h = nn::concat_channels(tape, h, skips[l]);
    h = run_block(tape, blocks_[decoder_[l]], h);
  }
  h = nn::conv2d(tape, h, tape.parameter(params_[head_weight_]), tape.parameter(params_[head_bias_]), 1, 0);
  if (config_.final_activation == FinalActivation::kSigmoid) h = nn::sigmoid(tape, h);
  return h;
}

template <typename T>
nn::Tensor4<T> UNet<T>::predict(const nn::Tensor4<T>& input) {
  nn::Tape<T> tape(false);
  return tape.value(forward(tape, tape.constant(input)));
}

template class UNet<float>;
template class UNet<double>;

}  // namespace residseg
