#pragma once

#include "residseg/nn/tape.hpp"

// Differentiable kernels. Every op reads its inputs from the tape, appends
// one node and returns its handle. Spatial ops use NCHW layout.
namespace residseg::nn {

/// Cross-correlation. weight: (c_out, c_in, k, k); bias: (1, c_out, 1, 1).
template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias, int stride, int padding);

/// Per-channel k×k cross-correlation, stride 1, "same" padding k/2.
/// weight: (c, 1, k, k) with odd k.
template <typename T>
Var depthwise_conv2d(Tape<T>& tape, Var input, Var weight);

/// Depthwise k×k stage followed by a 1×1 pointwise stage with bias.
/// depthwise: (c_in, 1, k, k); pointwise: (c_out, c_in, 1, 1); bias: (1, c_out, 1, 1).
template <typename T>
Var separable_conv2d(Tape<T>& tape, Var input, Var depthwise, Var pointwise, Var bias);

/// Per-(sample, channel) plane normalisation with affine scale/shift of shape (1, c, 1, 1).
template <typename T>
Var instance_norm(Tape<T>& tape, Var input, Var scale, Var shift, double eps);

template <typename T>
Var leaky_relu(Tape<T>& tape, Var input, double slope);

template <typename T>
Var sigmoid(Tape<T>& tape, Var input);

/// 2×2 max pooling, stride 2. Ties route the gradient to the first maximum in scan order.
template <typename T>
Var maxpool2(Tape<T>& tape, Var input);

/// Nearest-neighbour ×2 upsampling.
template <typename T>
Var upsample2(Tape<T>& tape, Var input);

/// Channel-axis concatenation [a, b].
template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var sub(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var a, double factor);

/// Elementwise clamp; the gradient passes only strictly inside (lo, hi).
template <typename T>
Var clamp(Tape<T>& tape, Var a, double lo, double hi);

/// Scalar Σ weights ⊙ a. `weights` is a constant of the same shape.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var a, const Tensor4<T>& weights);

template <typename T>
Var sum(Tape<T>& tape, Var a);

/// Mean squared error over all elements.
template <typename T>
Var mse_loss(Tape<T>& tape, Var pred, Var target);

/// Mean binary cross-entropy; predictions clamped to [kBceClamp, 1 - kBceClamp].
template <typename T>
Var bce_loss(Tape<T>& tape, Var pred, Var target);

/// 1 - (2 Σ p·t + smooth) / (Σ p + Σ t + smooth), evaluated per sample and
/// averaged over the batch.
template <typename T>
Var soft_dice_loss(Tape<T>& tape, Var pred, Var target, double smooth = 1.0);

inline constexpr double kBceClamp = 1e-7;

}  // namespace residseg::nn
