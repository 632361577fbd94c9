#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "residseg/image.hpp"
#include "residseg/shape_mask.hpp"

namespace residseg {

enum class FillMode { kUniformNoise, kConstantMean };

std::string to_string(FillMode mode);
FillMode parse_fill_mode(const std::string& text);

/// Self-supervision corruption schedule. Ops run in the order gamma,
/// in-paint, out-paint, each gated by its own probability.
struct CorruptionPolicy {
  double gamma_prob = 0.9;
  /// log γ is drawn uniformly from this interval.
  std::pair<double, double> gamma_log_range{-0.69314718055994529, 0.69314718055994529};
  double inpaint_prob = 0.5;
  std::pair<int, int> inpaint_regions{1, 5};
  /// Area per region as a fraction of the foreground.
  std::pair<double, double> inpaint_area_frac{0.01, 0.10};
  std::vector<ShapeKind> inpaint_shapes{ShapeKind::kRectangle, ShapeKind::kEllipse, ShapeKind::kBlob,
                                        ShapeKind::kPolygon};
  FillMode inpaint_fill = FillMode::kUniformNoise;
  double outpaint_prob = 0.3;
  /// Area of the kept window as a fraction of the whole image.
  std::pair<double, double> outpaint_keep_frac{0.3, 0.6};

  /// Policy with every probability at zero.
  static CorruptionPolicy none();

  /// Throws ConfigError on the first violated constraint.
  void validate() const;

  friend bool operator==(const CorruptionPolicy&, const CorruptionPolicy&) = default;
};

using Rng = std::mt19937_64;

/// x ↦ x^γ. Throws std::invalid_argument for γ <= 0.
Image2D gamma_transform(const Image2D& image, double gamma);

/// Relative tolerance on the area of sampled shapes.
inline constexpr double kShapeAreaTolerance = 0.30;

/// Samples a shape of `kind` whose area is within ±30% of
/// area_frac·|foreground|, lying inside the foreground and centred on a
/// foreground pixel. When no placement satisfies both constraints the
/// closest candidate clipped to the foreground is returned with
/// `degraded` set.
ShapeMask sample_shape_mask(Rng& rng, ShapeKind kind, double area_frac, const ShapeMask& foreground);

/// Same, with the target given in pixels.
ShapeMask sample_shape_area(Rng& rng, ShapeKind kind, double target_area, const ShapeMask& foreground);

/// Replaces pixels under `mask`; everything else is copied bit-exactly.
Image2D inpaint(const Image2D& image, const ShapeMask& mask, FillMode fill, Rng& rng);

/// Keeps pixels under `keep`, replaces all others with uniform noise.
Image2D outpaint(const Image2D& image, const ShapeMask& keep, Rng& rng);

struct CorruptionResult {
  Image2D corrupted;
  Image2D original;
  bool gamma_applied = false;
  bool inpaint_applied = false;
  bool outpaint_applied = false;
  double gamma = 1.0;
};

/// Applies the policy with all randomness drawn from `seed`.
CorruptionResult corrupt(const Image2D& image, const ShapeMask& foreground, const CorruptionPolicy& policy,
                         std::uint64_t seed);

}  // namespace residseg
