#pragma once

#include <cstdint>
#include <utility>

#include "residseg/dataset.hpp"
#include "residseg/shape_mask.hpp"

namespace residseg {

/// Parameters of the synthetic mammogram corpus.
struct PhantomSpec {
  int size = 128;
  int n_benign = 200;
  int n_malignant = 80;
  std::pair<int, int> mass_count_range{1, 2};
  /// Number of calcification clusters.
  std::pair<int, int> calc_count_range{0, 2};
  /// Mass radius as a fraction of the image side.
  std::pair<double, double> mass_radius_frac{0.03, 0.07};
  /// Calcification cluster radius as a fraction of the image side.
  std::pair<double, double> calc_radius_frac{0.03, 0.06};
  /// Cell size of the coarsest texture octave, as a fraction of the side.
  double tissue_texture_scale = 0.25;
  std::uint64_t seed = 42;

  int total() const { return n_benign + n_malignant; }
  void validate() const;

  friend bool operator==(const PhantomSpec&, const PhantomSpec&) = default;
};

/// Minimum intensity a mass adds over the surrounding tissue inside its mask.
inline constexpr double kMassContrastFloor = 0.15;

/// A generated sample together with the generator's own foreground.
struct PhantomRender {
  Sample sample;
  BinaryMask foreground;
  /// Tissue alone, before any density or lesion was added.
  Image2D background;
};

/// Indices below n_benign are benign (ACR1/ACR2), the rest malignant
/// (ACR4-6) with mass and calcification masks. Deterministic in (spec.seed, index).
PhantomRender render_phantom(const PhantomSpec& spec, int index);
Sample generate_phantom(const PhantomSpec& spec, int index);
Dataset generate_corpus(const PhantomSpec& spec);

/// Foreground threshold used by preprocessing and corruption.
inline constexpr double kForegroundThreshold = 0.05;

/// Largest 4-connected component of pixels strictly above `threshold`.
ShapeMask foreground_mask(const Image2D& image, double threshold = kForegroundThreshold);

/// Crop window derived from an image's foreground.
struct CropGeometry {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
  int side = 0;  // longer side of the window
};

CropGeometry crop_geometry(const Image2D& image);

/// Crop to the foreground bounding box, bilinear rescale so the longer
/// side becomes `target` (end pixels aligned), zero-pad centred to
/// target×target.
Image2D crop_and_rescale(const Image2D& image, int target);

/// Applies the image's crop to the image and (nearest-neighbour) to its masks.
Sample crop_and_rescale(const Sample& sample, int target);

}  // namespace residseg
