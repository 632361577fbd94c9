#pragma once

#include <cstddef>
#include <string>

#include "residseg/image.hpp"

namespace residseg {

enum class ShapeKind { kRectangle, kEllipse, kBlob, kPolygon, kRegion };

std::string to_string(ShapeKind kind);
ShapeKind parse_shape_kind(const std::string& text);

/// Image-sized binary region with its provenance.
struct ShapeMask {
  BinaryMask grid;
  ShapeKind kind = ShapeKind::kRegion;
  std::size_t area = 0;
  /// Set when the requested geometry could not be met and a fallback was used.
  bool degraded = false;

  static ShapeMask from_grid(BinaryMask grid, ShapeKind kind = ShapeKind::kRegion);
  static ShapeMask full(int height, int width);
  ShapeMask complement() const;
};

/// Largest 4-connected component; ties go to the component found first in
/// row-major scan order. Empty input yields an empty grid.
BinaryMask largest_component(const BinaryMask& mask);

/// Number of 4-connected components of the set cells.
std::size_t count_components(const BinaryMask& mask);

struct BoundingBox {
  int top = 0;
  int left = 0;
  int bottom = -1;  // inclusive
  int right = -1;   // inclusive
  int height() const { return bottom - top + 1; }
  int width() const { return right - left + 1; }
  bool empty() const { return bottom < top || right < left; }
};

BoundingBox bounding_box(const BinaryMask& mask);

}  // namespace residseg
