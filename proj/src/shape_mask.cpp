#include "residseg/shape_mask.hpp"

#include <algorithm>
#include <vector>

namespace residseg {

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kRectangle: return "rectangle";
    case ShapeKind::kEllipse: return "ellipse";
    case ShapeKind::kBlob: return "blob";
    case ShapeKind::kPolygon: return "polygon";
    case ShapeKind::kRegion: return "region";
  }
  return "region";
}

ShapeKind parse_shape_kind(const std::string& text) {
  for (auto k : {ShapeKind::kRectangle, ShapeKind::kEllipse, ShapeKind::kBlob, ShapeKind::kPolygon}) {
    if (to_string(k) == text) return k;
  }
  throw Error("unknown shape kind '" + text + "'");
}

ShapeMask ShapeMask::from_grid(BinaryMask grid, ShapeKind kind) {
  ShapeMask m;
  m.area = count_set(grid);
  m.grid = std::move(grid);
  m.kind = kind;
  return m;
}

ShapeMask ShapeMask::full(int height, int width) { return from_grid(BinaryMask(height, width, 1)); }

ShapeMask ShapeMask::complement() const {
  BinaryMask g = grid;
  for (auto& v : g.data) v = v ? 0 : 1;
  return from_grid(std::move(g));
}

namespace {

// Labels 4-connected components; returns per-cell labels (0 = unset) and sizes (index = label - 1).
std::vector<int> label_components(const BinaryMask& mask, std::vector<std::size_t>& sizes) {
  std::vector<int> labels(mask.size(), 0);
  std::vector<std::size_t> stack;
  const int h = mask.height;
  const int w = mask.width;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask.data[start] || labels[start]) continue;
    const int label = static_cast<int>(sizes.size()) + 1;
    std::size_t count = 0;
    stack.push_back(start);
    labels[start] = label;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      ++count;
      const int y = static_cast<int>(i / w);
      const int x = static_cast<int>(i % w);
      const int ny[4] = {y - 1, y + 1, y, y};
      const int nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
        const std::size_t j = static_cast<std::size_t>(ny[k]) * w + nx[k];
        if (mask.data[j] && !labels[j]) {
          labels[j] = label;
          stack.push_back(j);
        }
      }
    }
    sizes.push_back(count);
  }
  return labels;
}

}  // namespace

BinaryMask largest_component(const BinaryMask& mask) {
  std::vector<std::size_t> sizes;
  auto labels = label_components(mask, sizes);
  BinaryMask out(mask.height, mask.width, 0);
  if (sizes.empty()) return out;
  std::size_t best = 0;
  for (std::size_t k = 1; k < sizes.size(); ++k) {
    if (sizes[k] > sizes[best]) best = k;
  }
  const int keep = static_cast<int>(best) + 1;
  for (std::size_t i = 0; i < labels.size(); ++i) out.data[i] = labels[i] == keep;
  return out;
}

std::size_t count_components(const BinaryMask& mask) {
  std::vector<std::size_t> sizes;
  label_components(mask, sizes);
  return sizes.size();
}

BoundingBox bounding_box(const BinaryMask& mask) {
  BoundingBox b{mask.height, mask.width, -1, -1};
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask(y, x)) continue;
      b.top = std::min(b.top, y);
      b.left = std::min(b.left, x);
      b.bottom = std::max(b.bottom, y);
      b.right = std::max(b.right, x);
    }
  }
  return b;
}

}  // namespace residseg
