#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "residseg/error.hpp"

namespace residseg {

/// Dense row-major 2D grid.
template <typename T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  T& operator()(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  const T& operator()(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool contains(int y, int x) const { return y >= 0 && y < height && x >= 0 && x < width; }

  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Single-channel unit-interval intensity image.
using Image2D = Grid<float>;

/// Binary grid; nonzero cells are set.
using BinaryMask = Grid<std::uint8_t>;

inline std::size_t count_set(const BinaryMask& m) {
  std::size_t n = 0;
  for (auto v : m.data) n += v != 0;
  return n;
}

template <typename A, typename B>
void require_same_size(const Grid<A>& a, const Grid<B>& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": size mismatch " + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

}  // namespace residseg
