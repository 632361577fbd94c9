#include "residseg/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "residseg/error.hpp"

namespace residseg {

std::string to_string(FillMode mode) {
  return mode == FillMode::kUniformNoise ? "uniform_noise" : "constant_mean";
}

FillMode parse_fill_mode(const std::string& text) {
  if (text == "uniform_noise") return FillMode::kUniformNoise;
  if (text == "constant_mean") return FillMode::kConstantMean;
  throw Error("unknown fill mode '" + text + "'");
}

CorruptionPolicy CorruptionPolicy::none() {
  CorruptionPolicy p;
  p.gamma_prob = 0.0;
  p.inpaint_prob = 0.0;
  p.outpaint_prob = 0.0;
  return p;
}

void CorruptionPolicy::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  prob(gamma_prob, "gamma_prob");
  prob(inpaint_prob, "inpaint_prob");
  prob(outpaint_prob, "outpaint_prob");
  if (!(gamma_log_range.first < gamma_log_range.second)) throw ConfigError("gamma_log_range must satisfy lo < hi");
  if (inpaint_regions.first < 1 || inpaint_regions.first > inpaint_regions.second) {
    throw ConfigError("inpaint_regions must satisfy 1 <= min <= max");
  }
  const auto& a = inpaint_area_frac;
  if (!(a.first > 0.0 && a.first <= a.second && a.second < 1.0)) {
    throw ConfigError("inpaint_area_frac must satisfy 0 < min <= max < 1");
  }
  if (inpaint_prob > 0.0 && inpaint_shapes.empty()) throw ConfigError("inpaint_shapes must be non-empty");
  for (auto k : inpaint_shapes) {
    if (k == ShapeKind::kRegion) throw ConfigError("inpaint_shapes accepts rectangle, ellipse, blob, polygon");
  }
  const auto& o = outpaint_keep_frac;
  if (!(o.first > 0.0 && o.first <= o.second && o.second <= 1.0)) {
    throw ConfigError("outpaint_keep_frac must satisfy 0 < min <= max <= 1");
  }
}

Image2D gamma_transform(const Image2D& image, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma_transform: gamma must be > 0");
  Image2D out = image;
  if (gamma == 1.0) return out;
  const float g = static_cast<float>(gamma);
  for (auto& v : out.data) v = std::clamp(std::pow(v, g), 0.0f, 1.0f);
  return out;
}

namespace {

constexpr int kPlacementAttempts = 64;
constexpr int kScaleIterations = 24;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Geometry drawn once per placement attempt, rasterised at a variable scale
// (the scale is roughly the side of a square of equal area).
struct Geometry {
  ShapeKind kind;
  double cy, cx;
  double aspect;
  struct Disk {
    double dy, dx, radius;
  };
  std::vector<Disk> disks;
  std::vector<double> angles;
};

Geometry draw_geometry(Rng& rng, ShapeKind kind, double cy, double cx) {
  Geometry g{kind, cy, cx, std::exp(uniform(rng, std::log(0.5), std::log(2.0))), {}, {}};
  if (kind == ShapeKind::kBlob) {
    const int n = uniform_int(rng, 3, 8);
    g.disks.push_back({0.0, 0.0, uniform(rng, 0.5, 1.0)});
    for (int i = 1; i < n; ++i) {
      const auto& parent = g.disks[uniform_int(rng, 0, i - 1)];
      const double d = uniform(rng, 0.0, 0.8) * parent.radius;
      const double th = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      g.disks.push_back({parent.dy + d * std::sin(th), parent.dx + d * std::cos(th), uniform(rng, 0.5, 1.0)});
    }
  } else if (kind == ShapeKind::kPolygon) {
    const int n = uniform_int(rng, 5, 9);
    for (int i = 0; i < n; ++i) g.angles.push_back(uniform(rng, 0.0, 2.0 * std::numbers::pi));
    std::sort(g.angles.begin(), g.angles.end());
  }
  return g;
}

// Pixel indices covered by the geometry at `scale`, clipped to the image.
std::vector<std::size_t> rasterize(const Geometry& g, double scale, int h, int w) {
  std::vector<std::size_t> cells;
  const double sy = std::sqrt(g.aspect);
  auto emit_box = [&](double y0, double y1, double x0, double x1, auto&& inside) {
    const int ty = std::max(0, static_cast<int>(std::floor(y0)));
    const int by = std::min(h - 1, static_cast<int>(std::ceil(y1)));
    const int lx = std::max(0, static_cast<int>(std::floor(x0)));
    const int rx = std::min(w - 1, static_cast<int>(std::ceil(x1)));
    for (int y = ty; y <= by; ++y) {
      for (int x = lx; x <= rx; ++x) {
        if (inside(static_cast<double>(y), static_cast<double>(x))) cells.push_back(static_cast<std::size_t>(y) * w + x);
      }
    }
  };
  switch (g.kind) {
    case ShapeKind::kRectangle: {
      const int rh = std::max(1, static_cast<int>(std::lround(scale * sy)));
      const int rw = std::max(1, static_cast<int>(std::lround(scale / sy)));
      const int top = static_cast<int>(std::lround(g.cy)) - rh / 2;
      const int left = static_cast<int>(std::lround(g.cx)) - rw / 2;
      for (int y = std::max(0, top); y < std::min(h, top + rh); ++y) {
        for (int x = std::max(0, left); x < std::min(w, left + rw); ++x) cells.push_back(static_cast<std::size_t>(y) * w + x);
      }
      break;
    }
    case ShapeKind::kEllipse: {
      const double ay = scale * sy / std::sqrt(std::numbers::pi);
      const double ax = scale / sy / std::sqrt(std::numbers::pi);
      emit_box(g.cy - ay, g.cy + ay, g.cx - ax, g.cx + ax, [&](double y, double x) {
        const double u = (y - g.cy) / ay;
        const double v = (x - g.cx) / ax;
        return u * u + v * v <= 1.0;
      });
      break;
    }
    case ShapeKind::kBlob: {
      const double unit = scale / 2.0;
      double reach = 0.0;
      for (const auto& d : g.disks) reach = std::max(reach, std::hypot(d.dy, d.dx) + d.radius);
      reach *= unit;
      emit_box(g.cy - reach, g.cy + reach, g.cx - reach, g.cx + reach, [&](double y, double x) {
        for (const auto& d : g.disks) {
          const double r = d.radius * unit;
          const double u = y - (g.cy + d.dy * unit);
          const double v = x - (g.cx + d.dx * unit);
          if (u * u + v * v <= r * r) return true;
        }
        return false;
      });
      break;
    }
    case ShapeKind::kPolygon: {
      // vertices on an ellipse in angular order form a convex polygon
      const double ry = scale * sy * 0.7;
      const double rx = scale / sy * 0.7;
      std::vector<std::pair<double, double>> v;
      for (double a : g.angles) v.emplace_back(g.cy + ry * std::sin(a), g.cx + rx * std::cos(a));
      emit_box(g.cy - ry, g.cy + ry, g.cx - rx, g.cx + rx, [&](double y, double x) {
        for (std::size_t i = 0; i < v.size(); ++i) {
          const auto& [y0, x0] = v[i];
          const auto& [y1, x1] = v[(i + 1) % v.size()];
          if ((x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) < 0.0) return false;
        }
        return true;
      });
      break;
    }
    case ShapeKind::kRegion:
      throw Error("cannot rasterize a generic region");
  }
  if (cells.empty()) {
    const int y = std::clamp(static_cast<int>(std::lround(g.cy)), 0, h - 1);
    const int x = std::clamp(static_cast<int>(std::lround(g.cx)), 0, w - 1);
    cells.push_back(static_cast<std::size_t>(y) * w + x);
  }
  return cells;
}

BinaryMask to_grid(const std::vector<std::size_t>& cells, int h, int w) {
  BinaryMask m(h, w, 0);
  for (auto i : cells) m.data[i] = 1;
  return m;
}

std::vector<std::size_t> set_cells(const BinaryMask& m) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m.data[i]) out.push_back(i);
  }
  return out;
}

// Rasterises at the scale whose area lands closest to the target.
BinaryMask fit_scale(const Geometry& g, double target, int h, int w) {
  auto shape_at = [&](double s) {
    auto cells = rasterize(g, s, h, w);
    BinaryMask grid = to_grid(cells, h, w);
    if (g.kind == ShapeKind::kBlob) grid = largest_component(grid);
    return grid;
  };
  double lo = 0.25;
  double hi = 2.0 * std::sqrt(static_cast<double>(h) * w) + 2.0;
  BinaryMask best = shape_at(std::sqrt(target));
  double best_err = std::abs(static_cast<double>(count_set(best)) - target);
  for (int it = 0; it < kScaleIterations && best_err > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    BinaryMask m = shape_at(mid);
    const double area = static_cast<double>(count_set(m));
    const double err = std::abs(area - target);
    if (err < best_err) {
      best_err = err;
      best = std::move(m);
    }
    (area < target ? lo : hi) = mid;
  }
  return best;
}

ShapeMask sample_shape_impl(Rng& rng, ShapeKind kind, double target, const BinaryMask& containment,
                            const std::vector<std::size_t>& centres) {
  if (centres.empty()) throw Error("sample_shape_mask: empty foreground");
  const int h = containment.height;
  const int w = containment.width;
  BinaryMask fallback;
  double fallback_err = INFINITY;
  for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
    const std::size_t c = centres[std::uniform_int_distribution<std::size_t>(0, centres.size() - 1)(rng)];
    const Geometry g = draw_geometry(rng, kind, static_cast<double>(c / w), static_cast<double>(c % w));
    BinaryMask m = fit_scale(g, target, h, w);
    bool inside = true;
    for (std::size_t i = 0; i < m.size() && inside; ++i) inside = !m.data[i] || containment.data[i];
    const double area = static_cast<double>(count_set(m));
    if (inside && std::abs(area - target) <= kShapeAreaTolerance * target) {
      ShapeMask out = ShapeMask::from_grid(std::move(m), kind);
      return out;
    }
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = m.data[i] && containment.data[i];
    if (kind == ShapeKind::kBlob) m = largest_component(m);
    const double clipped = static_cast<double>(count_set(m));
    const double err = std::abs(clipped - target);
    if (clipped > 0 && err < fallback_err) {
      fallback_err = err;
      fallback = std::move(m);
    }
  }
  if (fallback.empty()) {
    fallback = BinaryMask(h, w, 0);
    fallback.data[centres.front()] = 1;
  }
  ShapeMask out = ShapeMask::from_grid(std::move(fallback), kind);
  out.degraded = true;
  return out;
}

}  // namespace

ShapeMask sample_shape_area(Rng& rng, ShapeKind kind, double target_area, const ShapeMask& foreground) {
  if (foreground.area == 0) throw Error("sample_shape_mask: empty foreground");
  return sample_shape_impl(rng, kind, target_area, foreground.grid, set_cells(foreground.grid));
}

ShapeMask sample_shape_mask(Rng& rng, ShapeKind kind, double area_frac, const ShapeMask& foreground) {
  if (!(area_frac > 0.0 && area_frac < 1.0)) throw std::invalid_argument("sample_shape_mask: area_frac must lie in (0, 1)");
  return sample_shape_area(rng, kind, area_frac * static_cast<double>(foreground.area), foreground);
}

Image2D inpaint(const Image2D& image, const ShapeMask& mask, FillMode fill, Rng& rng) {
  require_same_size(image, mask.grid, "inpaint");
  Image2D out = image;
  if (fill == FillMode::kConstantMean) {
    double mean = 0.0;
    for (float v : image.data) mean += v;
    mean /= static_cast<double>(std::max<std::size_t>(1, image.size()));
    const float m = static_cast<float>(mean);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (mask.grid.data[i]) out.data[i] = m;
    }
  } else {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (mask.grid.data[i]) out.data[i] = u(rng);
    }
  }
  return out;
}

Image2D outpaint(const Image2D& image, const ShapeMask& keep, Rng& rng) {
  require_same_size(image, keep.grid, "outpaint");
  Image2D out = image;
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!keep.grid.data[i]) out.data[i] = u(rng);
  }
  return out;
}

CorruptionResult corrupt(const Image2D& image, const ShapeMask& foreground, const CorruptionPolicy& policy,
                         std::uint64_t seed) {
  policy.validate();
  require_same_size(image, foreground.grid, "corrupt");
  Rng rng(seed);
  CorruptionResult r;
  r.original = image;
  r.corrupted = image;
  auto coin = [&](double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; };

  if (coin(policy.gamma_prob)) {
    r.gamma_applied = true;
    r.gamma = std::exp(uniform(rng, policy.gamma_log_range.first, policy.gamma_log_range.second));
    r.corrupted = gamma_transform(r.corrupted, r.gamma);
  }
  if (coin(policy.inpaint_prob) && foreground.area > 0) {
    r.inpaint_applied = true;
    const int regions = uniform_int(rng, policy.inpaint_regions.first, policy.inpaint_regions.second);
    for (int k = 0; k < regions; ++k) {
      const auto kind = policy.inpaint_shapes[std::uniform_int_distribution<std::size_t>(0, policy.inpaint_shapes.size() - 1)(rng)];
      const double frac = uniform(rng, policy.inpaint_area_frac.first, policy.inpaint_area_frac.second);
      ShapeMask m = sample_shape_mask(rng, kind, frac, foreground);
      r.corrupted = inpaint(r.corrupted, m, policy.inpaint_fill, rng);
    }
  }
  if (coin(policy.outpaint_prob)) {
    r.outpaint_applied = true;
    const double frac = uniform(rng, policy.outpaint_keep_frac.first, policy.outpaint_keep_frac.second);
    const BinaryMask whole(image.height, image.width, 1);
    const auto centres = foreground.area > 0 ? set_cells(foreground.grid) : set_cells(whole);
    ShapeMask keep = sample_shape_impl(rng, ShapeKind::kRectangle, frac * static_cast<double>(image.size()), whole, centres);
    r.corrupted = outpaint(r.corrupted, keep, rng);
  }
  return r;
}

}  // namespace residseg
