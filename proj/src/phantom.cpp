#include "residseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "residseg/error.hpp"
#include "residseg/seed.hpp"

namespace residseg {

void PhantomSpec::validate() const {
  auto range_ok = [](auto r) { return r.first >= 0 && r.first <= r.second; };
  if (size < 16 || (size & (size - 1)) != 0) throw ConfigError("data.size must be a power of two >= 16");
  if (n_benign < 0 || n_malignant < 0) throw ConfigError("data.n_benign and data.n_malignant must be >= 0");
  if (!range_ok(mass_count_range) || !range_ok(calc_count_range)) throw ConfigError("lesion count ranges must be ordered and >= 0");
  if (n_malignant > 0 && mass_count_range.second == 0 && calc_count_range.second == 0) {
    throw ConfigError("malignant phantoms must contain at least one lesion: mass and calcification ranges are both (0, 0)");
  }
  auto frac_ok = [](auto r) { return r.first > 0.0 && r.first <= r.second && r.second < 0.5; };
  if (!frac_ok(mass_radius_frac) || !frac_ok(calc_radius_frac)) throw ConfigError("radius fraction ranges must be ordered within (0, 0.5)");
  if (!(tissue_texture_scale > 0.0 && tissue_texture_scale <= 1.0)) throw ConfigError("data.tissue_texture_scale must lie in (0, 1]");
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// Multi-octave value noise in [-1, 1].
Grid<double> value_noise(Rng& rng, int size, double coarse_cell) {
  Grid<double> out(size, size, 0.0);
  double total_amp = 0.0;
  double amp = 1.0;
  for (int octave = 0; octave < 4; ++octave, amp *= 0.5) {
    const double cell = std::max(2.0, coarse_cell / (1 << octave));
    const int n = static_cast<int>(std::ceil(size / cell)) + 2;
    Grid<double> lattice(n, n);
    for (auto& v : lattice.data) v = uniform(rng, -1.0, 1.0);
    for (int y = 0; y < size; ++y) {
      const double fy = y / cell;
      const int iy = static_cast<int>(fy);
      const double ty = smoothstep(0.0, 1.0, fy - iy);
      for (int x = 0; x < size; ++x) {
        const double fx = x / cell;
        const int ix = static_cast<int>(fx);
        const double tx = smoothstep(0.0, 1.0, fx - ix);
        const double top = lattice(iy, ix) * (1 - tx) + lattice(iy, ix + 1) * tx;
        const double bot = lattice(iy + 1, ix) * (1 - tx) + lattice(iy + 1, ix + 1) * tx;
        out(y, x) += amp * (top * (1 - ty) + bot * ty);
      }
    }
    total_amp += amp;
  }
  for (auto& v : out.data) v /= total_amp;
  return out;
}

struct Breast {
  double cy, cx, ay, ax;
  // Normalised elliptic radius; <= 1 inside the breast.
  double radius(double y, double x) const {
    const double u = (y - cy) / ay;
    const double v = (x - cx) / ax;
    return std::sqrt(u * u + v * v);
  }
};

// A random foreground pixel whose normalised radius is at most `max_r`.
std::pair<int, int> interior_point(Rng& rng, const Breast& b, int size, double max_r) {
  for (;;) {
    const int y = uniform_int(rng, 0, size - 1);
    const int x = uniform_int(rng, 0, size - 1);
    if (b.radius(y, x) <= max_r) return {y, x};
  }
}

}  // namespace

PhantomRender render_phantom(const PhantomSpec& spec, int index) {
  spec.validate();
  if (index < 0 || index >= spec.total()) {
    throw std::out_of_range("phantom index " + std::to_string(index) + " outside corpus of " + std::to_string(spec.total()));
  }
  const bool malignant = index >= spec.n_benign;
  const int S = spec.size;
  Rng rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(index)}));

  const bool left = uniform(rng, 0.0, 1.0) < 0.5;
  const Breast breast{S / 2.0 + uniform(rng, -0.05, 0.05) * S, left ? 0.0 : S - 1.0, uniform(rng, 0.35, 0.47) * S,
                      uniform(rng, 0.55, 0.8) * S};
  const double base = uniform(rng, 0.45, 0.52);
  const Grid<double> noise = value_noise(rng, S, spec.tissue_texture_scale * S);

  PhantomRender out;
  Sample& s = out.sample;
  char id[32];
  std::snprintf(id, sizeof id, "phantom_%05d", index);
  s.id = id;
  s.image = Image2D(S, S, 0.0f);
  out.foreground = BinaryMask(S, S, 0);
  Grid<double> tissue(S, S, 0.0);
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const double r = breast.radius(y, x);
      if (r > 1.0) continue;
      out.foreground(y, x) = 1;
      const double falloff = 1.0 - 0.5 * smoothstep(0.85, 1.0, r);
      tissue(y, x) = (base + 0.15 * noise(y, x)) * falloff;
    }
  }
  Grid<double> added(S, S, 0.0);

  // low-contrast benign densities, present in both classes and never masked
  const int densities = uniform_int(rng, 0, 3);
  for (int k = 0; k < densities; ++k) {
    const auto [cy, cx] = interior_point(rng, breast, S, 0.75);
    const double radius = uniform(rng, 0.04, 0.09) * S;
    const double contrast = uniform(rng, 0.03, 0.07);
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        const double d = std::hypot(y - cy, x - cx) / radius;
        if (d < 1.5) added(y, x) += contrast * (1.0 - smoothstep(0.3, 1.5, d));
      }
    }
  }

  if (!malignant) {
    s.acr = uniform(rng, 0.0, 1.0) < 0.5 ? Acr::k1 : Acr::k2;
  } else {
    s.acr = static_cast<Acr>(uniform_int(rng, 4, 6));
    BinaryMask mass(S, S, 0);
    BinaryMask calc(S, S, 0);
    int masses = uniform_int(rng, spec.mass_count_range.first, spec.mass_count_range.second);
    int clusters = uniform_int(rng, spec.calc_count_range.first, spec.calc_count_range.second);
    if (masses + clusters == 0) (spec.mass_count_range.second > 0 ? masses : clusters) = 1;

    for (int k = 0; k < masses; ++k) {
      const auto [cy, cx] = interior_point(rng, breast, S, 0.65);
      const double radius = uniform(rng, spec.mass_radius_frac.first, spec.mass_radius_frac.second) * S;
      const double contrast = uniform(rng, 0.30, 0.45);
      const int lobes = uniform_int(rng, 3, 6);
      const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const int reach = static_cast<int>(std::ceil(radius * 1.5)) + 1;
      for (int y = std::max(0, cy - reach); y <= std::min(S - 1, cy + reach); ++y) {
        for (int x = std::max(0, cx - reach); x <= std::min(S - 1, cx + reach); ++x) {
          if (!out.foreground(y, x)) continue;
          const double th = std::atan2(y - cy, x - cx);
          const double rad = radius * (1.0 + 0.15 * std::sin(lobes * th + phase));
          const double a = contrast * (1.0 - smoothstep(0.5, 1.2, std::hypot(y - cy, x - cx) / rad));
          if (a <= 0.0) continue;
          added(y, x) += a;
          if (a >= 0.5 * contrast) mass(y, x) = 1;
        }
      }
    }
    for (int k = 0; k < clusters; ++k) {
      const auto [cy, cx] = interior_point(rng, breast, S, 0.7);
      const double radius = uniform(rng, spec.calc_radius_frac.first, spec.calc_radius_frac.second) * S;
      const int specks = uniform_int(rng, 3, 8);
      for (int j = 0; j < specks; ++j) {
        const double rr = radius * std::sqrt(uniform(rng, 0.0, 1.0));
        const double th = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const int sy = cy + static_cast<int>(std::lround(rr * std::sin(th)));
        const int sx = cx + static_cast<int>(std::lround(rr * std::cos(th)));
        const int extent = uniform_int(rng, 1, 3);
        const double a = uniform(rng, 0.35, 0.5);
        for (int y = sy; y < sy + extent; ++y) {
          for (int x = sx; x < sx + extent; ++x) {
            if (y < 0 || y >= S || x < 0 || x >= S || !out.foreground(y, x)) continue;
            added(y, x) += a;
            calc(y, x) = 1;
          }
        }
      }
    }
    s.mass_mask = std::move(mass);
    s.calc_mask = std::move(calc);
  }

  for (std::size_t i = 0; i < s.image.size(); ++i) {
    if (out.foreground.data[i]) s.image.data[i] = static_cast<float>(std::clamp(tissue.data[i] + added.data[i], 0.0, 1.0));
  }
  out.background = Image2D(S, S, 0.0f);
  for (std::size_t i = 0; i < tissue.size(); ++i) out.background.data[i] = static_cast<float>(tissue.data[i]);
  return out;
}

Sample generate_phantom(const PhantomSpec& spec, int index) { return render_phantom(spec, index).sample; }

Dataset generate_corpus(const PhantomSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.samples.reserve(spec.total());
  for (int i = 0; i < spec.total(); ++i) ds.samples.push_back(generate_phantom(spec, i));
  ds.meta["source"] = "phantom";
  ds.meta["seed"] = std::to_string(spec.seed);
  ds.meta["size"] = std::to_string(spec.size);
  ds.meta["n_benign"] = std::to_string(spec.n_benign);
  ds.meta["n_malignant"] = std::to_string(spec.n_malignant);
  return ds;
}

ShapeMask foreground_mask(const Image2D& image, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("foreground_mask: threshold must lie in (0, 1)");
  BinaryMask above(image.height, image.width, 0);
  for (std::size_t i = 0; i < image.size(); ++i) above.data[i] = image.data[i] > threshold;
  BinaryMask largest = largest_component(above);
  ShapeMask m = ShapeMask::from_grid(std::move(largest));
  if (m.area == 0) throw DataError(DataError::Kind::kEmpty, "foreground_mask: no pixel above threshold " + std::to_string(threshold));
  return m;
}

CropGeometry crop_geometry(const Image2D& image) {
  const ShapeMask fg = foreground_mask(image, kForegroundThreshold);
  const BoundingBox b = bounding_box(fg.grid);
  return CropGeometry{b.top, b.left, b.height(), b.width(), std::max(b.height(), b.width())};
}

namespace {

// Maps output index i of n onto [0, in - 1] so that the end pixels coincide.
double corner_aligned(int i, int n, int in) { return n == 1 ? (in - 1) / 2.0 : i * (in - 1.0) / (n - 1.0); }

// Resamples the crop window to fit target×target (long side exactly
// target) and centres it on a zero canvas.
template <typename T, typename Sampler>
Grid<T> apply_crop(const Grid<T>& src, const CropGeometry& g, int target, Sampler&& sample) {
  const double scale = static_cast<double>(target) / g.side;
  const int oh = std::clamp(static_cast<int>(std::lround(g.height * scale)), 1, target);
  const int ow = std::clamp(static_cast<int>(std::lround(g.width * scale)), 1, target);
  const int oy = (target - oh) / 2;
  const int ox = (target - ow) / 2;
  Grid<T> out(target, target, T{0});
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      if (oh == g.height && ow == g.width) {
        out(oy + y, ox + x) = src(g.top + y, g.left + x);
      } else {
        out(oy + y, ox + x) = sample(src, g.top + corner_aligned(y, oh, g.height), g.left + corner_aligned(x, ow, g.width));
      }
    }
  }
  return out;
}

}  // namespace

Image2D crop_and_rescale(const Image2D& image, int target) {
  if (target < 1) throw std::invalid_argument("crop_and_rescale: target must be >= 1");
  const CropGeometry g = crop_geometry(image);
  return apply_crop(image, g, target, [](const Image2D& c, double sy, double sx) {
    const int y0 = static_cast<int>(sy);
    const int x0 = static_cast<int>(sx);
    const int y1 = std::min(y0 + 1, c.height - 1);
    const int x1 = std::min(x0 + 1, c.width - 1);
    const double ty = sy - y0;
    const double tx = sx - x0;
    const double v = (c(y0, x0) * (1 - tx) + c(y0, x1) * tx) * (1 - ty) + (c(y1, x0) * (1 - tx) + c(y1, x1) * tx) * ty;
    return static_cast<float>(std::clamp(v, 0.0, 1.0));
  });
}

Sample crop_and_rescale(const Sample& sample, int target) {
  const CropGeometry g = crop_geometry(sample.image);
  Sample out = sample;
  out.image = crop_and_rescale(sample.image, target);
  auto nearest = [](const BinaryMask& c, double sy, double sx) {
    return c(static_cast<int>(std::lround(sy)), static_cast<int>(std::lround(sx)));
  };
  if (sample.mass_mask) out.mass_mask = apply_crop(*sample.mass_mask, g, target, nearest);
  if (sample.calc_mask) out.calc_mask = apply_crop(*sample.calc_mask, g, target, nearest);
  return out;
}

}  // namespace residseg
