#include "residseg/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "residseg/error.hpp"

namespace residseg::nn {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

Shape4 scalar_shape() { return Shape4{1, 1, 1, 1}; }

void require_bias_shape(const Shape4& bias, int channels, const char* what) {
  if (!(bias == Shape4{1, channels, 1, 1})) {
    throw ShapeError(std::string(what) + ": expected per-channel tensor (1, " + std::to_string(channels) +
                     ", 1, 1), got " + to_string(bias));
  }
}

// Unfolds one sample into a (c·k·k) × (oh·ow) column matrix.
template <typename T>
void im2col(const T* src, int c, int h, int w, int k, int stride, int pad, int oh, int ow, T* cols) {
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + (static_cast<std::size_t>(ch) * k * k + ky * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            const bool inside = iy >= 0 && iy < h && ix >= 0 && ix < w;
            row[oy * ow + ox] = inside ? src[(static_cast<std::size_t>(ch) * h + iy) * w + ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, int c, int h, int w, int k, int stride, int pad, int oh, int ow, T* dst) {
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(ch) * k * k + ky * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= w) continue;
            dst[(static_cast<std::size_t>(ch) * h + iy) * w + ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

// Output column range [lo, hi) for which x + offset stays inside [0, w).
inline void valid_range(int w, int offset, int& lo, int& hi) {
  lo = std::max(0, -offset);
  hi = std::min(w, w - offset);
}

}  // namespace

template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias, int stride, int padding) {
  const Shape4 xs = tape.value(input).shape();
  const Shape4 ws = tape.value(weight).shape();
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  if (ws.h != ws.w) throw ShapeError("conv2d: kernel must be square, got " + to_string(ws));
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: weight expects " + std::to_string(ws.c) + " input channels, input has " +
                     std::to_string(xs.c));
  }
  require_bias_shape(tape.value(bias).shape(), ws.n, "conv2d bias");
  const int k = ws.h;
  if (xs.h + 2 * padding < k || xs.w + 2 * padding < k) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " does not fit padded input " + to_string(xs));
  }
  const int oh = (xs.h + 2 * padding - k) / stride + 1;
  const int ow = (xs.w + 2 * padding - k) / stride + 1;
  const int cout = ws.n;
  const int cin = xs.c;
  const int kk = cin * k * k;
  const int opix = oh * ow;
  const bool pointwise = (k == 1 && stride == 1 && padding == 0);

  Tensor4<T> out(Shape4{xs.n, cout, oh, ow});
  {
    const auto& x = tape.value(input);
    const auto& b = tape.value(bias);
    ConstMatMap<T> wm(tape.value(weight).data(), cout, kk);
    AlignedVector<T> cols(pointwise ? 0 : static_cast<std::size_t>(kk) * opix);
    for (int n = 0; n < xs.n; ++n) {
      const T* src = x.plane(n, 0);
      if (!pointwise) im2col(src, cin, xs.h, xs.w, k, stride, padding, oh, ow, cols.data());
      ConstMatMap<T> cm(pointwise ? src : cols.data(), kk, opix);
      MatMap<T> om(out.plane(n, 0), cout, opix);
      om.noalias() = wm * cm;
      for (int co = 0; co < cout; ++co) om.row(co).array() += b[co];
    }
  }

  const bool needs = tape.requires_grad(input) || tape.requires_grad(weight) || tape.requires_grad(bias);
  return tape.record(std::move(out), needs, [=](Tape<T>& t, std::size_t self) {
    const auto& gy = t.grad(self);
    const auto& x = t.value(input);
    const bool gx_on = t.requires_grad(input);
    const bool gw_on = t.requires_grad(weight);
    const bool gb_on = t.requires_grad(bias);
    ConstMatMap<T> wm(t.value(weight).data(), cout, kk);
    AlignedVector<T> cols(pointwise ? 0 : static_cast<std::size_t>(kk) * opix);
    AlignedVector<T> dcols(pointwise ? 0 : static_cast<std::size_t>(kk) * opix);
    for (int n = 0; n < xs.n; ++n) {
      ConstMatMap<T> gm(gy.plane(n, 0), cout, opix);
      if (gb_on) {
        auto& gb = t.grad(bias);
        for (int co = 0; co < cout; ++co) gb[co] += gm.row(co).sum();
      }
      if (gw_on) {
        const T* src = x.plane(n, 0);
        if (!pointwise) im2col(src, cin, xs.h, xs.w, k, stride, padding, oh, ow, cols.data());
        ConstMatMap<T> cm(pointwise ? src : cols.data(), kk, opix);
        MatMap<T> gw(t.grad(weight).data(), cout, kk);
        gw.noalias() += gm * cm.transpose();
      }
      if (gx_on) {
        auto& gx = t.grad(input);
        if (pointwise) {
          MatMap<T> gxm(gx.plane(n, 0), cin, opix);
          gxm.noalias() += wm.transpose() * gm;
        } else {
          MatMap<T> dm(dcols.data(), kk, opix);
          dm.noalias() = wm.transpose() * gm;
          col2im_add(dcols.data(), cin, xs.h, xs.w, k, stride, padding, oh, ow, gx.plane(n, 0));
        }
      }
    }
  });
}

template <typename T>
Var depthwise_conv2d(Tape<T>& tape, Var input, Var weight) {
  const Shape4 xs = tape.value(input).shape();
  const Shape4 ws = tape.value(weight).shape();
  if (ws.n != xs.c || ws.c != 1) {
    throw ShapeError("depthwise_conv2d: expected weight (" + std::to_string(xs.c) + ", 1, k, k), got " +
                     to_string(ws));
  }
  if (ws.h != ws.w || ws.h % 2 == 0) {
    throw ShapeError("depthwise_conv2d: kernel must be square and odd, got " + to_string(ws));
  }
  const int k = ws.h;
  const int pad = k / 2;
  const int h = xs.h;
  const int w = xs.w;

  Tensor4<T> out(xs);
  {
    const auto& x = tape.value(input);
    const auto& wt = tape.value(weight);
    for (int n = 0; n < xs.n; ++n) {
      for (int c = 0; c < xs.c; ++c) {
        const T* src = x.plane(n, c);
        const T* kern = wt.plane(c, 0);
        T* dst = out.plane(n, c);
        for (int y = 0; y < h; ++y) {
          T* orow = dst + static_cast<std::size_t>(y) * w;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = y + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const T* irow = src + static_cast<std::size_t>(iy) * w;
            for (int kx = 0; kx < k; ++kx) {
              const T wv = kern[ky * k + kx];
              const int off = kx - pad;
              int lo, hi;
              valid_range(w, off, lo, hi);
              for (int x0 = lo; x0 < hi; ++x0) orow[x0] += wv * irow[x0 + off];
            }
          }
        }
      }
    }
  }

  const bool needs = tape.requires_grad(input) || tape.requires_grad(weight);
  return tape.record(std::move(out), needs, [=](Tape<T>& t, std::size_t self) {
    const auto& gy = t.grad(self);
    const auto& x = t.value(input);
    const auto& wt = t.value(weight);
    const bool gx_on = t.requires_grad(input);
    const bool gw_on = t.requires_grad(weight);
    for (int n = 0; n < xs.n; ++n) {
      for (int c = 0; c < xs.c; ++c) {
        const T* src = x.plane(n, c);
        const T* g = gy.plane(n, c);
        const T* kern = wt.plane(c, 0);
        T* gx = gx_on ? t.grad(input).plane(n, c) : nullptr;
        T* gw = gw_on ? t.grad(weight).plane(c, 0) : nullptr;
        for (int y = 0; y < h; ++y) {
          const T* grow = g + static_cast<std::size_t>(y) * w;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = y + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const T* irow = src + static_cast<std::size_t>(iy) * w;
            for (int kx = 0; kx < k; ++kx) {
              const int off = kx - pad;
              int lo, hi;
              valid_range(w, off, lo, hi);
              if (gx != nullptr) {
                const T wv = kern[ky * k + kx];
                T* gxrow = gx + static_cast<std::size_t>(iy) * w;
                for (int x0 = lo; x0 < hi; ++x0) gxrow[x0 + off] += wv * grow[x0];
              }
              if (gw != nullptr) {
                T acc{0};
                for (int x0 = lo; x0 < hi; ++x0) acc += grow[x0] * irow[x0 + off];
                gw[ky * k + kx] += acc;
              }
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var separable_conv2d(Tape<T>& tape, Var input, Var depthwise, Var pointwise, Var bias) {
  const Shape4 ds = tape.value(depthwise).shape();
  const Shape4 ps = tape.value(pointwise).shape();
  if (ps.h != 1 || ps.w != 1) throw ShapeError("separable_conv2d: pointwise kernel must be 1x1, got " + to_string(ps));
  if (ps.c != ds.n) {
    throw ShapeError("separable_conv2d: depthwise stage yields " + std::to_string(ds.n) +
                     " channels but pointwise stage expects " + std::to_string(ps.c));
  }
  Var mid = depthwise_conv2d(tape, input, depthwise);
  return conv2d(tape, mid, pointwise, bias, 1, 0);
}

template <typename T>
Var instance_norm(Tape<T>& tape, Var input, Var scale_v, Var shift_v, double eps) {
  if (!(eps > 0.0)) throw Error("instance_norm: eps must be > 0");
  const Shape4 xs = tape.value(input).shape();
  require_bias_shape(tape.value(scale_v).shape(), xs.c, "instance_norm scale");
  require_bias_shape(tape.value(shift_v).shape(), xs.c, "instance_norm shift");
  const std::size_t plane = xs.plane();
  const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;

  Tensor4<T> out(xs);
  // normalised activations and 1/σ per plane, kept for the backward pass
  Tensor4<T> xhat(xs);
  std::vector<double> inv_std(planes);
  {
    const auto& x = tape.value(input);
    const auto& gamma = tape.value(scale_v);
    const auto& beta = tape.value(shift_v);
    for (int n = 0; n < xs.n; ++n) {
      for (int c = 0; c < xs.c; ++c) {
        const T* src = x.plane(n, c);
        double mean = 0.0;
        for (std::size_t i = 0; i < plane; ++i) mean += src[i];
        mean /= static_cast<double>(plane);
        double var = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = src[i] - mean;
          var += d * d;
        }
        var /= static_cast<double>(plane);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(n) * xs.c + c] = is;
        T* xh = xhat.plane(n, c);
        T* dst = out.plane(n, c);
        const T g = gamma[c];
        const T b = beta[c];
        for (std::size_t i = 0; i < plane; ++i) {
          xh[i] = static_cast<T>((src[i] - mean) * is);
          dst[i] = g * xh[i] + b;
        }
      }
    }
  }

  const bool needs = tape.requires_grad(input) || tape.requires_grad(scale_v) || tape.requires_grad(shift_v);
  if (!needs || !tape.grad_enabled()) {
    return tape.record(std::move(out), false, {});
  }
  return tape.record(std::move(out), true,
                     [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, std::size_t self) {
                       const auto& gy = t.grad(self);
                       const auto& gamma = t.value(scale_v);
                       const bool gx_on = t.requires_grad(input);
                       const bool gs_on = t.requires_grad(scale_v);
                       const bool gb_on = t.requires_grad(shift_v);
                       const double inv_m = 1.0 / static_cast<double>(plane);
                       for (int n = 0; n < xs.n; ++n) {
                         for (int c = 0; c < xs.c; ++c) {
                           const T* g = gy.plane(n, c);
                           const T* xh = xhat.plane(n, c);
                           double sum_g = 0.0;
                           double sum_gx = 0.0;
                           for (std::size_t i = 0; i < plane; ++i) {
                             sum_g += g[i];
                             sum_gx += static_cast<double>(g[i]) * xh[i];
                           }
                           if (gs_on) t.grad(scale_v)[c] += static_cast<T>(sum_gx);
                           if (gb_on) t.grad(shift_v)[c] += static_cast<T>(sum_g);
                           if (gx_on) {
                             T* gx = t.grad(input).plane(n, c);
                             const double k = gamma[c] * inv_std[static_cast<std::size_t>(n) * xs.c + c];
                             const double mg = sum_g * inv_m;
                             const double mgx = sum_gx * inv_m;
                             for (std::size_t i = 0; i < plane; ++i) {
                               gx[i] += static_cast<T>(k * (g[i] - mg - xh[i] * mgx));
                             }
                           }
                         }
                       }
                     });
}

template <typename T>
Var leaky_relu(Tape<T>& tape, Var input, double slope) {
  if (!(slope >= 0.0 && slope < 1.0)) throw Error("leaky_relu: slope must lie in [0, 1)");
  const auto& x = tape.value(input);
  Tensor4<T> out(x.shape());
  const T s = static_cast<T>(slope);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] >= T{0} ? x[i] : s * x[i];
  return tape.record(std::move(out), tape.requires_grad(input), [=](Tape<T>& t, std::size_t self) {
    const auto& gy = t.grad(self);
    const auto& xv = t.value(input);
    auto& gx = t.grad(input);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += xv[i] >= T{0} ? gy[i] : s * gy[i];
  });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  Tensor4<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    if (v >= T{0}) {
      out[i] = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T{1} + e);
    }
  }
  return tape.record(std::move(out), tape.requires_grad(input), [=](Tape<T>& t, std::size_t self) {
    const auto& gy = t.grad(self);
    const auto& y = t.value(Var{self});
    auto& gx = t.grad(input);
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += gy[i] * y[i] * (T{1} - y[i]);
  });
}

template <typename T>
Var maxpool2(Tape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  const Shape4 xs = x.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0) {
    throw ShapeError("maxpool2: spatial dims must be even, got " + to_string(xs));
  }
  const Shape4 os{xs.n, xs.c, xs.h / 2, xs.w / 2};
  Tensor4<T> out(os);
  std::vector<std::uint8_t> arg(os.numel());
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      std::uint8_t* a = arg.data() + out.offset(n, c, 0, 0);
      for (int y = 0; y < os.h; ++y) {
        const T* r0 = src + static_cast<std::size_t>(2 * y) * xs.w;
        const T* r1 = r0 + xs.w;
        for (int x0 = 0; x0 < os.w; ++x0) {
          const T cand[4] = {r0[2 * x0], r0[2 * x0 + 1], r1[2 * x0], r1[2 * x0 + 1]};
          std::uint8_t best = 0;
          for (std::uint8_t q = 1; q < 4; ++q) {
            if (cand[q] > cand[best]) best = q;
          }
          dst[y * os.w + x0] = cand[best];
          a[y * os.w + x0] = best;
        }
      }
    }
  }
  return tape.record(std::move(out), tape.requires_grad(input),
                     [=, arg = std::move(arg)](Tape<T>& t, std::size_t self) {
                       const auto& gy = t.grad(self);
                       auto& gx = t.grad(input);
                       for (int n = 0; n < xs.n; ++n) {
                         for (int c = 0; c < xs.c; ++c) {
                           const std::size_t base = gy.offset(n, c, 0, 0);
                           T* g = gx.plane(n, c);
                           for (int y = 0; y < os.h; ++y) {
                             for (int x0 = 0; x0 < os.w; ++x0) {
                               const std::size_t o = base + static_cast<std::size_t>(y) * os.w + x0;
                               const int q = arg[o];
                               g[static_cast<std::size_t>(2 * y + q / 2) * xs.w + 2 * x0 + q % 2] += gy[o];
                             }
                           }
                         }
                       }
                     });
}

template <typename T>
Var upsample2(Tape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  const Shape4 xs = x.shape();
  const Shape4 os{xs.n, xs.c, xs.h * 2, xs.w * 2};
  Tensor4<T> out(os);
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (int y = 0; y < os.h; ++y) {
        const T* srow = src + static_cast<std::size_t>(y / 2) * xs.w;
        T* drow = dst + static_cast<std::size_t>(y) * os.w;
        for (int x0 = 0; x0 < os.w; ++x0) drow[x0] = srow[x0 / 2];
      }
    }
  }
  return tape.record(std::move(out), tape.requires_grad(input), [=](Tape<T>& t, std::size_t self) {
    const auto& gy = t.grad(self);
    auto& gx = t.grad(input);
    for (int n = 0; n < xs.n; ++n) {
      for (int c = 0; c < xs.c; ++c) {
        const T* g = gy.plane(n, c);
        T* d = gx.plane(n, c);
        for (int y = 0; y < os.h; ++y) {
          const T* grow = g + static_cast<std::size_t>(y) * os.w;
          T* drow = d + static_cast<std::size_t>(y / 2) * xs.w;
          for (int x0 = 0; x0 < os.w; ++x0) drow[x0 / 2] += grow[x0];
        }
      }
    }
  });
}

template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
  const Shape4 as = tape.value(a).shape();
  const Shape4 bs = tape.value(b).shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw ShapeError("concat_channels: incompatible shapes " + to_string(as) + " and " + to_string(bs));
  }
  const Shape4 os{as.n, as.c + bs.c, as.h, as.w};
  Tensor4<T> out(os);
  const std::size_t na = static_cast<std::size_t>(as.c) * as.plane();
  const std::size_t nb = static_cast<std::size_t>(bs.c) * bs.plane();
  for (int n = 0; n < as.n; ++n) {
    std::copy_n(tape.value(a).plane(n, 0), na, out.plane(n, 0));
    std::copy_n(tape.value(b).plane(n, 0), nb, out.plane(n, as.c));
  }
  const bool needs = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), needs, [=](Tape<T>& t, std::size_t self) {
    const auto& gy = t.grad(self);
    for (int n = 0; n < as.n; ++n) {
      if (t.requires_grad(a)) {
        T* d = t.grad(a).plane(n, 0);
        const T* s = gy.plane(n, 0);
        for (std::size_t i = 0; i < na; ++i) d[i] += s[i];
      }
      if (t.requires_grad(b)) {
        T* d = t.grad(b).plane(n, 0);
        const T* s = gy.plane(n, as.c);
        for (std::size_t i = 0; i < nb; ++i) d[i] += s[i];
      }
    }
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  require_same_shape(tape.value(a).shape(), tape.value(b).shape(), "add");
  Tensor4<T> out = tape.value(a);
  const auto& bv = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const bool needs = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), needs, [=](Tape<T>& t, std::size_t self) {
    const auto& gy = t.grad(self);
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      auto& g = t.grad(v);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
  });
}

template <typename T>
Var sub(Tape<T>& tape, Var a, Var b) {
  require_same_shape(tape.value(a).shape(), tape.value(b).shape(), "sub");
  Tensor4<T> out = tape.value(a);
  const auto& bv = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const bool needs = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), needs, [=](Tape<T>& t, std::size_t self) {
    const auto& gy = t.grad(self);
    if (t.requires_grad(a)) {
      auto& g = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
    if (t.requires_grad(b)) {
      auto& g = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= gy[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, double factor) {
  Tensor4<T> out = tape.value(a);
  const T f = static_cast<T>(factor);
  for (auto& v : out.values()) v *= f;
  return tape.record(std::move(out), tape.requires_grad(a), [=](Tape<T>& t, std::size_t self) {
    const auto& gy = t.grad(self);
    auto& g = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += f * gy[i];
  });
}

template <typename T>
Var clamp(Tape<T>& tape, Var a, double lo, double hi) {
  if (!(lo < hi)) throw Error("clamp: empty interval");
  const T l = static_cast<T>(lo);
  const T h = static_cast<T>(hi);
  Tensor4<T> out = tape.value(a);
  for (auto& v : out.values()) v = std::clamp(v, l, h);
  return tape.record(std::move(out), tape.requires_grad(a), [=](Tape<T>& t, std::size_t self) {
    const auto& gy = t.grad(self);
    const auto& x = t.value(a);
    auto& g = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > l && x[i] < h) g[i] += gy[i];
    }
  });
}

template <typename T>
Var weighted_sum(Tape<T>& tape, Var a, const Tensor4<T>& weights) {
  require_same_shape(tape.value(a).shape(), weights.shape(), "weighted_sum");
  const auto& x = tape.value(a);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]) * weights[i];
  Tensor4<T> out(scalar_shape(), static_cast<T>(acc));
  return tape.record(std::move(out), tape.requires_grad(a), [=](Tape<T>& t, std::size_t self) {
    const T gy = t.grad(self)[0];
    auto& g = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy * weights[i];
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
  const auto& x = tape.value(a);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
  Tensor4<T> out(scalar_shape(), static_cast<T>(acc));
  return tape.record(std::move(out), tape.requires_grad(a), [=](Tape<T>& t, std::size_t self) {
    const T gy = t.grad(self)[0];
    auto& g = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy;
  });
}

template <typename T>
Var mse_loss(Tape<T>& tape, Var pred, Var target) {
  require_same_shape(tape.value(pred).shape(), tape.value(target).shape(), "mse_loss");
  const auto& p = tape.value(pred);
  const auto& q = tape.value(target);
  const double count = static_cast<double>(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - q[i];
    acc += d * d;
  }
  Tensor4<T> out(scalar_shape(), static_cast<T>(acc / count));
  const bool needs = tape.requires_grad(pred) || tape.requires_grad(target);
  return tape.record(std::move(out), needs, [=](Tape<T>& t, std::size_t self) {
    const double gy = t.grad(self)[0];
    const auto& pv = t.value(pred);
    const auto& tv = t.value(target);
    const double k = 2.0 * gy / count;
    if (t.requires_grad(pred)) {
      auto& g = t.grad(pred);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += static_cast<T>(k * (pv[i] - tv[i]));
    }
    if (t.requires_grad(target)) {
      auto& g = t.grad(target);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= static_cast<T>(k * (pv[i] - tv[i]));
    }
  });
}

template <typename T>
Var bce_loss(Tape<T>& tape, Var pred, Var target) {
  require_same_shape(tape.value(pred).shape(), tape.value(target).shape(), "bce_loss");
  const auto& p = tape.value(pred);
  const auto& q = tape.value(target);
  const double count = static_cast<double>(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = std::clamp(static_cast<double>(p[i]), kBceClamp, 1.0 - kBceClamp);
    acc -= q[i] * std::log(pc) + (1.0 - q[i]) * std::log(1.0 - pc);
  }
  Tensor4<T> out(scalar_shape(), static_cast<T>(acc / count));
  const bool needs = tape.requires_grad(pred) || tape.requires_grad(target);
  return tape.record(std::move(out), needs, [=](Tape<T>& t, std::size_t self) {
    const double gy = t.grad(self)[0] / count;
    const auto& pv = t.value(pred);
    const auto& tv = t.value(target);
    if (t.requires_grad(pred)) {
      auto& g = t.grad(pred);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double pi = pv[i];
        if (pi <= kBceClamp || pi >= 1.0 - kBceClamp) continue;
        g[i] += static_cast<T>(gy * (pi - tv[i]) / (pi * (1.0 - pi)));
      }
    }
    if (t.requires_grad(target)) {
      auto& g = t.grad(target);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double pc = std::clamp(static_cast<double>(pv[i]), kBceClamp, 1.0 - kBceClamp);
        g[i] -= static_cast<T>(gy * (std::log(pc) - std::log(1.0 - pc)));
      }
    }
  });
}

template <typename T>
Var soft_dice_loss(Tape<T>& tape, Var pred, Var target, double smooth) {
  require_same_shape(tape.value(pred).shape(), tape.value(target).shape(), "soft_dice_loss");
  const auto& p = tape.value(pred);
  const auto& q = tape.value(target);
  const Shape4 s = p.shape();
  const std::size_t per = s.numel() / static_cast<std::size_t>(std::max(1, s.n));
  std::vector<double> inter(s.n, 0.0);
  std::vector<double> total(s.n, 0.0);
  double loss = 0.0;
  for (int n = 0; n < s.n; ++n) {
    const T* pp = p.plane(n, 0);
    const T* qq = q.plane(n, 0);
    for (std::size_t i = 0; i < per; ++i) {
      inter[n] += static_cast<double>(pp[i]) * qq[i];
      total[n] += static_cast<double>(pp[i]) + qq[i];
    }
    loss += 1.0 - (2.0 * inter[n] + smooth) / (total[n] + smooth);
  }
  loss /= s.n;
  Tensor4<T> out(scalar_shape(), static_cast<T>(loss));
  const bool needs = tape.requires_grad(pred) || tape.requires_grad(target);
  return tape.record(std::move(out), needs, [=](Tape<T>& t, std::size_t self) {
    const double gy = t.grad(self)[0] / s.n;
    const auto& pv = t.value(pred);
    const auto& tv = t.value(target);
    for (int n = 0; n < s.n; ++n) {
      const double den = total[n] + smooth;
      const double num = 2.0 * inter[n] + smooth;
      const double inv = 1.0 / (den * den);
      // d/dp_j [1 - num/den] = -(2 t_j den - num) / den²
      if (t.requires_grad(pred)) {
        T* g = t.grad(pred).plane(n, 0);
        const T* qq = tv.plane(n, 0);
        for (std::size_t i = 0; i < per; ++i) g[i] -= static_cast<T>(gy * (2.0 * qq[i] * den - num) * inv);
      }
      if (t.requires_grad(target)) {
        T* g = t.grad(target).plane(n, 0);
        const T* pp = pv.plane(n, 0);
        for (std::size_t i = 0; i < per; ++i) g[i] -= static_cast<T>(gy * (2.0 * pp[i] * den - num) * inv);
      }
    }
  });
}

#define RESIDSEG_INSTANTIATE_OPS(T)                                                       \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var, int, int);                              \
  template Var depthwise_conv2d<T>(Tape<T>&, Var, Var);                                   \
  template Var separable_conv2d<T>(Tape<T>&, Var, Var, Var, Var);                         \
  template Var instance_norm<T>(Tape<T>&, Var, Var, Var, double);                         \
  template Var leaky_relu<T>(Tape<T>&, Var, double);                                      \
  template Var sigmoid<T>(Tape<T>&, Var);                                                 \
  template Var maxpool2<T>(Tape<T>&, Var);                                                \
  template Var upsample2<T>(Tape<T>&, Var);                                               \
  template Var concat_channels<T>(Tape<T>&, Var, Var);                                    \
  template Var add<T>(Tape<T>&, Var, Var);                                                \
  template Var sub<T>(Tape<T>&, Var, Var);                                                \
  template Var scale<T>(Tape<T>&, Var, double);                                           \
  template Var clamp<T>(Tape<T>&, Var, double, double);                                   \
  template Var weighted_sum<T>(Tape<T>&, Var, const Tensor4<T>&);                         \
  template Var sum<T>(Tape<T>&, Var);                                                     \
  template Var mse_loss<T>(Tape<T>&, Var, Var);                                           \
  template Var bce_loss<T>(Tape<T>&, Var, Var);                                           \
  template Var soft_dice_loss<T>(Tape<T>&, Var, Var, double);

RESIDSEG_INSTANTIATE_OPS(float)
RESIDSEG_INSTANTIATE_OPS(double)

}  // namespace residseg::nn
