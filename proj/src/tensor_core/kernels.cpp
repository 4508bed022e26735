#include "ssem/kernels.hpp"

#include <algorithm>
#include <limits>

#include "kernel_checks.hpp"

namespace ssem {

AxisPlan plan_axis(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  if (kernel == 0 || stride == 0) throw PreconditionError("kernel and stride extents must be positive");
  if (in == 0) throw DimensionError("zero-extent input axis");
  if (padding == Padding::valid) {
    if (kernel > in) {
      throw DimensionError("window " + std::to_string(kernel) + " larger than input extent " + std::to_string(in) +
                           " under valid padding");
    }
    return {(in - kernel) / stride + 1, 0};
  }
  const std::size_t out = (in + stride - 1) / stride;
  const std::size_t needed = (out - 1) * stride + kernel;
  const std::size_t total = needed > in ? needed - in : 0;
  return {out, total / 2};
}

namespace kernels {

using detail::conv_geometry;

namespace {

struct TapRange {
  std::size_t lo = 0, hi = 0;
};

// Taps k in [lo, hi) for which output position o reads an in-bounds input.
inline TapRange tap_range(std::size_t o, std::size_t stride, std::size_t pad_lo, std::size_t kernel, std::size_t in) {
  const std::size_t base = o * stride;
  TapRange r;
  r.lo = pad_lo > base ? pad_lo - base : 0;
  const std::size_t limit = in + pad_lo - base;  // k < limit keeps the input index below in
  r.hi = std::min(kernel, limit);
  if (r.lo > r.hi) r.lo = r.hi;
  return r;
}

// Outputs o in [lo, hi) whose tap k reads an in-bounds input.
inline TapRange output_range(std::size_t k, std::size_t stride, std::size_t pad_lo, std::size_t in, std::size_t out) {
  TapRange r;
  r.lo = pad_lo > k ? (pad_lo - k + stride - 1) / stride : 0;
  const std::size_t top = in + pad_lo;  // o*stride + k < top
  r.hi = top > k ? std::min(out, (top - k - 1) / stride + 1) : 0;
  if (r.lo > r.hi) r.lo = r.hi;
  return r;
}

struct ConvPoint {
  std::size_t od, oh, ow;
  TapRange rd, rh, rw;
};

// Output channels [co0, co0 + B) of one output position, accumulated in registers.
template <std::size_t B>
inline void forward_block(double* o, const double* b, const double* x, const double* w,
                          const detail::ConvGeometry& g, Extent3 stride, const ConvPoint& p, std::size_t co0) {
  double acc[B];
  for (std::size_t c = 0; c < B; ++c) acc[c] = b[co0 + c];
  const std::size_t run = p.rw.hi > p.rw.lo ? (p.rw.hi - p.rw.lo) * g.Ci : 0;
  for (std::size_t kd = p.rd.lo; kd < p.rd.hi && run > 0; ++kd) {
    const std::size_t id = p.od * stride.d + kd - g.pd.pad_lo;
    for (std::size_t kh = p.rh.lo; kh < p.rh.hi; ++kh) {
      const std::size_t ih = p.oh * stride.h + kh - g.ph.pad_lo;
      const std::size_t iw = p.ow * stride.w + p.rw.lo - g.pw.pad_lo;
      const double* xp = x + ((id * g.H + ih) * g.W + iw) * g.Ci;
      const double* wk = w + ((kd * g.KH + kh) * g.KW + p.rw.lo) * g.Ci * g.Co + co0;
      for (std::size_t j = 0; j < run; ++j) {
        const double xv = xp[j];
        const double* wr = wk + j * g.Co;
        for (std::size_t c = 0; c < B; ++c) acc[c] += xv * wr[c];
      }
    }
  }
  for (std::size_t c = 0; c < B; ++c) o[co0 + c] = acc[c];
}

struct TapPlan {
  std::size_t kd, kh, kw;
  TapRange rd, rh, rw;
};

// Weight-gradient entries (ci, co0..co0+B) of one kernel tap, summed over output positions.
template <std::size_t B>
inline void weight_block(double* gk, const double* x, const double* gy, const detail::ConvGeometry& g,
                         Extent3 stride, const TapPlan& t, std::size_t ci, std::size_t co0) {
  const std::size_t OH = g.ph.out, OW = g.pw.out;
  double acc[B] = {};
  for (std::size_t od = t.rd.lo; od < t.rd.hi; ++od) {
    const std::size_t id = od * stride.d + t.kd - g.pd.pad_lo;
    for (std::size_t oh = t.rh.lo; oh < t.rh.hi; ++oh) {
      const std::size_t ih = oh * stride.h + t.kh - g.ph.pad_lo;
      const double* xrow = x + (id * g.H + ih) * g.W * g.Ci + ci;
      const double* grow = gy + (od * OH + oh) * OW * g.Co + co0;
      for (std::size_t ow = t.rw.lo; ow < t.rw.hi; ++ow) {
        const double xv = xrow[(ow * stride.w + t.kw - g.pw.pad_lo) * g.Ci];
        const double* go = grow + ow * g.Co;
        for (std::size_t c = 0; c < B; ++c) acc[c] += xv * go[c];
      }
    }
  }
  for (std::size_t c = 0; c < B; ++c) gk[ci * g.Co + co0 + c] += acc[c];
}

}  // namespace

Tensor conv3d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias, Extent3 stride,
                      Padding padding) {
  const auto g = conv_geometry(input, weights, stride, padding);
  detail::require_bias(bias, g.Co, "conv3d");
  const std::size_t OD = g.pd.out, OH = g.ph.out, OW = g.pw.out;
  Tensor out({OD, OH, OW, g.Co});
  const double* x = input.data();
  const double* w = weights.data();
  const double* b = bias.data();
  double* y = out.data();
  const auto rows = static_cast<std::ptrdiff_t>(OD * OH);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t row = 0; row < rows; ++row) {
    const std::size_t od = static_cast<std::size_t>(row) / OH;
    const std::size_t oh = static_cast<std::size_t>(row) % OH;
    const TapRange rd = tap_range(od, stride.d, g.pd.pad_lo, g.KD, g.D);
    const TapRange rh = tap_range(oh, stride.h, g.ph.pad_lo, g.KH, g.H);
    for (std::size_t ow = 0; ow < OW; ++ow) {
      double* o = y + ((static_cast<std::size_t>(row) * OW) + ow) * g.Co;
      const TapRange rw = tap_range(ow, stride.w, g.pw.pad_lo, g.KW, g.W);
      const ConvPoint p{od, oh, ow, rd, rh, rw};
      std::size_t co0 = 0;
      for (; co0 + 8 <= g.Co; co0 += 8) forward_block<8>(o, b, x, w, g, stride, p, co0);
      for (; co0 + 4 <= g.Co; co0 += 4) forward_block<4>(o, b, x, w, g, stride, p, co0);
      for (; co0 < g.Co; ++co0) forward_block<1>(o, b, x, w, g, stride, p, co0);
    }
  }
  return out;
}

namespace {

// Output positions o along an axis whose window covers input position i at tap k.
inline bool output_for_tap(std::size_t i, std::size_t k, std::size_t stride, const AxisPlan& plan, std::size_t& o) {
  const std::ptrdiff_t num = static_cast<std::ptrdiff_t>(i + plan.pad_lo) - static_cast<std::ptrdiff_t>(k);
  if (num < 0 || num % static_cast<std::ptrdiff_t>(stride) != 0) return false;
  o = static_cast<std::size_t>(num) / stride;
  return o < plan.out;
}

inline bool input_for_tap(std::size_t o, std::size_t k, std::size_t stride, const AxisPlan& plan, std::size_t in,
                          std::size_t& i) {
  const std::ptrdiff_t v = static_cast<std::ptrdiff_t>(o * stride + k) - static_cast<std::ptrdiff_t>(plan.pad_lo);
  if (v < 0 || v >= static_cast<std::ptrdiff_t>(in)) return false;
  i = static_cast<std::size_t>(v);
  return true;
}

}  // namespace

Conv3dGrads conv3d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output, Extent3 stride,
                            Padding padding, bool input_gradient) {
  const auto g = conv_geometry(input, weights, stride, padding);
  const std::size_t OD = g.pd.out, OH = g.ph.out, OW = g.pw.out;
  if (grad_output.shape() != Shape{OD, OH, OW, g.Co}) {
    throw DimensionError("conv3d grad_output shape " + shape_to_string(grad_output.shape()) + " expected " +
                         shape_to_string({OD, OH, OW, g.Co}));
  }
  Conv3dGrads grads{input_gradient ? Tensor(input.shape()) : Tensor(), Tensor(weights.shape()), Tensor({g.Co})};
  const double* x = input.data();
  const double* w = weights.data();
  const double* gy = grad_output.data();

  // Input gradient as a gather over the output positions each voxel feeds.
  double* gx = grads.input.data();
  const auto in_rows = input_gradient ? static_cast<std::ptrdiff_t>(g.D * g.H) : std::ptrdiff_t{0};
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t row = 0; row < in_rows; ++row) {
    const std::size_t id = static_cast<std::size_t>(row) / g.H;
    const std::size_t ih = static_cast<std::size_t>(row) % g.H;
    for (std::size_t iw = 0; iw < g.W; ++iw) {
      double* gi = gx + ((id * g.H + ih) * g.W + iw) * g.Ci;
      for (std::size_t kd = 0; kd < g.KD; ++kd) {
        std::size_t od;
        if (!output_for_tap(id, kd, stride.d, g.pd, od)) continue;
        for (std::size_t kh = 0; kh < g.KH; ++kh) {
          std::size_t oh;
          if (!output_for_tap(ih, kh, stride.h, g.ph, oh)) continue;
          for (std::size_t kw = 0; kw < g.KW; ++kw) {
            std::size_t ow;
            if (!output_for_tap(iw, kw, stride.w, g.pw, ow)) continue;
            const double* go = gy + ((od * OH + oh) * OW + ow) * g.Co;
            const double* wk = w + ((kd * g.KH + kh) * g.KW + kw) * g.Ci * g.Co;
            for (std::size_t ci = 0; ci < g.Ci; ++ci) {
              const double* wr = wk + ci * g.Co;
              double acc = 0.0;
              for (std::size_t co = 0; co < g.Co; ++co) acc += wr[co] * go[co];
              gi[ci] += acc;
            }
          }
        }
      }
    }
  }

  // Weight gradient: each thread owns whole kernel taps.
  double* gw = grads.weights.data();
  const auto taps = static_cast<std::ptrdiff_t>(g.KD * g.KH * g.KW);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t tap = 0; tap < taps; ++tap) {
    const std::size_t t = static_cast<std::size_t>(tap);
    const std::size_t kd = t / (g.KH * g.KW);
    const std::size_t kh = (t / g.KW) % g.KH;
    const std::size_t kw = t % g.KW;
    double* gk = gw + t * g.Ci * g.Co;
    const TapRange rd = output_range(kd, stride.d, g.pd.pad_lo, g.D, OD);
    const TapRange rh = output_range(kh, stride.h, g.ph.pad_lo, g.H, OH);
    const TapRange rw = output_range(kw, stride.w, g.pw.pad_lo, g.W, OW);
    const TapPlan plan{kd, kh, kw, rd, rh, rw};
    for (std::size_t ci = 0; ci < g.Ci; ++ci) {
      std::size_t co0 = 0;
      for (; co0 + 8 <= g.Co; co0 += 8) weight_block<8>(gk, x, gy, g, stride, plan, ci, co0);
      for (; co0 + 4 <= g.Co; co0 += 4) weight_block<4>(gk, x, gy, g, stride, plan, ci, co0);
      for (; co0 < g.Co; ++co0) weight_block<1>(gk, x, gy, g, stride, plan, ci, co0);
    }
  }

  double* gb = grads.bias.data();
  const std::size_t positions = OD * OH * OW;
  for (std::size_t p = 0; p < positions; ++p) {
    const double* go = gy + p * g.Co;
    for (std::size_t co = 0; co < g.Co; ++co) gb[co] += go[co];
  }
  return grads;
}

PoolOutput maxpool3d_forward(const Tensor& input, Extent3 window, Extent3 stride, Padding padding) {
  detail::require_rank(input, 4, "maxpool3d input (depth,height,width,channels)");
  detail::require_positive(window, "maxpool3d window");
  detail::require_positive(stride, "maxpool3d stride");
  const std::size_t D = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  const AxisPlan pd = plan_axis(D, window.d, stride.d, padding);
  const AxisPlan ph = plan_axis(H, window.h, stride.h, padding);
  const AxisPlan pw = plan_axis(W, window.w, stride.w, padding);
  PoolOutput result{Tensor({pd.out, ph.out, pw.out, C}), std::vector<std::size_t>(pd.out * ph.out * pw.out * C)};
  const double* x = input.data();
  double* y = result.output.data();
  std::size_t* arg = result.argmax.data();
  const auto rows = static_cast<std::ptrdiff_t>(pd.out * ph.out);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t row = 0; row < rows; ++row) {
    const std::size_t od = static_cast<std::size_t>(row) / ph.out;
    const std::size_t oh = static_cast<std::size_t>(row) % ph.out;
    for (std::size_t ow = 0; ow < pw.out; ++ow) {
      const std::size_t obase = ((od * ph.out + oh) * pw.out + ow) * C;
      for (std::size_t c = 0; c < C; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_index = 0;
        for (std::size_t kd = 0; kd < window.d; ++kd) {
          std::size_t id;
          if (!input_for_tap(od, kd, stride.d, pd, D, id)) continue;
          for (std::size_t kh = 0; kh < window.h; ++kh) {
            std::size_t ih;
            if (!input_for_tap(oh, kh, stride.h, ph, H, ih)) continue;
            for (std::size_t kw = 0; kw < window.w; ++kw) {
              std::size_t iw;
              if (!input_for_tap(ow, kw, stride.w, pw, W, iw)) continue;
              const std::size_t flat = ((id * H + ih) * W + iw) * C + c;
              if (x[flat] > best) {
                best = x[flat];
                best_index = flat;
              }
            }
          }
        }
        y[obase + c] = best;
        arg[obase + c] = best_index;
      }
    }
  }
  return result;
}

Tensor maxpool3d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                          const Tensor& grad_output) {
  if (argmax.size() != grad_output.size()) throw DimensionError("maxpool3d backward: argmax/gradient size mismatch");
  Tensor grad(input_shape);
  // Overlapping windows can route to the same voxel; a serial scatter keeps the sum order fixed.
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += grad_output[i];
  return grad;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  detail::require_dense(input, weights);
  const std::size_t n_in = weights.dim(0), n_out = weights.dim(1);
  detail::require_bias(bias, n_out, "dense");
  Tensor out({n_out});
  const double* x = input.data();
  const double* w = weights.data();
  double* y = out.data();
  std::copy(bias.data(), bias.data() + n_out, y);
  for (std::size_t i = 0; i < n_in; ++i) {
    const double xv = x[i];
    const double* wr = w + i * n_out;
#pragma omp simd
    for (std::size_t o = 0; o < n_out; ++o) y[o] += xv * wr[o];
  }
  return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output) {
  detail::require_dense(input, weights);
  const std::size_t n_in = weights.dim(0), n_out = weights.dim(1);
  if (grad_output.size() != n_out) throw DimensionError("dense grad_output length mismatch");
  DenseGrads grads{Tensor(input.shape()), Tensor(weights.shape()), grad_output.reshaped({n_out})};
  const double* x = input.data();
  const double* w = weights.data();
  const double* gy = grad_output.data();
  double* gx = grads.input.data();
  double* gw = grads.weights.data();
  const auto rows = static_cast<std::ptrdiff_t>(n_in);
#pragma omp parallel for schedule(static) if (n_in * n_out > (1u << 16))
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const std::size_t i = static_cast<std::size_t>(r);
    const double* wr = w + i * n_out;
    double* gr = gw + i * n_out;
    double acc = 0.0;
    for (std::size_t o = 0; o < n_out; ++o) {
      acc += wr[o] * gy[o];
      gr[o] = x[i] * gy[o];
    }
    gx[i] = acc;
  }
  return grads;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out(input.shape());
  const auto n = static_cast<std::ptrdiff_t>(input.size());
  const double* x = input.data();
  double* y = out.data();
#pragma omp parallel for simd schedule(static) if (n > (1 << 16))
  for (std::ptrdiff_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  if (input.size() != grad_output.size()) throw DimensionError("relu backward size mismatch");
  Tensor grad(input.shape());
  const auto n = static_cast<std::ptrdiff_t>(input.size());
  const double* x = input.data();
  const double* g = grad_output.data();
  double* y = grad.data();
#pragma omp parallel for simd schedule(static) if (n > (1 << 16))
  for (std::ptrdiff_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? g[i] : 0.0;
  return grad;
}

}  // namespace kernels
}  // namespace ssem
