// Serial loops written directly from the definitions. Slow; used only to check
// the parallel kernels.

#include <limits>

#include "kernel_checks.hpp"
#include "ssem/kernels.hpp"

namespace ssem::reference {

namespace {

struct Index4 {
  std::size_t H, W, C;
  std::size_t operator()(std::size_t d, std::size_t h, std::size_t w, std::size_t c) const {
    return ((d * H + h) * W + w) * C + c;
  }
};

// Maps an output coordinate and tap to the input coordinate, or -1 when it falls in padding.
long tap_input(std::size_t o, std::size_t k, std::size_t stride, const AxisPlan& plan, std::size_t extent) {
  const long v = static_cast<long>(o * stride + k) - static_cast<long>(plan.pad_lo);
  return (v < 0 || v >= static_cast<long>(extent)) ? -1 : v;
}

}  // namespace

Tensor conv3d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias, Extent3 stride,
                      Padding padding) {
  const auto g = detail::conv_geometry(input, weights, stride, padding);
  detail::require_bias(bias, g.Co, "conv3d");
  Tensor out({g.pd.out, g.ph.out, g.pw.out, g.Co});
  const Index4 in_ix{g.H, g.W, g.Ci}, out_ix{g.ph.out, g.pw.out, g.Co};
  for (std::size_t od = 0; od < g.pd.out; ++od)
    for (std::size_t oh = 0; oh < g.ph.out; ++oh)
      for (std::size_t ow = 0; ow < g.pw.out; ++ow)
        for (std::size_t co = 0; co < g.Co; ++co) {
          double sum = bias[co];
          for (std::size_t kd = 0; kd < g.KD; ++kd) {
            const long id = tap_input(od, kd, stride.d, g.pd, g.D);
            if (id < 0) continue;
            for (std::size_t kh = 0; kh < g.KH; ++kh) {
              const long ih = tap_input(oh, kh, stride.h, g.ph, g.H);
              if (ih < 0) continue;
              for (std::size_t kw = 0; kw < g.KW; ++kw) {
                const long iw = tap_input(ow, kw, stride.w, g.pw, g.W);
                if (iw < 0) continue;
                for (std::size_t ci = 0; ci < g.Ci; ++ci) {
                  const std::size_t wi = (((kd * g.KH + kh) * g.KW + kw) * g.Ci + ci) * g.Co + co;
                  sum += input[in_ix(id, ih, iw, ci)] * weights[wi];
                }
              }
            }
          }
          out[out_ix(od, oh, ow, co)] = sum;
        }
  return out;
}

Conv3dGrads conv3d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output, Extent3 stride,
                            Padding padding) {
  const auto g = detail::conv_geometry(input, weights, stride, padding);
  if (grad_output.shape() != Shape{g.pd.out, g.ph.out, g.pw.out, g.Co}) {
    throw DimensionError("conv3d grad_output shape mismatch");
  }
  Conv3dGrads grads{Tensor(input.shape()), Tensor(weights.shape()), Tensor({g.Co})};
  const Index4 in_ix{g.H, g.W, g.Ci}, out_ix{g.ph.out, g.pw.out, g.Co};
  for (std::size_t od = 0; od < g.pd.out; ++od)
    for (std::size_t oh = 0; oh < g.ph.out; ++oh)
      for (std::size_t ow = 0; ow < g.pw.out; ++ow)
        for (std::size_t co = 0; co < g.Co; ++co) {
          const double go = grad_output[out_ix(od, oh, ow, co)];
          grads.bias[co] += go;
          for (std::size_t kd = 0; kd < g.KD; ++kd) {
            const long id = tap_input(od, kd, stride.d, g.pd, g.D);
            if (id < 0) continue;
            for (std::size_t kh = 0; kh < g.KH; ++kh) {
              const long ih = tap_input(oh, kh, stride.h, g.ph, g.H);
              if (ih < 0) continue;
              for (std::size_t kw = 0; kw < g.KW; ++kw) {
                const long iw = tap_input(ow, kw, stride.w, g.pw, g.W);
                if (iw < 0) continue;
                for (std::size_t ci = 0; ci < g.Ci; ++ci) {
                  const std::size_t wi = (((kd * g.KH + kh) * g.KW + kw) * g.Ci + ci) * g.Co + co;
                  const std::size_t xi = in_ix(id, ih, iw, ci);
                  grads.weights[wi] += input[xi] * go;
                  grads.input[xi] += weights[wi] * go;
                }
              }
            }
          }
        }
  return grads;
}

PoolOutput maxpool3d_forward(const Tensor& input, Extent3 window, Extent3 stride, Padding padding) {
  detail::require_rank(input, 4, "maxpool3d input");
  const std::size_t D = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  const AxisPlan pd = plan_axis(D, window.d, stride.d, padding);
  const AxisPlan ph = plan_axis(H, window.h, stride.h, padding);
  const AxisPlan pw = plan_axis(W, window.w, stride.w, padding);
  PoolOutput r{Tensor({pd.out, ph.out, pw.out, C}), {}};
  r.argmax.resize(r.output.size());
  const Index4 in_ix{H, W, C}, out_ix{ph.out, pw.out, C};
  for (std::size_t od = 0; od < pd.out; ++od)
    for (std::size_t oh = 0; oh < ph.out; ++oh)
      for (std::size_t ow = 0; ow < pw.out; ++ow)
        for (std::size_t c = 0; c < C; ++c) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t arg = 0;
          for (std::size_t kd = 0; kd < window.d; ++kd)
            for (std::size_t kh = 0; kh < window.h; ++kh)
              for (std::size_t kw = 0; kw < window.w; ++kw) {
                const long id = tap_input(od, kd, stride.d, pd, D);
                const long ih = tap_input(oh, kh, stride.h, ph, H);
                const long iw = tap_input(ow, kw, stride.w, pw, W);
                if (id < 0 || ih < 0 || iw < 0) continue;
                const std::size_t flat = in_ix(id, ih, iw, c);
                if (input[flat] > best || (input[flat] == best && flat < arg)) {
                  best = input[flat];
                  arg = flat;
                }
              }
          r.output[out_ix(od, oh, ow, c)] = best;
          r.argmax[out_ix(od, oh, ow, c)] = arg;
        }
  return r;
}

Tensor maxpool3d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                          const Tensor& grad_output) {
  Tensor grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += grad_output[i];
  return grad;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  detail::require_dense(input, weights);
  const std::size_t n_in = weights.dim(0), n_out = weights.dim(1);
  detail::require_bias(bias, n_out, "dense");
  Tensor out({n_out});
  for (std::size_t o = 0; o < n_out; ++o) {
    double sum = bias[o];
    for (std::size_t i = 0; i < n_in; ++i) sum += input[i] * weights[i * n_out + o];
    out[o] = sum;
  }
  return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output) {
  detail::require_dense(input, weights);
  const std::size_t n_in = weights.dim(0), n_out = weights.dim(1);
  DenseGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor({n_out})};
  for (std::size_t o = 0; o < n_out; ++o) {
    g.bias[o] = grad_output[o];
    for (std::size_t i = 0; i < n_in; ++i) {
      g.weights[i * n_out + o] = input[i] * grad_output[o];
      g.input[i] += weights[i * n_out + o] * grad_output[o];
    }
  }
  return g;
}

}  // namespace ssem::reference
