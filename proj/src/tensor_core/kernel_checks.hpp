#pragma once

#include <string>

#include "ssem/error.hpp"
#include "ssem/kernels.hpp"

namespace ssem::detail {

struct ConvGeometry {
  std::size_t D, H, W, Ci;
  std::size_t KD, KH, KW, Co;
  AxisPlan pd, ph, pw;
};

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                         shape_to_string(t.shape()));
  }
  for (std::size_t e : t.shape()) {
    if (e == 0) throw DimensionError(std::string(what) + " has a zero extent " + shape_to_string(t.shape()));
  }
}

inline void require_positive(Extent3 e, const char* what) {
  if (e.d == 0 || e.h == 0 || e.w == 0) throw PreconditionError(std::string(what) + " extents must be positive");
}

inline ConvGeometry conv_geometry(const Tensor& input, const Tensor& weights, Extent3 stride, Padding padding) {
  require_rank(input, 4, "conv3d input (depth,height,width,channels)");
  require_rank(weights, 5, "conv3d weights (kd,kh,kw,in,out)");
  require_positive(stride, "conv3d stride");
  if (weights.dim(3) != input.dim(3)) {
    throw DimensionError("conv3d in-channels mismatch: input " + shape_to_string(input.shape()) + " vs weights " +
                         shape_to_string(weights.shape()));
  }
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                 weights.dim(0), weights.dim(1), weights.dim(2), weights.dim(4), {}, {}, {}};
  g.pd = plan_axis(g.D, g.KD, stride.d, padding);
  g.ph = plan_axis(g.H, g.KH, stride.h, padding);
  g.pw = plan_axis(g.W, g.KW, stride.w, padding);
  return g;
}

inline void require_bias(const Tensor& bias, std::size_t n, const char* what) {
  if (bias.rank() != 1 || bias.dim(0) != n) {
    throw DimensionError(std::string(what) + " bias must be (" + std::to_string(n) + "), got " +
                         shape_to_string(bias.shape()));
  }
}

inline void require_dense(const Tensor& input, const Tensor& weights) {
  if (weights.rank() != 2) throw DimensionError("dense weights must be (in,out), got " + shape_to_string(weights.shape()));
  if (input.size() != weights.dim(0)) {
    throw DimensionError("dense input length " + std::to_string(input.size()) + " does not match weights " +
                         shape_to_string(weights.shape()));
  }
}

}  // namespace ssem::detail
