#pragma once

// Layer kernels for single samples in channels-last layout.
//
// Two implementations share one contract:
//   ssem::kernels    OpenMP-parallel loops used by training and inference;
//   ssem::reference  plain serial loops kept as the test oracle.
// Every parallel kernel writes each output element from exactly one thread in
// a fixed loop order, so results do not depend on the thread count.

#include <cstddef>
#include <vector>

#include "ssem/tensor.hpp"

namespace ssem {

enum class Padding { same, valid };

struct Extent3 {
  std::size_t d = 1, h = 1, w = 1;
  friend bool operator==(const Extent3&, const Extent3&) = default;
};

/// Output extent and low-side padding along one spatial axis.
/// same:  out = ceil(in / stride), zero pad split evenly, extra on the high side.
/// valid: out = floor((in - kernel) / stride) + 1, no padding.
struct AxisPlan {
  std::size_t out = 0;
  std::size_t pad_lo = 0;
};

/// Throws DimensionError when valid padding makes the extent non-positive.
AxisPlan plan_axis(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);

struct Conv3dGrads {
  Tensor input;    // (D,H,W,Ci)
  Tensor weights;  // (KD,KH,KW,Ci,Co)
  Tensor bias;     // (Co)
};

struct DenseGrads {
  Tensor input;
  Tensor weights;  // (In,Out)
  Tensor bias;     // (Out)
};

struct PoolOutput {
  Tensor output;
  /// Flat input index that produced each output element.
  std::vector<std::size_t> argmax;
};

namespace kernels {

Tensor conv3d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias, Extent3 stride,
                      Padding padding);
/// With `input_gradient` false the returned input gradient is left empty.
Conv3dGrads conv3d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output,
                            Extent3 stride, Padding padding, bool input_gradient = true);

/// Padded window positions never win; ties go to the lowest flat input index.
PoolOutput maxpool3d_forward(const Tensor& input, Extent3 window, Extent3 stride, Padding padding);
Tensor maxpool3d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                          const Tensor& grad_output);

/// The input is flattened; weights are (In, Out).
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output);

Tensor relu_forward(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);

}  // namespace kernels

namespace reference {

Tensor conv3d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias, Extent3 stride,
                      Padding padding);
Conv3dGrads conv3d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output,
                            Extent3 stride, Padding padding);
PoolOutput maxpool3d_forward(const Tensor& input, Extent3 window, Extent3 stride, Padding padding);
Tensor maxpool3d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                          const Tensor& grad_output);
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output);

}  // namespace reference

}  // namespace ssem
