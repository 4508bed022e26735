#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssem/kernels.hpp"
#include "ssem/soft_label.hpp"
#include "ssem/tensor.hpp"

namespace ssem {

enum class LayerKind { conv3d, maxpool3d, dense, relu, softmax };

const char* to_string(LayerKind kind);

/// One entry of a fixed layer vocabulary. `filters` is the output channel count
/// for conv3d and the unit count for dense; kernel/stride/padding apply to
/// conv3d and maxpool3d.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t filters = 0;
  Extent3 kernel{1, 1, 1};
  Extent3 stride{1, 1, 1};
  Padding padding = Padding::same;

  static LayerSpec conv3d(std::size_t filters, Extent3 kernel, Extent3 stride = {1, 1, 1},
                          Padding padding = Padding::same);
  static LayerSpec maxpool3d(Extent3 window, Extent3 stride, Padding padding = Padding::valid);
  static LayerSpec dense(std::size_t units);
  static LayerSpec relu();
  static LayerSpec softmax();

  /// Canonical single-line form, e.g. "conv3d filters=32 kernel=3x3x3 stride=1x1x1 padding=same".
  std::string canonical() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 1;
};

/// Trainable coefficients in declaration order, tagged with the architecture
/// fingerprint they were created for.
struct ModelParams {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;
  std::uint64_t fingerprint = 0;

  std::size_t scalar_count() const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct Gradients {
  std::vector<Tensor> tensors;
};

/// Layer stack with validated shapes. The last layer must be softmax over 2 units.
class Network {
 public:
  Network(Shape input_shape, std::vector<LayerSpec> layers);

  const Shape& input_shape() const noexcept { return input_shape_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  /// Output shape of every layer, in order.
  const std::vector<Shape>& output_shapes() const noexcept { return output_shapes_; }
  const std::vector<ParamSpec>& parameter_specs() const noexcept { return param_specs_; }

  std::string canonical_text() const;
  std::uint64_t fingerprint() const noexcept { return fingerprint_; }

  /// He-scaled normal weights, zero biases.
  ModelParams initialize(std::uint64_t seed) const;

  /// Throws DimensionError/PreconditionError when params do not belong to this network.
  void check_params(const ModelParams& params) const;

  /// Index of the first parameter owned by layer `layer`, or -1.
  int first_param(std::size_t layer) const { return first_param_.at(layer); }

 private:
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> output_shapes_;
  std::vector<ParamSpec> param_specs_;
  std::vector<int> first_param_;  // index into param_specs_ per layer, -1 when none
  std::uint64_t fingerprint_ = 0;
};

std::uint64_t fnv1a64(std::string_view text);

/// Class probabilities for one sample.
SoftLabel forward(const Network& net, const ModelParams& params, const Tensor& sample);

struct LossAndGradients {
  double loss = 0.0;
  Gradients gradients;
};

/// Mean cross-entropy over the batch and its exact gradient for every parameter.
/// Per-sample gradients are summed in sample order, then divided by the batch size.
LossAndGradients backward_pass(const Network& net, const ModelParams& params, std::span<const Tensor> samples,
                               std::span<const SoftLabel> targets);
/// Batch-tensor overload: the first extent indexes samples.
LossAndGradients backward_pass(const Network& net, const ModelParams& params, const Tensor& batch,
                               std::span<const SoftLabel> targets);

double mean_loss(const Network& net, const ModelParams& params, std::span<const Tensor> samples,
                 std::span<const SoftLabel> targets);

struct FiniteDifferenceReport {
  /// Worst relative error over the entries that were compared.
  double max_relative_error = 0.0;
  /// Worst relative error including entries whose perturbation flipped a ReLU or pool winner.
  double max_raw_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

/// Compares analytic and central-difference gradients, error |a - n| / max(|a|, |n|, 1e-6),
/// over a deterministic sample of at most `per_tensor` entries of every parameter tensor.
/// An entry whose +-step perturbation changes any ReLU sign or pool winner straddles a
/// kink, where central differences do not estimate the derivative; it is counted in
/// `skipped` instead of compared.
FiniteDifferenceReport finite_difference_report(const Network& net, const ModelParams& params,
                                                std::span<const Tensor> samples, std::span<const SoftLabel> targets,
                                                double step, std::size_t per_tensor = 24);
/// finite_difference_report(...).max_relative_error.
double finite_difference_check(const Network& net, const ModelParams& params, std::span<const Tensor> samples,
                               std::span<const SoftLabel> targets, double step, std::size_t per_tensor = 24);

ModelParams sgd_step(const ModelParams& params, const Gradients& grads, double learning_rate);

}  // namespace ssem
