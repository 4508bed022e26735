#include "ssem/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ssem/error.hpp"
#include "ssem/log.hpp"

namespace ssem {

CnnClassifier::CnnClassifier(Network network, std::uint64_t seed)
    : network_(std::move(network)), params_(network_.initialize(seed)) {}

CnnClassifier::CnnClassifier(Network network, ModelParams params)
    : network_(std::move(network)), params_(std::move(params)) {
  network_.check_params(params_);
}

void CnnClassifier::set_params(ModelParams params) {
  network_.check_params(params);
  params_ = std::move(params);
}

SoftLabel CnnClassifier::predict_one(const Tensor& sample) const {
  check_signature(sample);
  return forward(network_, params_, sample);
}

std::vector<double> CnnClassifier::fit(const LabeledSet& data, const TrainingConfig& config) {
  config.validate();
  if (data.empty()) throw PreconditionError("fit on an empty labeled set");
  for (const auto& s : data.samples) check_signature(s);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> history;
  std::vector<Tensor> batch;
  std::vector<SoftLabel> targets;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      targets.clear();
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(data.samples[order[k]]);
        targets.push_back(data.targets[order[k]]);
      }
      const auto step = backward_pass(network_, params_, batch, targets);
      if (!std::isfinite(step.loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch + 1));
      }
      epoch_loss += step.loss * static_cast<double>(end - start);
      params_ = sgd_step(params_, step.gradients, config.learning_rate);
    }
    epoch_loss /= static_cast<double>(data.size());
    history.push_back(epoch_loss);
    log_debug("epoch " + std::to_string(epoch + 1) + " loss " + std::to_string(epoch_loss));
  }
  return history;
}

namespace {

std::size_t scaled(std::size_t width, double scale) {
  return static_cast<std::size_t>(std::ceil(static_cast<double>(width) * scale - 1e-9));
}

void check_scale(double scale) {
  if (!(scale > 0.0 && scale <= 1.0)) throw PreconditionError("width scale must lie in (0, 1]");
}

void check_input(const Shape& input_shape, const char* who) {
  if (input_shape.size() != 4) {
    throw DimensionError(std::string(who) + " expects (depth,height,width,channels), got " +
                         shape_to_string(input_shape));
  }
}

}  // namespace

Network cnn2_network(const Shape& input_shape, double scale) {
  check_scale(scale);
  check_input(input_shape, "cnn2");
  for (std::size_t axis = 0; axis < 3; ++axis) {
    if (input_shape[axis] < 4) {
      throw DimensionError("cnn2 input " + shape_to_string(input_shape) + " too small for two 2x2x2 pooling stages");
    }
  }
  const Extent3 k3{3, 3, 3}, one{1, 1, 1}, two{2, 2, 2};
  return Network(input_shape, {
                                  LayerSpec::conv3d(scaled(32, scale), k3, one, Padding::same),
                                  LayerSpec::relu(),
                                  LayerSpec::maxpool3d(two, two, Padding::valid),
                                  LayerSpec::conv3d(scaled(64, scale), k3, one, Padding::same),
                                  LayerSpec::relu(),
                                  LayerSpec::maxpool3d(two, two, Padding::valid),
                                  LayerSpec::dense(scaled(1024, scale)),
                                  LayerSpec::relu(),
                                  LayerSpec::dense(2),
                                  LayerSpec::softmax(),
                              });
}

CnnClassifier build_cnn2(const Shape& input_shape, std::uint64_t seed, double scale) {
  return CnnClassifier(cnn2_network(input_shape, scale), seed);
}

Network alexnet3d_network(const Shape& input_shape, double scale) {
  check_scale(scale);
  check_input(input_shape, "alexnet3d");
  // Kernels are (depth, height, width); "5x5x3" is read as 5x5 in-plane over 3 slices.
  const Extent3 k553{3, 5, 5}, k3{3, 3, 3}, one{1, 1, 1}, two{2, 2, 2};
  struct Stage {
    int layer;
    LayerSpec spec;
  };
  const std::vector<Stage> stages = {
      {1, LayerSpec::conv3d(scaled(96, scale), k553, two, Padding::same)},
      {2, LayerSpec::maxpool3d(k3, two, Padding::same)},
      {3, LayerSpec::conv3d(scaled(128, scale), k553, one, Padding::same)},
      {4, LayerSpec::maxpool3d(k3, two, Padding::same)},
      {5, LayerSpec::conv3d(scaled(256, scale), k3, one, Padding::valid)},
      {6, LayerSpec::conv3d(scaled(384, scale), k3, one, Padding::same)},
      {7, LayerSpec::conv3d(scaled(256, scale), k3, two, Padding::same)},
      {9, LayerSpec::dense(scaled(4096, scale))},
      {10, LayerSpec::dense(scaled(1024, scale))},
      {11, LayerSpec::dense(2)},
  };
  std::vector<LayerSpec> layers;
  Shape current = input_shape;
  for (const auto& stage : stages) {
    const LayerSpec& s = stage.spec;
    if (s.kind != LayerKind::dense) {
      try {
        current = {plan_axis(current[0], s.kernel.d, s.stride.d, s.padding).out,
                   plan_axis(current[1], s.kernel.h, s.stride.h, s.padding).out,
                   plan_axis(current[2], s.kernel.w, s.stride.w, s.padding).out, current[3]};
      } catch (const DimensionError& e) {
        throw DimensionError("alexnet3d layer " + std::to_string(stage.layer) + " (" + s.canonical() +
                             ") on input " + shape_to_string(input_shape) + ": " + e.what());
      }
    }
    layers.push_back(s);
    if (stage.layer != 11 && s.kind != LayerKind::maxpool3d) layers.push_back(LayerSpec::relu());
  }
  layers.push_back(LayerSpec::softmax());
  return Network(input_shape, std::move(layers));
}

CnnClassifier build_alexnet3d(const Shape& input_shape, double scale, std::uint64_t seed) {
  return CnnClassifier(alexnet3d_network(input_shape, scale), seed);
}

std::vector<std::size_t> conv_filter_counts(const Network& net) {
  std::vector<std::size_t> out;
  for (const auto& l : net.layers()) {
    if (l.kind == LayerKind::conv3d) out.push_back(l.filters);
  }
  return out;
}

std::vector<std::size_t> dense_widths(const Network& net) {
  std::vector<std::size_t> out;
  for (const auto& l : net.layers()) {
    if (l.kind == LayerKind::dense) out.push_back(l.filters);
  }
  return out;
}

}  // namespace ssem
