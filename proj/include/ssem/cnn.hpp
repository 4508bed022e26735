#pragma once

#include "ssem/classifier.hpp"
#include "ssem/network.hpp"

namespace ssem {

/// Any layer-stack network trained with mini-batch SGD on soft cross-entropy.
class CnnClassifier final : public Classifier {
 public:
  CnnClassifier(Network network, std::uint64_t seed);
  CnnClassifier(Network network, ModelParams params);

  std::unique_ptr<Classifier> clone() const override { return std::make_unique<CnnClassifier>(*this); }
  std::string kind() const override { return "cnn"; }
  const Shape& input_shape() const override { return network_.input_shape(); }
  std::uint64_t fingerprint() const override { return network_.fingerprint(); }

  SoftLabel predict_one(const Tensor& sample) const override;
  std::vector<double> fit(const LabeledSet& data, const TrainingConfig& config) override;
  void reinitialize(std::uint64_t seed) override { params_ = network_.initialize(seed); }
  void save(std::ostream& out) const override;

  const Network& network() const noexcept { return network_; }
  const ModelParams& params() const noexcept { return params_; }
  void set_params(ModelParams params);

 private:
  Network network_;
  ModelParams params_;
};

/// conv3d(32) -> pool -> conv3d(64) -> pool -> dense(1024) -> dense(2) -> softmax,
/// 3x3x3 kernels, ReLU after every conv and hidden dense layer, 2x2x2 pools.
/// `scale` multiplies every width except the output layer (rounded up).
Network cnn2_network(const Shape& input_shape, double scale = 1.0);
CnnClassifier build_cnn2(const Shape& input_shape, std::uint64_t seed, double scale = 1.0);

/// Eleven-layer volumetric AlexNet. Filters 96/128/256/384/256 and dense
/// 4096/1024/2 at scale 1.
Network alexnet3d_network(const Shape& input_shape, double scale = 1.0);
CnnClassifier build_alexnet3d(const Shape& input_shape, double scale, std::uint64_t seed);

/// Output channel counts of the conv layers, in order.
std::vector<std::size_t> conv_filter_counts(const Network& net);
/// Unit counts of the dense layers, in order.
std::vector<std::size_t> dense_widths(const Network& net);

}  // namespace ssem
