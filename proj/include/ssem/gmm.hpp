#pragma once

#include <array>
#include <span>
#include <vector>

#include "ssem/classifier.hpp"

namespace ssem {

inline constexpr double kVarianceFloor = 1e-6;

/// Two-component diagonal Gaussian mixture. Component k is class k.
struct GmmParams {
  std::array<double, 2> weights{0.5, 0.5};
  std::array<std::vector<double>, 2> means;
  std::array<std::vector<double>, 2> variances;

  std::size_t dim() const noexcept { return means[0].size(); }
  void validate(double variance_floor = kVarianceFloor) const;
  friend bool operator==(const GmmParams&, const GmmParams&) = default;
};

class GmmClassifier final : public Classifier {
 public:
  explicit GmmClassifier(GmmParams params, double variance_floor = kVarianceFloor);

  std::unique_ptr<Classifier> clone() const override { return std::make_unique<GmmClassifier>(*this); }
  std::string kind() const override { return "gmm"; }
  const Shape& input_shape() const override { return shape_; }
  std::uint64_t fingerprint() const override;

  /// Posterior responsibilities of the two components.
  SoftLabel predict_one(const Tensor& sample) const override;

  /// Closed-form weighted update using the targets as responsibilities. The
  /// history holds one entry: the negative mean objective after the update.
  std::vector<double> fit(const LabeledSet& data, const TrainingConfig& config) override;

  /// Restores the construction-time parameters; the seed is unused because
  /// the closed-form update does not depend on the starting point.
  void reinitialize(std::uint64_t seed) override;

  /// log p(x, y | theta) over labeled samples plus log p(x | theta) over the rest.
  double em_objective(const LabeledSet& labeled, const LabeledSet& pseudo_labeled) const override;

  void save(std::ostream& out) const override;

  const GmmParams& params() const noexcept { return params_; }
  double variance_floor() const noexcept { return floor_; }
  std::size_t clamp_events() const noexcept { return clamp_events_; }

 private:
  std::array<double, 2> log_joint(const Tensor& sample) const;

  GmmParams params_;
  GmmParams initial_;
  double floor_;
  Shape shape_;
  std::size_t clamp_events_ = 0;
};

struct GmmFitResult {
  GmmParams params;
  /// Total data log-likelihood after each iteration.
  std::vector<double> log_likelihood;
  std::size_t clamp_events = 0;
};

/// Textbook EM for the two-component diagonal mixture on unlabeled vectors.
GmmFitResult gmm_fit_closed_form(std::span<const std::vector<double>> data, const GmmParams& init,
                                 std::size_t iterations, double variance_floor = kVarianceFloor);

}  // namespace ssem
