#pragma once

#include <span>
#include <vector>

namespace ssem {

/// Probability of class 0 (no cancer) and class 1 (cancer) for one sample.
struct SoftLabel {
  double p0 = 1.0;
  double p1 = 0.0;

  static SoftLabel one_hot(int cls) { return cls == 0 ? SoftLabel{1.0, 0.0} : SoftLabel{0.0, 1.0}; }

  double operator[](int cls) const { return cls == 0 ? p0 : p1; }
  /// Ties resolve to class 0.
  int argmax() const { return p1 > p0 ? 1 : 0; }
  bool valid(double tolerance = 1e-12) const;

  friend bool operator==(const SoftLabel&, const SoftLabel&) = default;
};

inline constexpr double kProbabilityFloor = 1e-12;

std::vector<double> softmax_values(std::span<const double> logits);

/// Two-class softmax with max subtraction.
SoftLabel softmax(std::span<const double> logits);

/// -sum_k target_k * log(max(predicted_k, 1e-12)).
double cross_entropy_loss(const SoftLabel& predicted, const SoftLabel& target);

}  // namespace ssem
