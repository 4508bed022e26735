#include "ssem/soft_label.hpp"

#include <algorithm>
#include <cmath>

#include "ssem/error.hpp"

namespace ssem {

bool SoftLabel::valid(double tolerance) const {
  return std::isfinite(p0) && std::isfinite(p1) && p0 >= 0.0 && p1 >= 0.0 && std::abs(p0 + p1 - 1.0) <= tolerance;
}

std::vector<double> softmax_values(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax of an empty vector");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

SoftLabel softmax(std::span<const double> logits) {
  if (logits.size() != 2) throw DimensionError("two-class softmax expects 2 logits, got " + std::to_string(logits.size()));
  const auto p = softmax_values(logits);
  return {p[0], p[1]};
}

double cross_entropy_loss(const SoftLabel& predicted, const SoftLabel& target) {
  double loss = 0.0;
  if (target.p0 != 0.0) loss -= target.p0 * std::log(std::max(predicted.p0, kProbabilityFloor));
  if (target.p1 != 0.0) loss -= target.p1 * std::log(std::max(predicted.p1, kProbabilityFloor));
  return loss;
}

}  // namespace ssem
