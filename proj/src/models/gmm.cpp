#include "ssem/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "ssem/error.hpp"
#include "ssem/log.hpp"
#include "ssem/network.hpp"

namespace ssem {

void GmmParams::validate(double variance_floor) const {
  const std::size_t d = means[0].size();
  if (d == 0) throw PreconditionError("gmm components need at least one dimension");
  for (int k = 0; k < 2; ++k) {
    if (means[k].size() != d || variances[k].size() != d) {
      throw DimensionError("gmm component " + std::to_string(k) + " has inconsistent dimensions");
    }
    if (!(weights[k] > 0.0)) throw PreconditionError("gmm mixing weights must be positive");
    for (double v : variances[k]) {
      if (!(v >= variance_floor)) throw PreconditionError("gmm variance below the floor");
    }
  }
  if (std::abs(weights[0] + weights[1] - 1.0) > 1e-12) throw PreconditionError("gmm mixing weights must sum to 1");
}

GmmClassifier::GmmClassifier(GmmParams params, double variance_floor)
    : params_(std::move(params)), initial_(params_), floor_(variance_floor), shape_{params_.dim()} {
  params_.validate(floor_);
}

std::uint64_t GmmClassifier::fingerprint() const {
  return fnv1a64("gmm dim=" + std::to_string(params_.dim()) + "\n");
}

std::array<double, 2> GmmClassifier::log_joint(const Tensor& sample) const {
  std::array<double, 2> out{};
  for (int k = 0; k < 2; ++k) {
    double lp = std::log(params_.weights[k]);
    for (std::size_t j = 0; j < params_.dim(); ++j) {
      const double var = params_.variances[k][j];
      const double diff = sample[j] - params_.means[k][j];
      lp -= 0.5 * (std::log(2.0 * std::numbers::pi * var) + diff * diff / var);
    }
    out[static_cast<std::size_t>(k)] = lp;
  }
  return out;
}

SoftLabel GmmClassifier::predict_one(const Tensor& sample) const {
  check_signature(sample);
  const auto lj = log_joint(sample);
  return softmax(lj);
}

std::vector<double> GmmClassifier::fit(const LabeledSet& data, const TrainingConfig& /*config*/) {
  if (data.empty()) throw PreconditionError("gmm fit on an empty set");
  const std::size_t d = params_.dim();
  std::array<double, 2> mass{0.0, 0.0};
  std::array<std::vector<double>, 2> sum{std::vector<double>(d), std::vector<double>(d)};
  for (std::size_t i = 0; i < data.size(); ++i) {
    check_signature(data.samples[i]);
    for (int k = 0; k < 2; ++k) {
      const double r = data.targets[i][k];
      mass[static_cast<std::size_t>(k)] += r;
      for (std::size_t j = 0; j < d; ++j) sum[static_cast<std::size_t>(k)][j] += r * data.samples[i][j];
    }
  }
  GmmParams next = params_;
  for (std::size_t k = 0; k < 2; ++k) {
    if (!(mass[k] > 0.0)) throw NumericError("gmm component " + std::to_string(k) + " received no responsibility");
    for (std::size_t j = 0; j < d; ++j) next.means[k][j] = sum[k][j] / mass[k];
  }
  std::array<std::vector<double>, 2> sq{std::vector<double>(d), std::vector<double>(d)};
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t k = 0; k < 2; ++k) {
      const double r = data.targets[i][static_cast<int>(k)];
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = data.samples[i][j] - next.means[k][j];
        sq[k][j] += r * diff * diff;
      }
    }
  }
  const double total = mass[0] + mass[1];
  for (std::size_t k = 0; k < 2; ++k) {
    next.weights[k] = mass[k] / total;
    for (std::size_t j = 0; j < d; ++j) {
      double v = sq[k][j] / mass[k];
      if (v < floor_) {
        v = floor_;
        ++clamp_events_;
        log_warn("gmm variance of component " + std::to_string(k) + " clamped to floor");
      }
      next.variances[k][j] = v;
    }
  }
  params_ = std::move(next);
  const double objective = em_objective({}, data);
  return {-objective / static_cast<double>(data.size())};
}

void GmmClassifier::reinitialize(std::uint64_t) { params_ = initial_; }

double GmmClassifier::em_objective(const LabeledSet& labeled, const LabeledSet& pseudo_labeled) const {
  double total = 0.0;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    total += log_joint(labeled.samples[i])[static_cast<std::size_t>(labeled.targets[i].argmax())];
  }
  for (const auto& x : pseudo_labeled.samples) {
    const auto lj = log_joint(x);
    const double top = std::max(lj[0], lj[1]);
    total += top + std::log(std::exp(lj[0] - top) + std::exp(lj[1] - top));
  }
  return total;
}

GmmFitResult gmm_fit_closed_form(std::span<const std::vector<double>> data, const GmmParams& init,
                                 std::size_t iterations, double variance_floor) {
  init.validate(variance_floor);
  const std::size_t n = data.size(), d = init.dim();
  if (n < 2) throw PreconditionError("gmm_fit_closed_form needs at least 2 data points");
  for (const auto& x : data) {
    if (x.size() != d) throw DimensionError("gmm data dimension mismatch");
  }
  if (std::all_of(data.begin(), data.end(), [&](const auto& x) { return x == data[0]; })) {
    throw PreconditionError("gmm_fit_closed_form needs at least 2 distinct data points");
  }

  GmmFitResult result{init, {}, 0};
  GmmParams& p = result.params;
  std::vector<std::array<double, 2>> resp(n);

  // log N(x | mu_k, diag var_k) + log pi_k
  auto log_component = [&](const std::vector<double>& x, std::size_t k) {
    double acc = std::log(p.weights[k]);
    for (std::size_t j = 0; j < d; ++j) {
      const double z = x[j] - p.means[k][j];
      acc += -0.5 * std::log(2.0 * std::numbers::pi * p.variances[k][j]) - 0.5 * z * z / p.variances[k][j];
    }
    return acc;
  };

  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      const double a = log_component(data[i], 0), b = log_component(data[i], 1);
      const double m = std::max(a, b);
      const double norm = m + std::log(std::exp(a - m) + std::exp(b - m));
      resp[i] = {std::exp(a - norm), std::exp(b - norm)};
    }
    for (std::size_t k = 0; k < 2; ++k) {
      double nk = 0.0;
      std::vector<double> mu(d, 0.0), var(d, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[i][k];
        for (std::size_t j = 0; j < d; ++j) mu[j] += resp[i][k] * data[i][j];
      }
      if (!(nk > 0.0)) throw NumericError("gmm component collapsed to zero mass");
      for (double& m : mu) m /= nk;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) var[j] += resp[i][k] * (data[i][j] - mu[j]) * (data[i][j] - mu[j]);
      }
      for (double& v : var) {
        v /= nk;
        if (v < variance_floor) {
          v = variance_floor;
          ++result.clamp_events;
          log_warn("gmm oracle: variance clamped to floor");
        }
      }
      p.weights[k] = nk / static_cast<double>(n);
      p.means[k] = std::move(mu);
      p.variances[k] = std::move(var);
    }
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = log_component(data[i], 0), b = log_component(data[i], 1);
      const double m = std::max(a, b);
      ll += m + std::log(std::exp(a - m) + std::exp(b - m));
    }
    result.log_likelihood.push_back(ll);
  }
  return result;
}

}  // namespace ssem
