#pragma once
// Shared helpers for the test binaries.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ssem/network.hpp"
#include "ssem/tensor.hpp"

namespace test {

inline ssem::Tensor random_tensor(const ssem::Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  ssem::Tensor t(shape);
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline std::vector<ssem::Tensor> random_samples(const ssem::Shape& shape, std::size_t n, std::uint64_t seed) {
  std::vector<ssem::Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_tensor(shape, seed * 1000 + i));
  return out;
}

inline std::vector<ssem::SoftLabel> random_targets(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ssem::SoftLabel> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = u(rng);
    out.push_back({1.0 - p, p});
  }
  return out;
}

inline double max_abs_diff(const ssem::Tensor& a, const ssem::Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline double dot(const ssem::Tensor& a, const ssem::Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Central differences over every parameter entry, reproduced here so the
/// library's own checker is not its own oracle.
inline double full_gradient_error(const ssem::Network& net, const ssem::ModelParams& params,
                                  const std::vector<ssem::Tensor>& samples,
                                  const std::vector<ssem::SoftLabel>& targets, double step) {
  const auto analytic = ssem::backward_pass(net, params, samples, targets);
  ssem::ModelParams probe = params;
  double worst = 0.0;
  for (std::size_t t = 0; t < probe.tensors.size(); ++t) {
    for (std::size_t k = 0; k < probe.tensors[t].size(); ++k) {
      const double saved = probe.tensors[t][k];
      probe.tensors[t][k] = saved + step;
      const double up = ssem::mean_loss(net, probe, samples, targets);
      probe.tensors[t][k] = saved - step;
      const double down = ssem::mean_loss(net, probe, samples, targets);
      probe.tensors[t][k] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic.gradients.tensors[t][k];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
    }
  }
  return worst;
}

/// Fresh scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ssem_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace test
