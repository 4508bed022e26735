#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ssem/soft_label.hpp"
#include "ssem/tensor.hpp"

namespace ssem {

/// Samples paired with (possibly soft) class targets.
struct LabeledSet {
  std::vector<Tensor> samples;
  std::vector<SoftLabel> targets;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  void add(Tensor sample, SoftLabel target);
  void append(const LabeledSet& other);
};

struct TrainingConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

/// A model that maps one sample to a distribution over the two classes.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::unique_ptr<Classifier> clone() const = 0;
  virtual std::string kind() const = 0;
  /// Per-sample shape every input must match.
  virtual const Shape& input_shape() const = 0;
  virtual std::uint64_t fingerprint() const = 0;

  virtual SoftLabel predict_one(const Tensor& sample) const = 0;

  /// One valid SoftLabel per sample, in sample order.
  std::vector<SoftLabel> predict_proba(std::span<const Tensor> samples) const;
  /// Batch-tensor overload; the first extent indexes samples.
  std::vector<SoftLabel> predict_proba(const Tensor& batch) const;

  /// Fits to the targets in place and returns the per-epoch mean loss.
  virtual std::vector<double> fit(const LabeledSet& data, const TrainingConfig& config) = 0;

  /// Replaces the coefficients with a fresh initialization derived from `seed`.
  virtual void reinitialize(std::uint64_t seed) = 0;

  /// Objective tracked across EM iterations. Discriminative models return the
  /// expected complete-data log-likelihood; generative models override this.
  virtual double em_objective(const LabeledSet& labeled, const LabeledSet& pseudo_labeled) const;

  /// Writes the checkpoint container (magic, header, little-endian payload).
  virtual void save(std::ostream& out) const = 0;

 protected:
  void check_signature(const Tensor& sample) const;
};

struct TrainOutcome {
  std::unique_ptr<Classifier> classifier;
  std::vector<double> loss_history;
};

/// Trains a copy of `classifier`; the input is left untouched.
TrainOutcome train_supervised(const Classifier& classifier, const LabeledSet& data, const TrainingConfig& config);

/// sum over samples of sum_z q(z) log max(p(z|x), 1e-12), i.e. the negative total cross-entropy.
double expected_log_likelihood(const Classifier& classifier, const LabeledSet& labeled,
                               const LabeledSet& pseudo_labeled);

double accuracy_on(const Classifier& classifier, const LabeledSet& data);

void save_checkpoint(const Classifier& classifier, const std::string& path);
std::unique_ptr<Classifier> load_checkpoint(std::istream& in);
std::unique_ptr<Classifier> load_checkpoint(const std::string& path);
/// Rejects a checkpoint whose architecture fingerprint differs from `expected`.
std::unique_ptr<Classifier> load_checkpoint(const std::string& path, const Classifier& expected);

}  // namespace ssem
