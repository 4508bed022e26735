#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssem/classifier.hpp"

namespace ssem {

enum class LabelMode { soft, hard };
enum class MStepMode { warm_start, from_scratch };

struct EMConfig {
  /// Pool samples incorporated per outer iteration.
  std::size_t batch_increment = 200;
  LabelMode label_mode = LabelMode::soft;
  std::size_t m_step_epochs = 5;
  MStepMode m_step_mode = MStepMode::warm_start;
  double convergence_tolerance = 1e-3;
  std::size_t max_outer_iterations = 50;
  std::uint64_t seed = 0;
  std::size_t m_step_batch_size = 16;
  double m_step_learning_rate = 0.01;
  /// Fit the starting classifier on the labeled set before the first E-step.
  bool initial_m_step = true;

  void validate() const;
  /// Training settings of M-step number k (0 is the initial labeled-only fit,
  /// k = t + 1 follows E-step t). The seed is seed ^ k.
  TrainingConfig m_step_training(std::size_t k) const;
};

/// Ordered unlabeled samples. Carries no label field at all.
struct UnlabeledPool {
  std::vector<Tensor> samples;
  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
};

struct EMIterationRecord {
  std::size_t iteration = 0;
  std::size_t cursor = 0;
  double q = 0.0;
  double labeled_accuracy = 0.0;    // NaN without labeled data
  double validation_accuracy = 0.0; // NaN without a validation set
};

struct EMState {
  /// Completed outer iterations.
  std::size_t t = 0;
  /// Pool samples incorporated so far; always a prefix of the pool.
  std::size_t cursor = 0;
  double q = 0.0;
  std::vector<double> q_history;
  std::vector<std::size_t> cursor_history;
  /// Labels used by the latest M-step for pool[0, cursor).
  std::vector<SoftLabel> pool_labels;
  std::vector<EMIterationRecord> trace;
  bool converged = false;
};

struct EMOptions {
  /// Optional held-out labeled set for the trace's validation column.
  const LabeledSet* validation = nullptr;
  /// Called after every iteration with the state, the E-step model and the updated model.
  std::function<void(const EMState&, const Classifier&, const Classifier&)> on_iteration;
};

struct EMResult {
  std::unique_ptr<Classifier> classifier;
  EMState state;
  /// Labels for the whole pool under the final classifier.
  std::vector<SoftLabel> final_labels;
  /// Set when a step failed; `classifier` and `state` hold the last good iteration.
  std::optional<std::string> error;
};

/// Soft mode returns predict_proba verbatim; hard mode one-hot argmax with ties to class 0.
std::vector<SoftLabel> e_step(const Classifier& classifier, std::span<const Tensor> unlabeled, LabelMode mode);
std::vector<SoftLabel> e_step(const Classifier& classifier, const Tensor& unlabeled_batch, LabelMode mode);

/// Retrains on labeled ∪ pseudo-labeled (labeled first). `k` numbers the M-step
/// (see EMConfig::m_step_training); from_scratch reinitializes from seed ^ k.
std::unique_ptr<Classifier> m_step(const Classifier& classifier, const LabeledSet& labeled,
                                   const LabeledSet& pseudo_labeled, const EMConfig& config, std::size_t k);

/// Incremental semi-supervised EM.
///
/// With initial_m_step set and labeled data present, the classifier is first
/// fit on the labeled set alone; with an empty pool that is the only step.
/// Each outer iteration then advances the cursor by batch_increment,
/// re-labels every incorporated pool sample, retrains on labeled ∪ pseudo,
/// and records the objective. Stops once the pool is exhausted and the
/// objective moved less than the tolerance between two full-pool iterations,
/// or at max_outer_iterations.
EMResult run_em(const Classifier& classifier, const LabeledSet& labeled, const UnlabeledPool& pool,
                const EMConfig& config, const EMOptions& options = {});

/// One line per iteration: iteration,cursor,Q,labeled_accuracy,validation_accuracy
void write_em_trace(const EMState& state, std::ostream& out);

}  // namespace ssem
