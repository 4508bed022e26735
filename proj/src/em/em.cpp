#include "ssem/em.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "ssem/error.hpp"
#include "ssem/log.hpp"

namespace ssem {

void EMConfig::validate() const {
  if (batch_increment < 1) throw PreconditionError("batch_increment must be at least 1");
  if (!(convergence_tolerance > 0.0)) throw PreconditionError("convergence_tolerance must be positive");
  if (max_outer_iterations < 1) throw PreconditionError("max_outer_iterations must be at least 1");
  m_step_training(0).validate();
}

TrainingConfig EMConfig::m_step_training(std::size_t k) const {
  return TrainingConfig{m_step_epochs, m_step_batch_size, m_step_learning_rate, seed ^ static_cast<std::uint64_t>(k)};
}

std::vector<SoftLabel> e_step(const Classifier& classifier, std::span<const Tensor> unlabeled, LabelMode mode) {
  auto labels = classifier.predict_proba(unlabeled);
  std::size_t ties = 0;
  for (auto& label : labels) {
    if (!std::isfinite(label.p0) || !std::isfinite(label.p1)) throw NumericError("e_step: non-finite probability");
    if (mode == LabelMode::hard) {
      if (label.p0 == label.p1) ++ties;
      label = SoftLabel::one_hot(label.argmax());
    }
  }
  if (ties) log_info("e_step: " + std::to_string(ties) + " probability tie(s) assigned to class 0");
  return labels;
}

std::vector<SoftLabel> e_step(const Classifier& classifier, const Tensor& unlabeled_batch, LabelMode mode) {
  std::vector<Tensor> samples;
  for (std::size_t i = 0; i < unlabeled_batch.dim(0); ++i) samples.push_back(unlabeled_batch.slice(i));
  return e_step(classifier, samples, mode);
}

std::unique_ptr<Classifier> m_step(const Classifier& classifier, const LabeledSet& labeled,
                                   const LabeledSet& pseudo_labeled, const EMConfig& config, std::size_t k) {
  LabeledSet combined = labeled;
  combined.append(pseudo_labeled);
  if (combined.empty()) throw PreconditionError("m_step needs at least one sample");
  const TrainingConfig training = config.m_step_training(k);
  std::unique_ptr<Classifier> start = classifier.clone();
  if (config.m_step_mode == MStepMode::from_scratch) start->reinitialize(training.seed);
  start->fit(combined, training);
  return start;
}

namespace {

double accuracy_or_nan(const Classifier& c, const LabeledSet* set) {
  if (!set || set->empty()) return std::numeric_limits<double>::quiet_NaN();
  return accuracy_on(c, *set);
}

}  // namespace

EMResult run_em(const Classifier& classifier, const LabeledSet& labeled, const UnlabeledPool& pool,
                const EMConfig& config, const EMOptions& options) {
  config.validate();
  if (labeled.empty() && classifier.kind() != "gmm") {
    throw PreconditionError("run_em needs a nonempty labeled set for discriminative classifiers");
  }
  if (labeled.empty() && pool.empty()) throw PreconditionError("run_em needs at least one sample");

  EMResult result{classifier.clone(), {}, {}, std::nullopt};
  EMState& state = result.state;
  LabeledSet pseudo;

  try {
    if (config.initial_m_step && !labeled.empty()) {
      result.classifier = m_step(*result.classifier, labeled, pseudo, config, 0);
    }
    while (!pool.empty() && state.t < config.max_outer_iterations) {
      const std::size_t previous_cursor = state.cursor;
      const std::size_t cursor = std::min(pool.size(), state.cursor + config.batch_increment);

      // E-step over every incorporated sample, including earlier increments.
      const std::span<const Tensor> incorporated(pool.samples.data(), cursor);
      auto labels = e_step(*result.classifier, incorporated, config.label_mode);
      pseudo.samples.assign(pool.samples.begin(), pool.samples.begin() + static_cast<std::ptrdiff_t>(cursor));
      pseudo.targets = labels;

      auto updated = m_step(*result.classifier, labeled, pseudo, config, state.t + 1);
      const double q = updated->em_objective(labeled, pseudo);
      if (!std::isfinite(q)) throw NumericError("non-finite EM objective");

      const bool full_now = cursor == pool.size();
      const bool full_before = previous_cursor == pool.size() && state.t > 0;
      const double delta = state.q_history.empty() ? std::numeric_limits<double>::infinity() : q - state.q;

      EMIterationRecord record{state.t + 1, cursor, q, accuracy_or_nan(*updated, &labeled),
                               accuracy_or_nan(*updated, options.validation)};
      state.cursor = cursor;
      state.pool_labels = std::move(labels);
      state.q = q;
      state.q_history.push_back(q);
      state.cursor_history.push_back(state.cursor);
      state.trace.push_back(record);
      ++state.t;
      log_info("em iteration " + std::to_string(state.t) + " cursor " + std::to_string(state.cursor) + " Q " +
               std::to_string(q));

      if (options.on_iteration) options.on_iteration(state, *result.classifier, *updated);
      result.classifier = std::move(updated);

      if (full_now && full_before && std::abs(delta) < config.convergence_tolerance) {
        state.converged = true;
        break;
      }
    }
    if (pool.empty()) state.converged = true;
    result.final_labels = e_step(*result.classifier, pool.samples, config.label_mode);
  } catch (const std::exception& e) {
    result.error = e.what();
    log_warn(std::string("run_em stopped: ") + e.what());
  }
  return result;
}

void write_em_trace(const EMState& state, std::ostream& out) {
  char line[256];
  for (const auto& r : state.trace) {
    std::snprintf(line, sizeof line, "%zu,%zu,%.17g,%.6f,%.6f\n", r.iteration, r.cursor, r.q, r.labeled_accuracy,
                  r.validation_accuracy);
    out << line;
  }
}

}  // namespace ssem
