#include "ssem/classifier.hpp"

#include <algorithm>
#include <cmath>

#include "ssem/error.hpp"

namespace ssem {

void LabeledSet::add(Tensor sample, SoftLabel target) {
  samples.push_back(std::move(sample));
  targets.push_back(target);
}

void LabeledSet::append(const LabeledSet& other) {
  samples.insert(samples.end(), other.samples.begin(), other.samples.end());
  targets.insert(targets.end(), other.targets.begin(), other.targets.end());
}

void TrainingConfig::validate() const {
  if (epochs < 1) throw PreconditionError("training epochs must be at least 1");
  if (batch_size < 1) throw PreconditionError("training batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw PreconditionError("training learning_rate must be positive");
}

void Classifier::check_signature(const Tensor& sample) const {
  if (sample.shape() != input_shape()) {
    throw DimensionError(kind() + " classifier expects samples of shape " + shape_to_string(input_shape()) +
                         ", got " + shape_to_string(sample.shape()));
  }
}

std::vector<SoftLabel> Classifier::predict_proba(std::span<const Tensor> samples) const {
  for (const auto& s : samples) check_signature(s);
  std::vector<SoftLabel> out(samples.size());
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = predict_one(samples[static_cast<std::size_t>(i)]);
  return out;
}

std::vector<SoftLabel> Classifier::predict_proba(const Tensor& batch) const {
  if (batch.rank() != input_shape().size() + 1) {
    throw DimensionError("batch " + shape_to_string(batch.shape()) + " does not match signature " +
                         shape_to_string(input_shape()));
  }
  std::vector<Tensor> samples;
  samples.reserve(batch.dim(0));
  for (std::size_t i = 0; i < batch.dim(0); ++i) samples.push_back(batch.slice(i));
  return predict_proba(samples);
}

double Classifier::em_objective(const LabeledSet& labeled, const LabeledSet& pseudo_labeled) const {
  return expected_log_likelihood(*this, labeled, pseudo_labeled);
}

TrainOutcome train_supervised(const Classifier& classifier, const LabeledSet& data, const TrainingConfig& config) {
  config.validate();
  if (data.empty()) throw PreconditionError("train_supervised needs a nonempty labeled set");
  TrainOutcome outcome{classifier.clone(), {}};
  outcome.loss_history = outcome.classifier->fit(data, config);
  return outcome;
}

double expected_log_likelihood(const Classifier& classifier, const LabeledSet& labeled,
                               const LabeledSet& pseudo_labeled) {
  if (labeled.empty() && pseudo_labeled.empty()) {
    throw PreconditionError("expected_log_likelihood needs at least one sample");
  }
  double total = 0.0;
  for (const LabeledSet* set : {&labeled, &pseudo_labeled}) {
    const auto predicted = classifier.predict_proba(set->samples);
    for (std::size_t i = 0; i < predicted.size(); ++i) total -= cross_entropy_loss(predicted[i], set->targets[i]);
  }
  return total;
}

double accuracy_on(const Classifier& classifier, const LabeledSet& data) {
  if (data.empty()) throw PreconditionError("accuracy on an empty set");
  const auto predicted = classifier.predict_proba(data.samples);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i].argmax() == data.targets[i].argmax();
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace ssem
