#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssem/classifier.hpp"
#include "ssem/dataset.hpp"
#include "ssem/em.hpp"

namespace ssem {

double accuracy(std::span<const int> predictions, std::span<const int> truth);

enum class AggregationRule { mean, max };

struct PatientDecision {
  SoftLabel probability;
  int label = 0;
};

/// Combines chunk probabilities of one patient; class 1 iff p1 > 0.5.
PatientDecision aggregate_patient(std::span<const SoftLabel> chunk_probs, AggregationRule rule = AggregationRule::mean);

enum class ConditionKind { supervised_source_only, supervised_source_plus_target, semi_supervised_em };
const char* to_string(ConditionKind kind);
ConditionKind condition_from_string(const std::string& name);

enum class ArchitectureKind { cnn2, alexnet3d };

struct ArchitectureSpec {
  ArchitectureKind kind = ArchitectureKind::cnn2;
  double scale = 0.125;

  std::string name() const;
  std::unique_ptr<Classifier> build(const Shape& input_shape, std::uint64_t seed) const;
};

struct ExperimentCondition {
  ConditionKind kind = ConditionKind::supervised_source_only;
  /// Row label, e.g. "A->B".
  std::string direction;
  DomainSpec source;
  DomainSpec target;
  ArchitectureSpec architecture;
  TrainingConfig training;
  /// Required for semi_supervised_em.
  std::optional<EMConfig> em;

  void validate() const;
};

struct PreprocessSettings {
  ChunkShape chunk{10, 16, 16};
  HounsfieldWindow window;
  double pad_value = 0.0;
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
  AggregationRule aggregation = AggregationRule::mean;
};

/// One domain after generation, normalization, chunking and splitting.
struct PreparedDomain {
  std::vector<std::string> patient_ids;
  std::vector<int> labels;
  std::vector<std::vector<Tensor>> chunks;  // per patient, slice order
  DatasetSplit split;

  /// Chunks of the listed patients with their inherited patient labels.
  LabeledSet labeled(std::span<const std::size_t> patients) const;
  /// Chunks of the listed patients without any label field.
  UnlabeledPool unlabeled(std::span<const std::size_t> patients) const;
};

PreparedDomain prepare_domain(const DomainSpec& spec, const PreprocessSettings& settings, std::uint64_t split_seed);

/// Patient-level accuracy on `patients` of `domain`.
double patient_accuracy(const Classifier& classifier, const PreparedDomain& domain,
                        std::span<const std::size_t> patients, AggregationRule rule);

struct ExperimentCell {
  std::string architecture;
  std::string direction;
  ConditionKind condition = ConditionKind::supervised_source_only;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::optional<std::string> error;
  std::string trace_path;
};

struct CellSummary {
  std::string architecture;
  std::string direction;
  ConditionKind condition;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

struct ExperimentReport {
  std::vector<std::uint64_t> seeds;
  std::vector<ExperimentCell> cells;

  /// Mean and sample standard deviation over seeds of the successful cells,
  /// in first-appearance order of (architecture, direction, condition).
  std::vector<CellSummary> summarize() const;
  std::optional<CellSummary> find(const std::string& architecture, const std::string& direction,
                                 ConditionKind condition) const;
};

struct MatrixOptions {
  PreprocessSettings preprocess;
  /// Directory for per-cell EM traces; empty disables persistence.
  std::string trace_dir;
};

/// Runs every (condition, seed) cell. Data per seed is generated once per
/// domain and shared by all conditions of that seed. Evaluation always uses
/// the target domain's test split. Failed cells are recorded, not thrown.
ExperimentReport run_experiment_matrix(std::span<const ExperimentCondition> conditions,
                                       std::span<const std::uint64_t> seeds, const MatrixOptions& options = {});

/// Aligned text table: rows architecture x direction, one column per condition (mean ± sd).
std::string format_table(const ExperimentReport& report);
/// Header architecture,direction,condition,seed,accuracy; accuracies to 4 decimals; failed cells carry "error".
std::string format_report_csv(const ExperimentReport& report);
ExperimentReport parse_report_csv(std::istream& in);

struct EmittedReport {
  std::string table;
  std::string csv;
};

/// Formats both renderings and, when `out_dir` is nonempty, writes report.txt and report.csv there.
EmittedReport emit_table(const ExperimentReport& report, const std::string& out_dir = {});

}  // namespace ssem
