#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ssem/gmm.hpp"
#include "ssem/harness.hpp"

namespace ssem::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

struct GenerateConfig {
  DomainSpec domain;
  bool hide_labels = false;
  std::filesystem::path output;
};

struct ManifestData {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base;  // directory relative paths resolve against
};

struct TrainConfig {
  ManifestData labeled;
  PreprocessSettings preprocess;
  ArchitectureSpec architecture;
  std::uint64_t init_seed = 0;
  TrainingConfig training;
  std::filesystem::path output;
};

struct GmmSettings {
  std::vector<std::vector<double>> labeled_points;
  std::vector<int> labels;
  std::vector<std::vector<double>> unlabeled_points;
  GmmParams init;
  double variance_floor = kVarianceFloor;
};

struct EmRunConfig {
  bool gmm = false;
  ManifestData labeled, unlabeled;
  std::optional<ManifestData> validation;
  PreprocessSettings preprocess;
  ArchitectureSpec architecture;
  std::uint64_t init_seed = 0;
  GmmSettings gmm_settings;
  EMConfig em;
  std::filesystem::path output;
};

struct MatrixConfig {
  std::vector<ExperimentCondition> conditions;
  std::vector<std::uint64_t> seeds;
  MatrixOptions options;
  std::filesystem::path output;
};

// Loaders throw ConfigError (or another ssem::Error) on any validation failure.
// `out_override`, when nonempty, replaces the "output" key.
GenerateConfig load_generate_config(const std::filesystem::path& path, const std::string& out_override = {});
TrainConfig load_train_config(const std::filesystem::path& path, const std::string& out_override = {});
EmRunConfig load_em_config(const std::filesystem::path& path, const std::string& out_override = {});
MatrixConfig load_matrix_config(const std::filesystem::path& path, const std::string& out_override = {});

void run_generate(const GenerateConfig& config);
void run_train(const TrainConfig& config);
void run_em_command(const EmRunConfig& config);
/// Returns the report; throws when every cell failed.
ExperimentReport run_matrix(const MatrixConfig& config);

/// Key reference printed by `--help` of each subcommand.
std::string help_text(const std::string& command);

/// Parses argv and runs a subcommand, returning the process exit code.
int main_entry(int argc, char** argv);

}  // namespace ssem::cli
