#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssem/volume.hpp"

namespace ssem {

/// Parameters of one synthetic CT domain. Intensities are in Hounsfield units.
struct DomainSpec {
  std::uint64_t seed = 1;
  std::size_t patient_count = 160;
  double prevalence = 0.265;
  std::size_t slices_low = 10;
  std::size_t slices_high = 20;
  std::size_t slice_height = 32;
  std::size_t slice_width = 32;
  double slice_thickness_mm = 2.5;
  /// Parenchyma level before the domain bias.
  double background_hu = -750.0;
  /// Nodule radius in raw voxels; 0 inserts nothing.
  double lesion_radius = 2.5;
  /// HU added at the nodule core.
  double lesion_intensity = 600.0;
  /// Global intensity offset of the domain.
  double intensity_bias = 0.0;
  /// Standard deviation of the smoothed background texture.
  double noise_scale = 60.0;
  /// Box-blur passes over the background texture; 0 leaves it white.
  std::size_t noise_smoothing = 2;
  std::string id_prefix = "p";

  void validate() const;
};

struct LabeledVolume {
  Volume volume;
  int label = 0;
};

/// Deterministic per seed; patient i depends only on (seed, i).
/// Exactly round(prevalence * patient_count) patients are positive.
std::vector<LabeledVolume> generate_synthetic_domain(const DomainSpec& spec);

struct DatasetSplit {
  std::vector<std::size_t> train, validation, test;  // indices into the input id list
};

/// Seeded shuffle of patients followed by contiguous cuts. Sizes use
/// largest-remainder rounding (ties to the earlier split).
DatasetSplit split_dataset(std::span<const std::string> patient_ids, std::array<double, 3> ratios = {0.8, 0.1, 0.1},
                           std::uint64_t seed = 0);

/// One manifest line: patient_id,relative_path,label with label in {0,1,?}.
struct ManifestEntry {
  std::string patient_id;
  std::string relative_path;
  std::optional<int> label;  // empty for unlabeled pool members
};

std::vector<ManifestEntry> read_manifest(std::istream& in);
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::vector<ManifestEntry>& entries, std::ostream& out);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);

/// splitmix64 finalizer, used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace ssem
