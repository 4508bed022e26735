#include "ssem/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "ssem/error.hpp"

namespace ssem {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void DomainSpec::validate() const {
  if (slices_low < 1 || slices_high < slices_low) throw PreconditionError("slice count range must satisfy 1 <= low <= high");
  if (!(prevalence >= 0.0 && prevalence <= 1.0)) throw PreconditionError("prevalence must lie in [0,1]");
  if (slice_height < 2 || slice_width < 2) throw PreconditionError("slices must be at least 2x2");
  if (!(slice_thickness_mm > 0.0 && slice_thickness_mm < 3.0)) throw PreconditionError("slice thickness must lie in (0, 3) mm");
  if (lesion_radius < 0.0 || noise_scale < 0.0) throw PreconditionError("lesion radius and noise scale must be nonnegative");
}

namespace {

// In-place 3-tap box blur along one axis of a (D,H,W) field, clamped at the edges.
void blur_axis(std::vector<double>& f, std::size_t D, std::size_t H, std::size_t W, int axis) {
  const std::size_t n[3] = {D, H, W};
  const std::size_t stride[3] = {H * W, W, 1};
  std::vector<double> out(f.size());
  for (std::size_t z = 0; z < D; ++z)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t idx = (z * H + y) * W + x;
        const std::size_t pos = axis == 0 ? z : axis == 1 ? y : x;
        const std::size_t lo = pos == 0 ? idx : idx - stride[axis];
        const std::size_t hi = pos + 1 == n[axis] ? idx : idx + stride[axis];
        out[idx] = (f[lo] + f[idx] + f[hi]) / 3.0;
      }
  f.swap(out);
}

LabeledVolume make_patient(const DomainSpec& spec, std::size_t index, int label) {
  std::mt19937_64 rng(mix_seed(spec.seed, index));
  std::uniform_int_distribution<std::size_t> depth_dist(spec.slices_low, spec.slices_high);
  const std::size_t D = depth_dist(rng), H = spec.slice_height, W = spec.slice_width;

  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> field(D * H * W);
  for (double& v : field) v = normal(rng);
  for (std::size_t pass = 0; pass < spec.noise_smoothing; ++pass) {
    for (int axis = 0; axis < 3; ++axis) {
      if ((axis == 0 ? D : axis == 1 ? H : W) > 1) blur_axis(field, D, H, W, axis);
    }
  }
  double sq = 0.0;
  for (double v : field) sq += v * v;
  const double rms = std::sqrt(sq / static_cast<double>(field.size()));
  for (double& v : field) v = spec.background_hu + spec.intensity_bias + spec.noise_scale * (rms > 0 ? v / rms : 0.0);

  // Lesion geometry is drawn for every patient so both classes consume the same RNG stream.
  std::uniform_int_distribution<int> count_dist(1, 3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int lesions = count_dist(rng);
  for (int l = 0; l < lesions; ++l) {
    const double cz = unit(rng) * static_cast<double>(D - 1);
    const double cy = (0.2 + 0.6 * unit(rng)) * static_cast<double>(H - 1);
    const double cx = (0.2 + 0.6 * unit(rng)) * static_cast<double>(W - 1);
    const double rz = spec.lesion_radius * (0.8 + 0.4 * unit(rng));
    const double ry = spec.lesion_radius * (0.8 + 0.4 * unit(rng));
    const double rx = spec.lesion_radius * (0.8 + 0.4 * unit(rng));
    if (label != 1 || spec.lesion_radius <= 0.0) continue;
    for (std::size_t z = 0; z < D; ++z)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double dz = (static_cast<double>(z) - cz) / rz, dy = (static_cast<double>(y) - cy) / ry,
                       dx = (static_cast<double>(x) - cx) / rx;
          const double q = dz * dz + dy * dy + dx * dx;
          // Solid core out to 70% of the radius, linear rim to the edge.
          const double profile = q <= 0.49 ? 1.0 : q >= 1.0 ? 0.0 : (1.0 - std::sqrt(q)) / 0.3;
          field[(z * H + y) * W + x] += spec.lesion_intensity * profile;
        }
  }

  char id[64];
  std::snprintf(id, sizeof id, "%s%05zu", spec.id_prefix.c_str(), index);
  Volume v{Tensor({D, H, W}, std::move(field)), spec.slice_thickness_mm, IntensityUnit::hounsfield, id};
  return {std::move(v), label};
}

}  // namespace

std::vector<LabeledVolume> generate_synthetic_domain(const DomainSpec& spec) {
  spec.validate();
  const std::size_t n = spec.patient_count;
  const auto positives = static_cast<std::size_t>(std::llround(spec.prevalence * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(spec.seed, 0xC0FFEEULL));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> labels(n, 0);
  for (std::size_t i = 0; i < positives; ++i) labels[order[i]] = 1;

  std::vector<LabeledVolume> out(n);
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    const auto k = static_cast<std::size_t>(i);
    out[k] = make_patient(spec, k, labels[k]);
  }
  return out;
}

DatasetSplit split_dataset(std::span<const std::string> patient_ids, std::array<double, 3> ratios, std::uint64_t seed) {
  const std::size_t n = patient_ids.size();
  if (n < 10) throw PreconditionError("split_dataset needs at least 10 patients");
  for (double r : ratios) {
    if (r < 0.0) throw PreconditionError("split ratios must be nonnegative");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw PreconditionError("split ratios must sum to 1");

  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double quota = ratios[k] * static_cast<double>(n);
    sizes[k] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    frac[k] = quota - static_cast<double>(sizes[k]);
    assigned += sizes[k];
  }
  std::array<std::size_t, 3> rank{0, 1, 2};
  std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b] + 1e-12; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[rank[k % 3]];

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  DatasetSplit split;
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(sizes[0]));
  split.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes[0]),
                          order.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]), order.end());
  return split;
}

std::vector<ManifestEntry> read_manifest(std::istream& in) {
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto a = line.find(','), b = line.rfind(',');
    if (a == std::string::npos || a == b) {
      throw FormatError(FormatError::Kind::malformed, "manifest line " + std::to_string(line_no) + ": expected 3 fields");
    }
    ManifestEntry e{line.substr(0, a), line.substr(a + 1, b - a - 1), std::nullopt};
    const std::string label = line.substr(b + 1);
    if (label == "0" || label == "1") e.label = label[0] - '0';
    else if (label != "?") {
      throw FormatError(FormatError::Kind::malformed, "manifest line " + std::to_string(line_no) + ": label must be 0, 1 or ?");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest: " + path);
  return read_manifest(in);
}

void write_manifest(const std::vector<ManifestEntry>& entries, std::ostream& out) {
  for (const auto& e : entries) {
    out << e.patient_id << ',' << e.relative_path << ',' << (e.label ? std::to_string(*e.label) : std::string("?")) << '\n';
  }
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open manifest for writing: " + path);
  write_manifest(entries, out);
}

}  // namespace ssem
