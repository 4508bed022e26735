#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ssem/tensor.hpp"

namespace ssem {

enum class IntensityUnit : std::uint8_t { hounsfield = 0, normalized = 1 };

/// Axial CT stack, voxels shaped (depth, height, width), depth outermost.
struct Volume {
  Tensor voxels;
  double slice_thickness_mm = 1.0;
  IntensityUnit unit = IntensityUnit::hounsfield;
  std::string patient_id;

  std::size_t depth() const { return voxels.dim(0); }
  std::size_t height() const { return voxels.dim(1); }
  std::size_t width() const { return voxels.dim(2); }

  /// Hounsfield volumes need slice thickness < 3 mm; normalized voxels lie in [0, 1].
  void validate() const;
  friend bool operator==(const Volume&, const Volume&) = default;
};

struct HounsfieldWindow {
  double low = -1000.0;
  double high = 400.0;
};

/// Clips to the window and maps it affinely onto [0, 1].
Volume normalize_hounsfield(const Volume& volume, HounsfieldWindow window = {});

/// Bilinear resize with corner-aligned sampling: output pixel i samples source
/// coordinate i * (in - 1) / (out - 1), or 0 when out == 1.
Tensor resize_slice(const Tensor& slice, std::size_t height, std::size_t width);

struct ChunkShape {
  std::size_t depth = 20;
  std::size_t height = 50;
  std::size_t width = 50;

  Shape tensor_shape() const { return {depth, height, width, 1}; }
};

/// Fixed-depth slab of consecutive resized slices, shaped (depth, height, width, 1).
struct Chunk {
  Tensor voxels;
  std::string patient_id;
  std::size_t index = 0;
  /// Leading slices that came from the volume; the rest are padding.
  std::size_t valid_slices = 0;
};

/// Non-overlapping slabs in slice order. Each slice is resized first; the
/// final partial slab is filled with `pad_value` slices.
std::vector<Chunk> chunk_volume(const Volume& volume, ChunkShape shape = {}, double pad_value = 0.0);

/// Bit-exact container. Layout:
///   "SSEMVOL1" | u16 version | u8 unit | f64 slice thickness |
///   u16 id length | id bytes | u32 depth | u32 height | u32 width | f64 voxels
/// All integers and floats are little-endian.
void write_volume(const Volume& volume, std::ostream& out);
void write_volume(const Volume& volume, const std::string& path);
Volume read_volume(std::istream& in);
Volume read_volume(const std::string& path);

}  // namespace ssem
