#include "ssem/volume.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "ssem/binary_io.hpp"
#include "ssem/error.hpp"

namespace ssem {

namespace {
constexpr char kVolumeMagic[8] = {'S', 'S', 'E', 'M', 'V', 'O', 'L', '1'};
constexpr std::uint16_t kVolumeVersion = 1;
// Refuse headers that would allocate more than 2^31 voxels.
constexpr std::uint64_t kMaxVoxels = std::uint64_t{1} << 31;
}  // namespace

void Volume::validate() const {
  if (voxels.rank() != 3) throw DimensionError("volume voxels must be (depth,height,width), got " + shape_to_string(voxels.shape()));
  if (unit == IntensityUnit::hounsfield && !(slice_thickness_mm < 3.0)) {
    throw PreconditionError("hounsfield volume slice thickness must be below 3 mm");
  }
  if (unit == IntensityUnit::normalized) {
    for (double v : voxels.values()) {
      if (!(v >= 0.0 && v <= 1.0)) throw PreconditionError("normalized volume has a voxel outside [0,1]");
    }
  }
}

Volume normalize_hounsfield(const Volume& volume, HounsfieldWindow window) {
  if (volume.unit != IntensityUnit::hounsfield) throw PreconditionError("volume is already normalized");
  if (!(window.low < window.high)) throw PreconditionError("hounsfield window must satisfy low < high");
  Volume out = volume;
  out.unit = IntensityUnit::normalized;
  const double span = window.high - window.low;
  for (double& v : out.voxels.values()) v = (std::clamp(v, window.low, window.high) - window.low) / span;
  return out;
}

Tensor resize_slice(const Tensor& slice, std::size_t height, std::size_t width) {
  if (slice.rank() != 2) throw DimensionError("resize_slice expects a 2-D slice, got " + shape_to_string(slice.shape()));
  if (height == 0 || width == 0) throw PreconditionError("resize target extents must be positive");
  const std::size_t H = slice.dim(0), W = slice.dim(1);
  if (H < 2 || W < 2) throw PreconditionError("resize source extents must be at least 2");
  if (H == height && W == width) return slice;

  Tensor out({height, width});
  auto coord = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
    return n_out == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
  };
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = coord(y, height, H);
    const std::size_t y0 = std::min(static_cast<std::size_t>(sy), H - 2);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = coord(x, width, W);
      const std::size_t x0 = std::min(static_cast<std::size_t>(sx), W - 2);
      const double fx = sx - static_cast<double>(x0);
      const double a = slice[y0 * W + x0], b = slice[y0 * W + x0 + 1];
      const double c = slice[(y0 + 1) * W + x0], d = slice[(y0 + 1) * W + x0 + 1];
      out[y * width + x] = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
    }
  }
  return out;
}

std::vector<Chunk> chunk_volume(const Volume& volume, ChunkShape shape, double pad_value) {
  if (volume.unit != IntensityUnit::normalized) throw PreconditionError("chunk_volume expects a normalized volume");
  if (volume.voxels.rank() != 3 || volume.voxels.empty()) throw PreconditionError("chunk_volume on an empty volume");
  if (shape.depth == 0 || shape.height == 0 || shape.width == 0) throw PreconditionError("chunk extents must be positive");
  const std::size_t D = volume.depth(), H = volume.height(), W = volume.width();
  const std::size_t plane = shape.height * shape.width;
  const std::size_t count = (D + shape.depth - 1) / shape.depth;

  std::vector<Chunk> chunks;
  chunks.reserve(count);
  for (std::size_t c = 0; c < count; ++c) {
    Chunk chunk{Tensor(shape.tensor_shape(), pad_value), volume.patient_id, c, 0};
    for (std::size_t s = 0; s < shape.depth; ++s) {
      const std::size_t z = c * shape.depth + s;
      if (z >= D) break;
      Tensor slice({H, W}, std::vector<double>(volume.voxels.values().begin() + static_cast<std::ptrdiff_t>(z * H * W),
                                               volume.voxels.values().begin() + static_cast<std::ptrdiff_t>((z + 1) * H * W)));
      const Tensor resized = resize_slice(slice, shape.height, shape.width);
      std::copy(resized.values().begin(), resized.values().end(), chunk.voxels.values().begin() + static_cast<std::ptrdiff_t>(s * plane));
      ++chunk.valid_slices;
    }
    chunks.push_back(std::move(chunk));
  }
  return chunks;
}

void write_volume(const Volume& volume, std::ostream& out) {
  if (volume.voxels.rank() != 3) throw DimensionError("write_volume expects (depth,height,width) voxels");
  if (volume.patient_id.size() > 0xFFFF) throw PreconditionError("patient id longer than 65535 bytes");
  out.write(kVolumeMagic, sizeof kVolumeMagic);
  io::write_le<std::uint16_t>(out, kVolumeVersion);
  io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(volume.unit));
  io::write_le<double>(out, volume.slice_thickness_mm);
  io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(volume.patient_id.size()));
  out.write(volume.patient_id.data(), static_cast<std::streamsize>(volume.patient_id.size()));
  for (std::size_t axis = 0; axis < 3; ++axis) {
    if (volume.voxels.dim(axis) > std::numeric_limits<std::uint32_t>::max()) {
      throw FormatError(FormatError::Kind::shape_overflow, "volume extent exceeds u32");
    }
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(volume.voxels.dim(axis)));
  }
  for (double v : volume.voxels.values()) io::write_le<double>(out, v);
}

void write_volume(const Volume& volume, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open volume for writing: " + path);
  write_volume(volume, out);
  if (!out) throw Error("failed writing volume: " + path);
}

Volume read_volume(std::istream& in) {
  char magic[8];
  io::read_exact(in, magic, 8, "volume magic");
  if (!std::equal(magic, magic + 8, kVolumeMagic)) {
    throw FormatError(FormatError::Kind::bad_magic, "not a volume file (bad magic)");
  }
  const auto version = io::read_le<std::uint16_t>(in, "volume version");
  if (version != kVolumeVersion) {
    throw FormatError(FormatError::Kind::unsupported_version, "unsupported volume version " + std::to_string(version));
  }
  Volume v;
  const auto unit = io::read_le<std::uint8_t>(in, "volume unit");
  if (unit > 1) throw FormatError(FormatError::Kind::malformed, "unknown intensity unit flag");
  v.unit = static_cast<IntensityUnit>(unit);
  v.slice_thickness_mm = io::read_le<double>(in, "slice thickness");
  const auto id_len = io::read_le<std::uint16_t>(in, "patient id length");
  v.patient_id.resize(id_len);
  io::read_exact(in, v.patient_id.data(), id_len, "patient id");
  std::uint64_t dims[3];
  for (auto& d : dims) d = io::read_le<std::uint32_t>(in, "volume extents");
  const std::uint64_t total = dims[0] * dims[1] * dims[2];
  if (dims[0] && dims[1] && dims[2] && (total / dims[0] / dims[1] != dims[2] || total > kMaxVoxels)) {
    throw FormatError(FormatError::Kind::shape_overflow, "volume extents overflow the voxel limit");
  }
  std::vector<double> voxels(total);
  for (auto& x : voxels) {
    x = io::read_le<double>(in, "voxel payload (header shape exceeds payload)");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(FormatError::Kind::truncated, "payload longer than the header shape");
  }
  v.voxels = Tensor({static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]), static_cast<std::size_t>(dims[2])},
                    std::move(voxels));
  return v;
}

Volume read_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open volume: " + path);
  return read_volume(in);
}

}  // namespace ssem
