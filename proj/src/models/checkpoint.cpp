// Checkpoint container:
//   "SSEMCKPT" | u32 header length | UTF-8 header | f64 parameters, little-endian.
// The header names the classifier kind, its fingerprint, and the architecture
// in canonical text; parameter tensors follow in declaration order.

#include <cstdio>
#include <fstream>
#include <sstream>

#include "ssem/binary_io.hpp"
#include "ssem/cnn.hpp"
#include "ssem/error.hpp"
#include "ssem/gmm.hpp"

namespace ssem {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'E', 'M', 'C', 'K', 'P', 'T'};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_container(std::ostream& out, const std::string& header, const std::vector<const Tensor*>& tensors) {
  out.write(kMagic, sizeof kMagic);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const Tensor* t : tensors) {
    for (double v : t->values()) io::write_le<double>(out, v);
  }
}

[[noreturn]] void malformed(const std::string& what) { throw FormatError(FormatError::Kind::malformed, what); }

Extent3 parse_extent(const std::string& text) {
  Extent3 e;
  if (std::sscanf(text.c_str(), "%zux%zux%zu", &e.d, &e.h, &e.w) != 3) malformed("bad extent '" + text + "'");
  return e;
}

Shape parse_shape(const std::string& text) {
  Shape s;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, 'x')) {
    try {
      s.push_back(std::stoull(part));
    } catch (const std::exception&) {
      malformed("bad shape '" + text + "'");
    }
  }
  return s;
}

LayerSpec parse_layer(const std::string& line) {
  std::istringstream in(line);
  std::string kind;
  in >> kind;
  LayerSpec spec;
  if (kind == "conv3d") spec.kind = LayerKind::conv3d;
  else if (kind == "maxpool3d") spec.kind = LayerKind::maxpool3d;
  else if (kind == "dense") spec.kind = LayerKind::dense;
  else if (kind == "relu") spec.kind = LayerKind::relu;
  else if (kind == "softmax") spec.kind = LayerKind::softmax;
  else malformed("unknown layer kind '" + kind + "'");
  if (spec.kind == LayerKind::dense || spec.kind == LayerKind::relu || spec.kind == LayerKind::softmax) {
    spec.padding = Padding::valid;
  }
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) malformed("bad layer token '" + token + "'");
    const std::string key = token.substr(0, eq), value = token.substr(eq + 1);
    if (key == "filters" || key == "units") spec.filters = std::stoull(value);
    else if (key == "kernel" || key == "window") spec.kernel = parse_extent(value);
    else if (key == "stride") spec.stride = parse_extent(value);
    else if (key == "padding") spec.padding = value == "same" ? Padding::same : Padding::valid;
    else malformed("unknown layer key '" + key + "'");
  }
  return spec;
}

void read_tensor(std::istream& in, Tensor& t) {
  for (double& v : t.values()) v = io::read_le<double>(in, "checkpoint parameters");
}

}  // namespace

void CnnClassifier::save(std::ostream& out) const {
  const std::string header = "kind=cnn\nfingerprint=" + hex64(network_.fingerprint()) + "\n" + network_.canonical_text();
  std::vector<const Tensor*> tensors;
  for (const auto& t : params_.tensors) tensors.push_back(&t);
  write_container(out, header, tensors);
}

void GmmClassifier::save(std::ostream& out) const {
  const std::size_t d = params_.dim();
  std::ostringstream h;
  h << "kind=gmm\nfingerprint=" << hex64(fingerprint()) << "\ndim=" << d << "\n";
  // Floor travels in the payload to stay bit-exact.
  Tensor floor_t({1}, {floor_});
  Tensor w({2}, {params_.weights[0], params_.weights[1]});
  Tensor m0({d}, params_.means[0]), m1({d}, params_.means[1]);
  Tensor v0({d}, params_.variances[0]), v1({d}, params_.variances[1]);
  write_container(out, h.str(), {&floor_t, &w, &m0, &m1, &v0, &v1});
}

void save_checkpoint(const Classifier& classifier, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open checkpoint for writing: " + path);
  classifier.save(out);
  if (!out) throw Error("failed writing checkpoint: " + path);
}

std::unique_ptr<Classifier> load_checkpoint(std::istream& in) {
  char magic[8];
  io::read_exact(in, magic, sizeof magic, "checkpoint magic");
  if (!std::equal(magic, magic + 8, kMagic)) throw FormatError(FormatError::Kind::bad_magic, "not a checkpoint (bad magic)");
  const auto header_len = io::read_le<std::uint32_t>(in, "checkpoint header length");
  if (header_len > (1u << 24)) throw FormatError(FormatError::Kind::shape_overflow, "checkpoint header too large");
  std::string header(header_len, '\0');
  io::read_exact(in, header.data(), header_len, "checkpoint header");

  std::istringstream lines(header);
  std::string kind_line, fp_line;
  std::getline(lines, kind_line);
  std::getline(lines, fp_line);
  if (fp_line.rfind("fingerprint=", 0) != 0) malformed("checkpoint header lacks a fingerprint");
  const std::uint64_t stated = std::stoull(fp_line.substr(12), nullptr, 16);

  std::unique_ptr<Classifier> result;
  if (kind_line == "kind=cnn") {
    std::string input_line;
    std::getline(lines, input_line);
    if (input_line.rfind("input=", 0) != 0) malformed("checkpoint header lacks an input shape");
    std::vector<LayerSpec> layers;
    for (std::string line; std::getline(lines, line);) {
      if (!line.empty()) layers.push_back(parse_layer(line));
    }
    Network net(parse_shape(input_line.substr(6)), std::move(layers));
    if (net.fingerprint() != stated) {
      throw FormatError(FormatError::Kind::fingerprint_mismatch, "checkpoint fingerprint does not match its header");
    }
    ModelParams params;
    params.fingerprint = net.fingerprint();
    for (const auto& spec : net.parameter_specs()) {
      Tensor t(spec.shape);
      read_tensor(in, t);
      params.names.push_back(spec.name);
      params.tensors.push_back(std::move(t));
    }
    result = std::make_unique<CnnClassifier>(std::move(net), std::move(params));
  } else if (kind_line == "kind=gmm") {
    std::string dim_line;
    std::getline(lines, dim_line);
    if (dim_line.rfind("dim=", 0) != 0) malformed("gmm checkpoint lacks dim");
    const std::size_t d = std::stoull(dim_line.substr(4));
    if (d == 0 || d > (1u << 20)) throw FormatError(FormatError::Kind::shape_overflow, "gmm dimension out of range");
    Tensor floor_t({1}), w({2}), m0({d}), m1({d}), v0({d}), v1({d});
    for (Tensor* t : {&floor_t, &w, &m0, &m1, &v0, &v1}) read_tensor(in, *t);
    GmmParams p;
    p.weights = {w[0], w[1]};
    p.means = {std::vector<double>(m0.values().begin(), m0.values().end()),
               std::vector<double>(m1.values().begin(), m1.values().end())};
    p.variances = {std::vector<double>(v0.values().begin(), v0.values().end()),
                   std::vector<double>(v1.values().begin(), v1.values().end())};
    result = std::make_unique<GmmClassifier>(std::move(p), floor_t[0]);
    if (result->fingerprint() != stated) {
      throw FormatError(FormatError::Kind::fingerprint_mismatch, "checkpoint fingerprint does not match its header");
    }
  } else {
    malformed("unknown checkpoint kind '" + kind_line + "'");
  }
  if (in.peek() != std::char_traits<char>::eof()) malformed("trailing bytes after checkpoint payload");
  return result;
}

std::unique_ptr<Classifier> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  return load_checkpoint(in);
}

std::unique_ptr<Classifier> load_checkpoint(const std::string& path, const Classifier& expected) {
  auto loaded = load_checkpoint(path);
  if (loaded->kind() != expected.kind() || loaded->fingerprint() != expected.fingerprint()) {
    throw FormatError(FormatError::Kind::fingerprint_mismatch,
                      "checkpoint architecture fingerprint differs from the expected model");
  }
  return loaded;
}

}  // namespace ssem
