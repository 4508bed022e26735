#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ssem/error.hpp"
#include "ssem/log.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ssem::cli {
namespace {

struct KeyDoc {
  const char* key;
  const char* doc;
};

const std::vector<KeyDoc> kDomainKeys = {
    {"seed", "generator seed (unsigned integer, default 1)"},
    {"patient_count", "number of patients (default 160)"},
    {"prevalence", "fraction of positive patients in [0,1] (default 0.265)"},
    {"slices_low", "minimum slices per volume (default 10)"},
    {"slices_high", "maximum slices per volume (default 20)"},
    {"slice_height", "slice rows (default 32)"},
    {"slice_width", "slice columns (default 32)"},
    {"slice_thickness_mm", "slice thickness, below 3 mm (default 2.5)"},
    {"background_hu", "mean tissue intensity in HU (default -750)"},
    {"lesion_radius", "lesion radius in voxels, 0 disables lesions (default 2.5)"},
    {"lesion_intensity", "lesion intensity in HU (default 600)"},
    {"intensity_bias", "domain-wide HU offset (default 0)"},
    {"noise_scale", "noise standard deviation in HU (default 60)"},
    {"noise_smoothing", "box-filter radius applied to the noise (default 2)"},
    {"id_prefix", "patient id prefix (default \"p\")"},
};

const std::vector<KeyDoc> kPreprocessKeys = {
    {"chunk", "[depth, height, width] of one classifier input (default [10,16,16])"},
    {"window", "[low, high] Hounsfield window mapped onto [0,1] (default [-1000,400])"},
    {"pad_value", "value of padding slices in the last chunk (default 0)"},
};

const std::vector<KeyDoc> kSplitKeys = {
    {"ratios", "[train, validation, test] patient fractions (default [0.8,0.1,0.1])"},
    {"aggregation", "patient decision rule over chunks: \"mean\" or \"max\" (default mean)"},
};

const std::vector<KeyDoc> kArchitectureKeys = {
    {"kind", "\"cnn2\" or \"alexnet3d\" (default cnn2)"},
    {"scale", "width multiplier, 1 is full size (default 0.125)"},
};

const KeyDoc kInitSeedKey = {"seed", "weight initialization seed (default 0)"};

const std::vector<KeyDoc> kTrainingKeys = {
    {"epochs", "passes over the data, at least 1 (default 10)"},
    {"batch_size", "mini-batch size (default 16)"},
    {"learning_rate", "SGD step size (default 0.01)"},
    {"seed", "shuffling seed (default 0)"},
};

const std::vector<KeyDoc> kEmKeys = {
    {"batch_increment", "pool samples added per outer iteration (default 200)"},
    {"label_mode", "\"soft\" or \"hard\" pseudo-labels (default soft)"},
    {"m_step_epochs", "training epochs per M-step (default 5)"},
    {"m_step_mode", "\"warm_start\" or \"from_scratch\" (default warm_start)"},
    {"convergence_tolerance", "stop when Q moves less than this between full-pool iterations (default 1e-3)"},
    {"max_outer_iterations", "iteration cap (default 50)"},
    {"seed", "M-step seed; M-step k uses seed xor k (default 0)"},
    {"m_step_batch_size", "M-step mini-batch size (default 16)"},
    {"m_step_learning_rate", "M-step SGD step size (default 0.01)"},
    {"initial_m_step", "fit on the labeled set before the first E-step (default true)"},
};

const std::vector<KeyDoc> kGmmKeys = {
    {"unlabeled_data", "CSV of unlabeled points, one comma-separated vector per line"},
    {"labeled_data", "optional CSV of labeled points, \"label,x1,...\" per line"},
    {"weights", "initial mixing weights [w0, w1]"},
    {"means", "initial means [[...], [...]]"},
    {"variances", "initial diagonal variances [[...], [...]]"},
    {"variance_floor", "lower bound on every variance (default 1e-6)"},
};

// A JSON object whose keys must all be consumed.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    if (!has(key)) throw ConfigError("missing key " + path(key));
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    return has(key) ? convert<T>(raw(key), path(key)) : fallback;
  }

  template <class T>
  T require(const std::string& key) {
    return convert<T>(raw(key), path(key));
  }

  Section sub(const std::string& key) { return Section(raw(key), path(key)); }

  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown key " + path(item.key()));
    }
  }

  template <class T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + " must be true or false");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(where + " must be a nonnegative integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + " must be a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + " must be a string");
      return v.get<std::string>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

template <class T>
std::vector<T> array_of(const json& v, const std::string& where, std::size_t expected = 0) {
  if (!v.is_array()) throw ConfigError(where + " must be an array");
  if (expected && v.size() != expected) throw ConfigError(where + " must have " + std::to_string(expected) + " entries");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(Section::convert<T>(v[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

struct Document {
  json root;
  fs::path dir;
};

Document read_document(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Document d;
  try {
    d.root = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  d.dir = fs::absolute(path).parent_path();
  return d;
}

fs::path resolve(const Document& d, const std::string& p) {
  const fs::path raw(p);
  return raw.is_absolute() ? raw : d.dir / raw;
}

fs::path output_dir(Section& root, const Document& d, const std::string& override_path) {
  if (!override_path.empty()) {
    if (root.has("output")) root.raw("output");
    return fs::absolute(override_path);
  }
  if (!root.has("output")) throw ConfigError("missing key output (or pass --out)");
  return resolve(d, root.require<std::string>("output"));
}

DomainSpec parse_domain(Section s) {
  DomainSpec d;
  d.seed = s.get("seed", d.seed);
  d.patient_count = s.get("patient_count", d.patient_count);
  d.prevalence = s.get("prevalence", d.prevalence);
  d.slices_low = s.get("slices_low", d.slices_low);
  d.slices_high = s.get("slices_high", d.slices_high);
  d.slice_height = s.get("slice_height", d.slice_height);
  d.slice_width = s.get("slice_width", d.slice_width);
  d.slice_thickness_mm = s.get("slice_thickness_mm", d.slice_thickness_mm);
  d.background_hu = s.get("background_hu", d.background_hu);
  d.lesion_radius = s.get("lesion_radius", d.lesion_radius);
  d.lesion_intensity = s.get("lesion_intensity", d.lesion_intensity);
  d.intensity_bias = s.get("intensity_bias", d.intensity_bias);
  d.noise_scale = s.get("noise_scale", d.noise_scale);
  d.noise_smoothing = s.get("noise_smoothing", d.noise_smoothing);
  d.id_prefix = s.get("id_prefix", d.id_prefix);
  s.finish();
  d.validate();
  return d;
}

PreprocessSettings parse_preprocess(Section s, bool split_keys) {
  PreprocessSettings p;
  if (s.has("chunk")) {
    const auto c = array_of<std::size_t>(s.raw("chunk"), s.path("chunk"), 3);
    if (c[0] == 0 || c[1] == 0 || c[2] == 0) throw ConfigError(s.path("chunk") + " extents must be positive");
    p.chunk = {c[0], c[1], c[2]};
  }
  if (s.has("window")) {
    const auto w = array_of<double>(s.raw("window"), s.path("window"), 2);
    if (!(w[0] < w[1])) throw ConfigError(s.path("window") + " needs low < high");
    p.window = {w[0], w[1]};
  }
  p.pad_value = s.get("pad_value", p.pad_value);
  if (split_keys) {
    if (s.has("ratios")) {
      const auto r = array_of<double>(s.raw("ratios"), s.path("ratios"), 3);
      if (r[0] <= 0.0 || r[1] < 0.0 || r[2] < 0.0 || std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) {
        throw ConfigError(s.path("ratios") + " must be nonnegative fractions summing to 1");
      }
      p.ratios = {r[0], r[1], r[2]};
    }
    const auto rule = s.get<std::string>("aggregation", "mean");
    if (rule == "mean") {
      p.aggregation = AggregationRule::mean;
    } else if (rule == "max") {
      p.aggregation = AggregationRule::max;
    } else {
      throw ConfigError(s.path("aggregation") + " must be \"mean\" or \"max\"");
    }
  }
  s.finish();
  return p;
}

ArchitectureSpec parse_architecture(Section s, std::uint64_t* init_seed) {
  ArchitectureSpec a;
  const auto kind = s.get<std::string>("kind", "cnn2");
  if (kind == "cnn2") {
    a.kind = ArchitectureKind::cnn2;
  } else if (kind == "alexnet3d") {
    a.kind = ArchitectureKind::alexnet3d;
  } else {
    throw ConfigError(s.path("kind") + " must be \"cnn2\" or \"alexnet3d\"");
  }
  a.scale = s.get("scale", a.scale);
  if (!(a.scale > 0.0)) throw ConfigError(s.path("scale") + " must be positive");
  if (init_seed) *init_seed = s.get(kInitSeedKey.key, std::uint64_t{0});
  s.finish();
  return a;
}

TrainingConfig parse_training(Section s) {
  TrainingConfig t;
  t.epochs = s.get("epochs", t.epochs);
  t.batch_size = s.get("batch_size", t.batch_size);
  t.learning_rate = s.get("learning_rate", t.learning_rate);
  t.seed = s.get("seed", t.seed);
  s.finish();
  try {
    t.validate();
  } catch (const PreconditionError& e) {
    throw ConfigError(e.what());
  }
  return t;
}

EMConfig parse_em(Section s) {
  EMConfig e;
  e.batch_increment = s.get("batch_increment", e.batch_increment);
  const auto mode = s.get<std::string>("label_mode", "soft");
  if (mode == "soft") {
    e.label_mode = LabelMode::soft;
  } else if (mode == "hard") {
    e.label_mode = LabelMode::hard;
  } else {
    throw ConfigError(s.path("label_mode") + " must be \"soft\" or \"hard\"");
  }
  e.m_step_epochs = s.get("m_step_epochs", e.m_step_epochs);
  const auto mstep = s.get<std::string>("m_step_mode", "warm_start");
  if (mstep == "warm_start") {
    e.m_step_mode = MStepMode::warm_start;
  } else if (mstep == "from_scratch") {
    e.m_step_mode = MStepMode::from_scratch;
  } else {
    throw ConfigError(s.path("m_step_mode") + " must be \"warm_start\" or \"from_scratch\"");
  }
  e.convergence_tolerance = s.get("convergence_tolerance", e.convergence_tolerance);
  e.max_outer_iterations = s.get("max_outer_iterations", e.max_outer_iterations);
  e.seed = s.get("seed", e.seed);
  e.m_step_batch_size = s.get("m_step_batch_size", e.m_step_batch_size);
  e.m_step_learning_rate = s.get("m_step_learning_rate", e.m_step_learning_rate);
  e.initial_m_step = s.get("initial_m_step", e.initial_m_step);
  s.finish();
  try {
    e.validate();
  } catch (const PreconditionError& err) {
    throw ConfigError(err.what());
  }
  return e;
}

ManifestData load_manifest(const fs::path& path) {
  ManifestData m;
  try {
    m.entries = read_manifest(path.string());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  m.base = path.parent_path();
  return m;
}

std::vector<std::vector<double>> read_points(const fs::path& path, std::vector<int>* labels) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open data file " + path.string());
  std::vector<std::vector<double>> points;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> values;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(field, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != field.size()) {
        throw ConfigError(path.string() + " line " + std::to_string(line_no) + ": bad number '" + field + "'");
      }
      values.push_back(v);
    }
    if (labels) {
      if (values.size() < 2 || (values[0] != 0.0 && values[0] != 1.0)) {
        throw ConfigError(path.string() + " line " + std::to_string(line_no) + ": expected label,x1,...");
      }
      labels->push_back(static_cast<int>(values[0]));
      values.erase(values.begin());
    }
    if (!points.empty() && values.size() != points.front().size()) {
      throw ConfigError(path.string() + " line " + std::to_string(line_no) + ": inconsistent dimension");
    }
    points.push_back(std::move(values));
  }
  return points;
}

std::vector<std::vector<double>> nested(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2) throw ConfigError(where + " must hold two vectors");
  return {array_of<double>(v[0], where + "[0]"), array_of<double>(v[1], where + "[1]")};
}

GmmSettings parse_gmm(Section s, const Document& d) {
  GmmSettings g;
  g.unlabeled_points = read_points(resolve(d, s.require<std::string>("unlabeled_data")), nullptr);
  if (s.has("labeled_data")) g.labeled_points = read_points(resolve(d, s.require<std::string>("labeled_data")), &g.labels);
  const auto w = array_of<double>(s.raw("weights"), s.path("weights"), 2);
  g.init.weights = {w[0], w[1]};
  const auto means = nested(s.raw("means"), s.path("means"));
  const auto vars = nested(s.raw("variances"), s.path("variances"));
  g.init.means = {means[0], means[1]};
  g.init.variances = {vars[0], vars[1]};
  g.variance_floor = s.get("variance_floor", g.variance_floor);
  s.finish();
  try {
    g.init.validate(g.variance_floor);
  } catch (const Error& e) {
    throw ConfigError(std::string("gmm: ") + e.what());
  }
  const std::size_t dim = g.init.dim();
  for (const auto* set : {&g.unlabeled_points, &g.labeled_points}) {
    if (!set->empty() && set->front().size() != dim) throw ConfigError("gmm data dimension differs from the means");
  }
  return g;
}

// Samples of a manifest in entry order, one per chunk.
struct ChunkSet {
  std::vector<Tensor> samples;
  std::vector<std::string> patient;
  std::vector<std::size_t> chunk;
  std::vector<int> labels;
};

ChunkSet load_chunks(const ManifestData& m, const PreprocessSettings& p) {
  ChunkSet out;
  for (const auto& e : m.entries) {
    const fs::path file = fs::path(e.relative_path).is_absolute() ? fs::path(e.relative_path) : m.base / e.relative_path;
    Volume v = read_volume(file.string());
    if (v.unit == IntensityUnit::hounsfield) v = normalize_hounsfield(v, p.window);
    for (auto& c : chunk_volume(v, p.chunk, p.pad_value)) {
      out.samples.push_back(std::move(c.voxels));
      out.patient.push_back(e.patient_id);
      out.chunk.push_back(c.index);
      out.labels.push_back(e.label.value_or(-1));
    }
  }
  return out;
}

LabeledSet labeled_of(const ChunkSet& c) {
  LabeledSet s;
  for (std::size_t i = 0; i < c.samples.size(); ++i) s.add(c.samples[i], SoftLabel::one_hot(c.labels[i]));
  return s;
}

void require_labels(const ManifestData& m, const std::string& key, bool labeled) {
  for (const auto& e : m.entries) {
    if (labeled && !e.label) {
      throw ConfigError(key + " lists patient " + e.patient_id +
                        " with label ?; unlabeled patients belong in the em command's unlabeled_manifest");
    }
    if (!labeled && e.label) throw ConfigError(key + " must only contain ? labels (patient " + e.patient_id + ")");
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create output directory " + dir.string());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

GenerateConfig load_generate_config(const fs::path& path, const std::string& out_override) {
  const Document d = read_document(path);
  Section root(d.root, "");
  GenerateConfig c;
  c.domain = parse_domain(root.sub("domain"));
  c.hide_labels = root.get("hide_labels", false);
  c.output = output_dir(root, d, out_override);
  root.finish();
  return c;
}

TrainConfig load_train_config(const fs::path& path, const std::string& out_override) {
  const Document d = read_document(path);
  Section root(d.root, "");
  TrainConfig c;
  c.labeled = load_manifest(resolve(d, root.require<std::string>("labeled_manifest")));
  require_labels(c.labeled, "labeled_manifest", true);
  if (c.labeled.entries.empty()) throw ConfigError("labeled_manifest is empty");
  if (root.has("preprocess")) c.preprocess = parse_preprocess(root.sub("preprocess"), false);
  if (root.has("architecture")) c.architecture = parse_architecture(root.sub("architecture"), &c.init_seed);
  if (root.has("training")) c.training = parse_training(root.sub("training"));
  c.output = output_dir(root, d, out_override);
  root.finish();
  return c;
}

EmRunConfig load_em_config(const fs::path& path, const std::string& out_override) {
  const Document d = read_document(path);
  Section root(d.root, "");
  EmRunConfig c;
  const auto mode = root.get<std::string>("mode", "cnn");
  if (mode == "gmm") {
    c.gmm = true;
    c.gmm_settings = parse_gmm(root.sub("gmm"), d);
  } else if (mode == "cnn") {
    c.labeled = load_manifest(resolve(d, root.require<std::string>("labeled_manifest")));
    require_labels(c.labeled, "labeled_manifest", true);
    if (c.labeled.entries.empty()) throw ConfigError("labeled_manifest is empty");
    c.unlabeled = load_manifest(resolve(d, root.require<std::string>("unlabeled_manifest")));
    require_labels(c.unlabeled, "unlabeled_manifest", false);
    if (root.has("validation_manifest")) {
      c.validation = load_manifest(resolve(d, root.require<std::string>("validation_manifest")));
      require_labels(*c.validation, "validation_manifest", true);
    }
    if (root.has("preprocess")) c.preprocess = parse_preprocess(root.sub("preprocess"), false);
    if (root.has("architecture")) c.architecture = parse_architecture(root.sub("architecture"), &c.init_seed);
  } else {
    throw ConfigError("mode must be \"cnn\" or \"gmm\"");
  }
  c.em = parse_em(root.sub("em"));
  c.output = output_dir(root, d, out_override);
  root.finish();
  return c;
}

MatrixConfig load_matrix_config(const fs::path& path, const std::string& out_override) {
  const Document d = read_document(path);
  Section root(d.root, "");
  MatrixConfig c;
  c.seeds = array_of<std::uint64_t>(root.raw("seeds"), "seeds");
  if (c.seeds.empty()) throw ConfigError("seeds must list at least one seed");
  if (root.has("preprocess")) c.options.preprocess = parse_preprocess(root.sub("preprocess"), true);

  std::map<std::string, DomainSpec> domains;
  {
    const json& j = root.raw("domains");
    if (!j.is_object() || j.empty()) throw ConfigError("domains must be a nonempty object");
    for (const auto& item : j.items()) domains[item.key()] = parse_domain(Section(item.value(), "domains." + item.key()));
  }
  struct Direction {
    std::string name, source, target;
  };
  std::vector<Direction> directions;
  {
    const json& j = root.raw("directions");
    if (!j.is_array() || j.empty()) throw ConfigError("directions must be a nonempty array");
    for (std::size_t i = 0; i < j.size(); ++i) {
      Section s(j[i], "directions[" + std::to_string(i) + "]");
      Direction dir{s.require<std::string>("name"), s.require<std::string>("source"), s.require<std::string>("target")};
      s.finish();
      for (const auto* ref : {&dir.source, &dir.target}) {
        if (!domains.count(*ref)) throw ConfigError(s.path("") + " references unknown domain " + *ref);
      }
      directions.push_back(dir);
    }
  }
  std::vector<ConditionKind> kinds;
  for (const auto& name : array_of<std::string>(root.raw("conditions"), "conditions")) kinds.push_back(condition_from_string(name));
  if (kinds.empty()) throw ConfigError("conditions must list at least one condition");
  std::vector<ArchitectureSpec> archs;
  {
    const json& j = root.raw("architectures");
    if (!j.is_array() || j.empty()) throw ConfigError("architectures must be a nonempty array");
    for (std::size_t i = 0; i < j.size(); ++i) archs.push_back(parse_architecture(Section(j[i], "architectures[" + std::to_string(i) + "]"), nullptr));
  }
  const TrainingConfig training = root.has("training") ? parse_training(root.sub("training")) : TrainingConfig{};
  std::optional<EMConfig> em;
  if (root.has("em")) em = parse_em(root.sub("em"));

  for (const auto& arch : archs) {
    for (const auto& dir : directions) {
      for (ConditionKind kind : kinds) {
        ExperimentCondition cond;
        cond.kind = kind;
        cond.direction = dir.name;
        cond.source = domains.at(dir.source);
        cond.target = domains.at(dir.target);
        cond.architecture = arch;
        cond.training = training;
        cond.em = em;
        if (kind == ConditionKind::semi_supervised_em && !em) {
          throw ConfigError("condition semi_supervised_em needs an em section");
        }
        try {
          cond.validate();
        } catch (const PreconditionError& e) {
          throw ConfigError(e.what());
        }
        c.conditions.push_back(std::move(cond));
      }
    }
  }
  c.output = output_dir(root, d, out_override);
  c.options.trace_dir = root.has("trace_dir") ? resolve(d, root.require<std::string>("trace_dir")).string()
                                              : (c.output / "traces").string();
  root.finish();
  return c;
}

void run_generate(const GenerateConfig& c) {
  ensure_dir(c.output / "volumes");
  std::vector<ManifestEntry> manifest;
  for (const auto& lv : generate_synthetic_domain(c.domain)) {
    const std::string rel = "volumes/" + lv.volume.patient_id + ".ssemvol";
    write_volume(lv.volume, (c.output / rel).string());
    manifest.push_back({lv.volume.patient_id, rel, c.hide_labels ? std::nullopt : std::optional<int>(lv.label)});
  }
  write_manifest(manifest, (c.output / "manifest.csv").string());
  log_info("generate: wrote " + std::to_string(manifest.size()) + " volumes to " + c.output.string());
}

void run_train(const TrainConfig& c) {
  const ChunkSet chunks = load_chunks(c.labeled, c.preprocess);
  const auto base = c.architecture.build(c.preprocess.chunk.tensor_shape(), c.init_seed);
  const auto outcome = train_supervised(*base, labeled_of(chunks), c.training);
  ensure_dir(c.output);
  save_checkpoint(*outcome.classifier, (c.output / "model.ssemckpt").string());
  auto loss = open_out(c.output / "loss.csv");
  loss << "epoch,loss\n";
  for (std::size_t i = 0; i < outcome.loss_history.size(); ++i) loss << i + 1 << ',' << fmt(outcome.loss_history[i]) << '\n';
  log_info("train: final loss " + fmt(outcome.loss_history.back()));
}

void run_em_command(const EmRunConfig& c) {
  std::unique_ptr<Classifier> start;
  LabeledSet labeled, validation;
  UnlabeledPool pool;
  std::vector<std::string> pool_ids;
  if (c.gmm) {
    const auto& g = c.gmm_settings;
    start = std::make_unique<GmmClassifier>(g.init, g.variance_floor);
    const Shape shape{g.init.dim()};
    auto tensor = [&](const std::vector<double>& p) {
      Tensor t(shape);
      for (std::size_t i = 0; i < p.size(); ++i) t[i] = p[i];
      return t;
    };
    for (std::size_t i = 0; i < g.labeled_points.size(); ++i) labeled.add(tensor(g.labeled_points[i]), SoftLabel::one_hot(g.labels[i]));
    for (std::size_t i = 0; i < g.unlabeled_points.size(); ++i) {
      pool.samples.push_back(tensor(g.unlabeled_points[i]));
      pool_ids.push_back(std::to_string(i));
    }
  } else {
    labeled = labeled_of(load_chunks(c.labeled, c.preprocess));
    const ChunkSet unl = load_chunks(c.unlabeled, c.preprocess);
    pool.samples = unl.samples;
    for (std::size_t i = 0; i < unl.samples.size(); ++i) pool_ids.push_back(unl.patient[i] + "," + std::to_string(unl.chunk[i]));
    if (c.validation) validation = labeled_of(load_chunks(*c.validation, c.preprocess));
    start = c.architecture.build(c.preprocess.chunk.tensor_shape(), c.init_seed);
  }
  EMOptions options;
  if (!validation.empty()) options.validation = &validation;
  options.on_iteration = [](const EMState& s, const Classifier&, const Classifier&) {
    log_info("em iteration " + std::to_string(s.t) + " cursor " + std::to_string(s.cursor) + " Q " + fmt(s.q));
  };
  const EMResult result = run_em(*start, labeled, pool, c.em, options);

  ensure_dir(c.output);
  save_checkpoint(*result.classifier, (c.output / "model.ssemckpt").string());
  {
    auto trace = open_out(c.output / "em_trace.csv");
    write_em_trace(result.state, trace);
  }
  auto labels = open_out(c.output / "pool_labels.csv");
  labels << (c.gmm ? "index,p0,p1\n" : "patient_id,chunk,p0,p1\n");
  for (std::size_t i = 0; i < result.final_labels.size(); ++i) {
    labels << pool_ids[i] << ',' << fmt(result.final_labels[i].p0) << ',' << fmt(result.final_labels[i].p1) << '\n';
  }
  if (result.error) throw Error("em failed after " + std::to_string(result.state.t) + " iterations: " + *result.error);
}

ExperimentReport run_matrix(const MatrixConfig& c) {
  ensure_dir(c.output);
  const ExperimentReport report = run_experiment_matrix(c.conditions, c.seeds, c.options);
  emit_table(report, c.output.string());
  std::size_t failed = 0;
  for (const auto& cell : report.cells) failed += cell.error.has_value();
  if (failed == report.cells.size()) throw Error("every matrix cell failed");
  if (failed) log_warn("matrix: " + std::to_string(failed) + " of " + std::to_string(report.cells.size()) + " cells failed");
  return report;
}

std::string help_text(const std::string& command) {
  std::ostringstream o;
  auto section = [&](const std::string& title, const std::vector<KeyDoc>& keys, const KeyDoc* extra = nullptr) {
    o << "  " << title << ":\n";
    for (const auto& k : keys) o << "    " << k.key << "  " << k.doc << '\n';
    if (extra) o << "    " << extra->key << "  " << extra->doc << '\n';
  };
  o << "Config keys (JSON object; unknown keys are rejected; relative paths resolve against the config file):\n";
  if (command == "generate") {
    o << "  output  output directory (or --out); receives volumes/*.ssemvol and manifest.csv\n"
         "  hide_labels  write ? for every manifest label (default false)\n";
    section("domain", kDomainKeys);
  } else if (command == "train") {
    o << "  labeled_manifest  manifest of labeled patients (patient_id,relative_path,label)\n"
         "  output  output directory (or --out); receives model.ssemckpt and loss.csv\n";
    section("preprocess", kPreprocessKeys);
    section("architecture", kArchitectureKeys, &kInitSeedKey);
    section("training", kTrainingKeys);
  } else if (command == "em") {
    o << "  mode  \"cnn\" (default) or \"gmm\"\n"
         "  output  output directory (or --out); receives model.ssemckpt, em_trace.csv, pool_labels.csv\n"
         "  labeled_manifest  cnn mode: manifest of labeled patients\n"
         "  unlabeled_manifest  cnn mode: manifest whose labels are all ?\n"
         "  validation_manifest  cnn mode, optional: labeled patients for the trace's validation column\n";
    section("preprocess (cnn mode)", kPreprocessKeys);
    section("architecture (cnn mode)", kArchitectureKeys, &kInitSeedKey);
    section("gmm (gmm mode)", kGmmKeys);
    section("em", kEmKeys);
  } else if (command == "matrix") {
    o << "  output  output directory (or --out); receives report.txt and report.csv\n"
         "  trace_dir  EM trace directory (default <output>/traces)\n"
         "  seeds  array of run seeds\n"
         "  domains  object mapping a name to a domain section\n"
         "  directions  array of {name, source, target}; source and target name domains\n"
         "  conditions  array of supervised_source_only, semi_supervised_em, supervised_source_plus_target\n"
         "  architectures  array of architecture sections\n";
    section("domains.<name>", kDomainKeys);
    std::vector<KeyDoc> pre = kPreprocessKeys;
    pre.insert(pre.end(), kSplitKeys.begin(), kSplitKeys.end());
    section("preprocess", pre);
    section("architectures[i]", kArchitectureKeys);
    section("training", kTrainingKeys);
    section("em (required by semi_supervised_em)", kEmKeys);
  }
  return o.str();
}

int main_entry(int argc, char** argv) {
  CLI::App app{"Semi-supervised EM for volumetric CT classification"};
  app.require_subcommand(1);
  std::string config, out;
  bool quiet = false;
  for (const char* name : {"generate", "train", "em", "matrix"}) {
    static const std::map<std::string, std::string> summary = {
        {"generate", "write a synthetic domain as volume files and a manifest"},
        {"train", "supervised training from a labeled manifest"},
        {"em", "semi-supervised EM from labeled and unlabeled manifests, or a GMM on points"},
        {"matrix", "run the cross-domain experiment matrix and write the report"},
    };
    auto* sub = app.add_subcommand(name, summary.at(name));
    sub->add_option("--config", config, "configuration file (JSON)")->required();
    sub->add_option("--out", out, "output directory, overrides the output key");
    sub->add_flag("--quiet", quiet, "only print errors");
    sub->footer(help_text(name));
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  set_log_level(quiet ? LogLevel::quiet : LogLevel::info);
  const std::string command = app.get_subcommands().front()->get_name();

  std::function<void()> run;
  try {
    if (command == "generate") {
      run = [c = load_generate_config(config, out)] { run_generate(c); };
    } else if (command == "train") {
      run = [c = load_train_config(config, out)] { run_train(c); };
    } else if (command == "em") {
      run = [c = load_em_config(config, out)] { run_em_command(c); };
    } else {
      run = [c = load_matrix_config(config, out), quiet] {
        const auto report = run_matrix(c);
        if (!quiet) std::cout << format_table(report);
      };
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  try {
    run();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace ssem::cli
