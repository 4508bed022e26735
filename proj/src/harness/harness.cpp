#include "ssem/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssem/cnn.hpp"
#include "ssem/error.hpp"
#include "ssem/log.hpp"

namespace ssem {

double accuracy(std::span<const int> predictions, std::span<const int> truth) {
  if (predictions.size() != truth.size()) throw DimensionError("accuracy: prediction/truth length mismatch");
  if (predictions.empty()) throw PreconditionError("accuracy of an empty sequence");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

PatientDecision aggregate_patient(std::span<const SoftLabel> chunk_probs, AggregationRule rule) {
  if (chunk_probs.empty()) throw PreconditionError("aggregate_patient needs at least one chunk");
  double p1 = 0.0;
  for (const auto& c : chunk_probs) p1 = rule == AggregationRule::max ? std::max(p1, c.p1) : p1 + c.p1;
  if (rule == AggregationRule::mean) p1 /= static_cast<double>(chunk_probs.size());
  return {SoftLabel{1.0 - p1, p1}, p1 > 0.5 ? 1 : 0};
}

const char* to_string(ConditionKind kind) {
  switch (kind) {
    case ConditionKind::supervised_source_only: return "supervised_source_only";
    case ConditionKind::supervised_source_plus_target: return "supervised_source_plus_target";
    case ConditionKind::semi_supervised_em: return "semi_supervised_em";
  }
  return "?";
}

ConditionKind condition_from_string(const std::string& name) {
  for (auto k : {ConditionKind::supervised_source_only, ConditionKind::supervised_source_plus_target,
                 ConditionKind::semi_supervised_em}) {
    if (name == to_string(k)) return k;
  }
  throw ConfigError("unknown condition '" + name + "'");
}

std::string ArchitectureSpec::name() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s(%g)", kind == ArchitectureKind::cnn2 ? "cnn2" : "alexnet3d", scale);
  return buf;
}

std::unique_ptr<Classifier> ArchitectureSpec::build(const Shape& input_shape, std::uint64_t seed) const {
  if (kind == ArchitectureKind::cnn2) return std::make_unique<CnnClassifier>(build_cnn2(input_shape, seed, scale));
  return std::make_unique<CnnClassifier>(build_alexnet3d(input_shape, scale, seed));
}

void ExperimentCondition::validate() const {
  source.validate();
  target.validate();
  training.validate();
  if (kind == ConditionKind::semi_supervised_em) {
    if (!em) throw ConfigError("semi_supervised_em condition requires an EM configuration");
    em->validate();
  }
}

LabeledSet PreparedDomain::labeled(std::span<const std::size_t> patients) const {
  LabeledSet set;
  for (std::size_t p : patients) {
    for (const auto& c : chunks[p]) set.add(c, SoftLabel::one_hot(labels[p]));
  }
  return set;
}

UnlabeledPool PreparedDomain::unlabeled(std::span<const std::size_t> patients) const {
  UnlabeledPool pool;
  for (std::size_t p : patients) {
    for (const auto& c : chunks[p]) pool.samples.push_back(c);
  }
  return pool;
}

PreparedDomain prepare_domain(const DomainSpec& spec, const PreprocessSettings& settings, std::uint64_t split_seed) {
  auto volumes = generate_synthetic_domain(spec);
  PreparedDomain d;
  d.chunks.resize(volumes.size());
  const auto n = static_cast<std::ptrdiff_t>(volumes.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Volume normalized = normalize_hounsfield(volumes[k].volume, settings.window);
    for (auto& c : chunk_volume(normalized, settings.chunk, settings.pad_value)) d.chunks[k].push_back(std::move(c.voxels));
  }
  for (const auto& v : volumes) {
    d.patient_ids.push_back(v.volume.patient_id);
    d.labels.push_back(v.label);
  }
  d.split = split_dataset(d.patient_ids, settings.ratios, split_seed);
  return d;
}

double patient_accuracy(const Classifier& classifier, const PreparedDomain& domain,
                        std::span<const std::size_t> patients, AggregationRule rule) {
  std::vector<int> predicted, truth;
  for (std::size_t p : patients) {
    const auto probs = classifier.predict_proba(domain.chunks[p]);
    predicted.push_back(aggregate_patient(probs, rule).label);
    truth.push_back(domain.labels[p]);
  }
  return accuracy(predicted, truth);
}

namespace {

std::string spec_key(const DomainSpec& s) {
  std::ostringstream k;
  k.precision(17);
  k << s.seed << '|' << s.patient_count << '|' << s.prevalence << '|' << s.slices_low << '|' << s.slices_high << '|'
    << s.slice_height << '|' << s.slice_width << '|' << s.slice_thickness_mm << '|' << s.background_hu << '|'
    << s.lesion_radius << '|' << s.lesion_intensity << '|' << s.intensity_bias << '|' << s.noise_scale << '|' << s.noise_smoothing << '|'
    << s.id_prefix;
  return k.str();
}

std::string file_safe(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '_') c = '_';
  }
  return s;
}

}  // namespace

ExperimentReport run_experiment_matrix(std::span<const ExperimentCondition> conditions,
                                       std::span<const std::uint64_t> seeds, const MatrixOptions& options) {
  if (conditions.empty()) throw PreconditionError("experiment matrix needs at least one condition");
  if (seeds.empty()) throw PreconditionError("experiment matrix needs at least one seed");
  ExperimentReport report;
  report.seeds.assign(seeds.begin(), seeds.end());
  if (!options.trace_dir.empty()) std::filesystem::create_directories(options.trace_dir);
  const Shape input = options.preprocess.chunk.tensor_shape();

  for (std::uint64_t seed : seeds) {
    std::map<std::string, PreparedDomain> domains;
    auto domain_for = [&](const DomainSpec& base) -> const PreparedDomain& {
      const std::string key = spec_key(base);
      auto it = domains.find(key);
      if (it == domains.end()) {
        DomainSpec spec = base;
        spec.seed = mix_seed(base.seed, seed);
        it = domains.emplace(key, prepare_domain(spec, options.preprocess, mix_seed(seed, base.seed))).first;
      }
      return it->second;
    };
    // Source-only models double as the EM starting point of the same cell row.
    std::map<std::string, std::unique_ptr<Classifier>> source_models;

    for (const auto& cond : conditions) {
      ExperimentCell cell{cond.architecture.name(), cond.direction, cond.kind, seed, 0.0, std::nullopt, {}};
      const std::string tag = cell.architecture + " " + cell.direction + " " + to_string(cond.kind) + " seed " +
                              std::to_string(seed);
      try {
        cond.validate();
        const PreparedDomain& src = domain_for(cond.source);
        const PreparedDomain& tgt = domain_for(cond.target);
        TrainingConfig training = cond.training;
        training.seed = mix_seed(seed, cond.training.seed);
        const std::uint64_t init_seed = mix_seed(seed, 0x5EEDULL);
        const std::string row_key = spec_key(cond.source) + "#" + spec_key(cond.target) + "#" + cell.architecture +
                                    "#" + std::to_string(training.epochs) + "#" + std::to_string(training.batch_size) +
                                    "#" + std::to_string(training.learning_rate) + "#" + std::to_string(training.seed);
        const LabeledSet source_train = src.labeled(src.split.train);

        auto source_only = [&]() -> const Classifier& {
          auto it = source_models.find(row_key);
          if (it == source_models.end()) {
            auto base = cond.architecture.build(input, init_seed);
            it = source_models.emplace(row_key, train_supervised(*base, source_train, training).classifier).first;
          }
          return *it->second;
        };

        std::unique_ptr<Classifier> model;
        switch (cond.kind) {
          case ConditionKind::supervised_source_only: model = source_only().clone(); break;
          case ConditionKind::supervised_source_plus_target: {
            LabeledSet both = source_train;
            both.append(tgt.labeled(tgt.split.train));
            auto base = cond.architecture.build(input, init_seed);
            model = train_supervised(*base, both, training).classifier;
            break;
          }
          case ConditionKind::semi_supervised_em: {
            EMConfig em = *cond.em;
            em.seed = mix_seed(seed, em.seed);
            em.initial_m_step = false;
            const UnlabeledPool pool = tgt.unlabeled(tgt.split.train);
            if (pool.empty()) throw PreconditionError("semi_supervised_em needs a nonempty target pool");
            const LabeledSet validation = src.labeled(src.split.validation);
            EMOptions em_options;
            em_options.validation = &validation;
            auto result = run_em(source_only(), source_train, pool, em, em_options);
            if (!options.trace_dir.empty()) {
              cell.trace_path = (std::filesystem::path(options.trace_dir) /
                                 ("em_" + file_safe(cell.architecture + "_" + cell.direction) + "_seed" +
                                  std::to_string(seed) + ".csv"))
                                    .string();
              std::ofstream trace(cell.trace_path, std::ios::trunc);
              write_em_trace(result.state, trace);
            }
            if (result.error) throw Error("EM failed: " + *result.error);
            model = std::move(result.classifier);
            break;
          }
        }
        cell.accuracy = patient_accuracy(*model, tgt, tgt.split.test, options.preprocess.aggregation);
        log_info("[" + tag + "] accuracy " + std::to_string(cell.accuracy));
      } catch (const std::exception& e) {
        cell.error = e.what();
        log_warn("[" + tag + "] failed: " + std::string(e.what()));
      }
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

std::vector<CellSummary> ExperimentReport::summarize() const {
  std::vector<CellSummary> out;
  std::vector<std::vector<double>> values;
  for (const auto& c : cells) {
    auto it = std::find_if(out.begin(), out.end(), [&](const CellSummary& s) {
      return s.architecture == c.architecture && s.direction == c.direction && s.condition == c.condition;
    });
    if (it == out.end()) {
      out.push_back({c.architecture, c.direction, c.condition, 0.0, 0.0, 0});
      values.emplace_back();
      it = out.end() - 1;
    }
    if (!c.error) values[static_cast<std::size_t>(it - out.begin())].push_back(c.accuracy);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& v = values[i];
    out[i].count = v.size();
    if (v.empty()) continue;
    double sum = 0.0;
    for (double x : v) sum += x;
    out[i].mean = sum / static_cast<double>(v.size());
    double sq = 0.0;
    for (double x : v) sq += (x - out[i].mean) * (x - out[i].mean);
    out[i].stddev = v.size() > 1 ? std::sqrt(sq / static_cast<double>(v.size() - 1)) : 0.0;
  }
  return out;
}

std::optional<CellSummary> ExperimentReport::find(const std::string& architecture, const std::string& direction,
                                                  ConditionKind condition) const {
  for (const auto& s : summarize()) {
    if (s.architecture == architecture && s.direction == direction && s.condition == condition) return s;
  }
  return std::nullopt;
}

std::string format_table(const ExperimentReport& report) {
  const auto summary = report.summarize();
  std::vector<std::pair<std::string, std::string>> rows;
  std::vector<ConditionKind> columns;
  for (const auto& s : summary) {
    if (std::find(rows.begin(), rows.end(), std::make_pair(s.architecture, s.direction)) == rows.end()) {
      rows.emplace_back(s.architecture, s.direction);
    }
    if (std::find(columns.begin(), columns.end(), s.condition) == columns.end()) columns.push_back(s.condition);
  }
  std::sort(columns.begin(), columns.end());

  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"architecture", "direction"};
  for (auto c : columns) header.emplace_back(to_string(c));
  grid.push_back(header);
  for (const auto& [arch, dir] : rows) {
    std::vector<std::string> line{arch, dir};
    for (auto c : columns) {
      std::string text = "-";
      for (const auto& s : summary) {
        if (s.architecture == arch && s.direction == dir && s.condition == c) {
          char buf[64];
          if (s.count == 0) std::snprintf(buf, sizeof buf, "failed");
          else std::snprintf(buf, sizeof buf, "%.4f +/- %.4f (n=%zu)", s.mean, s.stddev, s.count);
          text = buf;
        }
      }
      line.push_back(text);
    }
    grid.push_back(line);
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) widths[i] = std::max(widths[i], line[i].size());
  }
  std::ostringstream out;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t i = 0; i < grid[r].size(); ++i) {
      out << grid[r][i];
      if (i + 1 < grid[r].size()) out << std::string(widths[i] - grid[r][i].size() + 2, ' ');
    }
    out << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : widths) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  return out.str();
}

std::string format_report_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << "architecture,direction,condition,seed,accuracy\n";
  char buf[32];
  for (const auto& c : report.cells) {
    out << c.architecture << ',' << c.direction << ',' << to_string(c.condition) << ',' << c.seed << ',';
    if (c.error) {
      out << "error\n";
    } else {
      std::snprintf(buf, sizeof buf, "%.4f", c.accuracy);
      out << buf << '\n';
    }
  }
  return out.str();
}

ExperimentReport parse_report_csv(std::istream& in) {
  ExperimentReport report;
  std::string line;
  if (!std::getline(in, line) || line != "architecture,direction,condition,seed,accuracy") {
    throw FormatError(FormatError::Kind::malformed, "report csv header mismatch");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string part; std::getline(ss, part, ',');) f.push_back(part);
    if (f.size() != 5) throw FormatError(FormatError::Kind::malformed, "report csv row needs 5 fields: " + line);
    ExperimentCell c;
    c.architecture = f[0];
    c.direction = f[1];
    c.condition = condition_from_string(f[2]);
    c.seed = std::stoull(f[3]);
    if (f[4] == "error") c.error = "error";
    else c.accuracy = std::stod(f[4]);
    if (std::find(report.seeds.begin(), report.seeds.end(), c.seed) == report.seeds.end()) report.seeds.push_back(c.seed);
    report.cells.push_back(std::move(c));
  }
  return report;
}

EmittedReport emit_table(const ExperimentReport& report, const std::string& out_dir) {
  EmittedReport emitted{format_table(report), format_report_csv(report)};
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(std::filesystem::path(out_dir) / "report.txt", std::ios::trunc) << emitted.table;
    std::ofstream(std::filesystem::path(out_dir) / "report.csv", std::ios::trunc) << emitted.csv;
  }
  return emitted;
}

}  // namespace ssem
