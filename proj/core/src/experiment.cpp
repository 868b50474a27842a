#include "cdpad/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace cdpad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json metric_summary_json(const MetricReport& r) {
  return json{{"bpcer_at_1", r.bpcer_at_1}, {"bpcer_at_5", r.bpcer_at_5},
              {"auc", r.auc},               {"min_acer", r.min_acer},
              {"tau_at_1", r.tau_at_1},     {"tau_at_5", r.tau_at_5}};
}

MetricReport metric_summary_from_json(const json& j) {
  MetricReport r;
  r.bpcer_at_1 = j.value("bpcer_at_1", 1.0);
  r.bpcer_at_5 = j.value("bpcer_at_5", 1.0);
  r.auc = j.value("auc", 0.0);
  r.min_acer = j.value("min_acer", 1.0);
  r.tau_at_1 = j.value("tau_at_1", 0.0);
  r.tau_at_5 = j.value("tau_at_5", 0.0);
  return r;
}

MetricReport evaluate_and_store(TrainState& state, const SyntheticDataset& data,
                                Split split, DomainTag domain, bool use_subnet,
                                const std::string& stem) {
  const ScoreSet scores = score_split(state, data, split, domain, use_subnet);
  write_score_file(stem + "_scores.txt", scores);
  const MetricReport report = compute_metric_report(scores);
  write_metric_report(stem + "_report.json", report);
  return report;
}

void write_embedding_dump(const EmbeddingDump& dump, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::Io, "cannot write embedding dump " + path);
  out.precision(7);
  for (std::size_t i = 0; i < dump.rows.size(); ++i) {
    out << dump.ids[i] << " " << pad_class_name(dump.labels[i]);
    for (float v : dump.rows[i]) out << " " << v;
    out << "\n";
  }
}

std::string method_name(const ExperimentConfig& config) {
  if (config.subnet_type == SubnetType::None) return "source_baseline";
  std::string name = "cdpad";
  if (config.variant != RegularizerVariant::None)
    name += std::string("+") + variant_name(config.variant);
  return name;
}

json seed_result_json(const SeedResult& s) {
  json j;
  j["seed"] = s.seed;
  j["dir"] = s.dir;
  j["baseline"] = metric_summary_json(s.baseline);
  j["target_bound"] = metric_summary_json(s.target_bound);
  j["adapted"] = metric_summary_json(s.adapted);
  j["domain_acc_after_stage"] = s.domain_acc_after_stage;
  j["domain_acc_adapted_source"] = s.domain_acc_adapted_source;
  j["complete"] = s.complete;
  return j;
}

SeedResult seed_result_from_json(const json& j) {
  SeedResult s;
  s.seed = j.value("seed", 0ull);
  s.dir = j.value("dir", "");
  s.baseline = metric_summary_from_json(j.at("baseline"));
  s.target_bound = metric_summary_from_json(j.at("target_bound"));
  s.adapted = metric_summary_from_json(j.at("adapted"));
  s.domain_acc_after_stage = j.value("domain_acc_after_stage", -1.0);
  s.domain_acc_adapted_source = j.value("domain_acc_adapted_source", -1.0);
  s.complete = j.value("complete", false);
  return s;
}

void write_run_record(RunRecord& record, const std::string& path) {
  json j;
  try {
    j["config"] = json::parse(record.config_json);
  } catch (const json::exception&) {
    j["config"] = record.config_json;
  }
  j["method"] = record.method;
  j["wall_seconds"] = record.wall_seconds;
  j["complete"] = record.complete;
  json seeds = json::array();
  for (const auto& s : record.seeds) seeds.push_back(seed_result_json(s));
  j["seeds"] = seeds;
  std::ofstream out(path);
  require(out.good(), ErrorCode::Io, "cannot write run record " + path);
  out << j.dump(2) << "\n";
  require(out.good(), ErrorCode::Io, "failed writing run record " + path);
  record.record_path = path;
}

}  // namespace

SyntheticDataset load_or_generate_dataset(const ExperimentConfig& config) {
  if (fs::exists(fs::path(config.data_dir) / "manifest.json")) {
    return read_dataset(config.data_dir);
  }
  SyntheticDataset data = generate_dataset(config.synth);
  write_dataset(data, config.data_dir);
  return data;
}

RunRecord run_experiment(const ExperimentConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  validate_paths(config, false);
  const SyntheticDataset data = load_or_generate_dataset(config);
  const std::string echo = config_echo_json(config);

  RunRecord record;
  record.config_json = echo;
  record.method = method_name(config);

  bool all_complete = true;
  for (std::uint64_t seed : config.seeds) {
    SeedResult result;
    result.seed = seed;
    const fs::path seed_dir = fs::path(config.out_dir) / ("seed" + std::to_string(seed));
    fs::create_directories(seed_dir);
    result.dir = seed_dir.string();

    TrainState state = make_train_state(config.backbone_config(), seed);

    PhaseConfig phase1 = config.phase1;
    phase1.seed = seed;
    train_target_phase(state, data, phase1);
    save_state_checkpoint(state, (seed_dir / "phase1").string(), "phase1", echo);

    result.target_bound = evaluate_and_store(state, data, Split::Test,
                                             DomainTag::Target, false,
                                             (seed_dir / "target_test").string());
    result.baseline = evaluate_and_store(state, data, Split::Test, DomainTag::Source,
                                         false, (seed_dir / "baseline_test").string());
    write_embedding_dump(
        dump_embeddings(state, data, Split::Test, DomainTag::Source, false),
        (seed_dir / "embeddings_baseline.txt").string());

    if (config.subnet_type != SubnetType::None) {
      attach_subnet(state, config.subnet_type, config.subnet_tap);

      if (config.variant == RegularizerVariant::Idr ||
          config.variant == RegularizerVariant::Dil) {
        PhaseConfig dom = config.domain_phase;
        dom.seed = seed;
        train_domain_classifier(state, data, dom);
        result.domain_acc_after_stage = domain_accuracy(state, data, Split::Test);
      }

      PhaseConfig phase2 = config.phase2;
      phase2.seed = seed;
      phase2.variant = config.variant;
      phase2.lambda_weight = config.lambda_weight;
      adapt_with_regularizer(state, data, phase2);
      save_state_checkpoint(state, (seed_dir / "adapted").string(),
                            std::string("adapt-") + variant_name(config.variant), echo);

      result.adapted = evaluate_and_store(state, data, Split::Test, DomainTag::Source,
                                          true, (seed_dir / "adapted_test").string());
      write_embedding_dump(
          dump_embeddings(state, data, Split::Test, DomainTag::Source, true),
          (seed_dir / "embeddings_adapted.txt").string());
      if (config.variant == RegularizerVariant::Idr) {
        result.domain_acc_adapted_source =
            domain_accuracy(state, data, Split::Test, DomainTag::Source);
      }
    } else {
      result.adapted = result.baseline;
    }
    result.complete = true;
    record.seeds.push_back(std::move(result));
    all_complete = all_complete && record.seeds.back().complete;
  }

  record.complete = all_complete;
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_run_record(record, (fs::path(config.out_dir) / "run_record.json").string());
  return record;
}

RunRecord load_run_record(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::Io, "cannot open run record " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, std::string("bad run record: ") + e.what());
  }
  RunRecord record;
  record.config_json = j.contains("config") ? j["config"].dump() : "{}";
  record.method = j.value("method", "unknown");
  record.wall_seconds = j.value("wall_seconds", 0.0);
  record.complete = j.value("complete", false);
  for (const json& s : j.at("seeds")) record.seeds.push_back(seed_result_from_json(s));
  record.record_path = path;
  return record;
}

// ---------------------------------------------------------------------------
// ablation
// ---------------------------------------------------------------------------

std::string AblationCell::name() const {
  if (type == SubnetType::None) return "none";
  return std::string(subnet_type_name(type)) + "_" + tap_name(*tap);
}

std::vector<AblationCell> ablation_grid() {
  std::vector<AblationCell> cells;
  cells.push_back({SubnetType::None, std::nullopt});
  for (SubnetType type : {SubnetType::Dense, SubnetType::Residual}) {
    for (TapId tap : {TapId::Pool2, TapId::Pool3, TapId::Pool4}) {
      cells.push_back({type, tap});
    }
  }
  return cells;
}

AblationResult run_ablation(const ExperimentConfig& config) {
  validate_paths(config, false);
  const SyntheticDataset data = load_or_generate_dataset(config);
  const std::string echo = config_echo_json(config);
  const fs::path out_root = fs::path(config.out_dir) / "ablation";
  fs::create_directories(out_root);

  AblationResult result;
  for (const AblationCell& cell : ablation_grid()) {
    AblationCellResult cr;
    cr.cell = cell;
    result.cells.push_back(cr);
  }

  for (std::uint64_t seed : config.seeds) {
    const fs::path seed_dir = out_root / ("seed" + std::to_string(seed));
    fs::create_directories(seed_dir);

    TrainState base = make_train_state(config.backbone_config(), seed);
    PhaseConfig phase1 = config.phase1;
    phase1.seed = seed;
    train_target_phase(base, data, phase1);
    save_state_checkpoint(base, (seed_dir / "phase1").string(), "phase1", echo);

    for (auto& cr : result.cells) {
      MetricReport report;
      if (cr.cell.type == SubnetType::None) {
        report = evaluate_and_store(base, data, Split::Test, DomainTag::Source, false,
                                    (seed_dir / "cell_none").string());
      } else {
        TrainState state = base;  // shared phase-1 weights, fresh subnet
        attach_subnet(state, cr.cell.type, *cr.cell.tap);
        PhaseConfig phase2 = config.phase2;
        phase2.seed = seed;
        phase2.variant = RegularizerVariant::None;  // architecture effect only
        adapt_source_phase(state, data, phase2);
        report = evaluate_and_store(
            state, data, Split::Test, DomainTag::Source, true,
            (seed_dir / ("cell_" + cr.cell.name())).string());
      }
      cr.bpcer1_per_seed.push_back(report.bpcer_at_1);
      cr.bpcer5_per_seed.push_back(report.bpcer_at_5);
    }
  }

  json cells_json = json::array();
  std::string csv = "cell,bpcer_at_1_mean,bpcer_at_1_std,bpcer_at_5_mean,"
                    "bpcer_at_5_std,seeds\n";
  for (auto& cr : result.cells) {
    cr.bpcer1 = aggregate_values(cr.bpcer1_per_seed);
    cr.bpcer5 = aggregate_values(cr.bpcer5_per_seed);
    cells_json.push_back({{"cell", cr.cell.name()},
                          {"bpcer_at_1_mean", cr.bpcer1.mean},
                          {"bpcer_at_1_std", cr.bpcer1.stddev},
                          {"bpcer_at_5_mean", cr.bpcer5.mean},
                          {"bpcer_at_5_std", cr.bpcer5.stddev},
                          {"bpcer_at_1_per_seed", cr.bpcer1_per_seed},
                          {"bpcer_at_5_per_seed", cr.bpcer5_per_seed}});
    csv += cr.cell.name() + "," + std::to_string(cr.bpcer1.mean) + "," +
           std::to_string(cr.bpcer1.stddev) + "," + std::to_string(cr.bpcer5.mean) +
           "," + std::to_string(cr.bpcer5.stddev) + "," +
           std::to_string(cr.bpcer1.count) + "\n";
  }

  result.json_path = (out_root / "ablation.json").string();
  result.csv_path = (out_root / "ablation.csv").string();
  {
    json j;
    try {
      j["config"] = json::parse(echo);
    } catch (const json::exception&) {
      j["config"] = echo;
    }
    j["cells"] = cells_json;
    std::ofstream out(result.json_path);
    require(out.good(), ErrorCode::Io, "cannot write ablation summary");
    out << j.dump(2) << "\n";
  }
  {
    std::ofstream out(result.csv_path);
    require(out.good(), ErrorCode::Io, "cannot write ablation csv");
    out << csv;
  }
  return result;
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

namespace {

struct Pca2 {
  std::vector<double> axis1, axis2;  // eigenvectors
  std::vector<std::pair<double, double>> points;
};

Pca2 pca_2d(const std::vector<std::vector<float>>& rows) {
  Pca2 out;
  if (rows.empty()) return out;
  const std::size_t d = rows[0].size();
  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
  for (auto& m : mean) m /= static_cast<double>(rows.size());

  // top-2 principal directions by power iteration with deflation
  auto cov_mul = [&](const std::vector<double>& v) {
    std::vector<double> result(d, 0.0);
    for (const auto& r : rows) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += (r[j] - mean[j]) * v[j];
      for (std::size_t j = 0; j < d; ++j) result[j] += dot * (r[j] - mean[j]);
    }
    return result;
  };
  auto normalize = [&](std::vector<double>& v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 1e-12)
      for (double& x : v) x /= norm;
  };
  auto orthogonalize = [&](std::vector<double>& v, const std::vector<double>& against) {
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += v[j] * against[j];
    for (std::size_t j = 0; j < d; ++j) v[j] -= dot * against[j];
  };

  std::vector<double> v1(d, 0.0), v2(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    v1[j] = std::cos(0.7 * static_cast<double>(j + 1));
    v2[j] = std::sin(1.3 * static_cast<double>(j + 1));
  }
  normalize(v1);
  for (int it = 0; it < 50; ++it) {
    v1 = cov_mul(v1);
    normalize(v1);
  }
  orthogonalize(v2, v1);
  normalize(v2);
  for (int it = 0; it < 50; ++it) {
    v2 = cov_mul(v2);
    orthogonalize(v2, v1);
    normalize(v2);
  }

  out.axis1 = v1;
  out.axis2 = v2;
  for (const auto& r : rows) {
    double x = 0.0, y = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      x += (r[j] - mean[j]) * v1[j];
      y += (r[j] - mean[j]) * v2[j];
    }
    out.points.emplace_back(x, y);
  }
  return out;
}

struct EmbeddingFile {
  std::vector<std::vector<float>> rows;
  std::vector<bool> bonafide;
};

bool read_embedding_file(const std::string& path, EmbeddingFile* out) {
  std::ifstream in(path);
  if (!in.good()) return false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, label;
    ls >> id >> label;
    std::vector<float> row;
    float v;
    while (ls >> v) row.push_back(v);
    if (row.empty()) continue;
    out->rows.push_back(std::move(row));
    out->bonafide.push_back(label == "bonafide");
  }
  return !out->rows.empty();
}

void write_scatter_svg(const std::string& path,
                       const std::vector<std::pair<std::string, EmbeddingFile>>& panels) {
  const double panel_w = 360, panel_h = 360, margin = 40;
  const double width = panels.size() * (panel_w + margin) + margin;
  const double height = panel_h + 2 * margin + 20;
  std::ofstream out(path);
  require(out.good(), ErrorCode::Io, "cannot write scatter svg " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  double x_off = margin;
  for (const auto& [title, file] : panels) {
    const Pca2 pca = pca_2d(file.rows);
    double min_x = 1e30, max_x = -1e30, min_y = 1e30, max_y = -1e30;
    for (const auto& [x, y] : pca.points) {
      min_x = std::min(min_x, x);
      max_x = std::max(max_x, x);
      min_y = std::min(min_y, y);
      max_y = std::max(max_y, y);
    }
    const double span_x = std::max(1e-9, max_x - min_x);
    const double span_y = std::max(1e-9, max_y - min_y);
    out << "<rect x=\"" << x_off << "\" y=\"" << margin << "\" width=\"" << panel_w
        << "\" height=\"" << panel_h << "\" fill=\"none\" stroke=\"#444\"/>\n";
    out << "<text x=\"" << x_off + panel_w / 2 << "\" y=\"" << margin - 10
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
        << title << "</text>\n";
    for (std::size_t i = 0; i < pca.points.size(); ++i) {
      const double px = x_off + 10 + (pca.points[i].first - min_x) / span_x * (panel_w - 20);
      const double py = margin + 10 + (pca.points[i].second - min_y) / span_y * (panel_h - 20);
      const char* color = file.bonafide[i] ? "#1f77b4" : "#d62728";
      out << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"3\" fill=\"" << color
          << "\" fill-opacity=\"0.7\"/>\n";
    }
    x_off += panel_w + margin;
  }
  out << "<text x=\"" << margin << "\" y=\"" << height - 8
      << "\" font-family=\"sans-serif\" font-size=\"12\">blue = bonafide, red = attack"
      << "</text>\n";
  out << "</svg>\n";
}

}  // namespace

ReportFiles emit_report(const std::vector<RunRecord>& records,
                        const std::string& out_dir) {
  require(!records.empty(), ErrorCode::Data, "no run records to report");
  fs::create_directories(out_dir);
  ReportFiles files;
  files.csv_path = (fs::path(out_dir) / "report.csv").string();
  files.summary_path = (fs::path(out_dir) / "report_summary.json").string();

  struct MethodMetrics {
    std::string method;
    std::vector<double> bpcer1, bpcer5, auc, acer;
  };
  std::vector<MethodMetrics> methods;
  auto add_values = [&](const std::string& name,
                        const std::vector<const MetricReport*>& reports) {
    MethodMetrics mm;
    mm.method = name;
    for (const MetricReport* r : reports) {
      mm.bpcer1.push_back(r->bpcer_at_1);
      mm.bpcer5.push_back(r->bpcer_at_5);
      mm.auc.push_back(r->auc);
      mm.acer.push_back(r->min_acer);
    }
    methods.push_back(std::move(mm));
  };

  for (const RunRecord& record : records) {
    std::vector<const MetricReport*> baseline, target, adapted;
    for (const auto& s : record.seeds) {
      baseline.push_back(&s.baseline);
      target.push_back(&s.target_bound);
      adapted.push_back(&s.adapted);
    }
    const std::string tag = record.method;
    add_values(tag + "/visible_baseline", baseline);
    add_values(tag + "/target_upper_bound", target);
    add_values(tag + "/adapted", adapted);
  }

  std::ofstream csv(files.csv_path);
  require(csv.good(), ErrorCode::Io, "cannot write report csv");
  csv << "method,metric,mean,std,seeds\n";
  json summary = json::array();
  auto emit_metric = [&](const MethodMetrics& mm, const std::string& metric,
                         const std::vector<double>& values) {
    const Aggregate agg = aggregate_values(values);
    csv << mm.method << "," << metric << "," << agg.mean << "," << agg.stddev << ","
        << agg.count << "\n";
    summary.push_back({{"method", mm.method},
                       {"metric", metric},
                       {"mean", agg.mean},
                       {"std", agg.stddev},
                       {"seeds", agg.count},
                       {"per_seed", values}});
  };
  for (const auto& mm : methods) {
    emit_metric(mm, "bpcer_at_1", mm.bpcer1);
    emit_metric(mm, "bpcer_at_5", mm.bpcer5);
    emit_metric(mm, "auc", mm.auc);
    emit_metric(mm, "min_acer", mm.acer);
  }
  csv.close();
  {
    std::ofstream out(files.summary_path);
    require(out.good(), ErrorCode::Io, "cannot write report summary");
    out << summary.dump(2) << "\n";
  }

  // optional PCA scatter from the first record's first seed embeddings
  for (const RunRecord& record : records) {
    if (record.seeds.empty()) continue;
    const auto& seed = record.seeds.front();
    EmbeddingFile baseline, adapted;
    const bool has_baseline = read_embedding_file(
        (fs::path(seed.dir) / "embeddings_baseline.txt").string(), &baseline);
    const bool has_adapted = read_embedding_file(
        (fs::path(seed.dir) / "embeddings_adapted.txt").string(), &adapted);
    if (!has_baseline && !has_adapted) continue;
    std::vector<std::pair<std::string, EmbeddingFile>> panels;
    if (has_baseline) panels.emplace_back("visible baseline", std::move(baseline));
    if (has_adapted) panels.emplace_back("adapted source stream", std::move(adapted));
    files.scatter_path = (fs::path(out_dir) / "embedding_scatter.svg").string();
    write_scatter_svg(files.scatter_path, panels);
    break;
  }
  return files;
}

}  // namespace cdpad
