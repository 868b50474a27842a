// Command line driver for the cross-domain PAD laboratory: synthetic data
// generation, phased training, evaluation, the subnet ablation grid, and
// aggregated reports.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cdpad/config.hpp"
#include "cdpad/experiment.hpp"
#include "cdpad/metrics.hpp"
#include "cdpad/synthdata.hpp"
#include "cdpad/trainer.hpp"

namespace fs = std::filesystem;
using namespace cdpad;

namespace {

ExperimentConfig load_config(const std::string& path) {
  ExperimentConfig config = parse_config_file(path);
  return config;
}

void print_metric_summary(const std::string& tag, const MetricReport& r) {
  std::printf("%-28s bpcer@1%%=%.4f bpcer@5%%=%.4f auc=%.4f min_acer=%.4f\n",
              tag.c_str(), r.bpcer_at_1, r.bpcer_at_5, r.auc, r.min_acer);
}

int cmd_generate_data(const std::string& config_path, std::string out_override) {
  ExperimentConfig config = load_config(config_path);
  if (!out_override.empty()) config.data_dir = out_override;
  validate_paths(config, false);
  const SyntheticDataset data = generate_dataset(config.synth);
  write_dataset(data, config.data_dir);
  for (Split s : {Split::Train, Split::Dev, Split::Test}) {
    const SplitStats st = data.stats_of(s);
    std::printf("%-5s  samples=%d bonafide=%d attack=%d identities=%zu\n",
                split_name(s), st.total, st.bonafide, st.attack,
                st.identities.size());
  }
  std::printf("dataset written to %s\n", config.data_dir.c_str());
  return 0;
}

std::string seed_dir(const ExperimentConfig& config, std::uint64_t seed) {
  return (fs::path(config.out_dir) / ("seed" + std::to_string(seed))).string();
}

int cmd_train(const std::string& config_path, const std::string& phase,
              std::uint64_t seed) {
  ExperimentConfig config = load_config(config_path);
  validate_paths(config, phase != "1");
  const SyntheticDataset data = load_or_generate_dataset(config);
  const std::string echo = config_echo_json(config);
  const std::string dir = seed_dir(config, seed);
  fs::create_directories(dir);

  if (phase == "1") {
    TrainState state = make_train_state(config.backbone_config(), seed);
    PhaseConfig p = config.phase1;
    p.seed = seed;
    const PhaseLog log = train_target_phase(state, data, p);
    save_state_checkpoint(state, dir + "/phase1", "phase1", echo);
    std::printf("phase 1 done: epochs=%d best_epoch=%d dev_acer=%.4f -> %s\n",
                log.epochs_run, log.best_epoch,
                log.best_epoch >= 0 ? log.dev_metric[static_cast<std::size_t>(log.best_epoch)] : 1.0,
                (dir + "/phase1.{json,bin}").c_str());
    return 0;
  }

  const std::string phase1_stem = dir + "/phase1";
  require(fs::exists(phase1_stem + ".json"), ErrorCode::State,
          "missing prerequisite checkpoint " + phase1_stem + ".json (run --phase 1)");
  TrainState state = load_state_checkpoint(phase1_stem);
  attach_subnet(state, config.subnet_type, config.subnet_tap);

  RegularizerVariant variant;
  if (phase == "2") variant = RegularizerVariant::None;
  else variant = variant_from_string(phase);

  if (variant == RegularizerVariant::Idr || variant == RegularizerVariant::Dil) {
    PhaseConfig dom = config.domain_phase;
    dom.seed = seed;
    train_domain_classifier(state, data, dom);
    std::printf("domain classifier stage done: held-out accuracy=%.4f\n",
                domain_accuracy(state, data, Split::Test));
  }

  PhaseConfig p = config.phase2;
  p.seed = seed;
  p.variant = variant;
  p.lambda_weight = config.lambda_weight;
  const PhaseLog log = adapt_with_regularizer(state, data, p);
  const std::string stem = dir + "/" + (phase == "2" ? "adapted" : "adapted_" + phase);
  save_state_checkpoint(state, stem, "adapt-" + std::string(variant_name(variant)), echo);
  std::printf("adaptation (%s) done: epochs=%d best_epoch=%d dev_acer=%.4f -> %s\n",
              variant_name(variant), log.epochs_run, log.best_epoch,
              log.best_epoch >= 0 ? log.dev_metric[static_cast<std::size_t>(log.best_epoch)] : 1.0,
              (stem + ".{json,bin}").c_str());
  if (variant == RegularizerVariant::Idr) {
    std::printf("frozen domain head on adapted source: accuracy=%.4f\n",
                domain_accuracy(state, data, Split::Test, DomainTag::Source));
  }
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& split_str,
                 std::string domain_str, std::string data_dir_flag,
                 std::string out_prefix) {
  TrainState state = load_state_checkpoint(checkpoint);

  std::string data_dir = data_dir_flag;
  if (data_dir.empty()) {
    CheckpointInfo info = peek_checkpoint(checkpoint);
    // the config echo carries the experiment data_dir
    const auto pos = info.config_echo_json.find("\"data_dir\"");
    require(pos != std::string::npos, ErrorCode::Config,
            "checkpoint has no data_dir echo; pass --data");
    const auto q1 = info.config_echo_json.find('"', pos + 10 + 1);
    const auto q2 = info.config_echo_json.find('"', q1 + 1);
    data_dir = info.config_echo_json.substr(q1 + 1, q2 - q1 - 1);
  }
  const SyntheticDataset data = read_dataset(data_dir);

  const Split split = split_from_string(split_str);
  DomainTag domain;
  bool use_subnet;
  if (domain_str == "auto") {
    // phase-1 checkpoints evaluate the target stream; adapted ones the source
    use_subnet = state.has_subnet();
    domain = use_subnet ? DomainTag::Source : DomainTag::Target;
  } else if (domain_str == "source") {
    domain = DomainTag::Source;
    use_subnet = state.has_subnet();
  } else if (domain_str == "target") {
    domain = DomainTag::Target;
    use_subnet = false;
  } else {
    fail(ErrorCode::Config, "--domain must be auto, source or target");
  }

  const ScoreSet scores = score_split(state, data, split, domain, use_subnet);
  const MetricReport report = compute_metric_report(scores);
  if (out_prefix.empty()) out_prefix = checkpoint + "_" + split_str;
  write_score_file(out_prefix + "_scores.txt", scores);
  write_metric_report(out_prefix + "_report.json", report);
  print_metric_summary(split_str + "/" + (domain == DomainTag::Source ? "source" : "target"),
                       report);
  std::printf("scores -> %s_scores.txt\nreport -> %s_report.json\n",
              out_prefix.c_str(), out_prefix.c_str());
  return 0;
}

int cmd_run(const std::string& config_path) {
  ExperimentConfig config = load_config(config_path);
  const RunRecord record = run_experiment(config);
  for (const auto& s : record.seeds) {
    std::printf("seed %llu\n", static_cast<unsigned long long>(s.seed));
    print_metric_summary("  visible baseline", s.baseline);
    print_metric_summary("  target upper bound", s.target_bound);
    print_metric_summary("  adapted", s.adapted);
    if (s.domain_acc_after_stage >= 0)
      std::printf("  domain accuracy after stage: %.4f\n", s.domain_acc_after_stage);
    if (s.domain_acc_adapted_source >= 0)
      std::printf("  domain accuracy on adapted source: %.4f\n",
                  s.domain_acc_adapted_source);
  }
  std::printf("run record -> %s (%.1fs)\n", record.record_path.c_str(),
              record.wall_seconds);
  return 0;
}

int cmd_ablate(const std::string& config_path) {
  ExperimentConfig config = load_config(config_path);
  const AblationResult result = run_ablation(config);
  std::printf("%-16s %-22s %-22s\n", "cell", "bpcer@1% (mean+/-std)",
              "bpcer@5% (mean+/-std)");
  for (const auto& c : result.cells) {
    std::printf("%-16s %8.4f +/- %-10.4f %8.4f +/- %-10.4f\n", c.cell.name().c_str(),
                c.bpcer1.mean, c.bpcer1.stddev, c.bpcer5.mean, c.bpcer5.stddev);
  }
  std::printf("csv -> %s\njson -> %s\n", result.csv_path.c_str(),
              result.json_path.c_str());
  return 0;
}

int cmd_report(const std::vector<std::string>& run_paths, const std::string& out_dir) {
  std::vector<RunRecord> records;
  for (const std::string& p : run_paths) {
    const std::string path =
        fs::is_directory(p) ? (fs::path(p) / "run_record.json").string() : p;
    records.push_back(load_run_record(path));
  }
  const ReportFiles files = emit_report(records, out_dir);
  std::printf("csv -> %s\nsummary -> %s\n", files.csv_path.c_str(),
              files.summary_path.c_str());
  if (!files.scatter_path.empty())
    std::printf("embedding scatter -> %s\n", files.scatter_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-domain presentation attack detection laboratory"};
  app.require_subcommand(1);

  std::string config_path, phase = "2", split = "test", domain = "auto";
  std::string checkpoint, data_dir, out_override, out_prefix, report_out = "reports";
  std::uint64_t seed = 7;
  std::vector<std::string> run_paths;

  auto* gen = app.add_subcommand("generate-data", "render the synthetic two-domain dataset");
  gen->add_option("--config", config_path, "experiment config file")->required();
  gen->add_option("--out", out_override, "override the dataset directory");

  auto* train = app.add_subcommand("train", "run one training phase for one seed");
  train->add_option("--config", config_path)->required();
  train->add_option("--phase", phase, "1, 2, idr, dil or mmd")
      ->check(CLI::IsMember({"1", "2", "idr", "dil", "mmd"}));
  train->add_option("--seed", seed);

  auto* eval = app.add_subcommand("evaluate", "score a split with a checkpointed model");
  eval->add_option("--checkpoint", checkpoint, "checkpoint stem (no extension)")->required();
  eval->add_option("--split", split)->check(CLI::IsMember({"train", "dev", "test"}));
  eval->add_option("--domain", domain)->check(CLI::IsMember({"auto", "source", "target"}));
  eval->add_option("--data", data_dir, "dataset directory (defaults to the checkpoint echo)");
  eval->add_option("--out", out_prefix, "output path prefix");

  auto* run = app.add_subcommand("run", "full experiment across the configured seeds");
  run->add_option("--config", config_path)->required();

  auto* ablate = app.add_subcommand("ablate", "subnet type x placement grid");
  ablate->add_option("--config", config_path)->required();

  auto* report = app.add_subcommand("report", "aggregate run records");
  report->add_option("--runs", run_paths, "run record files or run directories")
      ->required()
      ->expected(-1);
  report->add_option("--out", report_out, "report output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate_data(config_path, out_override);
    if (train->parsed()) return cmd_train(config_path, phase, seed);
    if (eval->parsed()) return cmd_evaluate(checkpoint, split, domain, data_dir, out_prefix);
    if (run->parsed()) return cmd_run(config_path);
    if (ablate->parsed()) return cmd_ablate(config_path);
    if (report->parsed()) return cmd_report(run_paths, report_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
