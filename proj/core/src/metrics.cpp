#include "cdpad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cdpad {

namespace {

void check_both_classes(const ScoreSet& scores) {
  bool has_bonafide = false, has_attack = false;
  for (const auto& r : scores.records) {
    if (r.label == PadClass::Bonafide) has_bonafide = true;
    else has_attack = true;
  }
  require(has_bonafide && has_attack, ErrorCode::Data,
          "score set needs at least one bonafide and one attack sample");
}

}  // namespace

Rates error_rates(const ScoreSet& scores, double tau) {
  check_both_classes(scores);
  std::int64_t fp = 0, tn = 0, fn = 0, tp = 0;
  for (const auto& r : scores.records) {
    const bool accepted = r.score > tau;
    if (r.label == PadClass::Attack) {
      accepted ? ++fp : ++tn;
    } else {
      accepted ? ++tp : ++fn;
    }
  }
  Rates rates;
  rates.apcer = static_cast<double>(fp) / static_cast<double>(fp + tn);
  rates.bpcer = static_cast<double>(fn) / static_cast<double>(fn + tp);
  rates.acer = 0.5 * (rates.apcer + rates.bpcer);
  return rates;
}

std::vector<double> threshold_grid(const ScoreSet& scores) {
  require(!scores.records.empty(), ErrorCode::Data, "empty score set");
  std::vector<double> s;
  s.reserve(scores.records.size());
  for (const auto& r : scores.records) s.push_back(r.score);
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());

  std::vector<double> grid;
  grid.reserve(s.size() + 1);
  grid.push_back(s.front() - 1.0);  // accepts everything
  for (std::size_t i = 0; i + 1 < s.size(); ++i)
    grid.push_back(0.5 * (s[i] + s[i + 1]));
  grid.push_back(s.back());  // rejects everything (strict >)
  return grid;
}

OperatingPoint bpcer_at_apcer(const ScoreSet& scores, double alpha) {
  require(alpha > 0.0 && alpha < 1.0, ErrorCode::InvalidArgument,
          "alpha must lie in (0,1)");
  check_both_classes(scores);
  OperatingPoint best;
  best.bpcer = 1.0;
  bool found = false;
  for (double tau : threshold_grid(scores)) {
    const Rates r = error_rates(scores, tau);
    if (r.apcer <= alpha && (!found || r.bpcer < best.bpcer)) {
      best.bpcer = r.bpcer;
      best.tau = tau;
      found = true;
    }
  }
  return best;
}

double roc_auc(const ScoreSet& scores) {
  check_both_classes(scores);
  // midrank statistic: ties counted 1/2
  std::vector<std::pair<double, PadClass>> s;
  s.reserve(scores.records.size());
  for (const auto& r : scores.records) s.emplace_back(r.score, r.label);
  std::sort(s.begin(), s.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  double rank_sum_bonafide = 0.0;
  std::int64_t n_bonafide = 0, n_attack = 0;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t j = i;
    while (j < s.size() && s[j].first == s[i].first) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) {
      if (s[k].second == PadClass::Bonafide) {
        rank_sum_bonafide += midrank;
        ++n_bonafide;
      } else {
        ++n_attack;
      }
    }
    i = j;
  }
  const double u = rank_sum_bonafide -
                   static_cast<double>(n_bonafide) * (static_cast<double>(n_bonafide) + 1.0) / 2.0;
  return u / (static_cast<double>(n_bonafide) * static_cast<double>(n_attack));
}

MetricReport compute_metric_report(const ScoreSet& scores) {
  check_both_classes(scores);
  MetricReport report;
  report.threshold = threshold_grid(scores);
  report.apcer.reserve(report.threshold.size());
  report.bpcer.reserve(report.threshold.size());
  report.acer.reserve(report.threshold.size());
  for (double tau : report.threshold) {
    const Rates r = error_rates(scores, tau);
    report.apcer.push_back(r.apcer);
    report.bpcer.push_back(r.bpcer);
    report.acer.push_back(r.acer);
    report.min_acer = std::min(report.min_acer, r.acer);
  }
  const OperatingPoint p1 = bpcer_at_apcer(scores, 0.01);
  const OperatingPoint p5 = bpcer_at_apcer(scores, 0.05);
  report.bpcer_at_1 = p1.bpcer;
  report.tau_at_1 = p1.tau;
  report.bpcer_at_5 = p5.bpcer;
  report.tau_at_5 = p5.tau;
  report.auc = roc_auc(scores);
  return report;
}

Aggregate aggregate_values(const std::vector<double>& values) {
  require(!values.empty(), ErrorCode::Data, "aggregate over empty value list");
  Aggregate agg;
  agg.count = static_cast<int>(values.size());
  for (double v : values) agg.mean += v;
  agg.mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - agg.mean) * (v - agg.mean);
  agg.stddev = std::sqrt(ss / static_cast<double>(values.size()));
  return agg;
}

void write_score_file(const std::string& path, const ScoreSet& scores) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::Io, "cannot open score file for writing: " + path);
  out.precision(9);
  for (const auto& r : scores.records) {
    out << r.id << " " << r.score << " " << pad_class_name(r.label) << " "
        << r.category << " " << r.split << "\n";
  }
  require(out.good(), ErrorCode::Io, "failed writing score file: " + path);
}

ScoreSet read_score_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::Io, "cannot open score file: " + path);
  ScoreSet scores;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ScoreRecord r;
    std::string label;
    ls >> r.id >> r.score >> label >> r.category >> r.split;
    require(!ls.fail(), ErrorCode::Format, "malformed score line: " + line);
    if (label == "bonafide") r.label = PadClass::Bonafide;
    else if (label == "attack") r.label = PadClass::Attack;
    else fail(ErrorCode::Format, "unknown class label '" + label + "'");
    scores.records.push_back(std::move(r));
  }
  return scores;
}

std::string metric_report_to_json(const MetricReport& report) {
  nlohmann::json j;
  j["threshold"] = report.threshold;
  j["apcer"] = report.apcer;
  j["bpcer"] = report.bpcer;
  j["acer"] = report.acer;
  j["bpcer_at_1"] = report.bpcer_at_1;
  j["bpcer_at_5"] = report.bpcer_at_5;
  j["tau_at_1"] = report.tau_at_1;
  j["tau_at_5"] = report.tau_at_5;
  j["auc"] = report.auc;
  j["min_acer"] = report.min_acer;
  return j.dump(2);
}

void write_metric_report(const std::string& path, const MetricReport& report) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::Io, "cannot open report file for writing: " + path);
  out << metric_report_to_json(report) << "\n";
  require(out.good(), ErrorCode::Io, "failed writing report file: " + path);
}

}  // namespace cdpad
