#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdpad/error.hpp"

namespace cdpad {

enum class PadClass : std::uint8_t { Attack = 0, Bonafide = 1 };

inline const char* pad_class_name(PadClass c) {
  return c == PadClass::Bonafide ? "bonafide" : "attack";
}

/// One scored sample. Score is the probability of bonafide; the decision
/// rule everywhere is: predict bonafide iff score > tau.
struct ScoreRecord {
  std::string id;
  double score = 0.0;
  PadClass label = PadClass::Attack;
  std::string category = "none";
  std::string split = "test";
};

struct ScoreSet {
  std::vector<ScoreRecord> records;
};

struct Rates {
  double apcer = 0.0;
  double bpcer = 0.0;
  double acer = 0.0;
};

struct OperatingPoint {
  double bpcer = 1.0;
  double tau = 0.0;
};

/// APCER/BPCER/ACER at a fixed threshold.
Rates error_rates(const ScoreSet& scores, double tau);

/// Threshold grid: a point below every score, the midpoints between sorted
/// unique scores, and the maximum score (which rejects everything under the
/// strict accept-above rule). Spans the full operating range.
std::vector<double> threshold_grid(const ScoreSet& scores);

/// Lowest BPCER subject to APCER <= alpha over the threshold grid, with the
/// threshold achieving it. If only full rejection satisfies the constraint
/// the result is BPCER 1.0.
OperatingPoint bpcer_at_apcer(const ScoreSet& scores, double alpha);

/// Probability that a random bonafide outscores a random attack, ties at
/// one half (rank statistic). Agrees with trapezoidal ROC integration.
double roc_auc(const ScoreSet& scores);

struct MetricReport {
  std::vector<double> threshold;  // swept grid
  std::vector<double> apcer;
  std::vector<double> bpcer;
  std::vector<double> acer;
  double bpcer_at_1 = 1.0;
  double bpcer_at_5 = 1.0;
  double tau_at_1 = 0.0;
  double tau_at_5 = 0.0;
  double auc = 0.0;
  double min_acer = 1.0;  // best ACER over the grid (dev-selection metric)
};

MetricReport compute_metric_report(const ScoreSet& scores);

/// Mean and population standard deviation over per-seed values.
struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;
  int count = 0;
};

Aggregate aggregate_values(const std::vector<double>& values);

// score-file io: one record per line "id score label category split"
void write_score_file(const std::string& path, const ScoreSet& scores);
ScoreSet read_score_file(const std::string& path);

std::string metric_report_to_json(const MetricReport& report);
void write_metric_report(const std::string& path, const MetricReport& report);

}  // namespace cdpad
