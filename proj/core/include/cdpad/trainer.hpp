#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cdpad/backbone.hpp"
#include "cdpad/checkpoint.hpp"
#include "cdpad/dda.hpp"
#include "cdpad/metrics.hpp"
#include "cdpad/regularizers.hpp"
#include "cdpad/rng.hpp"
#include "cdpad/synthdata.hpp"
#include "cdpad/tensor.hpp"

namespace cdpad {

enum class RegularizerVariant { None, Mmd, Dil, Idr };

inline const char* variant_name(RegularizerVariant v) {
  switch (v) {
    case RegularizerVariant::None: return "none";
    case RegularizerVariant::Mmd: return "mmd";
    case RegularizerVariant::Dil: return "dil";
    case RegularizerVariant::Idr: return "idr";
  }
  return "?";
}

inline RegularizerVariant variant_from_string(const std::string& s) {
  if (s == "none") return RegularizerVariant::None;
  if (s == "mmd") return RegularizerVariant::Mmd;
  if (s == "dil") return RegularizerVariant::Dil;
  if (s == "idr") return RegularizerVariant::Idr;
  fail(ErrorCode::Config, "unknown regularizer variant '" + s + "'");
}

struct PhaseConfig {
  int epochs = 30;
  int batch_size = 16;
  float learning_rate = 1e-4f;
  int patience = 5;  // early stopping on dev ACER
  RegularizerVariant variant = RegularizerVariant::None;
  float lambda_weight = 1.0f;
  std::uint64_t seed = 0;
};

struct PhaseLog {
  std::vector<double> total_loss;  // per-epoch means
  std::vector<double> task_loss;
  std::vector<double> reg_loss;
  std::vector<double> dev_metric;  // dev ACER (or 1-accuracy for the domain stage)
  int best_epoch = -1;
  int epochs_run = 0;
};

/// All mutable training state: the shared backbone, the heads, and the
/// adaptation subnet (once attached). The source stream reuses the backbone
/// weights; there is exactly one copy of every parameter.
struct TrainState {
  BackboneConfig backbone_config;
  SubnetConfig subnet_config;  // type None until a subnet is attached
  std::uint64_t seed = 0;

  BackboneModelT<float> backbone;
  HeadsT<float> heads;
  std::optional<DdaSubnetworkT<float>> subnet;

  bool phase1_done = false;
  bool domain_trained = false;
  std::vector<PadClass> target_labels_seen;

  bool has_subnet() const {
    return subnet.has_value() && subnet->config.type != SubnetType::None;
  }
};

TrainState make_train_state(const BackboneConfig& config, std::uint64_t seed);

/// Builds the subnet for the tap's channel count and splices it into the
/// source stream (backbone frozen, subnet trainable).
void attach_subnet(TrainState& state, SubnetType type, TapId tap);

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

Tensor flip_horizontal(const Tensor& image);
Tensor rotate_bilinear(const Tensor& image, double degrees);

/// Horizontal flip with p=0.5 followed by a uniform rotation in
/// [-10, +10] degrees (bilinear, zeros outside the frame).
Tensor augment_image(const Tensor& image, Rng& rng);

// ---------------------------------------------------------------------------
// phases
// ---------------------------------------------------------------------------

/// Phase 1: trains backbone + PAD head on target-domain imagery with BCE,
/// early stopping on dev ACER (weights restored to the best epoch).
PhaseLog train_target_phase(TrainState& state, const SyntheticDataset& data,
                            const PhaseConfig& config);

/// Phase 2: CD-PAD adaptation. Only the subnet trains, against the frozen
/// target-trained classifier, on source imagery.
PhaseLog adapt_source_phase(TrainState& state, const SyntheticDataset& data,
                            const PhaseConfig& config);

/// Adaptation with an additional regularizer: L = L_cdpad + lambda * L_variant.
/// With lambda = 0 the trajectory is identical to adapt_source_phase.
PhaseLog adapt_with_regularizer(TrainState& state, const SyntheticDataset& data,
                                const PhaseConfig& config);

/// The IDR prerequisite stage: trains only the domain head to separate
/// source-stream from target-stream embeddings.
PhaseLog train_domain_classifier(TrainState& state, const SyntheticDataset& data,
                                 const PhaseConfig& config);

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

/// Scores one split: images of `domain` through the matching stream
/// (source stream includes the subnet when `use_subnet`). Eval-mode forward.
ScoreSet score_split(TrainState& state, const SyntheticDataset& data, Split split,
                     DomainTag domain, bool use_subnet);

/// Domain-head accuracy over a split (both domains unless filtered).
double domain_accuracy(TrainState& state, const SyntheticDataset& data, Split split,
                       std::optional<DomainTag> only = std::nullopt);

/// Embeddings of a split (rows) plus bonafide flags, for reports.
struct EmbeddingDump {
  std::vector<std::vector<float>> rows;
  std::vector<PadClass> labels;
  std::vector<std::string> ids;
};
EmbeddingDump dump_embeddings(TrainState& state, const SyntheticDataset& data,
                              Split split, DomainTag domain, bool use_subnet);

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

void save_state_checkpoint(const TrainState& state, const std::string& stem,
                           const std::string& phase,
                           const std::string& config_echo_json);

/// Rebuilds a state from a checkpoint manifest (backbone preset, subnet
/// type/tap and seed are recovered from the config echo) and loads values.
TrainState load_state_checkpoint(const std::string& stem, CheckpointInfo* info_out = nullptr);

std::uint64_t frozen_parameter_checksum(const TrainState& state);

}  // namespace cdpad
