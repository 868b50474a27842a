#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdpad/backbone.hpp"
#include "cdpad/dda.hpp"
#include "cdpad/synthdata.hpp"
#include "cdpad/trainer.hpp"

namespace cdpad {

/// One declarative key=value file drives a whole experiment: data
/// generation, backbone preset, subnet placement, per-phase training
/// settings, regularizer choice and the seed list. Unknown keys are
/// rejected; paths are validated before any work starts.
struct ExperimentConfig {
  SyntheticConfig synth;
  std::string data_dir = "data/synth";
  std::string out_dir = "runs/default";
  std::vector<std::uint64_t> seeds{7, 8, 9};

  BackboneConfig::Preset preset = BackboneConfig::Preset::Tiny;
  SubnetType subnet_type = SubnetType::Dense;
  TapId subnet_tap = TapId::Pool3;

  RegularizerVariant variant = RegularizerVariant::None;
  float lambda_weight = 1.0f;

  PhaseConfig phase1;
  PhaseConfig phase2;
  PhaseConfig domain_phase;

  BackboneConfig backbone_config() const {
    return preset == BackboneConfig::Preset::Full ? BackboneConfig::full()
                                                  : BackboneConfig::tiny();
  }
};

/// Baseline settings used when a key is absent from the file.
ExperimentConfig default_experiment_config();

ExperimentConfig parse_config_file(const std::string& path);

/// Applies one "key = value" assignment; unknown keys raise config errors.
void apply_config_entry(ExperimentConfig& config, const std::string& key,
                        const std::string& value);

/// CDPAD_OUTPUT_ROOT reroots a relative out_dir under the given directory.
void apply_output_root_override(ExperimentConfig& config);

/// Creates/validates the output directory and the data directory parent;
/// fails before any computation if either is unusable.
void validate_paths(const ExperimentConfig& config, bool need_existing_data);

std::string config_echo_json(const ExperimentConfig& config);

}  // namespace cdpad
