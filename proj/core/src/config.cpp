#include "cdpad/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cdpad {

namespace fs = std::filesystem;
using nlohmann::json;

ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  c.phase1.epochs = 30;
  c.phase1.batch_size = 16;
  c.phase1.learning_rate = 1e-4f;
  c.phase1.patience = 5;
  c.phase2.epochs = 60;
  c.phase2.batch_size = 16;
  c.phase2.learning_rate = 3e-4f;
  c.phase2.patience = 15;
  c.domain_phase.epochs = 12;
  c.domain_phase.batch_size = 32;
  c.domain_phase.learning_rate = 1e-3f;
  c.domain_phase.patience = 4;
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    require(pos == value.size(), ErrorCode::Config, "trailing junk");
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail(ErrorCode::Config, "key '" + key + "' needs a number, got '" + value + "'");
  }
}

int parse_int(const std::string& key, const std::string& value) {
  const double v = parse_double(key, value);
  const int i = static_cast<int>(v);
  require(static_cast<double>(i) == v, ErrorCode::Config,
          "key '" + key + "' needs an integer, got '" + value + "'");
  return i;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(value, &pos);
    require(pos == value.size(), ErrorCode::Config, "trailing junk");
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail(ErrorCode::Config,
         "key '" + key + "' needs a non-negative integer, got '" + value + "'");
  }
}

}  // namespace

void apply_config_entry(ExperimentConfig& c, const std::string& key,
                        const std::string& value) {
  using Setter = std::function<void(ExperimentConfig&, const std::string&)>;
  auto phase_keys = [](const std::string& prefix, PhaseConfig ExperimentConfig::*phase) {
    std::map<std::string, Setter> m;
    m[prefix + ".epochs"] = [phase, prefix](ExperimentConfig& c, const std::string& v) {
      (c.*phase).epochs = parse_int(prefix + ".epochs", v);
    };
    m[prefix + ".batch_size"] = [phase, prefix](ExperimentConfig& c, const std::string& v) {
      (c.*phase).batch_size = parse_int(prefix + ".batch_size", v);
    };
    m[prefix + ".learning_rate"] = [phase, prefix](ExperimentConfig& c, const std::string& v) {
      (c.*phase).learning_rate =
          static_cast<float>(parse_double(prefix + ".learning_rate", v));
    };
    m[prefix + ".patience"] = [phase, prefix](ExperimentConfig& c, const std::string& v) {
      (c.*phase).patience = parse_int(prefix + ".patience", v);
    };
    return m;
  };

  static const std::map<std::string, Setter> setters = [&phase_keys] {
    std::map<std::string, Setter> m;
    m["data_dir"] = [](ExperimentConfig& c, const std::string& v) { c.data_dir = v; };
    m["out_dir"] = [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; };
    m["seeds"] = [](ExperimentConfig& c, const std::string& v) {
      c.seeds.clear();
      std::istringstream ss(v);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) c.seeds.push_back(parse_u64("seeds", tok));
      }
      require(!c.seeds.empty(), ErrorCode::Config, "seeds list is empty");
    };
    m["synth.image_size"] = [](ExperimentConfig& c, const std::string& v) {
      c.synth.image_size = parse_int("synth.image_size", v);
    };
    m["synth.identities_train"] = [](ExperimentConfig& c, const std::string& v) {
      c.synth.identities_train = parse_int("synth.identities_train", v);
    };
    m["synth.identities_dev"] = [](ExperimentConfig& c, const std::string& v) {
      c.synth.identities_dev = parse_int("synth.identities_dev", v);
    };
    m["synth.identities_test"] = [](ExperimentConfig& c, const std::string& v) {
      c.synth.identities_test = parse_int("synth.identities_test", v);
    };
    m["synth.samples_per_identity"] = [](ExperimentConfig& c, const std::string& v) {
      c.synth.samples_per_identity = parse_int("synth.samples_per_identity", v);
    };
    m["synth.mix_disguise"] = [](ExperimentConfig& c, const std::string& v) {
      c.synth.category_mix[0] = parse_double("synth.mix_disguise", v);
    };
    m["synth.mix_fake_face"] = [](ExperimentConfig& c, const std::string& v) {
      c.synth.category_mix[1] = parse_double("synth.mix_fake_face", v);
    };
    m["synth.mix_photo"] = [](ExperimentConfig& c, const std::string& v) {
      c.synth.category_mix[2] = parse_double("synth.mix_photo", v);
    };
    m["synth.mix_video"] = [](ExperimentConfig& c, const std::string& v) {
      c.synth.category_mix[3] = parse_double("synth.mix_video", v);
    };
    m["synth.source_margin"] = [](ExperimentConfig& c, const std::string& v) {
      c.synth.source_margin = parse_double("synth.source_margin", v);
    };
    m["synth.target_margin"] = [](ExperimentConfig& c, const std::string& v) {
      c.synth.target_margin = parse_double("synth.target_margin", v);
    };
    m["synth.noise_level"] = [](ExperimentConfig& c, const std::string& v) {
      c.synth.noise_level = parse_double("synth.noise_level", v);
    };
    m["synth.seed"] = [](ExperimentConfig& c, const std::string& v) {
      c.synth.seed = parse_u64("synth.seed", v);
    };
    m["backbone.preset"] = [](ExperimentConfig& c, const std::string& v) {
      if (v == "full") c.preset = BackboneConfig::Preset::Full;
      else if (v == "tiny") c.preset = BackboneConfig::Preset::Tiny;
      else fail(ErrorCode::Config, "backbone.preset must be tiny or full");
    };
    m["subnet.type"] = [](ExperimentConfig& c, const std::string& v) {
      c.subnet_type = subnet_type_from_string(v);
    };
    m["subnet.tap"] = [](ExperimentConfig& c, const std::string& v) {
      c.subnet_tap = tap_from_string(v);
    };
    m["regularizer.variant"] = [](ExperimentConfig& c, const std::string& v) {
      c.variant = variant_from_string(v);
    };
    m["regularizer.lambda"] = [](ExperimentConfig& c, const std::string& v) {
      c.lambda_weight = static_cast<float>(parse_double("regularizer.lambda", v));
      require(c.lambda_weight >= 0.0f, ErrorCode::Config, "lambda must be >= 0");
    };
    for (auto& [k, s] : phase_keys("phase1", &ExperimentConfig::phase1)) m[k] = s;
    for (auto& [k, s] : phase_keys("phase2", &ExperimentConfig::phase2)) m[k] = s;
    for (auto& [k, s] : phase_keys("domain", &ExperimentConfig::domain_phase)) m[k] = s;
    return m;
  }();

  auto it = setters.find(key);
  require(it != setters.end(), ErrorCode::Config, "unknown config key '" + key + "'");
  it->second(c, value);
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::Io, "cannot open config file " + path);
  ExperimentConfig config = default_experiment_config();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::Config,
            path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    require(!key.empty(), ErrorCode::Config,
            path + ":" + std::to_string(lineno) + ": empty key");
    apply_config_entry(config, key, value);
  }
  apply_output_root_override(config);
  return config;
}

void apply_output_root_override(ExperimentConfig& config) {
  const char* root = std::getenv("CDPAD_OUTPUT_ROOT");
  if (!root || !*root) return;
  const fs::path out(config.out_dir);
  if (out.is_absolute()) return;
  config.out_dir = (fs::path(root) / out).string();
}

void validate_paths(const ExperimentConfig& config, bool need_existing_data) {
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  require(!ec && fs::is_directory(config.out_dir), ErrorCode::Io,
          "output directory is not usable: " + config.out_dir);
  if (need_existing_data) {
    require(fs::exists(fs::path(config.data_dir) / "manifest.json"), ErrorCode::Io,
            "dataset not found in " + config.data_dir +
                " (run generate-data first)");
  } else {
    const fs::path parent = fs::path(config.data_dir).parent_path();
    if (!parent.empty()) {
      fs::create_directories(parent, ec);
      require(!ec, ErrorCode::Io,
              "cannot create data directory parent: " + parent.string());
    }
  }
}

std::string config_echo_json(const ExperimentConfig& c) {
  json j;
  j["data_dir"] = c.data_dir;
  j["out_dir"] = c.out_dir;
  j["seeds"] = c.seeds;
  j["synth"] = {{"image_size", c.synth.image_size},
                {"identities_train", c.synth.identities_train},
                {"identities_dev", c.synth.identities_dev},
                {"identities_test", c.synth.identities_test},
                {"samples_per_identity", c.synth.samples_per_identity},
                {"category_mix", c.synth.category_mix},
                {"source_margin", c.synth.source_margin},
                {"target_margin", c.synth.target_margin},
                {"noise_level", c.synth.noise_level},
                {"seed", c.synth.seed}};
  j["backbone"] = {{"preset", c.preset == BackboneConfig::Preset::Full ? "full" : "tiny"}};
  j["subnet"] = {{"type", subnet_type_name(c.subnet_type)},
                 {"tap", tap_name(c.subnet_tap)}};
  j["regularizer"] = {{"variant", variant_name(c.variant)},
                      {"lambda", c.lambda_weight}};
  auto phase_json = [](const PhaseConfig& p) {
    return json{{"epochs", p.epochs},
                {"batch_size", p.batch_size},
                {"learning_rate", p.learning_rate},
                {"patience", p.patience}};
  };
  j["phase1"] = phase_json(c.phase1);
  j["phase2"] = phase_json(c.phase2);
  j["domain"] = phase_json(c.domain_phase);
  return j.dump();
}

}  // namespace cdpad
