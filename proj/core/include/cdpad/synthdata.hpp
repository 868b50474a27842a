#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cdpad/metrics.hpp"
#include "cdpad/regularizers.hpp"
#include "cdpad/tensor.hpp"

namespace cdpad {

enum class AttackCategory : std::uint8_t {
  None = 0,  // bonafide
  Disguise = 1,
  FakeFace = 2,
  Photo = 3,
  Video = 4,
};

inline const char* category_name(AttackCategory c) {
  switch (c) {
    case AttackCategory::None: return "none";
    case AttackCategory::Disguise: return "disguise";
    case AttackCategory::FakeFace: return "fake_face";
    case AttackCategory::Photo: return "photo";
    case AttackCategory::Video: return "video";
  }
  return "?";
}

AttackCategory category_from_string(const std::string& s);

enum class Split : std::uint8_t { Train = 0, Dev = 1, Test = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s);

/// Two-domain synthetic face imagery. The target (infrared-like) domain
/// separates bonafide from attack by a strong warm-core and overall
/// brightness margin; the source (visible-like) domain carries only a
/// low-amplitude texture cue with randomized phase plus a faint echo of the
/// warm core, confounded by per-identity appearance variation.
struct SyntheticConfig {
  int image_size = 32;
  int identities_train = 8;
  int identities_dev = 4;
  int identities_test = 4;
  int samples_per_identity = 24;
  // proportions over {disguise, fake_face, photo, video}
  std::array<double, 4> category_mix{0.25, 0.25, 0.25, 0.25};
  double source_margin = 0.12;
  double target_margin = 0.15;
  double noise_level = 0.03;
  std::uint64_t seed = 1;
};

struct SyntheticSample {
  std::string id;
  Tensor source_image;  // (S,S,1), values in [0,1]
  Tensor target_image;  // (S,S,1), values in [0,1]
  PadClass label = PadClass::Bonafide;
  AttackCategory category = AttackCategory::None;
  int identity = 0;
  Split split = Split::Train;
};

struct SplitStats {
  int total = 0;
  int bonafide = 0;
  int attack = 0;
  std::array<int, 4> per_category{0, 0, 0, 0};
  std::vector<int> identities;
};

struct SyntheticDataset {
  SyntheticConfig config;
  std::vector<SyntheticSample> samples;

  std::vector<int> indices_of(Split split) const;
  SplitStats stats_of(Split split) const;
  const Tensor& image(int sample_index, DomainTag domain) const {
    const auto& s = samples[static_cast<std::size_t>(sample_index)];
    return domain == DomainTag::Source ? s.source_image : s.target_image;
  }
};

/// Renders a single image, a pure function of its arguments.
Tensor render_sample(const SyntheticConfig& config, int identity, int sample_index,
                     PadClass label, AttackCategory category, DomainTag domain);

SyntheticDataset generate_dataset(const SyntheticConfig& config);

// directory layout: manifest.json plus one raw image file per sample per
// domain ("CDIM" magic, version, height, width, float32 little-endian grid)
void write_dataset(const SyntheticDataset& dataset, const std::string& dir);
SyntheticDataset read_dataset(const std::string& dir);

void write_image_file(const std::string& path, const Tensor& image);
Tensor read_image_file(const std::string& path);

}  // namespace cdpad
