#include "cdpad/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cdpad/rng.hpp"

namespace cdpad {

namespace fs = std::filesystem;
using nlohmann::json;

AttackCategory category_from_string(const std::string& s) {
  if (s == "none") return AttackCategory::None;
  if (s == "disguise") return AttackCategory::Disguise;
  if (s == "fake_face") return AttackCategory::FakeFace;
  if (s == "photo") return AttackCategory::Photo;
  if (s == "video") return AttackCategory::Video;
  fail(ErrorCode::Format, "unknown attack category '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "dev") return Split::Dev;
  if (s == "test") return Split::Test;
  fail(ErrorCode::Format, "unknown split '" + s + "'");
}

std::vector<int> SyntheticDataset::indices_of(Split split) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(static_cast<int>(i));
  }
  return out;
}

SplitStats SyntheticDataset::stats_of(Split split) const {
  SplitStats stats;
  for (const auto& s : samples) {
    if (s.split != split) continue;
    ++stats.total;
    if (s.label == PadClass::Bonafide) ++stats.bonafide;
    else ++stats.attack;
    if (s.category != AttackCategory::None)
      ++stats.per_category[static_cast<std::size_t>(s.category) - 1];
    if (std::find(stats.identities.begin(), stats.identities.end(), s.identity) ==
        stats.identities.end())
      stats.identities.push_back(s.identity);
  }
  return stats;
}

namespace {

struct IdentityParams {
  double cx, cy;          // face center, relative
  double ax, ay;          // semi-axes, relative
  double tilt;
  double base;            // face base intensity
  double core_bias;       // identity-specific warm-core brightness confound
  double radial_bias;     // identity-specific radial contrast confound
  double eye_depth;
  double eye_dx, eye_dy;  // eye placement jitter
};

IdentityParams identity_params(const SyntheticConfig& cfg, int identity) {
  Rng rng(derive_seed(cfg.seed, "identity", static_cast<std::uint64_t>(identity)));
  IdentityParams p;
  p.cx = 0.5 + rng.uniform(-0.05, 0.05);
  p.cy = 0.5 + rng.uniform(-0.05, 0.05);
  p.ax = 0.34 * (1.0 + rng.uniform(-0.10, 0.10));
  p.ay = 0.42 * (1.0 + rng.uniform(-0.10, 0.10));
  p.tilt = rng.uniform(-0.15, 0.15);
  p.base = 0.45 + rng.uniform(-0.06, 0.06);
  p.core_bias = rng.normal() * 0.10;
  p.radial_bias = rng.normal() * 0.05;
  p.eye_depth = rng.uniform(0.06, 0.12);
  p.eye_dx = rng.uniform(-0.03, 0.03);
  p.eye_dy = rng.uniform(-0.03, 0.03);
  return p;
}

/// Presentation parameters shared by the two domain renderings of a sample.
struct SampleParams {
  double ripple_freq_src;
  double ripple_freq_tgt;
  double ripple_phase_u, ripple_phase_v;
  double occluder_y, occluder_h;   // disguise
  double frame_inset;              // photo
  double scan_period, scan_phase;  // video
  double center_jitter_x, center_jitter_y;
};

SampleParams sample_params(const SyntheticConfig& cfg, int identity, int index) {
  Rng rng(derive_seed(derive_seed(cfg.seed, "sample", static_cast<std::uint64_t>(identity)),
                      "index", static_cast<std::uint64_t>(index)));
  SampleParams p;
  p.ripple_freq_src = rng.uniform(4.5, 6.0);
  p.ripple_freq_tgt = rng.uniform(4.0, 5.5);
  p.ripple_phase_u = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  p.ripple_phase_v = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  p.occluder_y = rng.uniform(-0.35, -0.15);
  p.occluder_h = rng.uniform(0.10, 0.16);
  p.frame_inset = rng.uniform(0.06, 0.14);
  p.scan_period = rng.uniform(2.5, 4.5);
  p.scan_phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  p.center_jitter_x = rng.uniform(-0.015, 0.015);
  p.center_jitter_y = rng.uniform(-0.015, 0.015);
  return p;
}

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

Tensor render_sample(const SyntheticConfig& config, int identity, int sample_index,
                     PadClass label, AttackCategory category, DomainTag domain) {
  const int size = config.image_size;
  require(size >= 8, ErrorCode::Config, "image size must be at least 8");
  const IdentityParams id = identity_params(config, identity);
  const SampleParams sp = sample_params(config, identity, sample_index);
  Rng noise(derive_seed(
      derive_seed(config.seed, domain == DomainTag::Source ? "noise-src" : "noise-tgt",
                  static_cast<std::uint64_t>(identity)),
      "index", static_cast<std::uint64_t>(sample_index)));

  const bool bonafide = label == PadClass::Bonafide;
  const bool src = domain == DomainTag::Source;
  const double two_pi = 2.0 * 3.14159265358979323846;

  // class cues: target is plainly separable, source is subtle
  // texture amplitudes: in the source domain bonafide skin is textured and
  // attacks are smooth; in the target domain the association is inverted
  // (spoof materials carry texture under infrared-like imaging), so the
  // target-trained texture response transfers to source with the wrong sign
  const double hi_amp = 1.6 * config.source_margin;
  const double lo_amp = 0.35 * config.source_margin;
  double ripple_amp = bonafide ? hi_amp : lo_amp;
  double tgt_ripple_amp = 0.45 * (bonafide ? lo_amp : hi_amp);
  double eye_depth = id.eye_depth;
  if (category == AttackCategory::FakeFace) {
    ripple_amp *= 0.6;
    tgt_ripple_amp *= 0.6;
    eye_depth *= 0.6;
  }
  const double src_core_cue = bonafide ? 0.4 * config.source_margin : 0.0;
  const double tgt_core_amp = bonafide ? 2.5 * config.target_margin : 0.0;
  const double tgt_face_shift =
      bonafide ? 1.2 * config.target_margin : -1.2 * config.target_margin;

  const double cx = id.cx + sp.center_jitter_x;
  const double cy = id.cy + sp.center_jitter_y;
  const double ct = std::cos(id.tilt);
  const double st = std::sin(id.tilt);

  Tensor image({size, size, 1});
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size;
      const double v = (y + 0.5) / size;
      const double dx = u - cx;
      const double dy = v - cy;
      const double rx = (ct * dx + st * dy) / id.ax;
      const double ry = (-st * dx + ct * dy) / id.ay;
      const double rho = std::sqrt(rx * rx + ry * ry);
      const double face_w = clamp01((1.0 - rho) / 0.08);

      double val = src ? 0.12 : 0.10;
      if (face_w > 0.0) {
        double face = src ? id.base : 0.85 * id.base;
        face += id.radial_bias * (0.5 - rho);

        const double core = std::exp(-(rho / 0.38) * (rho / 0.38));
        if (src) {
          face += (id.core_bias + src_core_cue) * core;
        } else {
          face += (0.5 * id.core_bias + tgt_core_amp) * core;
          face += tgt_face_shift;
        }

        // the texture statistic lives in a different spatial band per
        // domain, so target-tuned detectors transfer only partially
        const double amp = src ? ripple_amp : tgt_ripple_amp;
        const double freq = src ? sp.ripple_freq_src : sp.ripple_freq_tgt;
        const double p = 0.5 * (rx + 1.0);
        const double q = 0.5 * (ry + 1.0);
        face += amp * std::sin(two_pi * freq * p + sp.ripple_phase_u) *
                std::sin(two_pi * freq * q + sp.ripple_phase_v);

        const double eye_scale = src ? 1.0 : 0.6;
        for (int side = -1; side <= 1; side += 2) {
          const double ex = rx - (side * 0.35 + id.eye_dx);
          const double ey = ry - (-0.25 + id.eye_dy);
          const double er = (ex * ex + ey * ey) / (0.12 * 0.12);
          face -= eye_scale * eye_depth * std::exp(-er);
        }

        if (category == AttackCategory::Disguise) {
          const double band = std::abs(ry - sp.occluder_y);
          if (band < sp.occluder_h) face -= src ? 0.10 : 0.08;
        }
        val = val * (1.0 - face_w) + face * face_w;
      }

      if (category == AttackCategory::Photo) {
        const double inset = sp.frame_inset;
        const double border = 1.5 / size;
        const bool in_outer = u > inset - border && u < 1.0 - inset + border &&
                              v > inset - border && v < 1.0 - inset + border;
        const bool in_inner = u > inset + border && u < 1.0 - inset - border &&
                              v > inset + border && v < 1.0 - inset - border;
        if (in_outer && !in_inner) val += src ? 0.10 : 0.08;
      }
      if (category == AttackCategory::Video) {
        val += (src ? 0.025 : 0.02) *
               std::sin(two_pi * y / sp.scan_period + sp.scan_phase);
      }

      val += noise.normal() * config.noise_level;
      image.at(y, x, 0) = static_cast<float>(clamp01(val));
    }
  }
  return image;
}

namespace {

std::vector<AttackCategory> category_quota(const SyntheticConfig& cfg, int attacks) {
  // largest-remainder allocation over the configured mix
  double mix_total = 0.0;
  for (double m : cfg.category_mix) mix_total += m;
  require(mix_total > 0.0, ErrorCode::Config, "category mix must not be all zero");
  std::array<double, 4> exact{};
  std::array<int, 4> count{};
  int assigned = 0;
  for (int c = 0; c < 4; ++c) {
    exact[static_cast<std::size_t>(c)] =
        attacks * cfg.category_mix[static_cast<std::size_t>(c)] / mix_total;
    count[static_cast<std::size_t>(c)] =
        static_cast<int>(exact[static_cast<std::size_t>(c)]);
    assigned += count[static_cast<std::size_t>(c)];
  }
  std::array<int, 4> order{0, 1, 2, 3};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ra = exact[static_cast<std::size_t>(a)] - count[static_cast<std::size_t>(a)];
    const double rb = exact[static_cast<std::size_t>(b)] - count[static_cast<std::size_t>(b)];
    if (ra != rb) return ra > rb;
    return a < b;
  });
  for (int k = 0; assigned < attacks; ++k, ++assigned)
    ++count[static_cast<std::size_t>(order[static_cast<std::size_t>(k % 4)])];

  std::vector<AttackCategory> queue;
  queue.reserve(static_cast<std::size_t>(attacks));
  // interleave round-robin so every identity sees a spread of categories
  std::array<int, 4> left = count;
  while (static_cast<int>(queue.size()) < attacks) {
    for (int c = 0; c < 4; ++c) {
      if (left[static_cast<std::size_t>(c)] > 0) {
        queue.push_back(static_cast<AttackCategory>(c + 1));
        --left[static_cast<std::size_t>(c)];
      }
    }
  }
  return queue;
}

}  // namespace

SyntheticDataset generate_dataset(const SyntheticConfig& config) {
  require(config.identities_train >= 1 && config.identities_dev >= 1 &&
              config.identities_test >= 1,
          ErrorCode::Config,
          "need at least 3 identities total (one per split) for disjoint splits");
  require(config.samples_per_identity >= 2, ErrorCode::Config,
          "need at least 2 samples per identity");

  SyntheticDataset dataset;
  dataset.config = config;
  const std::array<Split, 3> splits{Split::Train, Split::Dev, Split::Test};
  const std::array<int, 3> split_identities{config.identities_train,
                                            config.identities_dev,
                                            config.identities_test};
  int next_identity = 0;
  for (int si = 0; si < 3; ++si) {
    const Split split = splits[static_cast<std::size_t>(si)];
    const int n_id = split_identities[static_cast<std::size_t>(si)];
    const int attacks_per_identity = config.samples_per_identity / 2;
    auto queue = category_quota(config, n_id * attacks_per_identity);
    std::size_t qpos = 0;
    for (int k = 0; k < n_id; ++k) {
      const int identity = next_identity + k;
      for (int s = 0; s < config.samples_per_identity; ++s) {
        SyntheticSample sample;
        sample.identity = identity;
        sample.split = split;
        sample.label = (s % 2 == 0) ? PadClass::Bonafide : PadClass::Attack;
        sample.category = sample.label == PadClass::Attack
                              ? queue[qpos++ % queue.size()]
                              : AttackCategory::None;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%s_i%03d_s%03d", split_name(split),
                      identity, s);
        sample.id = buf;
        sample.source_image = render_sample(config, identity, s, sample.label,
                                            sample.category, DomainTag::Source);
        sample.target_image = render_sample(config, identity, s, sample.label,
                                            sample.category, DomainTag::Target);
        dataset.samples.push_back(std::move(sample));
      }
    }
    next_identity += n_id;
  }
  return dataset;
}

// ---------------------------------------------------------------------------
// io
// ---------------------------------------------------------------------------

namespace {
constexpr char kImageMagic[4] = {'C', 'D', 'I', 'M'};
constexpr std::uint32_t kImageVersion = 1;
constexpr int kManifestVersion = 1;
}  // namespace

void write_image_file(const std::string& path, const Tensor& image) {
  require(image.rank() == 3 && image.dim(2) == 1, ErrorCode::ShapeMismatch,
          "image files hold single-channel (H,W,1) tensors");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::Io, "cannot open image file for writing: " + path);
  out.write(kImageMagic, 4);
  const std::uint32_t version = kImageVersion;
  const std::uint32_t h = static_cast<std::uint32_t>(image.dim(0));
  const std::uint32_t w = static_cast<std::uint32_t>(image.dim(1));
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(image.data.data()),
            static_cast<std::streamsize>(image.data.size() * sizeof(float)));
  require(out.good(), ErrorCode::Io, "failed writing image file: " + path);
}

Tensor read_image_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::Io, "cannot open image file: " + path);
  char magic[4];
  std::uint32_t version = 0, h = 0, w = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  require(in.good(), ErrorCode::Format, "truncated image header: " + path);
  require(std::memcmp(magic, kImageMagic, 4) == 0, ErrorCode::Format,
          "bad image magic in " + path);
  require(version == kImageVersion, ErrorCode::Format,
          "unsupported image version in " + path);
  Tensor image({static_cast<int>(h), static_cast<int>(w), 1});
  in.read(reinterpret_cast<char*>(image.data.data()),
          static_cast<std::streamsize>(image.data.size() * sizeof(float)));
  require(in.gcount() ==
              static_cast<std::streamsize>(image.data.size() * sizeof(float)),
          ErrorCode::Format, "truncated image payload: " + path);
  return image;
}

void write_dataset(const SyntheticDataset& dataset, const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format_version"] = kManifestVersion;
  manifest["config"] = {
      {"image_size", dataset.config.image_size},
      {"identities_train", dataset.config.identities_train},
      {"identities_dev", dataset.config.identities_dev},
      {"identities_test", dataset.config.identities_test},
      {"samples_per_identity", dataset.config.samples_per_identity},
      {"category_mix", dataset.config.category_mix},
      {"source_margin", dataset.config.source_margin},
      {"target_margin", dataset.config.target_margin},
      {"noise_level", dataset.config.noise_level},
      {"seed", dataset.config.seed},
  };
  json records = json::array();
  for (const auto& s : dataset.samples) {
    const std::string src_file = s.id + "_src.bin";
    const std::string tgt_file = s.id + "_tgt.bin";
    write_image_file((fs::path(dir) / src_file).string(), s.source_image);
    write_image_file((fs::path(dir) / tgt_file).string(), s.target_image);
    records.push_back({{"id", s.id},
                       {"identity", s.identity},
                       {"split", split_name(s.split)},
                       {"label", pad_class_name(s.label)},
                       {"category", category_name(s.category)},
                       {"source_file", src_file},
                       {"target_file", tgt_file}});
  }
  manifest["samples"] = records;
  json stats;
  for (Split sp : {Split::Train, Split::Dev, Split::Test}) {
    const SplitStats st = dataset.stats_of(sp);
    stats[split_name(sp)] = {{"total", st.total},
                             {"bonafide", st.bonafide},
                             {"attack", st.attack},
                             {"disguise", st.per_category[0]},
                             {"fake_face", st.per_category[1]},
                             {"photo", st.per_category[2]},
                             {"video", st.per_category[3]}};
  }
  manifest["split_stats"] = stats;

  std::ofstream out(fs::path(dir) / "manifest.json");
  require(out.good(), ErrorCode::Io, "cannot write dataset manifest in " + dir);
  out << manifest.dump(2) << "\n";
  require(out.good(), ErrorCode::Io, "failed writing dataset manifest in " + dir);
}

SyntheticDataset read_dataset(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  require(in.good(), ErrorCode::Io, "cannot open dataset manifest in " + dir);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, std::string("bad dataset manifest: ") + e.what());
  }
  require(manifest.value("format_version", -1) == kManifestVersion,
          ErrorCode::Format, "unsupported dataset manifest version");

  SyntheticDataset dataset;
  const json& cfg = manifest.at("config");
  dataset.config.image_size = cfg.at("image_size").get<int>();
  dataset.config.identities_train = cfg.at("identities_train").get<int>();
  dataset.config.identities_dev = cfg.at("identities_dev").get<int>();
  dataset.config.identities_test = cfg.at("identities_test").get<int>();
  dataset.config.samples_per_identity = cfg.at("samples_per_identity").get<int>();
  dataset.config.category_mix = cfg.at("category_mix").get<std::array<double, 4>>();
  dataset.config.source_margin = cfg.at("source_margin").get<double>();
  dataset.config.target_margin = cfg.at("target_margin").get<double>();
  dataset.config.noise_level = cfg.at("noise_level").get<double>();
  dataset.config.seed = cfg.at("seed").get<std::uint64_t>();

  for (const json& r : manifest.at("samples")) {
    SyntheticSample s;
    s.id = r.at("id").get<std::string>();
    s.identity = r.at("identity").get<int>();
    s.split = split_from_string(r.at("split").get<std::string>());
    const std::string label = r.at("label").get<std::string>();
    s.label = label == "bonafide" ? PadClass::Bonafide : PadClass::Attack;
    s.category = category_from_string(r.at("category").get<std::string>());
    s.source_image =
        read_image_file((fs::path(dir) / r.at("source_file").get<std::string>()).string());
    s.target_image =
        read_image_file((fs::path(dir) / r.at("target_file").get<std::string>()).string());
    dataset.samples.push_back(std::move(s));
  }
  return dataset;
}

}  // namespace cdpad
