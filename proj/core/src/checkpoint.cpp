#include "cdpad/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cdpad/error.hpp"

namespace cdpad {

using nlohmann::json;

namespace {
constexpr char kBlobMagic[4] = {'C', 'D', 'P', 'K'};
constexpr std::uint32_t kBlobVersion = 1;
constexpr int kManifestVersion = 1;
}  // namespace

void save_checkpoint(const std::string& stem, const ConstComponents& components,
                     const CheckpointMeta& meta) {
  json manifest;
  manifest["format_version"] = kManifestVersion;
  manifest["seed"] = meta.seed;
  manifest["phase"] = meta.phase;
  try {
    manifest["config"] = json::parse(meta.config_echo_json);
  } catch (const json::exception&) {
    manifest["config"] = meta.config_echo_json;
  }
  manifest["blob_file"] = stem.substr(stem.find_last_of('/') + 1) + ".bin";

  json entries = json::array();
  std::int64_t offset = 0;
  std::int64_t learnable_total = 0;
  for (const auto& [component, params] : components) {
    for (const auto& e : params->entries) {
      const std::int64_t bytes =
          static_cast<std::int64_t>(e.value.data.size() * sizeof(float));
      entries.push_back({{"name", component + "." + e.name},
                         {"shape", e.value.shape},
                         {"offset", offset},
                         {"count", e.value.numel()},
                         {"trainable", e.trainable},
                         {"buffer", e.buffer}});
      offset += bytes;
      if (!e.buffer) learnable_total += e.value.numel();
    }
  }
  manifest["entries"] = entries;
  manifest["learnable_total"] = learnable_total;

  std::ofstream mf(stem + ".json");
  require(mf.good(), ErrorCode::Io, "cannot write checkpoint manifest " + stem + ".json");
  mf << manifest.dump(2) << "\n";
  require(mf.good(), ErrorCode::Io, "failed writing checkpoint manifest");

  std::ofstream bf(stem + ".bin", std::ios::binary);
  require(bf.good(), ErrorCode::Io, "cannot write checkpoint blob " + stem + ".bin");
  bf.write(kBlobMagic, 4);
  bf.write(reinterpret_cast<const char*>(&kBlobVersion), 4);
  for (const auto& [component, params] : components) {
    (void)component;
    for (const auto& e : params->entries) {
      bf.write(reinterpret_cast<const char*>(e.value.data.data()),
               static_cast<std::streamsize>(e.value.data.size() * sizeof(float)));
    }
  }
  require(bf.good(), ErrorCode::Io, "failed writing checkpoint blob");
}

namespace {

CheckpointInfo parse_manifest(const std::string& stem, json* out_manifest) {
  std::ifstream mf(stem + ".json");
  require(mf.good(), ErrorCode::Io, "cannot open checkpoint manifest " + stem + ".json");
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, std::string("bad checkpoint manifest: ") + e.what());
  }
  CheckpointInfo info;
  info.format_version = manifest.value("format_version", -1);
  require(info.format_version == kManifestVersion, ErrorCode::Format,
          "unsupported checkpoint manifest version " +
              std::to_string(info.format_version));
  info.seed = manifest.value("seed", 0ull);
  info.phase = manifest.value("phase", "");
  info.config_echo_json = manifest.contains("config") ? manifest["config"].dump() : "{}";
  info.learnable_total = manifest.value("learnable_total", 0ll);
  info.entry_count = static_cast<std::int64_t>(manifest.at("entries").size());
  if (out_manifest) *out_manifest = std::move(manifest);
  return info;
}

}  // namespace

CheckpointInfo peek_checkpoint(const std::string& stem) {
  return parse_manifest(stem, nullptr);
}

CheckpointInfo load_checkpoint(const std::string& stem,
                               const MutComponents& components) {
  json manifest;
  CheckpointInfo info = parse_manifest(stem, &manifest);

  std::ifstream bf(stem + ".bin", std::ios::binary);
  require(bf.good(), ErrorCode::Io, "cannot open checkpoint blob " + stem + ".bin");
  char magic[4];
  std::uint32_t version = 0;
  bf.read(magic, 4);
  bf.read(reinterpret_cast<char*>(&version), 4);
  require(bf.good(), ErrorCode::Format, "truncated checkpoint blob header");
  require(std::memcmp(magic, kBlobMagic, 4) == 0, ErrorCode::Format,
          "bad checkpoint blob magic");
  require(version == kBlobVersion, ErrorCode::Format,
          "unsupported checkpoint blob version " + std::to_string(version));

  auto find_entry = [&](const std::string& full_name) -> ParamEntry<float>* {
    const auto dot = full_name.find('.');
    require(dot != std::string::npos, ErrorCode::Format,
            "malformed parameter name " + full_name);
    const std::string component = full_name.substr(0, dot);
    const std::string param = full_name.substr(dot + 1);
    for (const auto& [name, params] : components) {
      if (name != component) continue;
      require(params->contains(param), ErrorCode::Format,
              "unknown parameter name in checkpoint: " + full_name);
      return &params->by_name(param);
    }
    fail(ErrorCode::Format, "unknown component in checkpoint: " + component);
  };

  std::size_t loaded = 0;
  for (const json& je : manifest.at("entries")) {
    const std::string name = je.at("name").get<std::string>();
    ParamEntry<float>* entry = find_entry(name);
    const std::vector<int> shape = je.at("shape").get<std::vector<int>>();
    require(entry->value.shape == shape, ErrorCode::Format,
            "checkpoint shape mismatch for " + name + ": manifest " +
                shape_string(shape) + " vs model " +
                shape_string(entry->value.shape));
    const std::int64_t offset = je.at("offset").get<std::int64_t>();
    bf.seekg(8 + offset);
    bf.read(reinterpret_cast<char*>(entry->value.data.data()),
            static_cast<std::streamsize>(entry->value.data.size() * sizeof(float)));
    require(bf.gcount() == static_cast<std::streamsize>(entry->value.data.size() *
                                                        sizeof(float)),
            ErrorCode::Format, "truncated checkpoint blob at " + name);
    ++loaded;
  }

  std::size_t expected = 0;
  for (const auto& [name, params] : components) {
    (void)name;
    expected += params->entries.size();
  }
  require(loaded == expected, ErrorCode::Format,
          "checkpoint is missing parameters: has " + std::to_string(loaded) +
              ", model needs " + std::to_string(expected));
  return info;
}

}  // namespace cdpad
