#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "jointvit/config.hpp"
#include "jointvit/error.hpp"
#include "jointvit/vit.hpp"

namespace jointvit {

// On-disk layout: <dir>/manifest.json indexes tensors inside <dir>/weights.bin,
// a concatenation of little-endian IEEE-754 doubles in canonical order.
inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kWeightsFile = "weights.bin";

struct CheckpointMeta {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;  // training seed; with `epoch` this fixes every later rng stream
};

struct Checkpoint {
  ViTParams params;
  CheckpointMeta meta;
  std::uint64_t config_hash = 0;
};

namespace detail {

inline void put_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

inline double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline Json model_json(const ViTConfig& model) {
  RunConfig c;
  c.model = model;
  return to_json(c)["model"];
}

}  // namespace detail

inline void save_checkpoint(const ViTParams& params, const CheckpointMeta& meta,
                            const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorKind::Io, "cannot create checkpoint directory '" + dir.string() + "'");

  std::string blob;
  Json tensors = Json::array();
  params.visit([&](const std::string& name, const Tensor& t) {
    tensors.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"offset", blob.size()},
                       {"length", t.size() * sizeof(double)}});
    for (double v : t.data()) detail::put_le(blob, v);
  });
  Json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["config"] = detail::model_json(params.config);
  manifest["config_hash"] = hex64(config_hash(params.config));
  manifest["step"] = meta.step;
  manifest["rng_state"] = {{"seed", meta.seed}, {"epoch", meta.epoch}};
  manifest["tensors"] = tensors;

  write_text_file(dir / kWeightsFile, blob);
  write_text_file(dir / kManifestFile, manifest.dump(2) + "\n");
}

/// Loads and validates a checkpoint. When `expected` is given, the stored
/// model config hash must match it.
inline Checkpoint load_checkpoint(const std::filesystem::path& dir,
                                  const std::optional<ViTConfig>& expected = std::nullopt) {
  const auto manifest_path = dir / kManifestFile;
  const auto blob_path = dir / kWeightsFile;
  const Json manifest = read_json_file(manifest_path);
  const std::string where = "checkpoint '" + dir.string() + "': ";
  try {
    const int version = manifest.at("format_version").get<int>();
    require(version == kCheckpointFormatVersion, ErrorKind::Format,
            where + "format version " + std::to_string(version) + " is not supported (expected " +
                std::to_string(kCheckpointFormatVersion) + ")");

    Checkpoint ck;
    RunConfig rc;
    merge_json(rc, Json{{"model", manifest.at("config")}});
    const std::string stored_hash = manifest.at("config_hash").get<std::string>();
    require(stored_hash == hex64(config_hash(rc.model)), ErrorKind::Format,
            where + "config_hash " + stored_hash + " does not match its stored config (" +
                hex64(config_hash(rc.model)) + ")");
    if (expected) {
      require(config_hash(*expected) == config_hash(rc.model), ErrorKind::Config,
              where + "config hash mismatch: checkpoint " + stored_hash + ", requested " +
                  hex64(config_hash(*expected)));
    }
    ck.config_hash = config_hash(rc.model);
    ck.meta.step = manifest.at("step").get<std::size_t>();
    ck.meta.seed = manifest.at("rng_state").at("seed").get<std::uint64_t>();
    ck.meta.epoch = manifest.at("rng_state").at("epoch").get<std::size_t>();

    std::ifstream in(blob_path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open '" + blob_path.string() + "'");
    const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(in)),
                                          std::istreambuf_iterator<char>());

    // Tensors are matched against the canonical skeleton for the stored config.
    ck.params = init_params(rc.model, 0);
    const Json& entries = manifest.at("tensors");
    require(entries.is_array(), ErrorKind::Format, where + "'tensors' must be an array");
    std::size_t i = 0, covered = 0;
    ck.params.visit([&](const std::string& name, Tensor& t) {
      require(i < entries.size(), ErrorKind::Format, where + "missing tensor '" + name + "'");
      const Json& e = entries[i++];
      require(e.at("name").get<std::string>() == name, ErrorKind::Format,
              where + "expected tensor '" + name + "', found '" + e.at("name").get<std::string>() +
                  "'");
      require(e.at("shape").get<Shape>() == t.shape(), ErrorKind::Format,
              where + "tensor '" + name + "' has shape " +
                  shape_string(e.at("shape").get<Shape>()) + ", expected " +
                  shape_string(t.shape()));
      const auto offset = e.at("offset").get<std::size_t>();
      const auto length = e.at("length").get<std::size_t>();
      require(length == t.size() * sizeof(double), ErrorKind::Format,
              where + "tensor '" + name + "' length does not match its shape");
      require(offset <= blob.size() && length <= blob.size() - offset, ErrorKind::Format,
              where + "tensor '" + name + "' extends past the end of " + kWeightsFile + " (" +
                  std::to_string(blob.size()) + " bytes)");
      for (std::size_t k = 0; k < t.size(); ++k) t[k] = detail::get_le(&blob[offset + 8 * k]);
      covered += length;
    });
    require(i == entries.size(), ErrorKind::Format, where + "unexpected extra tensors");
    require(covered == blob.size(), ErrorKind::Format,
            where + kWeightsFile + " has " + std::to_string(blob.size()) +
                " bytes but the manifest indexes " + std::to_string(covered));
    return ck;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, where + "malformed manifest: " + e.what());
  }
}

}  // namespace jointvit
