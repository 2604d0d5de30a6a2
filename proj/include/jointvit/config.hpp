#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jointvit/augment.hpp"
#include "jointvit/cross_validation.hpp"
#include "jointvit/error.hpp"
#include "jointvit/losses.hpp"
#include "jointvit/random.hpp"
#include "jointvit/synth.hpp"
#include "jointvit/train.hpp"
#include "jointvit/vit.hpp"

namespace jointvit {

using Json = nlohmann::ordered_json;

enum class DataSource { Synthetic, Folder };

struct DataConfig {
  DataSource source = DataSource::Synthetic;
  SynthSpec synthetic;
  std::string folder;
  std::string manifest = "labels.csv";
  std::size_t slice_stride = 1;
  bool balance = true;
  AugmentPolicy augment;
};

struct ProtocolConfig {
  std::size_t k = 3;
  std::uint64_t seed = 0;
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  std::size_t max_steps = 0;
};

/// Everything a run needs. Serialized as one JSON document; every key is
/// optional on input and missing keys keep their defaults.
struct RunConfig {
  ViTConfig model;
  JointLossConfig loss;
  OptimizerConfig optimizer;
  DataConfig data;
  ProtocolConfig protocol;
  std::string output = "run";

  void validate() const {
    model.validate();
    require(loss.lambda >= 0.0 && loss.lambda <= 1.0, ErrorKind::Config,
            "loss.lambda must lie in [0, 1]");
    optimizer.validate();
    data.augment.validate();
    if (data.source == DataSource::Synthetic) {
      data.synthetic.validate();
      require(data.synthetic.image_size == model.image_size, ErrorKind::Config,
              "data.synthetic.image_size " + std::to_string(data.synthetic.image_size) +
                  " must equal model.image_size " + std::to_string(model.image_size));
    } else {
      require(!data.folder.empty(), ErrorKind::Config, "data.folder is required for folder source");
    }
    require(data.slice_stride >= 1, ErrorKind::Config, "data.slice_stride must be positive");
    require(protocol.k >= 2, ErrorKind::Config, "protocol.k must be at least 2");
    require(protocol.batch_size >= 1, ErrorKind::Config, "protocol.batch_size must be positive");
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.model = model;
    t.loss = loss;
    t.optimizer = optimizer;
    t.epochs = protocol.epochs;
    t.batch_size = protocol.batch_size;
    t.max_steps = protocol.max_steps;
    t.seed = protocol.seed;
    return t;
  }

  CvConfig cv_config() const {
    return CvConfig{train_config(), data.balance, data.augment, protocol.k, protocol.seed};
  }
};

namespace detail {

template <class T>
void read_opt(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("config key '") + key + "': " + e.what());
  }
}

inline const Json& section(const Json& j, const char* key) {
  static const Json empty = Json::object();
  if (!j.contains(key)) return empty;
  require(j.at(key).is_object(), ErrorKind::Config,
          std::string("config section '") + key + "' must be an object");
  return j.at(key);
}

inline void reject_unknown(const Json& j, std::initializer_list<const char*> known,
                           const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    require(ok, ErrorKind::Config, "unknown config key '" + where + key + "'");
  }
}

}  // namespace detail

inline Json to_json(const RunConfig& c) {
  Json j;
  j["model"] = {{"image_size", c.model.image_size}, {"patch_size", c.model.patch_size},
                {"channels", c.model.channels},     {"embed_dim", c.model.embed_dim},
                {"depth", c.model.depth},           {"heads", c.model.heads},
                {"mlp_ratio", c.model.mlp_ratio},   {"num_classes", c.model.num_classes},
                {"dropout", c.model.dropout}};
  j["loss"] = {{"lambda", c.loss.lambda},
               {"variant", std::string(to_string(c.loss.variant))},
               {"class_counts", c.loss.class_counts}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"weight_decay", c.optimizer.weight_decay},
                    {"clip_norm", c.optimizer.clip_norm}};
  const auto& s = c.data.synthetic;
  const auto& a = c.data.augment;
  j["data"] = {
      {"source", c.data.source == DataSource::Synthetic ? "synthetic" : "folder"},
      {"synthetic",
       {{"counts", std::vector<std::size_t>(s.counts.begin(), s.counts.end())},
        {"image_size", s.image_size},
        {"slices_per_instance", s.slices_per_instance},
        {"seed", s.seed},
        {"signal", s.signal == SynthSignal::Stripes ? "stripes" : "marker"},
        {"noise", s.noise},
        {"amplitude", s.amplitude}}},
      {"folder", c.data.folder},
      {"manifest", c.data.manifest},
      {"slice_stride", c.data.slice_stride},
      {"balance", c.data.balance},
      {"augment",
       {{"crop_scale_min", a.crop_scale_min},
        {"crop_scale_max", a.crop_scale_max},
        {"hflip_prob", a.hflip_prob},
        {"rotation_min_deg", a.rotation_min_deg},
        {"rotation_max_deg", a.rotation_max_deg},
        {"fill", a.fill}}}};
  j["protocol"] = {{"k", c.protocol.k},
                   {"seed", c.protocol.seed},
                   {"epochs", c.protocol.epochs},
                   {"batch_size", c.protocol.batch_size},
                   {"max_steps", c.protocol.max_steps}};
  j["output"] = c.output;
  return j;
}

/// Overlays the keys present in `j` onto `c`. Unknown keys are rejected so
/// typos do not silently fall back to defaults.
inline void merge_json(RunConfig& c, const Json& j) {
  using detail::read_opt;
  using detail::section;
  require(j.is_object(), ErrorKind::Config, "config must be a JSON object");
  detail::reject_unknown(j, {"model", "loss", "optimizer", "data", "protocol", "output"}, "");

  const Json& m = section(j, "model");
  detail::reject_unknown(m, {"image_size", "patch_size", "channels", "embed_dim", "depth", "heads",
                             "mlp_ratio", "num_classes", "dropout"}, "model.");
  read_opt(m, "image_size", c.model.image_size);
  read_opt(m, "patch_size", c.model.patch_size);
  read_opt(m, "channels", c.model.channels);
  read_opt(m, "embed_dim", c.model.embed_dim);
  read_opt(m, "depth", c.model.depth);
  read_opt(m, "heads", c.model.heads);
  read_opt(m, "mlp_ratio", c.model.mlp_ratio);
  read_opt(m, "num_classes", c.model.num_classes);
  read_opt(m, "dropout", c.model.dropout);

  const Json& l = section(j, "loss");
  detail::reject_unknown(l, {"lambda", "variant", "class_counts"}, "loss.");
  read_opt(l, "lambda", c.loss.lambda);
  if (l.contains("variant")) {
    std::string v;
    read_opt(l, "variant", v);
    c.loss.variant = parse_variant(v);
  }
  read_opt(l, "class_counts", c.loss.class_counts);

  const Json& o = section(j, "optimizer");
  detail::reject_unknown(o, {"lr", "beta1", "beta2", "eps", "weight_decay", "clip_norm"},
                         "optimizer.");
  read_opt(o, "lr", c.optimizer.lr);
  read_opt(o, "beta1", c.optimizer.beta1);
  read_opt(o, "beta2", c.optimizer.beta2);
  read_opt(o, "eps", c.optimizer.eps);
  read_opt(o, "weight_decay", c.optimizer.weight_decay);
  read_opt(o, "clip_norm", c.optimizer.clip_norm);

  const Json& d = section(j, "data");
  detail::reject_unknown(d, {"source", "synthetic", "folder", "manifest", "slice_stride", "balance",
                             "augment"}, "data.");
  if (d.contains("source")) {
    std::string src;
    read_opt(d, "source", src);
    if (src == "synthetic") c.data.source = DataSource::Synthetic;
    else if (src == "folder") c.data.source = DataSource::Folder;
    else fail(ErrorKind::Config, "data.source must be 'synthetic' or 'folder', got '" + src + "'");
  }
  read_opt(d, "folder", c.data.folder);
  read_opt(d, "manifest", c.data.manifest);
  read_opt(d, "slice_stride", c.data.slice_stride);
  read_opt(d, "balance", c.data.balance);

  const Json& s = section(d, "synthetic");
  detail::reject_unknown(s, {"counts", "image_size", "slices_per_instance", "seed", "signal", "noise",
                             "amplitude"}, "data.synthetic.");
  if (s.contains("counts")) {
    std::vector<std::size_t> counts;
    read_opt(s, "counts", counts);
    require(counts.size() == kNumSaO2Classes, ErrorKind::Config,
            "data.synthetic.counts must have 3 entries");
    std::copy(counts.begin(), counts.end(), c.data.synthetic.counts.begin());
  }
  read_opt(s, "image_size", c.data.synthetic.image_size);
  read_opt(s, "slices_per_instance", c.data.synthetic.slices_per_instance);
  read_opt(s, "seed", c.data.synthetic.seed);
  if (s.contains("signal")) {
    std::string sig;
    read_opt(s, "signal", sig);
    if (sig == "stripes") c.data.synthetic.signal = SynthSignal::Stripes;
    else if (sig == "marker") c.data.synthetic.signal = SynthSignal::Marker;
    else fail(ErrorKind::Config, "data.synthetic.signal must be 'stripes' or 'marker'");
  }
  read_opt(s, "noise", c.data.synthetic.noise);
  read_opt(s, "amplitude", c.data.synthetic.amplitude);

  const Json& a = section(d, "augment");
  detail::reject_unknown(a, {"crop_scale_min", "crop_scale_max", "hflip_prob", "rotation_min_deg",
                             "rotation_max_deg", "fill"}, "data.augment.");
  read_opt(a, "crop_scale_min", c.data.augment.crop_scale_min);
  read_opt(a, "crop_scale_max", c.data.augment.crop_scale_max);
  read_opt(a, "hflip_prob", c.data.augment.hflip_prob);
  read_opt(a, "rotation_min_deg", c.data.augment.rotation_min_deg);
  read_opt(a, "rotation_max_deg", c.data.augment.rotation_max_deg);
  read_opt(a, "fill", c.data.augment.fill);

  const Json& p = section(j, "protocol");
  detail::reject_unknown(p, {"k", "seed", "epochs", "batch_size", "max_steps"}, "protocol.");
  read_opt(p, "k", c.protocol.k);
  read_opt(p, "seed", c.protocol.seed);
  read_opt(p, "epochs", c.protocol.epochs);
  read_opt(p, "batch_size", c.protocol.batch_size);
  read_opt(p, "max_steps", c.protocol.max_steps);

  read_opt(j, "output", c.output);
}

inline RunConfig from_json(const Json& j) {
  RunConfig c;
  merge_json(c, j);
  return c;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Config, "malformed JSON in '" + path.string() + "': " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << text;
  out.flush();
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for '" + path.string() + "'");
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  return from_json(read_json_file(path));
}

/// Canonical text form; hashing this string identifies a configuration.
inline std::string canonical_json(const Json& j) { return j.dump(); }

inline std::uint64_t config_hash(const ViTConfig& model) {
  RunConfig c;
  c.model = model;
  return fnv1a64(canonical_json(to_json(c)["model"]));
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace jointvit
