#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cat/error.hpp"
#include "cat/model.hpp"
#include "cat/train.hpp"

namespace cat {

// One run = one model config + one training config, serialized as a single
// flat JSON object whose keys are the snake_case field names of both structs.
struct RunConfig {
  CatConfig model;
  TrainConfig train;
};

namespace detail {

inline ImprintMode imprint_mode_from_string(const std::string& s) {
  if (s == "off") return ImprintMode::off;
  if (s == "constant") return ImprintMode::constant;
  if (s == "forward_decay") return ImprintMode::forward_decay;
  if (s == "backward_decay") return ImprintMode::backward_decay;
  if (s == "tanh_forward") return ImprintMode::tanh_forward;
  if (s == "tanh_backward") return ImprintMode::tanh_backward;
  throw ConfigError("unknown imprint_mode \"" + s +
                    "\" (off|constant|forward_decay|backward_decay|tanh_forward|tanh_backward)");
}

inline std::string to_string(ImprintMode m) {
  switch (m) {
    case ImprintMode::off: return "off";
    case ImprintMode::constant: return "constant";
    case ImprintMode::forward_decay: return "forward_decay";
    case ImprintMode::backward_decay: return "backward_decay";
    case ImprintMode::tanh_forward: return "tanh_forward";
    case ImprintMode::tanh_backward: return "tanh_backward";
  }
  return "off";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "cat") return ModelKind::cat;
  if (s == "vit_baseline") return ModelKind::vit_baseline;
  throw ConfigError("unknown model_kind \"" + s + "\" (cat|vit_baseline)");
}

inline std::string to_string(ModelKind k) {
  return k == ModelKind::cat ? "cat" : "vit_baseline";
}

inline PosMode pos_mode_from_string(const std::string& s) {
  if (s == "rotary") return PosMode::rotary;
  if (s == "sinusoidal") return PosMode::sinusoidal;
  if (s == "none") return PosMode::none;
  throw ConfigError("unknown pos_mode \"" + s + "\" (rotary|sinusoidal|none)");
}

inline std::string to_string(PosMode p) {
  switch (p) {
    case PosMode::rotary: return "rotary";
    case PosMode::sinusoidal: return "sinusoidal";
    case PosMode::none: return "none";
  }
  return "rotary";
}

inline GammaMode gamma_mode_from_string(const std::string& s) {
  if (s == "retnet") return GammaMode::retnet;
  if (s == "ones") return GammaMode::ones;
  throw ConfigError("unknown gamma_mode \"" + s + "\" (retnet|ones)");
}

inline std::string to_string(GammaMode g) { return g == GammaMode::retnet ? "retnet" : "ones"; }

inline std::vector<bool> mask_from_json(const nlohmann::json& v) {
  std::vector<bool> mask;
  if (v.is_array()) {
    for (const auto& e : v) {
      if (e.is_boolean())
        mask.push_back(e.get<bool>());
      else if (e.is_number_integer())
        mask.push_back(e.get<std::int64_t>() != 0);
      else
        throw ConfigError("imprint_layers entries must be booleans or 0/1");
    }
    return mask;
  }
  if (v.is_string()) {  // override form: comma-separated 0/1 or true/false
    std::string s = v.get<std::string>();
    std::size_t pos = 0;
    while (pos <= s.size()) {
      const std::size_t comma = std::min(s.find(',', pos), s.size());
      const std::string tok = s.substr(pos, comma - pos);
      if (tok == "1" || tok == "true")
        mask.push_back(true);
      else if (tok == "0" || tok == "false")
        mask.push_back(false);
      else
        throw ConfigError("imprint_layers entries must be 0/1 or true/false, got \"" + tok + "\"");
      pos = comma + 1;
      if (comma == s.size()) break;
    }
    return mask;
  }
  throw ConfigError("imprint_layers must be an array or a comma-separated list");
}

struct FieldBinding {
  std::function<void(RunConfig&, const nlohmann::json&)> set;
};

inline const std::map<std::string, FieldBinding>& field_bindings() {
  using J = nlohmann::json;
  static const std::map<std::string, FieldBinding> bindings = {
      // model
      {"image_size", {[](RunConfig& c, const J& v) { c.model.image_size = v.get<std::int64_t>(); }}},
      {"patch_size", {[](RunConfig& c, const J& v) { c.model.patch_size = v.get<std::int64_t>(); }}},
      {"channels", {[](RunConfig& c, const J& v) { c.model.channels = v.get<std::int64_t>(); }}},
      {"hidden", {[](RunConfig& c, const J& v) { c.model.hidden = v.get<std::int64_t>(); }}},
      {"heads", {[](RunConfig& c, const J& v) { c.model.heads = v.get<std::int64_t>(); }}},
      {"layers", {[](RunConfig& c, const J& v) { c.model.layers = v.get<std::int64_t>(); }}},
      {"ffn_ratio", {[](RunConfig& c, const J& v) { c.model.ffn_ratio = v.get<double>(); }}},
      {"num_classes", {[](RunConfig& c, const J& v) { c.model.num_classes = v.get<std::int64_t>(); }}},
      {"imprint_mode",
       {[](RunConfig& c, const J& v) { c.model.imprint_mode = imprint_mode_from_string(v.get<std::string>()); }}},
      {"imprint_layers", {[](RunConfig& c, const J& v) { c.model.imprint_layers = mask_from_json(v); }}},
      {"model_kind",
       {[](RunConfig& c, const J& v) { c.model.model_kind = model_kind_from_string(v.get<std::string>()); }}},
      {"pos_mode",
       {[](RunConfig& c, const J& v) { c.model.pos_mode = pos_mode_from_string(v.get<std::string>()); }}},
      {"gamma_mode",
       {[](RunConfig& c, const J& v) { c.model.gamma_mode = gamma_mode_from_string(v.get<std::string>()); }}},
      {"use_rotary", {[](RunConfig& c, const J& v) { c.model.use_rotary = v.get<bool>(); }}},
      {"aspect_correction", {[](RunConfig& c, const J& v) { c.model.aspect_correction = v.get<bool>(); }}},
      {"norm_eps", {[](RunConfig& c, const J& v) { c.model.norm_eps = v.get<double>(); }}},
      // train
      {"epochs", {[](RunConfig& c, const J& v) { c.train.epochs = v.get<std::int64_t>(); }}},
      {"batch_size", {[](RunConfig& c, const J& v) { c.train.batch_size = v.get<std::int64_t>(); }}},
      {"base_lr", {[](RunConfig& c, const J& v) { c.train.base_lr = v.get<double>(); }}},
      {"min_lr", {[](RunConfig& c, const J& v) { c.train.min_lr = v.get<double>(); }}},
      {"weight_decay", {[](RunConfig& c, const J& v) { c.train.weight_decay = v.get<double>(); }}},
      {"seed", {[](RunConfig& c, const J& v) { c.train.seed = v.get<std::uint64_t>(); }}},
      {"dataset", {[](RunConfig& c, const J& v) { c.train.dataset = v.get<std::string>(); }}},
      {"data_dir", {[](RunConfig& c, const J& v) { c.train.data_dir = v.get<std::string>(); }}},
      {"train_limit", {[](RunConfig& c, const J& v) { c.train.train_limit = v.get<std::int64_t>(); }}},
      {"eval_limit", {[](RunConfig& c, const J& v) { c.train.eval_limit = v.get<std::int64_t>(); }}},
      {"synthetic_count",
       {[](RunConfig& c, const J& v) { c.train.synthetic_count = v.get<std::int64_t>(); }}},
      {"max_steps", {[](RunConfig& c, const J& v) { c.train.max_steps = v.get<std::int64_t>(); }}},
      {"eval_every", {[](RunConfig& c, const J& v) { c.train.eval_every = v.get<std::int64_t>(); }}},
      {"hflip", {[](RunConfig& c, const J& v) { c.train.hflip = v.get<bool>(); }}},
      {"out_dir", {[](RunConfig& c, const J& v) { c.train.out_dir = v.get<std::string>(); }}},
  };
  return bindings;
}

inline void set_field(RunConfig& config, const std::string& key, const nlohmann::json& value) {
  const auto& bindings = field_bindings();
  const auto it = bindings.find(key);
  if (it == bindings.end()) throw ConfigError("unknown config key \"" + key + "\"");
  try {
    it->second.set(config, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("bad value for \"" + key + "\": " + e.what());
  }
}

}  // namespace detail

// Parse a full config object. Unknown keys are rejected, not ignored.
inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig config;
  for (const auto& [key, value] : j.items()) detail::set_field(config, key, value);
  return config;
}

// Apply one `--set key=value` override. The value text is interpreted as a
// JSON scalar when it parses as one (numbers, booleans), and as a plain
// string otherwise.
inline void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
  nlohmann::json v;
  try {
    v = nlohmann::json::parse(value);
  } catch (...) {
    v = value;
  }
  detail::set_field(config, key, v);
}

// Serialize with stable key order (the snapshot embedded in checkpoints and
// echoed by the CLI).
inline std::string run_config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["image_size"] = c.model.image_size;
  j["patch_size"] = c.model.patch_size;
  j["channels"] = c.model.channels;
  j["hidden"] = c.model.hidden;
  j["heads"] = c.model.heads;
  j["layers"] = c.model.layers;
  j["ffn_ratio"] = c.model.ffn_ratio;
  j["num_classes"] = c.model.num_classes;
  j["imprint_mode"] = detail::to_string(c.model.imprint_mode);
  j["imprint_layers"] = std::vector<int>(c.model.imprint_layers.begin(), c.model.imprint_layers.end());
  j["model_kind"] = detail::to_string(c.model.model_kind);
  j["pos_mode"] = detail::to_string(c.model.pos_mode);
  j["gamma_mode"] = detail::to_string(c.model.gamma_mode);
  j["use_rotary"] = c.model.use_rotary;
  j["aspect_correction"] = c.model.aspect_correction;
  j["norm_eps"] = c.model.norm_eps;
  j["epochs"] = c.train.epochs;
  j["batch_size"] = c.train.batch_size;
  j["base_lr"] = c.train.base_lr;
  j["min_lr"] = c.train.min_lr;
  j["weight_decay"] = c.train.weight_decay;
  j["seed"] = c.train.seed;
  j["dataset"] = c.train.dataset;
  j["data_dir"] = c.train.data_dir;
  j["train_limit"] = c.train.train_limit;
  j["eval_limit"] = c.train.eval_limit;
  j["synthetic_count"] = c.train.synthetic_count;
  j["max_steps"] = c.train.max_steps;
  j["eval_every"] = c.train.eval_every;
  j["hflip"] = c.train.hflip;
  j["out_dir"] = c.train.out_dir;
  return j.dump(2);
}

}  // namespace cat
