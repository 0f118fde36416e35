#pragma once

// Configuration types shared by the environments, model, training loop and
// CLI, with strict JSON (de)serialization: unknown keys and invalid values
// raise ConfigError.

#include <json.hpp>
#include <string>

#include "cswm/common.hpp"

namespace cswm {

using Json = nlohmann::json;

enum class EnvKind { shapes2d, physics3body };
enum class Variant { cswm, no_gnn, no_factors };
enum class Hinge { negative_only, full };

inline std::string to_string(EnvKind k) {
  return k == EnvKind::shapes2d ? "shapes2d" : "physics3body";
}
inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::cswm: return "cswm";
    case Variant::no_gnn: return "no_gnn";
    default: return "no_factors";
  }
}
inline std::string to_string(Hinge h) {
  return h == Hinge::negative_only ? "negative_only" : "full";
}

inline EnvKind env_kind_from_string(const std::string& s) {
  if (s == "shapes2d") return EnvKind::shapes2d;
  if (s == "physics3body") return EnvKind::physics3body;
  throw ConfigError("unknown env kind '" + s + "' (expected shapes2d or physics3body)");
}
inline Variant variant_from_string(const std::string& s) {
  if (s == "cswm") return Variant::cswm;
  if (s == "no_gnn") return Variant::no_gnn;
  if (s == "no_factors") return Variant::no_factors;
  throw ConfigError("unknown variant '" + s + "' (expected cswm, no_gnn or no_factors)");
}
inline Hinge hinge_from_string(const std::string& s) {
  if (s == "negative_only") return Hinge::negative_only;
  if (s == "full") return Hinge::full;
  throw ConfigError("unknown hinge '" + s + "' (expected negative_only or full)");
}

namespace detail {

inline void reject_unknown_keys(const Json& j, std::initializer_list<const char*> known,
                                const char* where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) ok = true;
    if (!ok) throw ConfigError(msg_cat("unknown key '", it.key(), "' in ", where));
  }
}

template <typename T>
void read_field(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(msg_cat("bad value for '", key, "': ", e.what()));
  }
}

}  // namespace detail

// Grid world constants: a 5x5 board of 10x10-pixel cells, five objects.
struct GridSpec {
  static constexpr int64_t size = 5;
  static constexpr int64_t objects = 5;
  static constexpr int64_t cell_px = 10;
  static constexpr int64_t image_px = size * cell_px;  // 50
};

struct EnvConfig {
  EnvKind kind = EnvKind::shapes2d;
  uint64_t seed = 0;

  // grid variants
  bool noop_action = false;    // adds a "stay" action; encoded as a zero row
  bool random_object = false;  // last object moves randomly after each agent move

  // physics integration (leapfrog) and rendering. Constants were calibrated
  // against the integrator invariants: energy drift under 1% over 100 steps,
  // momentum conserved, trajectories agreeing with a fine-step reference,
  // bodies typically staying in view for 20+ steps.
  float dt = 2.0f;
  float max_init_speed = 0.5f;   // per-axis uniform initial velocity bound
  float gravity = 11.0f;
  float softening = 16.0f;       // epsilon in the softened inverse-square law
  float fov = 15.5f;             // view covers [-fov, fov] in both axes
  float disc_radius = 3.0f;      // body radius in pixels
  float place_radius_min = 6.5f; // initial positions drawn from this annulus
  float place_radius_max = 11.5f;
  float min_separation = 16.8f;  // resample until all pairs are at least this far

  int64_t obs_channels() const { return kind == EnvKind::shapes2d ? 3 : 6; }
  int64_t obs_size() const { return GridSpec::image_px; }  // both envs render 50x50
  // number of one-hot action slots recorded per step; physics has no actions
  int64_t action_slots() const {
    return kind == EnvKind::shapes2d ? GridSpec::objects : 0;
  }

  Json to_json() const {
    Json j;
    j["kind"] = to_string(kind);
    j["seed"] = seed;
    j["noop_action"] = noop_action;
    j["random_object"] = random_object;
    j["dt"] = dt;
    j["max_init_speed"] = max_init_speed;
    j["gravity"] = gravity;
    j["softening"] = softening;
    j["fov"] = fov;
    j["disc_radius"] = disc_radius;
    j["place_radius_min"] = place_radius_min;
    j["place_radius_max"] = place_radius_max;
    j["min_separation"] = min_separation;
    return j;
  }

  static EnvConfig from_json(const Json& j) {
    detail::reject_unknown_keys(
        j,
        {"kind", "seed", "noop_action", "random_object", "dt", "max_init_speed",
         "gravity", "softening", "fov", "disc_radius", "place_radius_min",
         "place_radius_max", "min_separation"},
        "env config");
    EnvConfig c;
    if (j.contains("kind")) c.kind = env_kind_from_string(j.at("kind").get<std::string>());
    detail::read_field(j, "seed", c.seed);
    detail::read_field(j, "noop_action", c.noop_action);
    detail::read_field(j, "random_object", c.random_object);
    detail::read_field(j, "dt", c.dt);
    detail::read_field(j, "max_init_speed", c.max_init_speed);
    detail::read_field(j, "gravity", c.gravity);
    detail::read_field(j, "softening", c.softening);
    detail::read_field(j, "fov", c.fov);
    detail::read_field(j, "disc_radius", c.disc_radius);
    detail::read_field(j, "place_radius_min", c.place_radius_min);
    detail::read_field(j, "place_radius_max", c.place_radius_max);
    detail::read_field(j, "min_separation", c.min_separation);
    c.validate();
    return c;
  }

  void validate() const {
    if (kind == EnvKind::physics3body && (noop_action || random_object))
      throw ConfigError("noop_action and random_object apply to shapes2d only");
    if (dt <= 0) throw ConfigError("dt must be positive");
    if (softening <= 0) throw ConfigError("softening must be positive");
    if (fov <= 0) throw ConfigError("fov must be positive");
    if (place_radius_min <= 0 || place_radius_max < place_radius_min)
      throw ConfigError("placement annulus radii must satisfy 0 < min <= max");
  }
};

struct ModelConfig {
  EnvKind env = EnvKind::shapes2d;
  int64_t num_objects = 5;       // object slots K
  int64_t embed_dim = 2;         // per-object latent width D
  int64_t features_per_object = 1;
  int64_t hidden = 512;
  int64_t extractor_maps = 16;
  float sigma = 0.5f;
  float margin = 1.0f;           // hinge margin
  Variant variant = Variant::cswm;
  Hinge hinge = Hinge::negative_only;

  // The structureless variant folds all objects into one wide slot; the
  // extractor is unchanged, only the grouping downstream differs.
  int64_t slot_count() const { return variant == Variant::no_factors ? 1 : num_objects; }
  int64_t slot_dim() const {
    return variant == Variant::no_factors ? num_objects * embed_dim : embed_dim;
  }
  int64_t mask_size() const { return env == EnvKind::shapes2d ? 5 : 10; }
  int64_t encoder_input_dim() const {
    int64_t per_object = features_per_object * mask_size() * mask_size();
    return variant == Variant::no_factors ? num_objects * per_object : per_object;
  }
  // one-hot action width seen by the transition model, per slot
  int64_t action_dim() const {
    if (env != EnvKind::shapes2d) return 0;
    return variant == Variant::no_factors ? num_objects * 4 : 4;
  }
  float energy_scale() const { return 0.5f / (sigma * sigma); }

  Json to_json() const {
    Json j;
    j["env"] = to_string(env);
    j["num_objects"] = num_objects;
    j["embed_dim"] = embed_dim;
    j["features_per_object"] = features_per_object;
    j["hidden"] = hidden;
    j["extractor_maps"] = extractor_maps;
    j["sigma"] = sigma;
    j["margin"] = margin;
    j["variant"] = to_string(variant);
    j["hinge"] = to_string(hinge);
    return j;
  }

  static ModelConfig from_json(const Json& j) {
    detail::reject_unknown_keys(
        j,
        {"env", "num_objects", "embed_dim", "features_per_object", "hidden",
         "extractor_maps", "sigma", "margin", "variant", "hinge"},
        "model config");
    ModelConfig c;
    if (j.contains("env")) c.env = env_kind_from_string(j.at("env").get<std::string>());
    c.apply_env_defaults();
    detail::read_field(j, "num_objects", c.num_objects);
    detail::read_field(j, "embed_dim", c.embed_dim);
    detail::read_field(j, "features_per_object", c.features_per_object);
    detail::read_field(j, "hidden", c.hidden);
    detail::read_field(j, "extractor_maps", c.extractor_maps);
    detail::read_field(j, "sigma", c.sigma);
    detail::read_field(j, "margin", c.margin);
    if (j.contains("variant"))
      c.variant = variant_from_string(j.at("variant").get<std::string>());
    if (j.contains("hinge")) c.hinge = hinge_from_string(j.at("hinge").get<std::string>());
    c.validate();
    return c;
  }

  void apply_env_defaults() {
    if (env == EnvKind::physics3body) {
      num_objects = 3;
      embed_dim = 4;
    } else {
      num_objects = 5;
      embed_dim = 2;
    }
  }

  void validate() const {
    if (num_objects < 1) throw ConfigError("num_objects must be at least 1");
    if (embed_dim < 1) throw ConfigError("embed_dim must be at least 1");
    if (features_per_object < 1) throw ConfigError("features_per_object must be at least 1");
    if (hidden < 1) throw ConfigError("hidden must be at least 1");
    if (extractor_maps < 1) throw ConfigError("extractor_maps must be at least 1");
    if (sigma <= 0) throw ConfigError("sigma must be positive");
    if (margin < 0) throw ConfigError("margin must be non-negative");
  }
};

struct TrainConfig {
  int64_t epochs = 100;
  int64_t batch_size = 1024;
  float lr = 5e-4f;
  uint64_t seed = 1;

  Json to_json() const {
    Json j;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["lr"] = lr;
    j["seed"] = seed;
    return j;
  }

  static TrainConfig from_json(const Json& j) {
    detail::reject_unknown_keys(j, {"epochs", "batch_size", "lr", "seed"}, "train config");
    TrainConfig c;
    detail::read_field(j, "epochs", c.epochs);
    detail::read_field(j, "batch_size", c.batch_size);
    detail::read_field(j, "lr", c.lr);
    detail::read_field(j, "seed", c.seed);
    c.validate();
    return c;
  }

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
  }
};

// Top-level run description consumed by the CLI.
struct RunConfig {
  EnvConfig env;
  ModelConfig model;
  TrainConfig train;
  std::string data;  // dataset path
  std::string out;   // output directory

  Json to_json() const {
    Json j;
    j["env"] = env.to_json();
    j["model"] = model.to_json();
    j["train"] = train.to_json();
    if (!data.empty()) j["data"] = data;
    if (!out.empty()) j["out"] = out;
    return j;
  }

  static RunConfig from_json(const Json& j) {
    detail::reject_unknown_keys(j, {"env", "model", "train", "data", "out"}, "run config");
    RunConfig c;
    if (j.contains("env")) c.env = EnvConfig::from_json(j.at("env"));
    Json model_j = j.contains("model") ? j.at("model") : Json::object();
    // the model follows the env unless explicitly overridden
    if (!model_j.contains("env")) model_j["env"] = to_string(c.env.kind);
    c.model = ModelConfig::from_json(model_j);
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    detail::read_field(j, "data", c.data);
    detail::read_field(j, "out", c.out);
    return c;
  }
};

}  // namespace cswm
