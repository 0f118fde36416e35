#pragma once

// Experience collection and storage. An episode of S transitions is kept as
// S+1 consecutive rendered frames plus S action rows, so transition t's
// next_obs and transition t+1's obs are literally the same bytes. Files use
// the "CSWB" container: fixed header, JSON manifest, raw little-endian
// payloads (float32 frames, u8 actions).

#include <cstring>
#include <string>
#include <vector>

#include "cswm/checkpoint.hpp"
#include "cswm/config.hpp"
#include "cswm/env/grid.hpp"
#include "cswm/env/physics.hpp"
#include "cswm/tensor.hpp"

namespace cswm {

struct ExperienceBuffer {
  EnvConfig env;
  std::string split;
  int64_t episodes = 0;
  int64_t steps = 0;  // transitions per episode
  std::vector<float> frames;    // episodes x (steps+1) x frame_size
  std::vector<uint8_t> actions; // episodes x steps x action_size, empty for physics

  int64_t frame_size() const { return env.obs_channels() * GridSpec::image_px * GridSpec::image_px; }
  int64_t action_size() const {
    return env.kind == EnvKind::shapes2d ? GridSpec::objects * 4 : 0;
  }
  int64_t transition_count() const { return episodes * steps; }

  const float* obs_at(int64_t t) const {
    CSWM_CHECK(t >= 0 && t < transition_count(), "transition index ", t, " out of range");
    int64_t e = t / steps, s = t % steps;
    return frames.data() + (e * (steps + 1) + s) * frame_size();
  }
  const float* next_obs_at(int64_t t) const {
    CSWM_CHECK(t >= 0 && t < transition_count(), "transition index ", t, " out of range");
    int64_t e = t / steps, s = t % steps;
    return frames.data() + (e * (steps + 1) + s + 1) * frame_size();
  }
  const uint8_t* action_at(int64_t t) const {
    CSWM_CHECK(action_size() > 0, "this environment stores no actions");
    CSWM_CHECK(t >= 0 && t < transition_count(), "transition index ", t, " out of range");
    return actions.data() + t * action_size();
  }

  // Structural and value invariants; throws on violation.
  void check() const {
    CSWM_CHECK(episodes > 0 && steps > 0, "buffer must hold at least one transition");
    CSWM_CHECK(static_cast<int64_t>(frames.size()) == episodes * (steps + 1) * frame_size(),
               "frame storage size mismatch");
    CSWM_CHECK(static_cast<int64_t>(actions.size()) == transition_count() * action_size(),
               "action storage size mismatch");
    for (float v : frames)
      CSWM_CHECK(v >= 0.0f && v <= 1.0f, "frame value outside [0,1]");
    for (int64_t t = 0; t < transition_count(); ++t) {
      if (action_size() == 0) continue;
      const uint8_t* row = action_at(t);
      for (int k = 0; k < GridSpec::objects; ++k) {
        int lit = 0;
        for (int d = 0; d < 4; ++d) {
          CSWM_CHECK(row[k * 4 + d] <= 1, "action entries are 0/1");
          lit += row[k * 4 + d];
        }
        CSWM_CHECK(lit <= 1, "action row must be one-hot or zero");
      }
    }
  }
};

// Content hash of one episode's observation sequence.
inline uint64_t episode_hash(const ExperienceBuffer& b, int64_t episode) {
  CSWM_CHECK(episode >= 0 && episode < b.episodes, "episode index out of range");
  const float* base = b.frames.data() + episode * (b.steps + 1) * b.frame_size();
  return fnv1a64(base, (b.steps + 1) * b.frame_size() * sizeof(float));
}

namespace detail {

inline void collect_grid_episode(const EnvConfig& env, int64_t steps, Rng& rng,
                                 float* frames, uint8_t* actions) {
  constexpr int64_t frame = 3 * GridSpec::image_px * GridSpec::image_px;
  constexpr int64_t arow = GridSpec::objects * 4;
  env::GridState state = env::grid_reset(rng);
  env::render_grid(state, frames);
  for (int64_t t = 0; t < steps; ++t) {
    env::GridAction a = env::sample_grid_action(rng, env);
    env::Direction random_dir = env::Direction::noop;
    state = env::grid_step(state, a, env, &rng, &random_dir);
    uint8_t* row = actions + t * arow;
    std::memset(row, 0, arow);
    if (a.dir != env::Direction::noop)
      row[a.object * 4 + static_cast<int>(a.dir)] = 1;
    if (env.random_object)
      row[(GridSpec::objects - 1) * 4 + static_cast<int>(random_dir)] = 1;
    env::render_grid(state, frames + (t + 1) * frame);
  }
}

// One warm-up step before the first stored frame so every observation pairs
// two real consecutive frames.
inline void collect_physics_episode(const EnvConfig& env, int64_t steps, Rng& rng,
                                    float* frames) {
  constexpr int64_t frame = 6 * GridSpec::image_px * GridSpec::image_px;
  env::PhysicsState prev = env::physics_init(rng, env);
  env::PhysicsState cur = env::physics_step(prev, env);
  env::render_physics(prev, cur, env, frames);
  for (int64_t t = 0; t < steps; ++t) {
    prev = cur;
    cur = env::physics_step(cur, env);
    env::render_physics(prev, cur, env, frames + (t + 1) * frame);
  }
}

}  // namespace detail

// Random-policy experience. Episode e uses an independent stream derived from
// (seed, e), so the buffer does not depend on collection order.
inline ExperienceBuffer collect(const EnvConfig& env, int64_t episodes,
                                int64_t steps, uint64_t seed,
                                std::string split = "") {
  CSWM_CHECK(episodes > 0 && steps > 0, "collect needs positive episode and step counts");
  env.validate();
  ExperienceBuffer b;
  b.env = env;
  b.split = std::move(split);
  b.episodes = episodes;
  b.steps = steps;
  b.frames.resize(episodes * (steps + 1) * b.frame_size());
  b.actions.resize(b.transition_count() * b.action_size());
  Rng master(seed);
  for (int64_t e = 0; e < episodes; ++e) {
    Rng ep_rng = master.derive(static_cast<uint64_t>(e));
    float* frames = b.frames.data() + e * (steps + 1) * b.frame_size();
    if (env.kind == EnvKind::shapes2d)
      detail::collect_grid_episode(env, steps, ep_rng, frames,
                                   b.actions.data() + e * steps * b.action_size());
    else
      detail::collect_physics_episode(env, steps, ep_rng, frames);
  }
  return b;
}

namespace detail {

constexpr uint32_t kDatasetVersion = 1;
constexpr char kDatasetMagic[4] = {'C', 'S', 'W', 'B'};

}  // namespace detail

inline void save_dataset(const ExperienceBuffer& b, const std::string& path) {
  b.check();
  uint64_t frames_bytes = b.frames.size() * sizeof(float);
  uint64_t actions_bytes = b.actions.size();
  Json manifest = {
      {"env_config", b.env.to_json()},
      {"split", b.split},
      {"episodes", b.episodes},
      {"steps", b.steps},
      {"frame_shape", {b.env.obs_channels(), GridSpec::image_px, GridSpec::image_px}},
      {"action_size", b.action_size()},
      {"payloads",
       {{"frames", {{"offset", 0}, {"nbytes", frames_bytes}, {"dtype", "f32"}}},
        {"actions",
         {{"offset", frames_bytes}, {"nbytes", actions_bytes}, {"dtype", "u8"}}}}}};
  std::string head;
  head.append(detail::kDatasetMagic, 4);
  detail::put_u32_le(head, detail::kDatasetVersion);
  std::string manifest_str = manifest.dump();
  detail::put_u64_le(head, manifest_str.size());
  head += manifest_str;

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  bool ok = std::fwrite(head.data(), 1, head.size(), f) == head.size();
  if (ok && !b.frames.empty()) {
    if (detail::host_little_endian()) {
      ok = std::fwrite(b.frames.data(), 1, frames_bytes, f) == frames_bytes;
    } else {
      std::string chunk;
      for (size_t at = 0; at < b.frames.size() && ok; at += 1 << 20) {
        size_t n = std::min(b.frames.size() - at, size_t{1} << 20);
        chunk.clear();
        detail::append_f32_le(chunk, b.frames.data() + at, static_cast<int64_t>(n));
        ok = std::fwrite(chunk.data(), 1, chunk.size(), f) == chunk.size();
      }
    }
  }
  if (ok && !b.actions.empty())
    ok = std::fwrite(b.actions.data(), 1, actions_bytes, f) == actions_bytes;
  ok = std::fclose(f) == 0 && ok;
  if (!ok) throw FormatError("short write to '" + path + "'");
}

inline ExperienceBuffer load_dataset(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw FormatError("cannot open '" + path + "'");
  struct Closer {
    std::FILE* f;
    ~Closer() { if (f) std::fclose(f); }
  } closer{f};

  unsigned char fixed[16];
  if (std::fread(fixed, 1, 16, f) != 16)
    throw FormatError("'" + path + "': truncated at offset 0, no header");
  if (std::memcmp(fixed, detail::kDatasetMagic, 4) != 0)
    throw FormatError("'" + path + "': bad magic at offset 0");
  uint32_t version = detail::get_u32_le(fixed + 4);
  if (version != detail::kDatasetVersion)
    throw FormatError("'" + path + "': unsupported version " + std::to_string(version));
  uint64_t manifest_len = detail::get_u64_le(fixed + 8);
  if (manifest_len > (uint64_t{1} << 30))
    throw FormatError("'" + path + "': implausible manifest length");
  std::string manifest_str(manifest_len, '\0');
  if (std::fread(manifest_str.data(), 1, manifest_len, f) != manifest_len)
    throw FormatError("'" + path + "': truncated at offset 16, incomplete manifest");

  Json manifest;
  try {
    manifest = Json::parse(manifest_str);
  } catch (const Json::exception& e) {
    throw FormatError("'" + path + "': manifest is not valid JSON: " + e.what());
  }
  ExperienceBuffer b;
  uint64_t frames_bytes, actions_bytes;
  try {
    b.env = EnvConfig::from_json(manifest.at("env_config"));
    b.split = manifest.at("split").get<std::string>();
    b.episodes = manifest.at("episodes").get<int64_t>();
    b.steps = manifest.at("steps").get<int64_t>();
    if (b.episodes <= 0 || b.steps <= 0)
      throw FormatError("'" + path + "': non-positive episode or step count");
    if (manifest.at("frame_shape") !=
        Json({b.env.obs_channels(), GridSpec::image_px, GridSpec::image_px}))
      throw FormatError("'" + path + "': frame shape does not match the environment");
    if (manifest.at("action_size").get<int64_t>() != b.action_size())
      throw FormatError("'" + path + "': action size does not match the environment");
    frames_bytes = manifest.at("payloads").at("frames").at("nbytes").get<uint64_t>();
    actions_bytes = manifest.at("payloads").at("actions").at("nbytes").get<uint64_t>();
    uint64_t want_frames =
        static_cast<uint64_t>(b.episodes * (b.steps + 1) * b.frame_size()) * 4;
    uint64_t want_actions = static_cast<uint64_t>(b.transition_count() * b.action_size());
    if (frames_bytes != want_frames || actions_bytes != want_actions)
      throw FormatError("'" + path + "': payload sizes disagree with counts");
    if (manifest.at("payloads").at("frames").at("offset").get<uint64_t>() != 0 ||
        manifest.at("payloads").at("actions").at("offset").get<uint64_t>() != frames_bytes)
      throw FormatError("'" + path + "': unexpected payload layout");
  } catch (const Json::exception& e) {
    throw FormatError("'" + path + "': manifest incomplete: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("'" + path + "': bad embedded env config: " + e.what());
  }

  uint64_t payload_base = 16 + manifest_len;
  b.frames.resize(frames_bytes / 4);
  if (!b.frames.empty()) {
    if (std::fread(b.frames.data(), 1, frames_bytes, f) != frames_bytes)
      throw FormatError("'" + path + "': truncated at offset " +
                        std::to_string(payload_base) + ", incomplete frames");
    if (!detail::host_little_endian()) {
      for (float& v : b.frames) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        unsigned char* p = reinterpret_cast<unsigned char*>(&bits);
        bits = detail::get_u32_le(p);
        std::memcpy(&v, &bits, 4);
      }
    }
  }
  b.actions.resize(actions_bytes);
  if (!b.actions.empty() &&
      std::fread(b.actions.data(), 1, actions_bytes, f) != actions_bytes)
    throw FormatError("'" + path + "': truncated at offset " +
                      std::to_string(payload_base + frames_bytes) +
                      ", incomplete actions");
  unsigned char extra;
  if (std::fread(&extra, 1, 1, f) == 1)
    throw FormatError("'" + path + "': trailing bytes after declared payloads");
  b.check();
  return b;
}

// One contrastive training batch. Negatives are a permutation of the batch's
// own observations, kept as indices; negative_obs() materializes them.
struct Batch {
  Tensor obs, next_obs, actions;  // actions stays undefined for physics
  std::vector<int64_t> indices;
  std::vector<int64_t> neg_perm;

  Tensor negative_obs() const {
    int64_t n = obs.dim(0), row = obs.numel() / n;
    Tensor out = Tensor::zeros(obs.shape());
    for (int64_t i = 0; i < n; ++i)
      std::memcpy(out.data() + i * row, obs.data() + neg_perm[i] * row,
                  static_cast<size_t>(row) * sizeof(float));
    return out;
  }
};

// Materialize the given transitions as a batch, drawing a fresh negative
// permutation from rng. Used both for uniform sampling and for full passes.
inline Batch make_batch(const ExperienceBuffer& b, std::vector<int64_t> indices,
                        Rng& rng) {
  int64_t n = b.transition_count();
  int64_t batch_size = static_cast<int64_t>(indices.size());
  CSWM_CHECK(batch_size > 0, "batch size must be positive");
  for (int64_t t : indices)
    CSWM_CHECK(t >= 0 && t < n, "transition index ", t, " out of range");

  Batch out;
  out.indices = std::move(indices);
  out.neg_perm = rng.permutation(batch_size);
  int64_t fs = b.frame_size();
  out.obs = Tensor::zeros({batch_size, b.env.obs_channels(), GridSpec::image_px,
                           GridSpec::image_px});
  out.next_obs = Tensor::zeros(out.obs.shape());
  for (int64_t i = 0; i < batch_size; ++i) {
    std::memcpy(out.obs.data() + i * fs, b.obs_at(out.indices[i]),
                static_cast<size_t>(fs) * sizeof(float));
    std::memcpy(out.next_obs.data() + i * fs, b.next_obs_at(out.indices[i]),
                static_cast<size_t>(fs) * sizeof(float));
  }
  if (b.action_size() > 0) {
    out.actions = Tensor::zeros({batch_size, GridSpec::objects, 4});
    for (int64_t i = 0; i < batch_size; ++i) {
      const uint8_t* row = b.action_at(out.indices[i]);
      for (int64_t k = 0; k < b.action_size(); ++k)
        out.actions.data()[i * b.action_size() + k] = row[k];
    }
  }
  return out;
}

// Uniform sample of batch_size distinct transitions plus a negative
// permutation. batch_size may not exceed the buffer's transition count.
inline Batch sample_batch(const ExperienceBuffer& b, int64_t batch_size, Rng& rng) {
  int64_t n = b.transition_count();
  CSWM_CHECK(batch_size > 0, "batch size must be positive");
  CSWM_CHECK(batch_size <= n, "batch size ", batch_size, " exceeds the ", n,
             " transitions in the buffer");
  std::vector<int64_t> pool(n);
  for (int64_t i = 0; i < n; ++i) pool[i] = i;
  for (int64_t i = 0; i < batch_size; ++i) {
    int64_t j = i + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n - i)));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(batch_size);
  return make_batch(b, std::move(pool), rng);
}

}  // namespace cswm
