#include <catch_amalgamated.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "cswm/data.hpp"

using namespace cswm;

namespace {

EnvConfig grid_env() { return EnvConfig{}; }

EnvConfig physics_env() {
  EnvConfig e;
  e.kind = EnvKind::physics3body;
  return e;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  REQUIRE(out.good());
}

std::string error_message(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("collected grid episodes chain and encode actions", "[data]") {
  ExperienceBuffer b = collect(grid_env(), 20, 10, 42, "train");
  REQUIRE(b.transition_count() == 200);
  REQUIRE(b.frame_size() == 3 * 50 * 50);
  REQUIRE(b.action_size() == 20);
  b.check();

  for (int64_t t = 0; t < b.transition_count() - 1; ++t) {
    if ((t + 1) % b.steps == 0) continue;  // episode boundary
    REQUIRE(std::memcmp(b.next_obs_at(t), b.obs_at(t + 1),
                        b.frame_size() * sizeof(float)) == 0);
  }

  // exactly one slot acts per step in the plain environment
  for (int64_t t = 0; t < b.transition_count(); ++t) {
    const uint8_t* row = b.action_at(t);
    int lit = 0;
    for (int k = 0; k < 20; ++k) lit += row[k];
    REQUIRE(lit == 1);
  }

  // the first frame of each episode is the rendered fresh reset
  Rng master(42);
  for (int64_t e = 0; e < b.episodes; ++e) {
    Rng ep_rng = master.derive(static_cast<uint64_t>(e));
    env::GridState s = env::grid_reset(ep_rng);
    std::vector<float> img(b.frame_size());
    env::render_grid(s, img.data());
    REQUIRE(std::memcmp(b.obs_at(e * b.steps), img.data(),
                        img.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("grid variants shape the recorded actions", "[data]") {
  EnvConfig noop_env = grid_env();
  noop_env.noop_action = true;
  ExperienceBuffer noop_buf = collect(noop_env, 20, 10, 7);
  noop_buf.check();
  int zero_rows = 0;
  for (int64_t t = 0; t < noop_buf.transition_count(); ++t) {
    const uint8_t* row = noop_buf.action_at(t);
    int lit = 0;
    for (int k = 0; k < 20; ++k) lit += row[k];
    REQUIRE(lit <= 1);
    zero_rows += lit == 0;
  }
  REQUIRE(zero_rows > 0);  // noop actions happen and encode as all-zero

  EnvConfig rand_env = grid_env();
  rand_env.random_object = true;
  ExperienceBuffer rand_buf = collect(rand_env, 20, 10, 7);
  rand_buf.check();
  for (int64_t t = 0; t < rand_buf.transition_count(); ++t) {
    const uint8_t* row = rand_buf.action_at(t);
    int agent_lit = 0, random_lit = 0;
    for (int k = 0; k < 16; ++k) agent_lit += row[k];
    for (int k = 16; k < 20; ++k) random_lit += row[k];
    REQUIRE(agent_lit == 1);   // agent controls one of the first four objects
    REQUIRE(random_lit == 1);  // the driven object's move is recorded too
  }
}

TEST_CASE("collected physics episodes pair consecutive frames", "[data]") {
  ExperienceBuffer b = collect(physics_env(), 5, 10, 3, "eval");
  REQUIRE(b.transition_count() == 50);
  REQUIRE(b.action_size() == 0);
  REQUIRE(b.actions.empty());
  b.check();

  constexpr int64_t half = 3 * 50 * 50;
  for (int64_t t = 0; t < b.transition_count() - 1; ++t) {
    if ((t + 1) % b.steps == 0) continue;
    // current frame of one observation is the previous frame of the next
    REQUIRE(std::memcmp(b.obs_at(t) + half, b.obs_at(t + 1), half * sizeof(float)) == 0);
    REQUIRE(std::memcmp(b.next_obs_at(t), b.obs_at(t + 1),
                        b.frame_size() * sizeof(float)) == 0);
  }

  // first observation pairs the init state with its first step
  Rng master(3);
  Rng ep_rng = master.derive(uint64_t{0});
  env::PhysicsState prev = env::physics_init(ep_rng, b.env);
  env::PhysicsState cur = env::physics_step(prev, b.env);
  std::vector<float> img(b.frame_size());
  env::render_physics(prev, cur, b.env, img.data());
  REQUIRE(std::memcmp(b.obs_at(0), img.data(), img.size() * sizeof(float)) == 0);
}

TEST_CASE("collection is deterministic per episode stream", "[data]") {
  ExperienceBuffer a = collect(grid_env(), 5, 4, 11);
  ExperienceBuffer b = collect(grid_env(), 5, 4, 11);
  REQUIRE(a.frames == b.frames);
  REQUIRE(a.actions == b.actions);
  REQUIRE(!(collect(grid_env(), 5, 4, 12).frames == a.frames));

  // episode content depends only on (seed, episode index)
  ExperienceBuffer prefix = collect(grid_env(), 3, 4, 11);
  REQUIRE(std::memcmp(prefix.frames.data(), a.frames.data(),
                      prefix.frames.size() * sizeof(float)) == 0);
  REQUIRE(std::memcmp(prefix.actions.data(), a.actions.data(),
                      prefix.actions.size()) == 0);

  REQUIRE_THROWS_AS(collect(grid_env(), 0, 4, 1), ContractError);
  REQUIRE_THROWS_AS(collect(grid_env(), 4, 0, 1), ContractError);
}

TEST_CASE("dataset files round trip bit-exactly", "[data]") {
  EnvConfig noop_env = grid_env();
  noop_env.noop_action = true;
  ExperienceBuffer b = collect(noop_env, 3, 4, 5, "train");
  const std::string path = "cswm_test_roundtrip.cswb";
  save_dataset(b, path);

  ExperienceBuffer loaded = load_dataset(path);
  REQUIRE(loaded.env.to_json() == b.env.to_json());
  REQUIRE(loaded.split == "train");
  REQUIRE(loaded.episodes == 3);
  REQUIRE(loaded.steps == 4);
  REQUIRE(std::memcmp(loaded.frames.data(), b.frames.data(),
                      b.frames.size() * sizeof(float)) == 0);
  REQUIRE(loaded.actions == b.actions);

  // a second save of the loaded buffer is byte-identical
  const std::string path2 = "cswm_test_roundtrip2.cswb";
  save_dataset(loaded, path2);
  REQUIRE(slurp(path) == slurp(path2));

  // declared sizes account for the whole file
  std::string bytes = slurp(path);
  uint64_t manifest_len = 0;
  for (int i = 7; i >= 0; --i)
    manifest_len = (manifest_len << 8) | static_cast<unsigned char>(bytes[8 + i]);
  REQUIRE(bytes.size() == 16 + manifest_len + b.frames.size() * 4 + b.actions.size());

  ExperienceBuffer phys = collect(physics_env(), 2, 3, 9, "eval");
  const std::string path3 = "cswm_test_roundtrip3.cswb";
  save_dataset(phys, path3);
  ExperienceBuffer phys_loaded = load_dataset(path3);
  REQUIRE(phys_loaded.env.to_json() == phys.env.to_json());
  REQUIRE(std::memcmp(phys_loaded.frames.data(), phys.frames.data(),
                      phys.frames.size() * sizeof(float)) == 0);
  REQUIRE(phys_loaded.actions.empty());

  std::remove(path.c_str());
  std::remove(path2.c_str());
  std::remove(path3.c_str());
}

TEST_CASE("dataset loader rejects malformed files", "[data]") {
  ExperienceBuffer b = collect(grid_env(), 2, 3, 1);
  const std::string path = "cswm_test_malformed.cswb";
  save_dataset(b, path);
  std::string good = slurp(path);

  std::string bad = good;
  bad[0] = 'X';
  spit(path, bad);
  REQUIRE(error_message([&] { load_dataset(path); }).find("bad magic") !=
          std::string::npos);

  bad = good;
  bad[4] ^= 1;
  spit(path, bad);
  REQUIRE(error_message([&] { load_dataset(path); }).find("unsupported version") !=
          std::string::npos);

  spit(path, good.substr(0, good.size() - 10));
  REQUIRE(error_message([&] { load_dataset(path); }).find("truncated") !=
          std::string::npos);

  spit(path, good.substr(0, 10));
  REQUIRE(error_message([&] { load_dataset(path); }).find("truncated") !=
          std::string::npos);

  spit(path, good + "x");
  REQUIRE(error_message([&] { load_dataset(path); }).find("trailing") !=
          std::string::npos);

  REQUIRE_THROWS_AS(load_dataset("cswm_test_nonexistent.cswb"), FormatError);

  std::remove(path.c_str());
}

TEST_CASE("batches sample without replacement and permute negatives", "[data]") {
  ExperienceBuffer b = collect(grid_env(), 20, 10, 13);
  Rng rng(99);
  Batch batch = sample_batch(b, 32, rng);

  REQUIRE(batch.obs.shape() == Shape{32, 3, 50, 50});
  REQUIRE(batch.next_obs.shape() == Shape{32, 3, 50, 50});
  REQUIRE(batch.actions.shape() == Shape{32, 5, 4});
  REQUIRE(batch.indices.size() == 32);
  REQUIRE(batch.neg_perm.size() == 32);

  std::set<int64_t> unique(batch.indices.begin(), batch.indices.end());
  REQUIRE(unique.size() == 32);
  std::set<int64_t> perm_vals(batch.neg_perm.begin(), batch.neg_perm.end());
  REQUIRE(perm_vals.size() == 32);
  REQUIRE(*perm_vals.begin() == 0);
  REQUIRE(*perm_vals.rbegin() == 31);

  int64_t fs = b.frame_size();
  for (int64_t i = 0; i < 32; ++i) {
    REQUIRE(std::memcmp(batch.obs.data() + i * fs, b.obs_at(batch.indices[i]),
                        fs * sizeof(float)) == 0);
    REQUIRE(std::memcmp(batch.next_obs.data() + i * fs,
                        b.next_obs_at(batch.indices[i]), fs * sizeof(float)) == 0);
    const uint8_t* arow = b.action_at(batch.indices[i]);
    for (int k = 0; k < 20; ++k)
      REQUIRE(batch.actions.data()[i * 20 + k] == static_cast<float>(arow[k]));
  }

  Tensor neg = batch.negative_obs();
  REQUIRE(neg.shape() == batch.obs.shape());
  for (int64_t i = 0; i < 32; ++i)
    REQUIRE(std::memcmp(neg.data() + i * fs,
                        batch.obs.data() + batch.neg_perm[i] * fs,
                        fs * sizeof(float)) == 0);

  REQUIRE_THROWS_AS(sample_batch(b, 201, rng), ContractError);
  REQUIRE_THROWS_AS(sample_batch(b, 0, rng), ContractError);

  // degenerate batch: the only possible negative is the positive itself
  Batch one = sample_batch(b, 1, rng);
  REQUIRE(one.neg_perm == std::vector<int64_t>{0});
  Tensor one_neg = one.negative_obs();
  REQUIRE(std::memcmp(one_neg.data(), one.obs.data(), fs * sizeof(float)) == 0);

  ExperienceBuffer phys = collect(physics_env(), 3, 5, 2);
  Batch phys_batch = sample_batch(phys, 4, rng);
  REQUIRE(!phys_batch.actions.defined());
  REQUIRE(phys_batch.obs.shape() == Shape{4, 6, 50, 50});
}

TEST_CASE("transition sampling frequencies are uniform", "[data]") {
  ExperienceBuffer b = collect(grid_env(), 20, 10, 21);
  const int64_t n = b.transition_count();
  std::vector<int> counts(n, 0);
  Rng rng(17);
  const int batches = 1000, bs = 50;
  for (int i = 0; i < batches; ++i) {
    Batch batch = sample_batch(b, bs, rng);
    for (int64_t idx : batch.indices) ++counts[idx];
  }
  // binomial(1000, 1/4) per transition; all counts within 3 sigma
  double mean = batches * static_cast<double>(bs) / n;
  double sigma = std::sqrt(batches * 0.25 * 0.75);
  for (int64_t i = 0; i < n; ++i) {
    INFO("transition " << i << " sampled " << counts[i] << " times");
    REQUIRE(std::abs(counts[i] - mean) <= 3.0 * sigma);
  }
}

TEST_CASE("disjoint seeds give disjoint episodes", "[data]") {
  ExperienceBuffer train = collect(grid_env(), 50, 5, 1, "train");
  ExperienceBuffer eval = collect(grid_env(), 50, 5, 2, "eval");
  std::set<uint64_t> train_hashes, eval_hashes;
  for (int64_t e = 0; e < train.episodes; ++e)
    train_hashes.insert(episode_hash(train, e));
  for (int64_t e = 0; e < eval.episodes; ++e)
    eval_hashes.insert(episode_hash(eval, e));
  REQUIRE(train_hashes.size() == 50);  // no duplicate episodes within a buffer
  REQUIRE(eval_hashes.size() == 50);
  for (uint64_t h : eval_hashes) REQUIRE(train_hashes.count(h) == 0);

  ExperienceBuffer ptrain = collect(physics_env(), 20, 5, 1);
  ExperienceBuffer peval = collect(physics_env(), 20, 5, 2);
  std::set<uint64_t> ph;
  for (int64_t e = 0; e < 20; ++e) ph.insert(episode_hash(ptrain, e));
  for (int64_t e = 0; e < 20; ++e) REQUIRE(ph.count(episode_hash(peval, e)) == 0);
}
