#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "cswm/env/physics.hpp"
#include "support/ref.hpp"

using namespace cswm;
using namespace cswm::env;

namespace {

constexpr int64_t kPx = GridSpec::image_px;

bool states_equal(const PhysicsState& a, const PhysicsState& b) {
  for (int i = 0; i < kBodies; ++i)
    if (a.bodies[i].px != b.bodies[i].px || a.bodies[i].py != b.bodies[i].py ||
        a.bodies[i].vx != b.bodies[i].vx || a.bodies[i].vy != b.bodies[i].vy)
      return false;
  return true;
}

ref::ThreeBody to_ref(const PhysicsState& s) {
  ref::ThreeBody r;
  for (int i = 0; i < kBodies; ++i) {
    r.px[i] = s.bodies[i].px;
    r.py[i] = s.bodies[i].py;
    r.vx[i] = s.bodies[i].vx;
    r.vy[i] = s.bodies[i].vy;
    r.mass[i] = s.mass[i];
  }
  return r;
}

EnvConfig physics_cfg() {
  EnvConfig cfg;
  cfg.kind = EnvKind::physics3body;
  return cfg;
}

std::vector<float> render_pair(const PhysicsState& prev, const PhysicsState& cur,
                               const EnvConfig& cfg) {
  std::vector<float> img(6 * kPx * kPx);
  render_physics(prev, cur, cfg, img.data());
  return img;
}

}  // namespace

TEST_CASE("physics init is deterministic and within bounds", "[physics]") {
  EnvConfig cfg = physics_cfg();
  REQUIRE(states_equal(physics_init(77, cfg), physics_init(77, cfg)));
  REQUIRE(!states_equal(physics_init(77, cfg), physics_init(78, cfg)));

  for (uint64_t seed = 0; seed < 10000; ++seed) {
    PhysicsState s = physics_init(seed, cfg);
    for (int i = 0; i < kBodies; ++i) {
      const Body& b = s.bodies[i];
      REQUIRE(std::abs(b.vx) <= cfg.max_init_speed);
      REQUIRE(std::abs(b.vy) <= cfg.max_init_speed);
      float radius = std::sqrt(b.px * b.px + b.py * b.py);
      REQUIRE(radius >= cfg.place_radius_min - 1e-4f);
      REQUIRE(radius <= cfg.place_radius_max + 1e-4f);
      REQUIRE(std::abs(b.px) < cfg.fov);
      REQUIRE(std::abs(b.py) < cfg.fov);
    }
    for (int i = 0; i < kBodies; ++i)
      for (int j = i + 1; j < kBodies; ++j) {
        float dx = s.bodies[j].px - s.bodies[i].px;
        float dy = s.bodies[j].py - s.bodies[i].py;
        float dist = std::sqrt(dx * dx + dy * dy);
        REQUIRE(dist >= cfg.min_separation - 1e-4f);
        REQUIRE(dist > cfg.softening);
      }
  }
}

TEST_CASE("momentum is conserved step by step", "[physics]") {
  EnvConfig cfg = physics_cfg();

  // two equal masses with zero net momentum; the third body carries no mass
  // so the pair's symmetry is exact
  PhysicsState pair;
  pair.mass = {1.0f, 1.0f, 0.0f};
  pair.bodies[0] = {6.0f, 1.0f, 0.3f, -0.2f};
  pair.bodies[1] = {-6.0f, -1.0f, -0.3f, 0.2f};
  pair.bodies[2] = {0.0f, 12.0f, 0.0f, 0.0f};
  for (int t = 0; t < 100; ++t) {
    pair = physics_step(pair, cfg);
    double mx, my;
    physics_momentum(pair, &mx, &my);
    REQUIRE(std::abs(mx) < 1e-6);
    REQUIRE(std::abs(my) < 1e-6);
  }

  // generic three-body states drift less than 1e-6 per step
  for (uint64_t seed = 100; seed < 120; ++seed) {
    PhysicsState s = physics_init(seed, cfg);
    for (int t = 0; t < 100; ++t) {
      double mx0, my0, mx1, my1;
      physics_momentum(s, &mx0, &my0);
      s = physics_step(s, cfg);
      physics_momentum(s, &mx1, &my1);
      REQUIRE(std::abs(mx1 - mx0) < 1e-6);
      REQUIRE(std::abs(my1 - my0) < 1e-6);
    }
  }
}

TEST_CASE("zero gravity gives straight lines", "[physics]") {
  EnvConfig cfg = physics_cfg();
  cfg.gravity = 0.0f;
  PhysicsState s = physics_init(5, cfg);
  PhysicsState expect = s;
  for (int t = 0; t < 20; ++t) {
    s = physics_step(s, cfg);
    for (int i = 0; i < kBodies; ++i) {
      // same additive update the integrator performs, so equality is exact
      expect.bodies[i].px += cfg.dt * expect.bodies[i].vx;
      expect.bodies[i].py += cfg.dt * expect.bodies[i].vy;
      REQUIRE(s.bodies[i].px == expect.bodies[i].px);
      REQUIRE(s.bodies[i].py == expect.bodies[i].py);
      REQUIRE(s.bodies[i].vx == expect.bodies[i].vx);
      REQUIRE(s.bodies[i].vy == expect.bodies[i].vy);
    }
  }
}

TEST_CASE("stepper matches a high-resolution RK4 reference", "[physics]") {
  EnvConfig cfg = physics_cfg();
  const double dt = 0.5;
  double worst = 0.0;
  for (uint64_t seed = 300; seed < 305; ++seed) {
    PhysicsState s = physics_init(seed, cfg);
    ref::ThreeBody oracle = to_ref(s);
    for (int t = 0; t < 100; ++t) {
      s = physics_step(s, cfg, static_cast<float>(dt));
      oracle = ref::three_body_rk4(oracle, cfg.gravity, cfg.softening, dt, 100);
      for (int i = 0; i < kBodies; ++i) {
        worst = std::max(worst, std::abs(s.bodies[i].px - oracle.px[i]));
        worst = std::max(worst, std::abs(s.bodies[i].py - oracle.py[i]));
      }
    }
  }
  INFO("max position deviation from RK4 " << worst);
  REQUIRE(worst < 1e-2);
}

TEST_CASE("energy drift stays small and views stay populated", "[physics]") {
  EnvConfig cfg = physics_cfg();
  std::vector<int> in_view_steps;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    PhysicsState s = physics_init(seed, cfg);
    double e0 = physics_energy(s, cfg);
    REQUIRE(e0 < 0.0);  // bound systems, so drift has a stable scale
    int first_exit = 101;
    for (int t = 1; t <= 100; ++t) {
      s = physics_step(s, cfg);
      double drift = std::abs(physics_energy(s, cfg) - e0) / std::abs(e0);
      INFO("seed " << seed << " step " << t << " drift " << drift);
      REQUIRE(drift < 0.01);
      if (first_exit > 100)
        for (int i = 0; i < kBodies; ++i)
          if (std::abs(s.bodies[i].px) > cfg.fov ||
              std::abs(s.bodies[i].py) > cfg.fov)
            first_exit = t;
    }
    in_view_steps.push_back(first_exit);
  }
  std::nth_element(in_view_steps.begin(), in_view_steps.begin() + 50,
                   in_view_steps.end());
  REQUIRE(in_view_steps[50] >= 20);  // typical trajectories stay visible
}

TEST_CASE("stepper contracts", "[physics]") {
  EnvConfig cfg = physics_cfg();
  PhysicsState s = physics_init(1, cfg);
  REQUIRE_THROWS_AS(physics_step(s, cfg, 0.0f), ContractError);
  REQUIRE_THROWS_AS(physics_step(s, cfg, -1.0f), ContractError);

  // separation overflows to inf, making the force non-finite
  PhysicsState huge = s;
  huge.bodies[0].px = 3e38f;
  huge.bodies[1].px = -3e38f;
  REQUIRE_THROWS_AS(physics_step(huge, cfg), NumericError);
}

TEST_CASE("physics rendering stacks two frames", "[physics]") {
  EnvConfig cfg = physics_cfg();
  PhysicsState s = physics_init(9, cfg);

  // stationary pair: both frames identical
  std::vector<float> img = render_pair(s, s, cfg);
  for (float v : img) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }
  // disc interiors saturate; only the one-pixel edge feather is fractional
  int64_t full = 0, partial = 0;
  for (float v : img) {
    if (v == 1.0f) ++full;
    if (v > 0.0f && v < 1.0f) ++partial;
  }
  REQUIRE(full > 0);
  REQUIRE(partial > 0);
  for (int64_t i = 0; i < 3 * kPx * kPx; ++i)
    REQUIRE(img[i] == img[3 * kPx * kPx + i]);

  // sub-pixel motion must show: a quarter-pixel shift changes the frame
  PhysicsState shifted = s;
  shifted.bodies[0].px += 0.25f * (cfg.fov * 2.0f / kPx);
  std::vector<float> img_shift = render_pair(shifted, shifted, cfg);
  bool changed = false;
  for (int64_t i = 0; i < 3 * kPx * kPx; ++i) changed = changed || img[i] != img_shift[i];
  REQUIRE(changed);

  // frames land in the right channel halves
  PhysicsState next = physics_step(s, cfg);
  std::vector<float> pair_img = render_pair(s, next, cfg);
  std::vector<float> prev_only(3 * kPx * kPx), cur_only(3 * kPx * kPx);
  env::detail::render_physics_frame(s, cfg, prev_only.data());
  env::detail::render_physics_frame(next, cfg, cur_only.data());
  for (int64_t i = 0; i < 3 * kPx * kPx; ++i) {
    REQUIRE(pair_img[i] == prev_only[i]);
    REQUIRE(pair_img[3 * kPx * kPx + i] == cur_only[i]);
  }

  // a body far outside the view leaves its channel empty
  PhysicsState gone = s;
  gone.bodies[0].px = 100.0f;
  std::vector<float> img_gone = render_pair(gone, gone, cfg);
  for (int64_t p = 0; p < kPx * kPx; ++p) {
    REQUIRE(img_gone[p] == 0.0f);
    REQUIRE(img_gone[3 * kPx * kPx + p] == 0.0f);
  }
  // the remaining bodies still render
  bool any = false;
  for (int64_t p = kPx * kPx; p < 3 * kPx * kPx; ++p) any = any || img_gone[p] != 0;
  REQUIRE(any);
}

TEST_CASE("disc centroids invert to world positions", "[physics]") {
  EnvConfig cfg = physics_cfg();
  for (uint64_t seed = 0; seed < 200; ++seed) {
    PhysicsState s = physics_init(seed, cfg);
    std::vector<float> frame(3 * kPx * kPx);
    env::detail::render_physics_frame(s, cfg, frame.data());
    for (int i = 0; i < kBodies; ++i) {
      double sum_r = 0, sum_c = 0;
      int64_t count = 0;
      for (int64_t r = 0; r < kPx; ++r)
        for (int64_t c = 0; c < kPx; ++c)
          if (frame[i * kPx * kPx + r * kPx + c] != 0.0f) {
            sum_r += r + 0.5;
            sum_c += c + 0.5;
            ++count;
          }
      REQUIRE(count > 0);
      double err_c = sum_c / count - world_to_px_col(s.bodies[i].px, cfg);
      double err_r = sum_r / count - world_to_px_row(s.bodies[i].py, cfg);
      REQUIRE(std::abs(err_c) < 1.0);
      REQUIRE(std::abs(err_r) < 1.0);
    }
  }
}

TEST_CASE("world to pixel transform conventions", "[physics]") {
  EnvConfig cfg = physics_cfg();
  REQUIRE(world_to_px_col(0.0f, cfg) == Catch::Approx(kPx / 2.0));
  REQUIRE(world_to_px_col(-cfg.fov, cfg) == Catch::Approx(0.0));
  REQUIRE(world_to_px_col(cfg.fov, cfg) == Catch::Approx(static_cast<double>(kPx)));
  REQUIRE(world_to_px_row(cfg.fov, cfg) == Catch::Approx(0.0));   // y up
  REQUIRE(world_to_px_row(-cfg.fov, cfg) == Catch::Approx(static_cast<double>(kPx)));

  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    float x = rng.uniform_range(-cfg.fov, cfg.fov);
    float y = rng.uniform_range(-cfg.fov, cfg.fov);
    REQUIRE(px_col_to_world(world_to_px_col(x, cfg), cfg) == Catch::Approx(x).margin(1e-4));
    REQUIRE(px_row_to_world(world_to_px_row(y, cfg), cfg) == Catch::Approx(y).margin(1e-4));
  }
}

TEST_CASE("same seed gives bit-identical trajectories", "[physics]") {
  EnvConfig cfg = physics_cfg();
  PhysicsState a = physics_init(12345, cfg);
  PhysicsState b = physics_init(12345, cfg);
  for (int t = 0; t < 50; ++t) {
    a = physics_step(a, cfg);
    b = physics_step(b, cfg);
    REQUIRE(states_equal(a, b));
  }
}
