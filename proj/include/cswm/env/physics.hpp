#pragma once

// Three-body gravitational toy: softened Newtonian pairwise attraction
// integrated with leapfrog (kick-drift-kick velocity Verlet). Pair forces are
// applied antisymmetrically so momentum is conserved to float roundoff.

#include <array>
#include <cmath>

#include "cswm/common.hpp"
#include "cswm/config.hpp"

namespace cswm::env {

inline constexpr int kBodies = 3;

struct Body {
  float px = 0, py = 0;
  float vx = 0, vy = 0;
};

struct PhysicsState {
  std::array<Body, kBodies> bodies;
  std::array<float, kBodies> mass = {1.0f, 1.0f, 1.0f};
};

struct Accel {
  std::array<float, kBodies> ax = {}, ay = {};
};

inline Accel physics_accel(const PhysicsState& s, const EnvConfig& cfg) {
  Accel a;
  float eps2 = cfg.softening * cfg.softening;
  for (int i = 0; i < kBodies; ++i)
    for (int j = i + 1; j < kBodies; ++j) {
      float dx = s.bodies[j].px - s.bodies[i].px;
      float dy = s.bodies[j].py - s.bodies[i].py;
      float r2 = dx * dx + dy * dy + eps2;
      float inv = cfg.gravity / (r2 * std::sqrt(r2));
      // identical products with opposite signs keep the pair force exactly
      // antisymmetric in float arithmetic
      float fx = dx * inv, fy = dy * inv;
      a.ax[i] += s.mass[j] * fx;
      a.ay[i] += s.mass[j] * fy;
      a.ax[j] -= s.mass[i] * fx;
      a.ay[j] -= s.mass[i] * fy;
    }
  return a;
}

inline PhysicsState physics_step(const PhysicsState& s, const EnvConfig& cfg, float dt) {
  CSWM_CHECK(dt > 0, "physics_step: dt must be positive");
  PhysicsState n = s;
  Accel a0 = physics_accel(s, cfg);
  for (int i = 0; i < kBodies; ++i) {
    n.bodies[i].vx += 0.5f * dt * a0.ax[i];
    n.bodies[i].vy += 0.5f * dt * a0.ay[i];
    n.bodies[i].px += dt * n.bodies[i].vx;
    n.bodies[i].py += dt * n.bodies[i].vy;
  }
  Accel a1 = physics_accel(n, cfg);
  for (int i = 0; i < kBodies; ++i) {
    n.bodies[i].vx += 0.5f * dt * a1.ax[i];
    n.bodies[i].vy += 0.5f * dt * a1.ay[i];
    if (!is_finite(n.bodies[i].px) || !is_finite(n.bodies[i].py) ||
        !is_finite(n.bodies[i].vx) || !is_finite(n.bodies[i].vy))
      throw NumericError("non-finite body state after physics_step");
  }
  return n;
}

inline PhysicsState physics_step(const PhysicsState& s, const EnvConfig& cfg) {
  return physics_step(s, cfg, cfg.dt);
}

// Kinetic plus softened potential energy; the potential matches the force law
// above, so leapfrog keeps this quantity nearly constant.
inline double physics_energy(const PhysicsState& s, const EnvConfig& cfg) {
  double e = 0.0;
  for (int i = 0; i < kBodies; ++i) {
    const Body& b = s.bodies[i];
    e += 0.5 * s.mass[i] * (static_cast<double>(b.vx) * b.vx +
                            static_cast<double>(b.vy) * b.vy);
  }
  double eps2 = static_cast<double>(cfg.softening) * cfg.softening;
  for (int i = 0; i < kBodies; ++i)
    for (int j = i + 1; j < kBodies; ++j) {
      double dx = static_cast<double>(s.bodies[j].px) - s.bodies[i].px;
      double dy = static_cast<double>(s.bodies[j].py) - s.bodies[i].py;
      e -= cfg.gravity * s.mass[i] * s.mass[j] / std::sqrt(dx * dx + dy * dy + eps2);
    }
  return e;
}

inline void physics_momentum(const PhysicsState& s, double* mx, double* my) {
  *mx = 0.0;
  *my = 0.0;
  for (int i = 0; i < kBodies; ++i) {
    *mx += static_cast<double>(s.mass[i]) * s.bodies[i].vx;
    *my += static_cast<double>(s.mass[i]) * s.bodies[i].vy;
  }
}

// Bodies start on an annulus around the origin with a minimum pairwise
// separation; velocities are per-axis uniform within the configured bound,
// redrawn until the net momentum is small so the system tends to stay in view.
inline PhysicsState physics_init(Rng& rng, const EnvConfig& cfg) {
  PhysicsState s;
  for (bool placed = false; !placed;) {
    for (int i = 0; i < kBodies; ++i) {
      float radius = rng.uniform_range(cfg.place_radius_min, cfg.place_radius_max);
      float angle = rng.uniform_range(0.0f, static_cast<float>(2.0 * M_PI));
      s.bodies[i].px = radius * std::cos(angle);
      s.bodies[i].py = radius * std::sin(angle);
    }
    placed = true;
    for (int i = 0; i < kBodies && placed; ++i)
      for (int j = i + 1; j < kBodies; ++j) {
        float dx = s.bodies[j].px - s.bodies[i].px;
        float dy = s.bodies[j].py - s.bodies[i].py;
        if (dx * dx + dy * dy < cfg.min_separation * cfg.min_separation) {
          placed = false;
          break;
        }
      }
  }
  float cap = 0.4f * cfg.max_init_speed;  // net-momentum bound per axis
  for (bool ok = false; !ok;) {
    float sx = 0, sy = 0;
    for (int i = 0; i < kBodies; ++i) {
      s.bodies[i].vx = rng.uniform_range(-cfg.max_init_speed, cfg.max_init_speed);
      s.bodies[i].vy = rng.uniform_range(-cfg.max_init_speed, cfg.max_init_speed);
      sx += s.bodies[i].vx;
      sy += s.bodies[i].vy;
    }
    ok = std::abs(sx) <= kBodies * cap && std::abs(sy) <= kBodies * cap;
  }
  return s;
}

inline PhysicsState physics_init(uint64_t seed, const EnvConfig& cfg) {
  Rng rng(seed);
  return physics_init(rng, cfg);
}

// World-to-pixel transform: the view spans [-fov, fov] on both axes, y up.
inline float world_to_px_col(float x, const EnvConfig& cfg) {
  return (x + cfg.fov) / (2.0f * cfg.fov) * GridSpec::image_px;
}
inline float world_to_px_row(float y, const EnvConfig& cfg) {
  return (cfg.fov - y) / (2.0f * cfg.fov) * GridSpec::image_px;
}
inline float px_col_to_world(float col, const EnvConfig& cfg) {
  return col / GridSpec::image_px * 2.0f * cfg.fov - cfg.fov;
}
inline float px_row_to_world(float row, const EnvConfig& cfg) {
  return cfg.fov - row / GridSpec::image_px * 2.0f * cfg.fov;
}

namespace detail {

// Paint one frame (3 channels); body i owns channel i. Disc edges are
// feathered over one pixel so sub-pixel motion changes the frame; a hard
// inside test would quantize positions to pixel-flip resolution and starve
// the encoder of the precision the ranking task needs.
inline void render_physics_frame(const PhysicsState& s, const EnvConfig& cfg,
                                 float* frame) {
  constexpr int64_t px = GridSpec::image_px;
  for (int i = 0; i < kBodies; ++i) {
    float cc = world_to_px_col(s.bodies[i].px, cfg);
    float cr = world_to_px_row(s.bodies[i].py, cfg);
    float rad = cfg.disc_radius;
    int r0 = std::max(0, static_cast<int>(std::floor(cr - rad - 1)));
    int r1 = std::min<int>(px - 1, static_cast<int>(std::ceil(cr + rad + 1)));
    int c0 = std::max(0, static_cast<int>(std::floor(cc - rad - 1)));
    int c1 = std::min<int>(px - 1, static_cast<int>(std::ceil(cc + rad + 1)));
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        float dr = (r + 0.5f) - cr;
        float dc = (c + 0.5f) - cc;
        float d = std::sqrt(dr * dr + dc * dc);
        float v = std::min(1.0f, std::max(0.0f, rad + 0.5f - d));
        if (v > 0.0f) frame[i * px * px + r * px + c] = v;
      }
  }
}

}  // namespace detail

// 6x50x50 observation: previous frame in channels 0-2, current in 3-5.
inline void render_physics(const PhysicsState& prev, const PhysicsState& cur,
                           const EnvConfig& cfg, float* out) {
  constexpr int64_t px = GridSpec::image_px;
  std::fill(out, out + 6 * px * px, 0.0f);
  detail::render_physics_frame(prev, cfg, out);
  detail::render_physics_frame(cur, cfg, out + 3 * px * px);
}

}  // namespace cswm::env
