#pragma once

// 5x5 grid world with five movable objects, each a fixed shape/color combo
// occupying one cell. Moves are blocked by occupancy and the board edge.
// Coordinate convention: row 0 is the top row, North decreases the row.

#include <array>

#include "cswm/common.hpp"
#include "cswm/config.hpp"

namespace cswm::env {

enum class Direction { north = 0, south = 1, east = 2, west = 3, noop = 4 };

struct Cell {
  int row = 0, col = 0;
  bool operator==(const Cell&) const = default;
};

struct GridState {
  std::array<Cell, GridSpec::objects> pos;
  bool operator==(const GridState&) const = default;
};

struct GridAction {
  int object = 0;
  Direction dir = Direction::north;
};

inline bool grid_occupied(const GridState& s, Cell c) {
  for (const Cell& p : s.pos)
    if (p == c) return true;
  return false;
}

inline void grid_check_distinct(const GridState& s) {
  for (size_t i = 0; i < s.pos.size(); ++i)
    for (size_t j = i + 1; j < s.pos.size(); ++j)
      CSWM_CHECK(!(s.pos[i] == s.pos[j]), "grid state has two objects in one cell");
}

// Distinct uniformly random cells via a full shuffle of the board.
inline GridState grid_reset(Rng& rng) {
  std::vector<int64_t> cells = rng.permutation(GridSpec::size * GridSpec::size);
  GridState s;
  for (int i = 0; i < GridSpec::objects; ++i) {
    s.pos[i].row = static_cast<int>(cells[i] / GridSpec::size);
    s.pos[i].col = static_cast<int>(cells[i] % GridSpec::size);
  }
  return s;
}

inline GridState grid_reset(uint64_t seed) {
  Rng rng(seed);
  return grid_reset(rng);
}

inline Cell direction_target(Cell c, Direction d) {
  switch (d) {
    case Direction::north: return {c.row - 1, c.col};
    case Direction::south: return {c.row + 1, c.col};
    case Direction::east: return {c.row, c.col + 1};
    case Direction::west: return {c.row, c.col - 1};
    default: return c;
  }
}

// Move one object one cell; blocked moves (edge or occupied target) and noop
// leave the state unchanged.
inline GridState grid_apply_move(const GridState& s, int object, Direction d) {
  CSWM_CHECK(object >= 0 && object < GridSpec::objects,
             "grid move: object index ", object, " out of range");
  if (d == Direction::noop) return s;
  Cell target = direction_target(s.pos[object], d);
  if (target.row < 0 || target.row >= GridSpec::size || target.col < 0 ||
      target.col >= GridSpec::size)
    return s;
  if (grid_occupied(s, target)) return s;
  GridState next = s;
  next.pos[object] = target;
  return next;
}

// One environment step. In the random_object variant the last object takes a
// uniformly random move after the agent's move; the chosen direction is
// reported through random_move_out so it can be recorded as part of the action.
inline GridState grid_step(const GridState& s, GridAction a, const EnvConfig& cfg,
                           Rng* rng = nullptr, Direction* random_move_out = nullptr) {
  CSWM_CHECK(a.dir != Direction::noop || cfg.noop_action,
             "noop action requires the noop_action variant");
  GridState next = grid_apply_move(s, a.object, a.dir);
  if (cfg.random_object) {
    CSWM_CHECK(rng != nullptr, "random_object variant needs an rng in grid_step");
    auto d = static_cast<Direction>(rng->uniform_int(4));
    next = grid_apply_move(next, GridSpec::objects - 1, d);
    if (random_move_out) *random_move_out = d;
  }
  return next;
}

// Uniform action for experience collection. With random_object the agent
// controls only the first K-1 objects; the last one is driven by the env.
inline GridAction sample_grid_action(Rng& rng, const EnvConfig& cfg) {
  GridAction a;
  int64_t controllable = cfg.random_object ? GridSpec::objects - 1 : GridSpec::objects;
  a.object = static_cast<int>(rng.uniform_int(controllable));
  a.dir = static_cast<Direction>(rng.uniform_int(cfg.noop_action ? 5 : 4));
  return a;
}

namespace detail {

// Shape silhouettes inside a 10x10 cell, evaluated around center (4.5, 4.5).
inline bool shape_pixel(int shape, int r, int c) {
  double dr = r - 4.5, dc = c - 4.5;
  switch (shape) {
    case 0:  // square
      return r >= 1 && r <= 8 && c >= 1 && c <= 8;
    case 1:  // disc
      return dr * dr + dc * dc <= 16.0;
    case 2:  // triangle, apex up
      return r >= 1 && r <= 8 && std::abs(dc) <= 0.5 * (r - 1);
    case 3:  // plus
      return (c >= 3 && c <= 6 && r >= 1 && r <= 8) ||
             (r >= 3 && r <= 6 && c >= 1 && c <= 8);
    default:  // diamond
      return std::abs(dr) + std::abs(dc) <= 4.5;
  }
}

inline const float* shape_color(int shape) {
  static const float colors[GridSpec::objects][3] = {
      {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {0, 1, 1}};
  return colors[shape];
}

}  // namespace detail

// CHW float image, 3x50x50, background black.
inline void render_grid(const GridState& s, float* out) {
  constexpr int64_t px = GridSpec::image_px;
  std::fill(out, out + 3 * px * px, 0.0f);
  for (int i = 0; i < GridSpec::objects; ++i) {
    const float* color = detail::shape_color(i);
    int base_r = s.pos[i].row * GridSpec::cell_px;
    int base_c = s.pos[i].col * GridSpec::cell_px;
    for (int r = 0; r < GridSpec::cell_px; ++r)
      for (int c = 0; c < GridSpec::cell_px; ++c) {
        if (!detail::shape_pixel(i, r, c)) continue;
        int64_t p = static_cast<int64_t>(base_r + r) * px + (base_c + c);
        for (int ch = 0; ch < 3; ++ch) out[ch * px * px + p] = color[ch];
      }
  }
}

}  // namespace cswm::env
