#pragma once

// Grid navigation world: generation, BFS expert, egocentric rendering,
// rollouts, metrics and the "STRD" dataset format.
//
// Coordinates are (row, col) with row 0 at the top (north). Egocentric
// images put the agent at the window centre facing up; ego displacements use
// the same (row, col) convention, so "forward" is (-1, 0) and "right" (0, 1).

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace strnet::nav {

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
};

/// Order doubles as the expert tie-break order.
enum class Direction : std::uint8_t { north = 0, east = 1, south = 2, west = 3 };

inline constexpr std::array<Direction, 4> kDirections{Direction::north, Direction::east,
                                                      Direction::south, Direction::west};

Cell step_offset(Direction d);
Cell add(Cell a, Cell b);
/// Direction reached by turning `d` clockwise by `quarter_turns`.
Direction turn(Direction d, int quarter_turns);
/// Clockwise quarter turns taking `from` to `to`, in [0, 4).
int relative_turn(Direction from, Direction to);

/// Rotates an ego (row, col) vector into the world frame for the given heading.
std::array<double, 2> ego_to_world(std::array<double, 2> v, Direction heading);
std::array<double, 2> world_to_ego(std::array<double, 2> v, Direction heading);

struct World {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> grid;  // 1 obstacle, 0 free, row-major
  Cell start;
  Cell goal;
  Direction start_heading = Direction::north;
  std::uint64_t seed = 0;

  bool inside(Cell c) const { return c.row >= 0 && c.col >= 0 && c.row < height && c.col < width; }
  /// Out-of-bounds cells count as obstacles.
  bool blocked(Cell c) const { return !inside(c) || grid[index(c)] != 0; }
  std::size_t index(Cell c) const { return static_cast<std::size_t>(c.row * width + c.col); }
};

struct WorldConfig {
  int size = 32;
  double obstacle_density = 0.2;
  int goal_min_distance = 5;
  int goal_max_distance = 16;
  /// Chebyshev bound on |start - goal|, keeping the goal inside the first view.
  int goal_max_offset = 6;
  int max_attempts = 1000;

  void validate() const;
};

/// Random obstacles, then a start/goal pair satisfying the distance and offset
/// bounds. Throws when no valid pair is found within max_attempts layouts.
World generate_world(std::uint64_t seed, const WorldConfig& cfg);

/// BFS steps from every cell to `target` (4-connected); -1 where unreachable.
std::vector<int> distance_field(const World& world, Cell target);

int shortest_length(const World& world);

class Expert {
 public:
  explicit Expert(const World& world);
  /// Next world direction along a shortest path, tie-broken N, E, S, W;
  /// std::nullopt at the goal. Throws when the goal is unreachable from `pos`.
  std::optional<Direction> action(Cell pos) const;
  int distance(Cell pos) const;

 private:
  const World* world_;
  std::vector<int> field_;
};

struct RenderConfig {
  int window = 15;
  float obstacle = 1.0f;
  float free = 0.0f;
  float goal_marker = -1.0f;
};

/// window x window image centred on `pos`, rotated so `heading` points up.
/// The goal cell is drawn with the marker value when it falls in view.
std::vector<float> render_observation(const World& world, Cell pos, Direction heading,
                                      const RenderConfig& cfg);

/// Goal view: rendered at `goal_cell`, north up.
std::vector<float> render_goal(const World& world, Cell goal_cell, const RenderConfig& cfg);

// ---------------------------------------------------------------------------
// Trajectories and rollouts

struct Trajectory {
  int window = 0;
  std::vector<std::vector<float>> observations;  // n + 1 frames
  std::vector<float> goal_observation;
  std::vector<std::array<float, 2>> actions;  // n ego displacements (at the step's own heading)
  std::vector<std::uint32_t> distances;       // n + 1, ending in 0
  std::size_t steps() const { return actions.size(); }
};

/// Everything a policy may look at when choosing the next move.
struct PolicyInput {
  const World* world = nullptr;
  Cell position;
  Direction heading = Direction::north;
  const std::vector<std::vector<float>>* history = nullptr;  // frames so far, oldest first
  const std::vector<float>* goal_observation = nullptr;
  std::size_t step = 0;
};

/// Returns an ego displacement; it is snapped to one of the four moves by its
/// dominant component, and a zero vector means stay.
using Policy = std::function<std::array<double, 2>(const PolicyInput&)>;

Policy expert_policy();
Policy frozen_policy();
Policy random_policy(std::uint64_t seed);

/// Snaps an ego displacement to a relative quarter turn (0 forward, 1 right,
/// 2 back, 3 left), or nullopt for the zero vector.
std::optional<int> discretize(std::array<double, 2> ego);

struct EpisodeMetrics {
  bool success = false;
  int path_length = 0;  // successful moves
  int collisions = 0;
  int shortest_length = 0;
  int steps = 0;
  double spl_term = 0.0;
};

struct RolloutConfig {
  int max_steps = 64;
  int max_consecutive_blocked = 5;
  RenderConfig render;
  /// Goal view drawn at a random free cell within this Chebyshev radius of the goal.
  int goal_noise_radius = 0;
  std::uint64_t noise_seed = 0;
};

struct RolloutResult {
  EpisodeMetrics metrics;
  Trajectory trajectory;
};

RolloutResult rollout_policy(const World& world, const Policy& policy, const RolloutConfig& cfg);

struct MetricsSummary {
  std::size_t episodes = 0;
  double success_rate = 0;
  double mean_collisions = 0;
  double path_mean = 0;  // NaN when nothing succeeded
  double path_var = 0;   // population variance; NaN when nothing succeeded
  double spl = 0;
};

/// Throws on an empty list.
MetricsSummary compute_metrics(const std::vector<EpisodeMetrics>& episodes);

double spl_term(bool success, int path_length, int shortest);

/// Expert demonstration on `world` (always succeeds on a generated world).
Trajectory expert_trajectory(const World& world, const RenderConfig& cfg);

// ---------------------------------------------------------------------------
// Dataset ("STRD", little-endian)
//
//   char[4]  "STRD"
//   u8       version (1)
//   u32      episode count E
//   u32      T_ep, frames per episode after padding
//   u32      W_obs
//   u32      action dims d
//   E times:
//     f32[T_ep * W * W]  observations, padded by repeating the final frame
//     f32[W * W]         goal observation
//     f32[T_ep * d]      actions, zero padded (the final frame has no action)
//     u32[T_ep]          temporal distances, zero padded
//
// An episode's true frame count is one past the first zero distance.

struct Dataset {
  int window = 0;
  std::vector<Trajectory> episodes;
};

void write_dataset(std::ostream& out, const Dataset& data);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

/// Expert episodes on worlds seeded first_seed, first_seed + 1, ...
Dataset generate_dataset(std::size_t episodes, std::uint64_t first_seed, const WorldConfig& world,
                         const RenderConfig& render);

}  // namespace strnet::nav
