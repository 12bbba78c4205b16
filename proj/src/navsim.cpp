#include "strnet/navsim.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <random>
#include <stdexcept>

#include "strnet/tensor.hpp"

namespace strnet::nav {

Cell step_offset(Direction d) {
  switch (d) {
    case Direction::north: return {-1, 0};
    case Direction::east: return {0, 1};
    case Direction::south: return {1, 0};
    case Direction::west: return {0, -1};
  }
  return {0, 0};
}

Cell add(Cell a, Cell b) { return {a.row + b.row, a.col + b.col}; }

Direction turn(Direction d, int quarter_turns) {
  const int v = ((static_cast<int>(d) + quarter_turns) % 4 + 4) % 4;
  return static_cast<Direction>(v);
}

int relative_turn(Direction from, Direction to) {
  return ((static_cast<int>(to) - static_cast<int>(from)) % 4 + 4) % 4;
}

std::array<double, 2> ego_to_world(std::array<double, 2> v, Direction heading) {
  for (int k = 0; k < static_cast<int>(heading); ++k) v = {v[1], -v[0]};
  return v;
}

std::array<double, 2> world_to_ego(std::array<double, 2> v, Direction heading) {
  for (int k = 0; k < static_cast<int>(heading); ++k) v = {-v[1], v[0]};
  return v;
}

// ---------------------------------------------------------------------------
// Worlds

void WorldConfig::validate() const {
  if (size < 3) throw Error("world: size must be at least 3");
  if (!(obstacle_density >= 0.0 && obstacle_density < 0.4))
    throw Error("world: obstacle density must lie in [0, 0.4)");
  if (goal_min_distance < 1 || goal_max_distance < goal_min_distance)
    throw Error("world: require 1 <= goal_min_distance <= goal_max_distance");
  if (goal_max_offset < 1) throw Error("world: goal_max_offset must be positive");
  if (max_attempts < 1) throw Error("world: max_attempts must be positive");
}

std::vector<int> distance_field(const World& world, Cell target) {
  std::vector<int> dist(world.grid.size(), -1);
  if (world.blocked(target)) return dist;
  std::deque<Cell> queue{target};
  dist[world.index(target)] = 0;
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    for (auto d : kDirections) {
      const Cell n = add(c, step_offset(d));
      if (world.blocked(n) || dist[world.index(n)] >= 0) continue;
      dist[world.index(n)] = dist[world.index(c)] + 1;
      queue.push_back(n);
    }
  }
  return dist;
}

World generate_world(std::uint64_t seed, const WorldConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  World w;
  w.height = w.width = cfg.size;
  w.seed = seed;
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    w.grid.assign(static_cast<std::size_t>(cfg.size * cfg.size), 0);
    for (auto& c : w.grid) c = unit(rng) < cfg.obstacle_density ? 1 : 0;

    std::vector<Cell> free_cells;
    for (int r = 0; r < cfg.size; ++r)
      for (int c = 0; c < cfg.size; ++c)
        if (!w.blocked({r, c})) free_cells.push_back({r, c});
    if (free_cells.size() < 2) continue;

    std::uniform_int_distribution<std::size_t> pick(0, free_cells.size() - 1);
    const Cell start = free_cells[pick(rng)];
    const auto field = distance_field(w, start);
    std::vector<Cell> goals;
    for (const Cell& g : free_cells) {
      const int d = field[w.index(g)];
      const int offset = std::max(std::abs(g.row - start.row), std::abs(g.col - start.col));
      if (d >= cfg.goal_min_distance && d <= cfg.goal_max_distance && offset <= cfg.goal_max_offset)
        goals.push_back(g);
    }
    if (goals.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick_goal(0, goals.size() - 1);
    w.start = start;
    w.goal = goals[pick_goal(rng)];
    w.start_heading = kDirections[std::uniform_int_distribution<int>(0, 3)(rng)];
    return w;
  }
  throw Error("generate_world: no valid start/goal pair after " +
              std::to_string(cfg.max_attempts) + " layouts (seed " + std::to_string(seed) + ")");
}

int shortest_length(const World& world) { return distance_field(world, world.goal)[world.index(world.start)]; }

Expert::Expert(const World& world) : world_(&world), field_(distance_field(world, world.goal)) {}

int Expert::distance(Cell pos) const {
  if (!world_->inside(pos)) return -1;
  return field_[world_->index(pos)];
}

std::optional<Direction> Expert::action(Cell pos) const {
  const int here = distance(pos);
  if (here < 0) throw Error("expert: goal unreachable from the current cell");
  if (here == 0) return std::nullopt;
  for (auto d : kDirections) {
    const Cell n = add(pos, step_offset(d));
    if (!world_->blocked(n) && field_[world_->index(n)] == here - 1) return d;
  }
  throw Error("expert: inconsistent distance field");
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

std::vector<float> render_window(const World& world, Cell pos, Direction heading, Cell marker,
                                 const RenderConfig& cfg) {
  if (cfg.window < 1 || cfg.window % 2 == 0) throw Error("render: window must be odd and positive");
  const int half = cfg.window / 2;
  std::vector<float> img(static_cast<std::size_t>(cfg.window * cfg.window));
  for (int u = 0; u < cfg.window; ++u)
    for (int v = 0; v < cfg.window; ++v) {
      const auto off = ego_to_world({static_cast<double>(u - half), static_cast<double>(v - half)},
                                    heading);
      const Cell c = add(pos, {static_cast<int>(off[0]), static_cast<int>(off[1])});
      float value = world.blocked(c) ? cfg.obstacle : cfg.free;
      if (c == marker) value = cfg.goal_marker;
      img[static_cast<std::size_t>(u * cfg.window + v)] = value;
    }
  return img;
}

}  // namespace

std::vector<float> render_observation(const World& world, Cell pos, Direction heading,
                                      const RenderConfig& cfg) {
  return render_window(world, pos, heading, world.goal, cfg);
}

std::vector<float> render_goal(const World& world, Cell goal_cell, const RenderConfig& cfg) {
  return render_window(world, goal_cell, Direction::north, goal_cell, cfg);
}

// ---------------------------------------------------------------------------
// Policies and rollouts

std::optional<int> discretize(std::array<double, 2> ego) {
  if (ego[0] == 0.0 && ego[1] == 0.0) return std::nullopt;
  if (std::abs(ego[0]) >= std::abs(ego[1])) return ego[0] < 0 ? 0 : 2;
  return ego[1] > 0 ? 1 : 3;
}

namespace {

std::array<double, 2> ego_move(Direction heading, Direction world_dir) {
  const Cell o = step_offset(static_cast<Direction>(relative_turn(heading, world_dir)));
  return {static_cast<double>(o.row), static_cast<double>(o.col)};
}

}  // namespace

Policy expert_policy() {
  return [](const PolicyInput& in) -> std::array<double, 2> {
    const Expert expert(*in.world);
    const auto d = expert.action(in.position);
    if (!d) return {0.0, 0.0};
    return ego_move(in.heading, *d);
  };
}

Policy frozen_policy() {
  return [](const PolicyInput&) -> std::array<double, 2> { return {0.0, 0.0}; };
}

Policy random_policy(std::uint64_t seed) {
  auto rng = std::make_shared<std::mt19937_64>(seed);
  return [rng](const PolicyInput&) -> std::array<double, 2> {
    const Cell o = step_offset(kDirections[std::uniform_int_distribution<int>(0, 3)(*rng)]);
    return {static_cast<double>(o.row), static_cast<double>(o.col)};
  };
}

double spl_term(bool success, int path_length, int shortest) {
  if (!success) return 0.0;
  const int denom = std::max(path_length, shortest);
  if (denom <= 0) return 1.0;
  return static_cast<double>(shortest) / static_cast<double>(denom);
}

namespace {

Cell noisy_goal(const World& world, int radius, std::uint64_t seed) {
  if (radius <= 0) return world.goal;
  std::vector<Cell> candidates;
  for (int dr = -radius; dr <= radius; ++dr)
    for (int dc = -radius; dc <= radius; ++dc) {
      const Cell c = add(world.goal, {dr, dc});
      if ((dr != 0 || dc != 0) && !world.blocked(c)) candidates.push_back(c);
    }
  if (candidates.empty()) return world.goal;
  std::mt19937_64 rng(seed);
  return candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
}

}  // namespace

RolloutResult rollout_policy(const World& world, const Policy& policy, const RolloutConfig& cfg) {
  RolloutResult out;
  auto& m = out.metrics;
  auto& traj = out.trajectory;
  const Expert expert(world);
  m.shortest_length = expert.distance(world.start);

  traj.window = cfg.render.window;
  traj.goal_observation =
      render_goal(world, noisy_goal(world, cfg.goal_noise_radius, cfg.noise_seed), cfg.render);

  Cell pos = world.start;
  Direction heading = world.start_heading;
  int blocked_run = 0;
  traj.observations.push_back(render_observation(world, pos, heading, cfg.render));
  traj.distances.push_back(static_cast<std::uint32_t>(std::max(0, expert.distance(pos))));

  while (!(pos == world.goal) && m.steps < cfg.max_steps) {
    PolicyInput in;
    in.world = &world;
    in.position = pos;
    in.heading = heading;
    in.history = &traj.observations;
    in.goal_observation = &traj.goal_observation;
    in.step = static_cast<std::size_t>(m.steps);
    const auto move = discretize(policy(in));
    ++m.steps;
    if (!move) {
      traj.actions.push_back({0.0f, 0.0f});
    } else {
      const Direction dir = turn(heading, *move);
      const Cell o = step_offset(static_cast<Direction>(*move));
      traj.actions.push_back({static_cast<float>(o.row), static_cast<float>(o.col)});
      heading = dir;
      const Cell next = add(pos, step_offset(dir));
      if (world.blocked(next)) {
        ++m.collisions;
        if (++blocked_run >= cfg.max_consecutive_blocked) {
          traj.observations.push_back(render_observation(world, pos, heading, cfg.render));
          traj.distances.push_back(static_cast<std::uint32_t>(std::max(0, expert.distance(pos))));
          break;
        }
      } else {
        pos = next;
        blocked_run = 0;
        ++m.path_length;
      }
    }
    traj.observations.push_back(render_observation(world, pos, heading, cfg.render));
    traj.distances.push_back(static_cast<std::uint32_t>(std::max(0, expert.distance(pos))));
  }
  m.success = pos == world.goal;
  m.spl_term = spl_term(m.success, m.path_length, m.shortest_length);
  return out;
}

MetricsSummary compute_metrics(const std::vector<EpisodeMetrics>& episodes) {
  if (episodes.empty()) throw Error("compute_metrics: no episodes");
  MetricsSummary s;
  s.episodes = episodes.size();
  double successes = 0, collisions = 0, spl = 0;
  std::vector<double> paths;
  for (const auto& e : episodes) {
    if (e.success) {
      successes += 1;
      paths.push_back(e.path_length);
    }
    collisions += e.collisions;
    spl += e.spl_term;
  }
  const double n = static_cast<double>(episodes.size());
  s.success_rate = successes / n;
  s.mean_collisions = collisions / n;
  s.spl = spl / n;
  if (paths.empty()) {
    s.path_mean = s.path_var = std::numeric_limits<double>::quiet_NaN();
  } else {
    double sum = 0;
    for (double p : paths) sum += p;
    s.path_mean = sum / static_cast<double>(paths.size());
    double var = 0;
    for (double p : paths) var += (p - s.path_mean) * (p - s.path_mean);
    s.path_var = var / static_cast<double>(paths.size());
  }
  return s;
}

Trajectory expert_trajectory(const World& world, const RenderConfig& cfg) {
  RolloutConfig rc;
  rc.render = cfg;
  rc.max_steps = std::max(1, world.height * world.width);
  auto result = rollout_policy(world, expert_policy(), rc);
  if (!result.metrics.success) throw Error("expert_trajectory: expert failed to reach the goal");
  return std::move(result.trajectory);
}

// ---------------------------------------------------------------------------
// Dataset IO

namespace {

constexpr char kMagic[4] = {'S', 'T', 'R', 'D'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error("dataset: unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

}  // namespace

void write_dataset(std::ostream& out, const Dataset& data) {
  const std::size_t w = static_cast<std::size_t>(data.window);
  std::size_t frames = 0;
  for (const auto& ep : data.episodes) {
    if (ep.observations.empty() || ep.distances.size() != ep.observations.size() ||
        ep.actions.size() + 1 != ep.observations.size() || ep.distances.back() != 0)
      throw Error("dataset: episodes must be complete demonstrations ending at the goal");
    frames = std::max(frames, ep.observations.size());
  }
  out.write(kMagic, 4);
  out.put(static_cast<char>(kVersion));
  put_u32(out, static_cast<std::uint32_t>(data.episodes.size()));
  put_u32(out, static_cast<std::uint32_t>(frames));
  put_u32(out, static_cast<std::uint32_t>(w));
  put_u32(out, 2);
  for (const auto& ep : data.episodes) {
    for (std::size_t t = 0; t < frames; ++t) {
      const auto& img = ep.observations[std::min(t, ep.observations.size() - 1)];
      if (img.size() != w * w) throw Error("dataset: observation size does not match W_obs");
      for (float v : img) put_f32(out, v);
    }
    if (ep.goal_observation.size() != w * w) throw Error("dataset: goal size does not match W_obs");
    for (float v : ep.goal_observation) put_f32(out, v);
    for (std::size_t t = 0; t < frames; ++t) {
      const auto a = t < ep.actions.size() ? ep.actions[t] : std::array<float, 2>{0.0f, 0.0f};
      put_f32(out, a[0]);
      put_f32(out, a[1]);
    }
    for (std::size_t t = 0; t < frames; ++t) put_u32(out, t < ep.distances.size() ? ep.distances[t] : 0);
  }
  if (!out) throw Error("dataset: write failed");
}

Dataset read_dataset(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw Error("dataset: bad magic");
  const int version = in.get();
  if (version != kVersion) throw Error("dataset: unsupported version " + std::to_string(version));
  const std::uint32_t count = get_u32(in);
  const std::uint32_t frames = get_u32(in);
  const std::uint32_t w = get_u32(in);
  const std::uint32_t dims = get_u32(in);
  if (dims != 2) throw Error("dataset: only 2-D actions are supported");
  if (frames == 0 || w == 0) throw Error("dataset: empty episode geometry");

  Dataset data;
  data.window = static_cast<int>(w);
  for (std::uint32_t e = 0; e < count; ++e) {
    std::vector<std::vector<float>> obs(frames, std::vector<float>(std::size_t{w} * w));
    for (auto& img : obs)
      for (auto& v : img) v = get_f32(in);
    std::vector<float> goal(std::size_t{w} * w);
    for (auto& v : goal) v = get_f32(in);
    std::vector<std::array<float, 2>> actions(frames);
    for (auto& a : actions) {
      a[0] = get_f32(in);
      a[1] = get_f32(in);
    }
    std::vector<std::uint32_t> dist(frames);
    for (auto& d : dist) d = get_u32(in);

    std::size_t len = frames;
    for (std::size_t t = 0; t < frames; ++t)
      if (dist[t] == 0) {
        len = t + 1;
        break;
      }
    Trajectory ep;
    ep.window = static_cast<int>(w);
    ep.observations.assign(obs.begin(), obs.begin() + static_cast<std::ptrdiff_t>(len));
    ep.goal_observation = std::move(goal);
    ep.actions.assign(actions.begin(), actions.begin() + static_cast<std::ptrdiff_t>(len - 1));
    ep.distances.assign(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(len));
    data.episodes.push_back(std::move(ep));
  }
  return data;
}

void save_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("dataset: cannot open " + path + " for writing");
  write_dataset(out, data);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("dataset: cannot open " + path);
  return read_dataset(in);
}

Dataset generate_dataset(std::size_t episodes, std::uint64_t first_seed, const WorldConfig& world,
                         const RenderConfig& render) {
  Dataset data;
  data.window = render.window;
  for (std::size_t i = 0; i < episodes; ++i) {
    const World w = generate_world(first_seed + i, world);
    data.episodes.push_back(expert_trajectory(w, render));
  }
  return data;
}

}  // namespace strnet::nav
