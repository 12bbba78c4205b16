#include <gtest/gtest.h>

#include <cstdlib>
#include <deque>
#include <sstream>

#include "strnet/navsim.hpp"
#include "strnet/tensor.hpp"

using namespace strnet;
using namespace strnet::nav;

namespace {

bool connected(const World& w) {
  std::vector<char> seen(w.grid.size(), 0);
  std::deque<Cell> q{w.start};
  seen[w.index(w.start)] = 1;
  while (!q.empty()) {
    const Cell c = q.front();
    q.pop_front();
    for (auto d : kDirections) {
      const Cell n = add(c, step_offset(d));
      if (w.blocked(n) || seen[w.index(n)]) continue;
      seen[w.index(n)] = 1;
      q.push_back(n);
    }
  }
  return seen[w.index(w.goal)] != 0;
}

WorldConfig dense() {
  WorldConfig c;
  c.obstacle_density = 0.25;
  return c;
}

}  // namespace

TEST(World, EmptyGridAndReproducible) {
  WorldConfig cfg;
  cfg.obstacle_density = 0.0;
  const auto w = generate_world(3, cfg);
  for (auto v : w.grid) EXPECT_EQ(v, 0);
  const auto again = generate_world(3, cfg);
  EXPECT_EQ(again.grid, w.grid);
  EXPECT_EQ(again.start, w.start);
  EXPECT_EQ(again.goal, w.goal);
  EXPECT_EQ(again.start_heading, w.start_heading);
}

TEST(World, HundredDenseWorldsAreConnected) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto w = generate_world(seed, dense());
    EXPECT_FALSE(w.start == w.goal);
    EXPECT_FALSE(w.blocked(w.start));
    EXPECT_FALSE(w.blocked(w.goal));
    EXPECT_TRUE(connected(w)) << "seed " << seed;
  }
}

TEST(World, RejectsHighDensity) {
  WorldConfig cfg;
  cfg.obstacle_density = 0.4;
  EXPECT_THROW(generate_world(1, cfg), Error);
}

TEST(Expert, AtGoalAndOnOpenGround) {
  WorldConfig cfg;
  cfg.obstacle_density = 0.0;
  const auto w = generate_world(5, cfg);
  const Expert e(w);
  EXPECT_FALSE(e.action(w.goal).has_value());
  EXPECT_EQ(shortest_length(w), std::abs(w.start.row - w.goal.row) + std::abs(w.start.col - w.goal.col));
  const auto r = rollout_policy(w, expert_policy(), RolloutConfig{});
  EXPECT_TRUE(r.metrics.success);
  EXPECT_EQ(r.metrics.path_length, shortest_length(w));
}

TEST(Expert, TieBreakOrder) {
  World w;
  w.height = w.width = 3;
  w.grid.assign(9, 0);
  w.start = {2, 0};
  w.goal = {0, 2};
  const Expert e(w);
  // North and east both shorten the path; north wins.
  EXPECT_EQ(*e.action(w.start), Direction::north);
}

TEST(Expert, PathMatchesBfsWithoutCollisions) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto w = generate_world(seed, dense());
    const auto r = rollout_policy(w, expert_policy(), RolloutConfig{});
    EXPECT_TRUE(r.metrics.success);
    EXPECT_EQ(r.metrics.collisions, 0);
    EXPECT_EQ(r.metrics.path_length, shortest_length(w));
    EXPECT_EQ(r.metrics.spl_term, 1.0);
    const auto& d = r.trajectory.distances;
    ASSERT_EQ(d.size(), r.trajectory.steps() + 1);
    EXPECT_EQ(d.back(), 0u);
    for (std::size_t i = 1; i < d.size(); ++i) EXPECT_EQ(d[i] + 1, d[i - 1]);
  }
}

TEST(Render, OpenAreaAndPurity) {
  World w;
  w.height = w.width = 21;
  w.grid.assign(441, 0);
  w.start = {10, 10};
  w.goal = {0, 0};
  RenderConfig rc;
  rc.window = 7;
  const auto img = render_observation(w, w.start, Direction::east, rc);
  for (auto v : img) EXPECT_EQ(v, rc.free);
  EXPECT_EQ(render_observation(w, w.start, Direction::east, rc), img);
}

TEST(Render, WallAppearsAtEgocentricOffset) {
  World w;
  w.height = w.width = 3;
  w.grid = {0, 1, 0, 0, 0, 0, 0, 0, 0};  // obstacle north of the centre
  w.start = {1, 1};
  w.goal = {2, 2};
  RenderConfig rc;
  rc.window = 5;
  // Row-major 5x5, agent at (2, 2), facing up.
  const std::size_t ahead = 1 * 5 + 2, right = 2 * 5 + 3, behind = 3 * 5 + 2, left = 2 * 5 + 1;
  const auto north = render_observation(w, w.start, Direction::north, rc);
  EXPECT_EQ(north[ahead], rc.obstacle);
  EXPECT_EQ(north[right], rc.free);
  const auto east = render_observation(w, w.start, Direction::east, rc);
  EXPECT_EQ(east[left], rc.obstacle);
  const auto south = render_observation(w, w.start, Direction::south, rc);
  EXPECT_EQ(south[behind], rc.obstacle);
  const auto west = render_observation(w, w.start, Direction::west, rc);
  EXPECT_EQ(west[right], rc.obstacle);
  // The goal is south-east of the agent; out-of-bounds cells read as obstacles.
  EXPECT_EQ(north[3 * 5 + 3], rc.goal_marker);
  EXPECT_EQ(north[0], rc.obstacle);
}

TEST(Rollout, FrozenTimesOutAndRandomFallsShort) {
  RolloutConfig rc;
  std::size_t random_successes = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto w = generate_world(500 + seed, dense());
    const auto frozen = rollout_policy(w, frozen_policy(), rc);
    EXPECT_FALSE(frozen.metrics.success);
    EXPECT_EQ(frozen.metrics.steps, rc.max_steps);
    random_successes += rollout_policy(w, random_policy(seed), rc).metrics.success ? 1 : 0;
  }
  EXPECT_LT(random_successes, 50u);
}

TEST(Rollout, BlockedRunEndsEpisode) {
  World w;
  w.height = 1;
  w.width = 3;
  w.grid = {0, 0, 0};
  w.start = {0, 0};
  w.goal = {0, 2};
  w.start_heading = Direction::north;
  const auto r = rollout_policy(w, [](const PolicyInput&) -> std::array<double, 2> { return {-1.0, 0.0}; },
                                RolloutConfig{});
  EXPECT_FALSE(r.metrics.success);
  EXPECT_EQ(r.metrics.collisions, 5);
  EXPECT_EQ(r.metrics.steps, 5);
}

TEST(Metrics, SplAndSummary) {
  EXPECT_EQ(spl_term(true, 10, 5), 0.5);
  EXPECT_EQ(spl_term(true, 5, 5), 1.0);
  EXPECT_EQ(spl_term(false, 5, 5), 0.0);
  EXPECT_THROW(compute_metrics({}), Error);

  std::vector<EpisodeMetrics> eps(3);
  eps[0] = {true, 4, 1, 4, 4, spl_term(true, 4, 4)};
  eps[1] = {true, 8, 0, 4, 8, spl_term(true, 8, 4)};
  eps[2] = {false, 2, 3, 6, 64, 0.0};
  const auto s = compute_metrics(eps);
  EXPECT_EQ(s.episodes, 3u);
  EXPECT_DOUBLE_EQ(s.success_rate, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.mean_collisions, 4.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.path_mean, 6.0);
  EXPECT_DOUBLE_EQ(s.path_var, 4.0);
  EXPECT_DOUBLE_EQ(s.spl, 0.5);
}

TEST(Metrics, NoSuccessGivesNanPath) {
  std::vector<EpisodeMetrics> eps(2);
  const auto s = compute_metrics(eps);
  EXPECT_TRUE(std::isnan(s.path_mean));
  EXPECT_EQ(s.success_rate, 0.0);
}

TEST(Dataset, RoundTripIsExact) {
  RenderConfig rc;
  const auto data = generate_dataset(6, 10, dense(), rc);
  ASSERT_EQ(data.episodes.size(), 6u);
  for (const auto& ep : data.episodes) EXPECT_EQ(ep.distances.back(), 0u);
  std::stringstream buf;
  write_dataset(buf, data);
  const std::string bytes = buf.str();
  EXPECT_EQ(bytes.substr(0, 4), "STRD");
  EXPECT_EQ(bytes[4], 1);
  const auto back = read_dataset(buf);
  ASSERT_EQ(back.episodes.size(), data.episodes.size());
  EXPECT_EQ(back.window, data.window);
  for (std::size_t e = 0; e < data.episodes.size(); ++e) {
    EXPECT_EQ(back.episodes[e].observations, data.episodes[e].observations);
    EXPECT_EQ(back.episodes[e].goal_observation, data.episodes[e].goal_observation);
    EXPECT_EQ(back.episodes[e].actions, data.episodes[e].actions);
    EXPECT_EQ(back.episodes[e].distances, data.episodes[e].distances);
  }
  std::stringstream again;
  write_dataset(again, back);
  EXPECT_EQ(again.str(), bytes);
}

TEST(Dataset, RejectsCorruptHeader) {
  std::stringstream buf("STRX\x01");
  EXPECT_THROW(read_dataset(buf), Error);
  std::stringstream truncated(std::string("STRD\x01\x02\x00", 7));
  EXPECT_THROW(read_dataset(truncated), Error);
}
