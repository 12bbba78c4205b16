#include "strnet/evaluate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "strnet/train.hpp"

namespace strnet {

std::vector<nav::EpisodeMetrics> evaluate_policy(const RunConfig& cfg, const nav::Policy& policy,
                                                 std::size_t episodes) {
  std::vector<nav::EpisodeMetrics> out;
  const auto world_cfg = cfg.world();
  for (std::size_t r = 0; r < episodes; ++r) {
    const auto world = nav::generate_world(cfg.eval_seed + r, world_cfg);
    auto rc = cfg.rollout();
    rc.noise_seed = cfg.eval_seed + r;
    out.push_back(nav::rollout_policy(world, policy, rc).metrics);
  }
  return out;
}

std::string task_name(const RunConfig& cfg) {
  if (cfg.goal_noise_radius > 0) return "goal_nav_noise" + std::to_string(cfg.goal_noise_radius);
  return "goal_nav";
}

namespace {

std::string num(double v) {
  return std::isnan(v) ? "nan" : format_number(v);
}

}  // namespace

std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::string out = "seed,task,success_rate,collisions,path_mean,path_var,spl\n";
  for (const auto& r : rows)
    out += std::to_string(r.seed) + "," + r.task + "," + num(r.summary.success_rate) + "," +
           num(r.summary.mean_collisions) + "," + num(r.summary.path_mean) + "," +
           num(r.summary.path_var) + "," + num(r.summary.spl) + "\n";
  return out;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("spearman: need two equal-length samples");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

EmbeddingReport embedding_separation(const RunConfig& cfg, ModelParams<float>& params) {
  const auto mcfg = cfg.model();
  const auto world_cfg = cfg.world();
  const auto render = cfg.render();
  EmbeddingReport report;
  std::vector<double> emb, gt;
  for (std::size_t e = 0; e < cfg.embed_episodes; ++e) {
    const auto world = nav::generate_world(cfg.embed_seed + e, world_cfg);
    const auto traj = nav::expert_trajectory(world, render);
    const std::size_t n = traj.steps();
    const auto goal_ctx =
        context_for(traj.observations, n, traj.goal_observation, traj.window, params, mcfg);
    for (std::size_t t = 0; t < n; ++t) {
      const auto ctx = context_for(traj.observations, t, traj.goal_observation, traj.window, params, mcfg);
      double d2 = 0;
      for (std::size_t i = 0; i < ctx.size(); ++i) {
        const double diff = static_cast<double>(ctx[i]) - static_cast<double>(goal_ctx[i]);
        d2 += diff * diff;
      }
      report.points.push_back({e, t, std::sqrt(d2), static_cast<double>(traj.distances[t])});
      emb.push_back(std::sqrt(d2));
      gt.push_back(static_cast<double>(traj.distances[t]));
    }
  }
  if (report.points.size() < 10)
    throw Error("embed: only " + std::to_string(report.points.size()) +
                " evaluation states; at least 10 are required");
  report.correlation = spearman(emb, gt);
  return report;
}

std::string embedding_csv(const EmbeddingReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "episode,step,embedding_distance,temporal_distance\n";
  for (const auto& p : report.points)
    out << p.episode << ',' << p.step << ',' << p.embedding_distance << ',' << p.temporal_distance << '\n';
  return out.str();
}

namespace {

double median_forward_ms(const RunConfig& cfg, std::size_t repeats, std::size_t warmup) {
  const auto mcfg = cfg.model();
  auto params = ModelParams<float>::init(mcfg, cfg.seed);
  const auto world = nav::generate_world(cfg.eval_seed, cfg.world());
  const auto traj = nav::expert_trajectory(world, cfg.render());
  std::vector<double> times;
  for (std::size_t i = 0; i < warmup + repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto ctx = context_for(traj.observations, 0, traj.goal_observation, traj.window, params, mcfg);
    const auto t1 = std::chrono::steady_clock::now();
    if (!ctx.all_finite()) throw NumericError("bench: non-finite context");
    if (i >= warmup) times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t m = times.size() / 2;
  return times.size() % 2 ? times[m] : 0.5 * (times[m - 1] + times[m]);
}

}  // namespace

BenchReport run_bench(const RunConfig& cfg, std::size_t repeats, std::size_t warmup) {
  if (repeats == 0) throw Error("bench: need at least one timed run");
  BenchReport report;
  const auto mcfg = cfg.model();
  auto params = ModelParams<float>::init(mcfg, cfg.seed);
  report.expected = expected_parameters(mcfg);
  report.counted.encoder = params.encoder.parameter_count();
  if (params.has_spatial) report.counted.spatial = params.spatial.parameter_count();
  if (params.has_temporal) report.counted.temporal = params.temporal.parameter_count();
  report.counted.diffusion_head = params.diffusion.parameter_count();
  report.counted.distance_head = params.distance.parameter_count();

  report.rows.push_back({"configured", params.parameter_count(), report.expected.total(),
                         median_forward_ms(cfg, repeats, warmup)});
  RunConfig pooled = cfg;
  pooled.pooling_baseline = true;
  auto pooled_params = ModelParams<float>::init(pooled.model(), cfg.seed);
  report.rows.push_back({"pooling_baseline", pooled_params.parameter_count(),
                         expected_parameters(pooled.model()).total(),
                         median_forward_ms(pooled, repeats, warmup)});
  return report;
}

std::string bench_text(const BenchReport& r) {
  std::ostringstream out;
  out << "module,parameters,closed_form\n";
  out << "encoder," << r.counted.encoder << ',' << r.expected.encoder << '\n';
  out << "spatial," << r.counted.spatial << ',' << r.expected.spatial << '\n';
  out << "temporal," << r.counted.temporal << ',' << r.expected.temporal << '\n';
  out << "temporal_shift,0,0\n";
  out << "diffusion_head," << r.counted.diffusion_head << ',' << r.expected.diffusion_head << '\n';
  out << "distance_head," << r.counted.distance_head << ',' << r.expected.distance_head << '\n';
  out << "total," << r.counted.total() << ',' << r.expected.total() << "\n\n";
  out << "variant,parameters,closed_form,median_forward_ms\n";
  for (const auto& row : r.rows)
    out << row.name << ',' << row.parameters << ',' << row.expected_parameters << ','
        << row.median_ms << '\n';
  return out.str();
}

}  // namespace strnet
