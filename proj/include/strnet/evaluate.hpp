#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "strnet/config.hpp"
#include "strnet/model.hpp"
#include "strnet/navsim.hpp"

namespace strnet {

// ---------------------------------------------------------------------------
// Rollout evaluation

struct EvalRow {
  std::uint64_t seed = 0;
  std::string task;
  nav::MetricsSummary summary;
};

/// Repeat r runs on the world seeded eval_seed + r.
std::vector<nav::EpisodeMetrics> evaluate_policy(const RunConfig& cfg, const nav::Policy& policy,
                                                 std::size_t episodes);

std::string task_name(const RunConfig& cfg);

/// Header: seed,task,success_rate,collisions,path_mean,path_var,spl
std::string eval_csv(const std::vector<EvalRow>& rows);

// ---------------------------------------------------------------------------
// Embedding diagnostic

/// Spearman rank correlation with average ranks for ties. 0 when either side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct EmbeddingPoint {
  std::size_t episode;
  std::size_t step;
  double embedding_distance;  // |c(state) - c(goal state)|
  double temporal_distance;   // steps remaining
};

struct EmbeddingReport {
  double correlation = 0;
  std::vector<EmbeddingPoint> points;
};

/// Held-out expert episodes on worlds seeded embed_seed, embed_seed + 1, ...
/// Throws when fewer than 10 states are available.
EmbeddingReport embedding_separation(const RunConfig& cfg, ModelParams<float>& params);

std::string embedding_csv(const EmbeddingReport& report);

// ---------------------------------------------------------------------------
// Benchmark

struct BenchRow {
  std::string name;
  std::size_t parameters = 0;
  std::size_t expected_parameters = 0;
  double median_ms = 0;
};

struct BenchReport {
  ParameterBreakdown counted;
  ParameterBreakdown expected;
  std::vector<BenchRow> rows;  // full configuration, then the pooling baseline
};

/// Median wall-clock of `repeats` context forwards (batch 1) after `warmup` runs.
BenchReport run_bench(const RunConfig& cfg, std::size_t repeats = 100, std::size_t warmup = 5);

std::string bench_text(const BenchReport& report);

}  // namespace strnet
