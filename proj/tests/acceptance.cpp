// End-to-end acceptance run: one PASS/FAIL line per criterion, details on the
// indented lines below it. Exit status is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "strnet/cli.hpp"
#include "strnet/config.hpp"
#include "strnet/evaluate.hpp"
#include "strnet/train.hpp"
#include "strnet/verify.hpp"

using namespace strnet;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << '\n';
  std::istringstream lines(detail);
  for (std::string line; std::getline(lines, line);) std::cout << "    " << line << '\n';
  std::cout.flush();
  if (!ok) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct CliRun {
  int status;
  std::string out;
  std::string err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int status = run_cli(args, out, err);
  return {status, out.str(), err.str()};
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string suite_detail(const verify::SuiteReport& r, double secs) {
  std::ostringstream d;
  std::size_t passed = 0;
  for (const auto& c : r.checks) {
    if (c.passed) {
      ++passed;
      continue;
    }
    d << "failed: " << c.group << "/" << c.name << " tol=" << c.tolerance << " measured=" << c.measured << " "
      << c.detail << '\n';
  }
  d << passed << "/" << r.checks.size() << " checks, " << fmt(secs, 1) << " s";
  return d.str();
}

void oracle_criterion() {
  const auto t0 = std::chrono::steady_clock::now();
  verify::SuiteOptions opts;
  opts.oracle_instances = 20;
  verify::SuiteReport r;
  r.checks = verify::oracle_checks(opts);
  const double secs = seconds_since(t0);
  report(r.passed() && !r.checks.empty() && secs < 60,
         "oracle equivalence: kernels match naive loops on 20 instances (f64 <= 1e-12, f32 <= 1e-5, < 1 min)",
         suite_detail(r, secs));
}

void gradient_criterion() {
  const auto t0 = std::chrono::steady_clock::now();
  verify::SuiteOptions opts;
  opts.seeds = {1, 2, 3, 4, 5};
  opts.coords_per_tensor = 0;
  verify::SuiteReport r;
  r.checks = verify::block_gradient_checks(opts);
  verify::SuiteOptions prim_opts;
  prim_opts.seeds = opts.seeds;
  const auto prim = verify::gradient_checks(prim_opts);
  r.checks.insert(r.checks.end(), prim.begin(), prim.end());
  const double secs = seconds_since(t0);
  report(r.passed() && !r.checks.empty() && secs < 300,
         "gradient suite: blocks and L_total match central differences, rel err <= 1e-4, A=8 T=3 B=2, 5 seeds (< 5 min)",
         suite_detail(r, secs));
}

void identity_criterion() {
  const auto t0 = std::chrono::steady_clock::now();
  verify::SuiteOptions opts;
  verify::SuiteReport r;
  r.checks = verify::identity_checks(opts);
  report(r.passed() && !r.checks.empty(),
         "identity suite: shift fixed point, uniform X_diff = 0, constant map Delta = 0, unit weights, masked "
         "entries, alpha endpoints",
         suite_detail(r, seconds_since(t0)));
}

struct RunOutcome {
  double success = 0;
  double correlation = 0;
};

RunConfig ablation_config(const std::string& variant, std::uint64_t seed) {
  RunConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.seed = seed;
  cfg.data_seed = 100000 * seed;
  if (variant == "no-SA" || variant == "neither") cfg.disable_spatial = true;
  if (variant == "no-temporal" || variant == "neither") cfg.pooling_baseline = true;
  cfg.validate();
  return cfg;
}

void ablation_and_embedding_criteria() {
  const std::vector<std::string> variants{"full", "no-SA", "no-temporal", "neither"};
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  std::map<std::string, std::vector<RunOutcome>> runs;
  std::ostringstream log;
  const auto t0 = std::chrono::steady_clock::now();
  for (auto seed : seeds) {
    for (const auto& v : variants) {
      const auto t1 = std::chrono::steady_clock::now();
      const RunConfig cfg = ablation_config(v, seed);
      auto result = train_model(cfg, training_dataset(cfg));
      const auto metrics = nav::compute_metrics(
          evaluate_policy(cfg, model_policy(result.params, cfg.model(), cfg.seed), cfg.eval_episodes));
      RunOutcome o{metrics.success_rate, 0.0};
      if (v == "full" || v == "no-temporal") o.correlation = embedding_separation(cfg, result.params).correlation;
      runs[v].push_back(o);
      log << v << " seed " << seed << ": success " << fmt(o.success, 2) << ", spl " << fmt(metrics.spl)
          << ", collisions " << fmt(metrics.mean_collisions, 2);
      if (v == "full" || v == "no-temporal") log << ", spearman " << fmt(o.correlation);
      log << " (" << fmt(seconds_since(t1), 0) << " s)\n";
    }
  }
  auto mean = [&](const std::string& v) {
    double s = 0;
    for (const auto& o : runs[v]) s += o.success;
    return s / static_cast<double>(runs[v].size());
  };
  const double full = mean("full"), no_sa = mean("no-SA"), no_t = mean("no-temporal"), neither = mean("neither");
  std::ostringstream d;
  d << log.str();
  d << "mean success: full " << fmt(full) << ", no-SA " << fmt(no_sa) << ", no-temporal " << fmt(no_t)
    << ", neither " << fmt(neither) << '\n';
  const bool margin_t = full - no_t >= 0.15;
  const bool margin_n = full - neither >= 0.25;
  const bool order = full >= no_sa && no_sa >= no_t && no_t >= neither;
  d << "full - no-temporal = " << fmt(full - no_t) << " (need >= 0.15): " << (margin_t ? "ok" : "not met") << '\n';
  d << "full - neither = " << fmt(full - neither) << " (need >= 0.25): " << (margin_n ? "ok" : "not met") << '\n';
  d << "ordering full >= no-SA >= no-temporal >= neither: " << (order ? "ok" : "not met") << '\n';
  d << "total " << fmt(seconds_since(t0), 0) << " s";
  report(margin_t && margin_n && order,
         "ablation trend: 32x32 world, 200 train episodes, 50 eval episodes, 3 seeds", d.str());

  std::ostringstream e;
  bool all_pairs = true;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const double a = runs["full"][i].correlation, b = runs["no-temporal"][i].correlation;
    const bool ok = a > b;
    all_pairs = all_pairs && ok;
    e << "seed " << seeds[i] << ": full " << fmt(a) << " vs pooling baseline " << fmt(b) << (ok ? "" : "  (wrong order)")
      << '\n';
  }
  e << "paired over " << seeds.size() << " seeds";
  report(all_pairs, "embedding separation: full model Spearman exceeds the pooling baseline on every seed", e.str());
}

void fidelity_criterion(const fs::path& dir) {
  std::ofstream(dir / "pristine.cfg") << "";
  std::ofstream(dir / "small_data.cfg") << "train_episodes = 2\n";
  std::ostringstream d;
  const auto gen = cli({"gen-data", "--config", (dir / "small_data.cfg").string(), "--out", (dir / "small.strd").string()});
  const auto train = cli({"train", "--config", (dir / "pristine.cfg").string(), "--data", (dir / "small.strd").string(),
                          "--out", (dir / "pristine").string()});
  bool ok = gen.status == 0 && train.status == 0;
  if (!ok) d << "cli failed: " << gen.err << train.err << '\n';
  const std::vector<std::string> expected{"temperature = 0.1", "rho = 0.125",          "strides = 8,4,2",
                                          "alpha = 0.0001",    "learning_rate = 0.0001", "spatial_layers = 2"};
  std::istringstream echo(train.out);
  std::vector<std::string> lines;
  for (std::string l; std::getline(echo, l);) lines.push_back(l);
  for (const auto& want : expected) {
    const bool found = std::find(lines.begin(), lines.end(), want) != lines.end();
    ok = ok && found;
    d << want << (found ? "" : "  (missing)") << '\n';
  }
  const bool saved = read_file(dir / "pristine" / "config.txt") == serialize_config(RunConfig{});
  ok = ok && saved;
  d << "saved config equals the defaults: " << (saved ? "yes" : "no");
  report(ok, "hyperparameter fidelity: defaults load from a pristine config and appear verbatim in the echo", d.str());
}

void protocol_criterion() {
  const auto r = cli({"eval", "--expert"});
  std::ostringstream d;
  bool ok = r.status == 0;
  std::istringstream lines(r.out);
  std::string header, row;
  std::getline(lines, header);
  std::getline(lines, row);
  d << header << '\n' << row << '\n' << r.err;
  ok = ok && header == "seed,task,success_rate,collisions,path_mean,path_var,spl";
  ok = ok && r.err.find("episodes = 50\n") != std::string::npos;
  std::vector<std::string> f;
  std::stringstream ss(row);
  for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
  ok = ok && f.size() == 7 && std::stod(f[2]) == 1.0 && std::stod(f[3]) == 0.0 && std::stod(f[6]) == 1.0;
  report(ok, "protocol fidelity: eval runs 50 repeats by default; expert gets success 1, collisions 0, SPL 1",
         d.str());
}

void determinism_criterion(const fs::path& dir) {
  std::ofstream(dir / "det.cfg") << "A = 8\nT = 3\nstrides = 4,2,1\ntrain_episodes = 20\nepochs = 3\n"
                                    "eval_episodes = 10\nlearning_rate = 0.001\nseed = 7\n";
  std::ostringstream d;
  bool ok = true;
  std::vector<std::string> curves, evals, ckpts;
  for (const char* run : {"det_a", "det_b"}) {
    const auto t = cli({"train", "--config", (dir / "det.cfg").string(), "--out", (dir / run).string()});
    const auto ckpt = (dir / run / "model.strc").string();
    const auto e = cli({"eval", "--ckpt", ckpt, "--csv", (dir / (std::string(run) + ".csv")).string()});
    ok = ok && t.status == 0 && e.status == 0;
    curves.push_back(read_file(dir / run / "loss.csv"));
    ckpts.push_back(read_file(ckpt));
    evals.push_back(read_file(dir / (std::string(run) + ".csv")));
  }
  const bool same_curve = curves[0] == curves[1] && !curves[0].empty();
  const bool same_ckpt = ckpts[0] == ckpts[1] && !ckpts[0].empty();
  const bool same_eval = evals[0] == evals[1] && !evals[0].empty();

  RunConfig cfg = load_config((dir / "det.cfg").string());
  auto params = ModelParams<float>::init(cfg.model(), cfg.seed);
  const auto mc = cfg.model();
  Tensor<float> ctx(Shape{2, mc.context_dim()}, 0.25f);
  const auto s1 = heads::sample_actions(ctx, mc.schedule(), params.diffusion, mc.head, 11);
  const auto s2 = heads::sample_actions(ctx, mc.schedule(), params.diffusion, mc.head, 11);
  const bool same_samples = s1 == s2;

  ok = ok && same_curve && same_ckpt && same_eval && same_samples;
  d << "loss curves identical: " << (same_curve ? "yes" : "no") << '\n';
  d << "checkpoints identical: " << (same_ckpt ? "yes" : "no") << '\n';
  d << "action samples identical: " << (same_samples ? "yes" : "no") << '\n';
  d << "metrics CSVs identical: " << (same_eval ? "yes" : "no");
  report(ok, "determinism: same config and seed give bitwise-identical loss curves, samples and metrics", d.str());
}

}  // namespace

int main() {
  const fs::path dir = fs::temp_directory_path() / "strnet_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  try {
    oracle_criterion();
    gradient_criterion();
    identity_criterion();
    fidelity_criterion(dir);
    protocol_criterion();
    determinism_criterion(dir);
    ablation_and_embedding_criteria();
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance run aborted: " << e.what() << '\n';
    ++failures;
  }
  fs::remove_all(dir);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << '\n';
  return failures == 0 ? 0 : 1;
}
