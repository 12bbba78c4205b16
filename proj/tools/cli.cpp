#include "strnet/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "strnet/checkpoint.hpp"
#include "strnet/config.hpp"
#include "strnet/evaluate.hpp"
#include "strnet/navsim.hpp"
#include "strnet/train.hpp"
#include "strnet/verify.hpp"

namespace strnet {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw Error("failed writing " + path.string());
}

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_config(path);
}

int cmd_check(const std::string& fault, std::size_t instances, const std::string& filter, std::ostream& out) {
  verify::SuiteOptions opts;
  opts.filter = filter;
  opts.inject_fault = fault;
  opts.oracle_instances = instances;
  const auto report = verify::run_suite(opts);
  out << verify::format_report(report);
  return report.passed() && !report.checks.empty() ? 0 : 1;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, const std::string& data_path,
              std::ostream& out, std::ostream& err) {
  const RunConfig cfg = config_or_default(config_path);
  cfg.validate();
  const auto hash = config_hash(cfg);
  out << serialize_config(cfg) << "config_hash = " << hash << '\n';
  const auto data = data_path.empty() ? training_dataset(cfg) : nav::load_dataset(data_path);
  if (data.window != cfg.observation_window)
    throw Error("train: dataset window " + std::to_string(data.window) + " does not match observation_window " +
                std::to_string(cfg.observation_window));
  auto result = train_model(cfg, data, [&](const EpochStats& s) {
    err << "epoch " << s.epoch << " lr " << s.learning_rate << " total " << s.total << " distance "
        << s.distance << " diffusion " << s.diffusion << '\n';
  });
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  save_checkpoint((dir / "model.strc").string(), cfg, result.params);
  write_text(dir / "loss.csv", loss_curve_csv(result.curve));
  write_text(dir / "config.txt", serialize_config(cfg));
  out << "checkpoint = " << (dir / "model.strc").string() << '\n';
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& config_path, std::size_t episodes, bool expert,
             const std::string& csv_path, std::ostream& out, std::ostream& err) {
  if (ckpt_path.empty() && !expert) throw Error("eval: --ckpt is required unless --expert is given");
  RunConfig cfg;
  std::optional<Checkpoint> ckpt;
  if (!ckpt_path.empty()) {
    ckpt = load_checkpoint(ckpt_path);
    cfg = ckpt->config;
  }
  if (!config_path.empty()) cfg = load_config(config_path);
  cfg.validate();
  if (episodes == 0) episodes = cfg.eval_episodes;

  std::vector<nav::EpisodeMetrics> runs;
  if (expert) {
    runs = evaluate_policy(cfg, nav::expert_policy(), episodes);
  } else {
    auto params = params_for_config(*ckpt, cfg);
    runs = evaluate_policy(cfg, model_policy(params, cfg.model(), cfg.seed), episodes);
  }
  EvalRow row{cfg.seed, expert ? task_name(cfg) + "_expert" : task_name(cfg), nav::compute_metrics(runs)};
  const auto csv = eval_csv({row});
  out << csv;
  err << "config_hash = " << config_hash(cfg) << ", episodes = " << runs.size() << '\n';
  if (!csv_path.empty()) write_text(csv_path, csv);
  return 0;
}

int cmd_embed(const std::string& ckpt_path, const std::string& config_path, const std::string& csv_path,
              std::ostream& out, std::ostream& err) {
  const auto ckpt = load_checkpoint(ckpt_path);
  RunConfig cfg = config_path.empty() ? ckpt.config : load_config(config_path);
  cfg.validate();
  auto params = params_for_config(ckpt, cfg);
  const auto report = embedding_separation(cfg, params);
  out << "spearman = " << format_number(report.correlation) << '\n';
  out << "states = " << report.points.size() << '\n';
  err << "config_hash = " << config_hash(cfg) << '\n';
  if (!csv_path.empty()) write_text(csv_path, embedding_csv(report));
  return 0;
}

int cmd_bench(const std::string& config_path, std::size_t repeats, std::ostream& out) {
  const RunConfig cfg = config_or_default(config_path);
  cfg.validate();
  out << bench_text(run_bench(cfg, repeats));
  return 0;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_path, std::ostream& out) {
  const RunConfig cfg = config_or_default(config_path);
  cfg.validate();
  const auto data = training_dataset(cfg);
  nav::save_dataset(out_path, data);
  out << "episodes = " << data.episodes.size() << '\n' << "window = " << data.window << '\n';
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"strnet: spatio-temporal navigation policy toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_path, ckpt_path, csv_path, data_path, fault, filter;
  std::size_t episodes = 0, repeats = 100, instances = 20;
  bool expert = false;

  auto* check = app.add_subcommand("check", "Run oracle, identity and gradient checks");
  check->add_option("--inject-fault", fault, "Corrupt the backward pass of the named primitive");
  check->add_option("--filter", filter, "Keep only checks whose name contains this text");
  check->add_option("--instances", instances, "Random instances per oracle check")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "Train a model and write checkpoint, loss curve and config");
  train->add_option("--config", config_path, "Config file (defaults when omitted)");
  train->add_option("--out", out_path, "Output directory")->required();
  train->add_option("--data", data_path, "Dataset file from gen-data (generated when omitted)");

  auto* eval = app.add_subcommand("eval", "Roll out a checkpoint and print metrics CSV");
  eval->add_option("--ckpt", ckpt_path, "Checkpoint file");
  eval->add_option("--config", config_path, "Config file (defaults to the checkpoint's)");
  eval->add_option("--episodes", episodes, "Repeats per task (default: the config's eval_episodes)")->check(CLI::PositiveNumber);
  eval->add_flag("--expert", expert, "Use the BFS expert instead of the checkpoint");
  eval->add_option("--csv", csv_path, "Also write the CSV here");

  auto* embed = app.add_subcommand("embed", "Rank correlation of context distance with temporal distance");
  embed->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
  embed->add_option("--config", config_path, "Config file (defaults to the checkpoint's)");
  embed->add_option("--csv", csv_path, "Write the point cloud here");

  auto* bench = app.add_subcommand("bench", "Parameter counts and forward timing");
  bench->add_option("--config", config_path, "Config file (defaults when omitted)");
  bench->add_option("--repeats", repeats, "Timed forward passes")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "Write an expert dataset");
  gen->add_option("--config", config_path, "Config file (defaults when omitted)");
  gen->add_option("--out", out_path, "Dataset file")->required();

  std::vector<std::string> storage{"strnet"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (check->parsed()) return cmd_check(fault, instances, filter, out);
    if (train->parsed()) return cmd_train(config_path, out_path, data_path, out, err);
    if (eval->parsed()) return cmd_eval(ckpt_path, config_path, episodes, expert, csv_path, out, err);
    if (embed->parsed()) return cmd_embed(ckpt_path, config_path, csv_path, out, err);
    if (bench->parsed()) return cmd_bench(config_path, repeats, out);
    if (gen->parsed()) return cmd_gen_data(config_path, out_path, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace strnet
