#include "ncode/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ncode/config.hpp"
#include "ncode/experiment.hpp"

#ifndef NCODE_VERSION
#define NCODE_VERSION "0.0.0"
#endif

namespace ncode {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kTrajectoryExamples = 8;
constexpr std::size_t kTrajectorySamples = 21;

struct Overrides {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::string solver;
  double rtol = 0.0;
  double atol = 0.0;
  std::string out;
  std::size_t threads = 0;

  CLI::Option* seed_opt = nullptr;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* solver_opt = nullptr;
  CLI::Option* rtol_opt = nullptr;
  CLI::Option* atol_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* threads_opt = nullptr;

  void add_to(CLI::App& app, bool training_flags) {
    seed_opt = app.add_option("--seed", seed, "Root seed of data, init and shuffling");
    if (training_flags) {
      epochs_opt = app.add_option("--epochs", epochs, "Training epochs");
      solver_opt = app.add_option("--solver", solver, "euler, rk4 or dopri5");
      rtol_opt = app.add_option("--rtol", rtol, "Relative tolerance of dopri5");
      atol_opt = app.add_option("--atol", atol, "Absolute tolerance of dopri5");
    }
    out_opt = app.add_option("--out", out, "Output directory");
    threads_opt = app.add_option("--threads", threads, "Worker threads (0: all cores)");
  }

  void apply(ExperimentConfig& cfg) const {
    if (seed_opt && seed_opt->count()) cfg.seed = seed;
    if (epochs_opt && epochs_opt->count()) cfg.train.epochs = epochs;
    if (solver_opt && solver_opt->count()) cfg.solver.method = method_from_string(solver);
    if (rtol_opt && rtol_opt->count()) cfg.solver.rtol = rtol;
    if (atol_opt && atol_opt->count()) cfg.solver.atol = atol;
    if (out_opt && out_opt->count()) cfg.out_dir = out;
    if (threads_opt && threads_opt->count()) cfg.train.threads = threads;
    cfg.validate();
  }
};

std::string csv_header(const std::string& prefix, std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? "," : "") + prefix + std::to_string(i);
  return s;
}

void write_row(std::ostream& os, std::span<const double> v, bool leading_comma) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i || leading_comma) os << ',';
    os << format_double(v[i]);
  }
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  return os;
}

void write_dataset_csv(const fs::path& path, const Dataset& d) {
  auto os = open_out(path);
  const std::size_t n_in = d.size() ? d.inputs[0].size() : 0;
  os << csv_header("in_", n_in);
  if (!d.targets.empty()) {
    os << ',' << csv_header("target_", d.targets[0].size()) << '\n';
  } else {
    os << ",label\n";
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    write_row(os, d.inputs[i], false);
    if (!d.targets.empty()) {
      write_row(os, d.targets[i], true);
    } else {
      os << ',' << d.labels[i];
    }
    os << '\n';
  }
}

json episode_json(const Episode& ep) {
  json patterns = json::array();
  for (std::size_t i = 0; i < ep.patterns.rows; ++i) {
    patterns.push_back(std::vector<double>(ep.patterns.data.begin() + i * ep.patterns.cols,
                                           ep.patterns.data.begin() + (i + 1) * ep.patterns.cols));
  }
  return {{"patterns", patterns},
          {"order", ep.order},
          {"query_index", ep.query_index},
          {"degraded", ep.degraded},
          {"target", ep.target}};
}

void write_trajectories(const fs::path& path, const TaskObjective& obj,
                        std::span<const double> params) {
  auto os = open_out(path);
  const std::size_t n = std::min(kTrajectoryExamples, obj.eval_size());
  bool header = false;
  for (std::size_t i = 0; i < n; ++i) {
    const Trajectory tr = obj.sample_trajectory(params, i, kTrajectorySamples);
    const std::size_t d = tr.states.empty() ? 0 : tr.states[0].size();
    if (!header) {
      os << "example,t," << csv_header("x_", d) << '\n';
      header = true;
    }
    for (std::size_t k = 0; k < tr.size(); ++k) {
      os << i << ',' << format_double(tr.times[k]);
      write_row(os, tr.states[k], true);
      os << '\n';
    }
  }
  if (!header) os << "example,t\n";
}

json versions_json() {
  return {{"ncode", NCODE_VERSION}, {"checkpoint_format", kCheckpointVersion}};
}

bool reports_accuracy(const ExperimentConfig& cfg) {
  return cfg.task.name == TaskName::annuli || cfg.task.name == TaskName::memorize;
}

long long elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                               start)
      .count();
}

int cmd_run(const std::string& config_path, const Overrides& ov, bool quiet, bool no_wall_time,
            std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentConfig cfg = load_config(config_path);
  ov.apply(cfg);
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  save_config(dir / "config.json", cfg);

  auto metrics = open_out(dir / "metrics.csv");
  write_metrics_header(metrics);
  metrics.flush();
  const RunResult run = train_run(cfg, [&](const TrainMetrics& m) {
    TrainMetrics row = m;
    if (no_wall_time) row.wall_ms = 0;
    write_metrics_row(metrics, row);
    metrics.flush();
    if (!quiet) {
      out << "epoch " << m.epoch << " train_loss " << format_double(m.train_loss)
          << " eval_loss " << format_double(m.eval_loss) << " accuracy "
          << format_double(m.accuracy) << '\n';
    }
  });
  metrics.close();

  const auto obj = make_objective(cfg);
  const Vec& params = run.train.params;
  write_trajectories(dir / "trajectories.csv", *obj, params);

  const std::size_t epoch = run.train.metrics.empty() ? 0 : run.train.metrics.back().epoch;
  save_checkpoint(dir / "checkpoint.json",
                  make_checkpoint(cfg, params, obj->head_dim(), run.rng, epoch));

  std::size_t total_nfe = run.final_eval.n_rhs_evals;
  for (const auto& m : run.train.metrics) total_nfe += m.n_rhs_evals;
  json summary = {{"task", to_string(cfg.task.name)},
                  {"final_loss", run.final_eval.loss},
                  {"final_accuracy", reports_accuracy(cfg) ? json(run.final_eval.accuracy)
                                                           : json(nullptr)},
                  {"total_nfe", total_nfe},
                  {"wall_ms", no_wall_time ? 0 : elapsed_ms(start)},
                  {"seed", cfg.seed},
                  {"versions", versions_json()}};
  write_text_file(dir / "summary.json", summary.dump(2) + "\n");
  out << "final_loss " << format_double(run.final_eval.loss);
  if (reports_accuracy(cfg)) out << " final_accuracy " << format_double(run.final_eval.accuracy);
  out << " total_nfe " << total_nfe << " out " << dir.string() << '\n';
  return kExitOk;
}

int cmd_grad_check(const std::string& config_path, const Overrides& ov,
                   const std::string& report_path, std::ostream& out) {
  ExperimentConfig cfg = load_config(config_path);
  ov.apply(cfg);
  const GradCheckReport report = experiment_grad_check(cfg);
  const fs::path path =
      report_path.empty() ? fs::path(cfg.out_dir) / "grad_check.csv" : fs::path(report_path);
  auto os = open_out(path);
  write_grad_check_csv(os, report);
  os.close();
  const bool pass = report.max_rel_err < cfg.grad_check.threshold;
  out << "max_rel_err " << format_double(report.max_rel_err) << " threshold "
      << format_double(cfg.grad_check.threshold) << " coords " << report.entries.size() << ' '
      << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? kExitOk : kExitCheckFailed;
}

std::size_t input_dim(const ExperimentConfig& cfg) {
  switch (cfg.task.name) {
    case TaskName::reflection:
    case TaskName::vdp_fit:
      return 1;
    case TaskName::annuli:
      return 2;
    case TaskName::latent_flow_ae:
      return cfg.task.ae_data_dim;
    case TaskName::memorize:
      break;
  }
  throw ConfigError("replay: memorize episodes have no per-row prediction");
}

int cmd_replay(const std::string& checkpoint_path, const std::string& inputs_path,
               const Overrides& ov, std::size_t grid, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  ExperimentConfig cfg = ck.config;
  if (ov.threads_opt->count()) cfg.train.threads = ov.threads;
  const std::size_t in_dim = input_dim(cfg);
  const auto obj = make_objective(cfg);
  const Vec params = ck.params();
  if (params.size() != obj->param_dim() || ck.head.size() != obj->head_dim()) {
    throw ConfigError("replay: checkpoint holds " + std::to_string(params.size()) +
                      " parameters, model needs " + std::to_string(obj->param_dim()));
  }
  const fs::path dir = ov.out_opt->count() ? fs::path(ov.out)
                                           : fs::path(checkpoint_path).parent_path();

  const EvalSummary ev = evaluate(*obj, params, cfg.train.threads);
  json rep = {{"task", to_string(cfg.task.name)},
              {"eval_loss", ev.loss},
              {"eval_accuracy", reports_accuracy(cfg) ? json(ev.accuracy) : json(nullptr)},
              {"n_eval", obj->eval_size()},
              {"epoch", ck.epoch}};
  write_text_file(dir / "replay.json", rep.dump(2) + "\n");
  out << "eval_loss " << format_double(ev.loss) << '\n';

  if (!inputs_path.empty()) {
    const auto rows = read_numeric_csv(inputs_path);
    std::vector<Vec> preds(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != in_dim) {
        throw InputError("replay: row " + std::to_string(i + 1) + " of " + inputs_path + " has " +
                         std::to_string(rows[i].size()) + " values, expected " +
                         std::to_string(in_dim));
      }
    }
    parallel_for(rows.size(), cfg.train.threads,
                 [&](std::size_t i) { preds[i] = obj->predict(params, rows[i]); });
    auto os = open_out(dir / "predictions.csv");
    const std::size_t n_out = preds.empty() ? 0 : preds[0].size();
    os << csv_header("in_", in_dim) << ',' << csv_header("out_", n_out) << '\n';
    for (std::size_t i = 0; i < rows.size(); ++i) {
      write_row(os, rows[i], false);
      write_row(os, preds[i], true);
      os << '\n';
    }
    out << "predictions " << rows.size() << " rows -> " << (dir / "predictions.csv").string()
        << '\n';
  }

  if (cfg.task.name == TaskName::annuli && grid >= 2) {
    const double half = 1.25 * cfg.task.r3;
    std::vector<Vec> nodes;
    nodes.reserve(grid * grid);
    for (std::size_t j = 0; j < grid; ++j) {
      for (std::size_t i = 0; i < grid; ++i) {
        const double step = 2.0 * half / static_cast<double>(grid - 1);
        nodes.push_back({-half + step * static_cast<double>(i), -half + step * static_cast<double>(j)});
      }
    }
    std::vector<Vec> probs(nodes.size());
    parallel_for(nodes.size(), cfg.train.threads,
                 [&](std::size_t k) { probs[k] = obj->predict(params, nodes[k]); });
    auto os = open_out(dir / "grid.csv");
    os << "x_0,x_1," << csv_header("p_", probs.empty() ? 0 : probs[0].size()) << '\n';
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      write_row(os, nodes[k], false);
      write_row(os, probs[k], true);
      os << '\n';
    }
    out << "grid " << grid << 'x' << grid << " -> " << (dir / "grid.csv").string() << '\n';
  }
  return kExitOk;
}

int cmd_gen_data(const std::string& config_path, const Overrides& ov, std::ostream& out) {
  ExperimentConfig cfg = load_config(config_path);
  ov.apply(cfg);
  const fs::path dir(cfg.out_dir);
  if (cfg.task.name == TaskName::memorize) {
    const MemorizeObjective obj(cfg.task, cfg.solver, cfg.seed);
    json train = json::array();
    json eval = json::array();
    for (std::size_t i = 0; i < obj.train_size(); ++i) train.push_back(episode_json(obj.train_episode(i)));
    for (std::size_t i = 0; i < obj.eval_size(); ++i) eval.push_back(episode_json(obj.eval_episode(i)));
    json doc = {{"task", to_string(cfg.task.name)},
                {"seed", cfg.seed},
                {"train", std::move(train)},
                {"eval", std::move(eval)}};
    write_text_file(dir / "episodes.json", doc.dump() + "\n");
    out << "episodes " << obj.train_size() << " train, " << obj.eval_size() << " eval -> "
        << (dir / "episodes.json").string() << '\n';
    return kExitOk;
  }
  const TaskData data = make_task_data(cfg);
  write_dataset_csv(dir / "train.csv", data.train);
  write_dataset_csv(dir / "eval.csv", data.eval);
  out << "rows " << data.train.size() << " train, " << data.eval.size() << " eval -> "
      << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

std::vector<std::vector<double>> read_numeric_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line[0] == '#') continue;
    std::vector<double> row;
    bool numeric = true;
    std::stringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      while (end && (*end == ' ' || *end == '\t')) ++end;
      if (end == cell.c_str() || *end != '\0') {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue;
      }
      throw InputError(path + ": line " + std::to_string(line_no) + " is not numeric");
    }
    first = false;
    rows.push_back(std::move(row));
  }
  return rows;
}

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neurally-controlled ODE experiment runner"};
  app.set_version_flag("--version", std::string(NCODE_VERSION));
  app.require_subcommand(1);

  Overrides run_ov, check_ov, replay_ov, data_ov;
  std::string run_config, check_config, data_config, ckpt_path, inputs_path, report_path;
  bool quiet = false;
  bool no_wall_time = false;
  std::size_t grid = 41;

  CLI::App* run = app.add_subcommand("run", "Train a task and write metrics, trajectories, "
                                            "checkpoint and summary");
  run->add_option("config", run_config, "Config JSON")->required();
  run_ov.add_to(*run, true);
  run->add_flag("--quiet", quiet, "Suppress per-epoch lines");
  run->add_flag("--no-wall-time", no_wall_time, "Write wall_ms as 0 for byte-stable metrics");

  CLI::App* check = app.add_subcommand("grad-check", "Compare gradients with central differences");
  check->add_option("config", check_config, "Config JSON")->required();
  check_ov.add_to(*check, true);
  check->add_option("--report", report_path, "Report CSV (default <out>/grad_check.csv)");

  CLI::App* replay = app.add_subcommand("replay", "Evaluate a checkpoint and predict on inputs");
  replay->add_option("checkpoint", ckpt_path, "Checkpoint JSON")->required();
  replay->add_option("inputs", inputs_path, "Numeric CSV with one input row per line");
  replay_ov.add_to(*replay, false);
  replay->add_option("--grid", grid, "Annuli probability grid resolution (0: none)");

  CLI::App* gen = app.add_subcommand("gen-data", "Dump the task datasets");
  gen->add_option("config", data_config, "Config JSON")->required();
  data_ov.add_to(*gen, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(run_config, run_ov, quiet, no_wall_time, out);
    if (check->parsed()) return cmd_grad_check(check_config, check_ov, report_path, out);
    if (replay->parsed()) return cmd_replay(ckpt_path, inputs_path, replay_ov, grid, out);
    if (gen->parsed()) return cmd_gen_data(data_config, data_ov, out);
  } catch (const NumericalError& e) {
    err << "ncode: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const BudgetError& e) {
    err << "ncode: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const OptimizerError& e) {
    err << "ncode: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    err << "ncode: error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    err << "ncode: error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "ncode: internal error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitConfig;
}

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"ncode"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace ncode
