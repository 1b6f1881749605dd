#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "ncode/cli.hpp"
#include "ncode/config.hpp"
#include "ncode/experiment.hpp"

namespace py = pybind11;
using namespace ncode;

namespace {

py::dict metrics_dict(const TrainMetrics& m) {
  py::dict d;
  d["epoch"] = m.epoch;
  d["train_loss"] = m.train_loss;
  d["eval_loss"] = m.eval_loss;
  d["accuracy"] = m.accuracy;
  d["nfe"] = m.n_rhs_evals;
  d["wall_ms"] = m.wall_ms;
  return d;
}

Trajectory observed_from(const std::vector<double>& times, const std::vector<double>& xs) {
  if (times.size() != xs.size()) throw InputError("times and xs differ in length");
  Trajectory tr;
  tr.x_dim = 1;
  tr.times = times;
  for (double x : xs) tr.states.push_back({x, 0.0});
  return tr;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Neurally-controlled ODE toolkit (native core)";
  m.attr("__version__") = NCODE_VERSION;

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<MigrationError>(m, "MigrationError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<BudgetError>(m, "BudgetError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<UnsupportedError>(m, "UnsupportedError", base.ptr());
  py::register_exception<ParameterError>(m, "ParameterError", base.ptr());
  py::register_exception<OptimizerError>(m, "OptimizerError", base.ptr());

  m.def(
      "default_config",
      [](const std::string& task, const std::string& variant) {
        return dump_config(default_config(task_from_string(task), model_variant_from_string(variant)));
      },
      py::arg("task"), py::arg("variant") = "ncode", "Default config of a task as JSON text.");

  m.def(
      "normalize_config", [](const std::string& text) { return dump_config(parse_config(text)); },
      py::arg("text"), "Parse, validate and re-serialize a config with defaults filled in.");

  m.def(
      "train",
      [](const std::string& text) {
        const ExperimentConfig cfg = parse_config(text);
        RunResult r;
        {
          py::gil_scoped_release release;
          r = train_run(cfg);
        }
        const auto obj = make_objective(cfg);
        py::list rows;
        for (const auto& row : r.train.metrics) rows.append(metrics_dict(row));
        py::dict out;
        out["metrics"] = rows;
        out["final_loss"] = r.final_eval.loss;
        out["final_accuracy"] = r.final_eval.accuracy;
        out["params"] = r.train.params;
        out["steps"] = r.train.steps;
        out["checkpoint"] = dump_checkpoint(make_checkpoint(
            cfg, r.train.params, obj->head_dim(), r.rng,
            r.train.metrics.empty() ? 0 : r.train.metrics.back().epoch));
        return out;
      },
      py::arg("config"), "Train from config JSON text; returns metrics, final eval and checkpoint.");

  m.def(
      "grad_check",
      [](const std::string& text) {
        const ExperimentConfig cfg = parse_config(text);
        GradCheckReport rep;
        {
          py::gil_scoped_release release;
          rep = experiment_grad_check(cfg);
        }
        py::list entries;
        for (const auto& e : rep.entries) {
          entries.append(py::make_tuple(e.coord, e.analytic, e.fd, e.rel_err));
        }
        py::dict out;
        out["max_rel_err"] = rep.max_rel_err;
        out["entries"] = entries;
        out["passed"] = rep.max_rel_err < cfg.grad_check.threshold;
        return out;
      },
      py::arg("config"), "Gradient vs central differences; entries are (coord, adjoint, fd, rel_err).");

  m.def(
      "evaluate_checkpoint",
      [](const std::string& text) {
        const Checkpoint ck = parse_checkpoint(text);
        const auto obj = make_objective(ck.config);
        const EvalSummary s = evaluate(*obj, ck.params(), ck.config.train.threads);
        return py::make_tuple(s.loss, s.accuracy);
      },
      py::arg("checkpoint"), "(eval_loss, eval_accuracy) of checkpoint JSON text.");

  m.def(
      "predict",
      [](const std::string& text, const std::vector<std::vector<double>>& inputs) {
        const Checkpoint ck = parse_checkpoint(text);
        const auto obj = make_objective(ck.config);
        const Vec params = ck.params();
        std::vector<Vec> out;
        out.reserve(inputs.size());
        for (const auto& row : inputs) out.push_back(obj->predict(params, row));
        return out;
      },
      py::arg("checkpoint"), py::arg("inputs"), "Model outputs for raw input rows.");

  m.def(
      "gen_annuli",
      [](std::size_t n_per_class, double r1, double r2, double r3, std::uint64_t seed) {
        Rng rng(seed);
        const Dataset d = gen_annuli(n_per_class, r1, r2, r3, rng);
        return py::make_tuple(d.inputs, d.labels);
      },
      py::arg("n_per_class"), py::arg("r1") = 1.0, py::arg("r2") = 1.5, py::arg("r3") = 2.0,
      py::arg("seed") = 0);

  m.def(
      "vdp_observe",
      [](double mu, double x0, double horizon, std::size_t n_obs, double tol) {
        const Trajectory tr = vdp_observe(mu, x0, horizon, n_obs, SolverConfig::adaptive(tol));
        std::vector<double> xs;
        for (const auto& s : tr.states) xs.push_back(s[0]);
        return py::make_tuple(tr.times, xs);
      },
      py::arg("mu"), py::arg("x0") = 2.0, py::arg("horizon") = 10.0, py::arg("n_obs") = 101,
      py::arg("tol") = 1e-8, "(times, x) of the oscillator from (x0, 0).");

  m.def(
      "fit_vdp",
      [](const std::vector<double>& times, const std::vector<double>& xs, double mu_init,
         double tol) {
        const Trajectory obs = observed_from(times, xs);
        VdpFit fit;
        {
          py::gil_scoped_release release;
          fit = fit_vdp(obs, mu_init, SolverConfig::adaptive(tol), VdpFitOptions{});
        }
        py::dict out;
        out["mu"] = fit.mu;
        out["losses"] = fit.losses;
        out["nfe"] = fit.n_rhs_evals;
        return out;
      },
      py::arg("times"), py::arg("xs"), py::arg("mu_init"), py::arg("tol") = 1e-8);

  m.def(
      "latent_flow_encode",
      [](const std::vector<double>& theta, const std::vector<double>& x0, double T, double tol,
         std::size_t nnz_per_row) {
        return latent_flow_encode(theta, x0, T, SolverConfig::adaptive(tol), nnz_per_row);
      },
      py::arg("theta"), py::arg("x0"), py::arg("T") = 1.0, py::arg("tol") = 1e-10,
      py::arg("nnz_per_row") = 0, "x(T) of dx/dt = theta x, theta row-major m x m.");

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli_main(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run the command-line tool in-process: (exit_code, stdout, stderr).");
}
