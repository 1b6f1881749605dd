#include "ncode/experiment.hpp"

#include <algorithm>
#include <cmath>

namespace ncode {

namespace {
constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kInitStream = 2;
constexpr std::uint64_t kShuffleStream = 3;
constexpr std::uint64_t kEvalDataStream = 4;
constexpr std::uint64_t kLatentStream = 5;
}  // namespace

std::string to_string(ModelVariant v) { return v == ModelVariant::node ? "node" : "ncode"; }

ModelVariant model_variant_from_string(const std::string& s) {
  if (s == "ncode") return ModelVariant::ncode;
  if (s == "node") return ModelVariant::node;
  throw ConfigError("unknown model variant '" + s + "' (valid: ncode, node)");
}

std::string to_string(GradientEngine e) {
  return e == GradientEngine::discrete ? "discrete" : "adjoint";
}

GradientEngine engine_from_string(const std::string& s) {
  if (s == "adjoint") return GradientEngine::adjoint;
  if (s == "discrete") return GradientEngine::discrete;
  throw ConfigError("unknown gradient engine '" + s + "' (valid: adjoint, discrete)");
}

void ExperimentConfig::validate() const {
  task.validate();
  try {
    solver.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  if (engine == GradientEngine::discrete && !solver.fixed_step()) {
    throw ConfigError("discrete engine needs a fixed-step solver (euler or rk4)");
  }
  if (!(horizon >= 0.0)) throw ConfigError("horizon must be non-negative");
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(train.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (grad_check.loss != "task" && grad_check.loss != "zero") {
    throw ConfigError("grad_check.loss must be 'task' or 'zero'");
  }
  if (!(grad_check.step > 0.0)) throw ConfigError("grad_check.step must be positive");
  if (grad_check.examples == 0) throw ConfigError("grad_check.examples must be positive");
  if (grad_check.mutation != "none" && grad_check.mutation != "flip_adjoint_sign") {
    throw ConfigError("grad_check.mutation must be 'none' or 'flip_adjoint_sign'");
  }
  const bool flow = task.name == TaskName::reflection || task.name == TaskName::annuli ||
                    task.name == TaskName::latent_flow_ae;
  if (flow) {
    try {
      model.validate();
      if (task.name == TaskName::latent_flow_ae) decoder.validate();
    } catch (const ShapeError& e) {
      throw ConfigError(std::string("model: ") + e.what());
    }
    const std::size_t want = task.name == TaskName::reflection ? 1
                             : task.name == TaskName::annuli   ? 2
                                                               : task.ae_factors;
    if (model.x_dim != want) {
      throw ConfigError("model.x_dim is " + std::to_string(model.x_dim) + ", task needs " +
                        std::to_string(want));
    }
  }
}

ExperimentConfig default_config(TaskName task, ModelVariant variant) {
  ExperimentConfig c;
  c.task.name = task;
  c.variant = variant;
  c.train.threads = 0;
  switch (task) {
    case TaskName::reflection:
      c.task.n_train = 32;
      c.task.n_eval = 64;
      c.horizon = 1.0;
      c.solver = SolverConfig::adaptive(1e-6);
      c.train.epochs = 2000;
      c.train.batch_size = 32;
      c.train.eval_every = 50;
      c.train.lr = 1e-2;
      c.train.shuffle = false;
      if (variant == ModelVariant::ncode) {
        c.model.x_dim = 1;
        c.model.f_mlp = MlpSpec{{1, 1}, Activation::identity, Activation::identity};
        c.model.gamma_kind = GammaKind::mlp;
        c.model.gamma_mlp = MlpSpec{{1, 16, 2}, Activation::tanh, Activation::identity};
      } else {
        c.model = node_baseline_spec(1, MlpSpec{{1, 16, 1}, Activation::tanh,
                                                Activation::identity});
      }
      break;
    case TaskName::annuli:
      c.task.n_train = 1000;
      c.task.n_eval = 2000;
      c.horizon = 1.0;
      c.solver = SolverConfig::adaptive(1e-5);
      c.train.epochs = 5;
      c.train.batch_size = 64;
      c.train.lr = 1e-2;
      if (variant == ModelVariant::ncode) {
        c.model.x_dim = 2;
        c.model.f_mlp = MlpSpec{{2, 2}, Activation::identity, Activation::identity};
        c.model.gamma_kind = GammaKind::mlp;
        c.model.gamma_mlp = MlpSpec{{2, 32, 6}, Activation::tanh, Activation::identity};
      } else {
        c.model = node_baseline_spec(2, MlpSpec{{2, 32, 2}, Activation::tanh,
                                                Activation::identity});
      }
      break;
    case TaskName::vdp_fit:
      c.task.n_train = 1;
      c.task.n_eval = 1;
      c.solver = SolverConfig::adaptive(1e-8);
      c.train.epochs = 300;
      c.train.batch_size = 1;
      c.train.lr = 0.05;
      c.train.shuffle = false;
      c.model.x_dim = 1;
      c.model.f_kind = FieldKind::theta;
      break;
    case TaskName::memorize:
      c.task.n_train = 1000;
      c.task.n_eval = 200;
      c.solver = SolverConfig::fixed(Method::rk4, 0.05);
      c.train.epochs = 1;
      c.train.batch_size = 10;
      c.train.lr = 2e-3;
      c.model = memorize_model_spec(c.task.mem_bits);
      break;
    case TaskName::latent_flow_ae:
      c.task.n_train = 512;
      c.task.n_eval = 256;
      c.horizon = 1.0;
      c.solver = SolverConfig::adaptive(1e-6);
      c.train.epochs = 60;
      c.train.batch_size = 32;
      c.train.lr = 1e-2;
      c.model = latent_flow_spec(c.task.ae_factors, c.task.ae_data_dim, 32, 0);
      c.decoder = MlpSpec{{c.task.ae_factors, 32, c.task.ae_data_dim}, Activation::tanh,
                          Activation::identity};
      break;
  }
  return c;
}

TaskData make_task_data(const ExperimentConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed);
  Rng data = root.split(kDataStream);
  Rng eval = root.split(kEvalDataStream);
  const TaskSpec& t = cfg.task;
  TaskData out;
  switch (t.name) {
    case TaskName::reflection:
      out.train = gen_reflection(t.n_train, t.range_lo, t.range_hi, data);
      out.eval = gen_reflection(std::max<std::size_t>(t.n_eval, 1), t.range_lo, t.range_hi, eval);
      break;
    case TaskName::annuli:
      out.train = gen_annuli((t.n_train + 1) / 2, t.r1, t.r2, t.r3, data);
      out.eval = gen_annuli((t.n_eval + 1) / 2, t.r1, t.r2, t.r3, eval);
      break;
    case TaskName::vdp_fit: {
      const Trajectory obs =
          vdp_observe(t.vdp_mu_true, t.vdp_x0, t.vdp_horizon, t.vdp_n_obs, cfg.solver);
      for (std::size_t i = 0; i < obs.size(); ++i) {
        out.train.inputs.push_back({obs.times[i]});
        out.train.targets.push_back({obs.states[i][0]});
      }
      out.eval = out.train;
      break;
    }
    case TaskName::memorize:
      throw UnsupportedError("memorize episodes are not a flat dataset");
    case TaskName::latent_flow_ae: {
      Rng lat = root.split(kLatentStream);
      const LatentGenerator gen = make_latent_generator(t.ae_factors, t.ae_data_dim, lat);
      out.latent_x0 = rand_normal(lat, cfg.model.x_dim, 0.0, 1.0);
      out.train = gen_latent_data(gen, t.n_train, data);
      out.eval = gen_latent_data(gen, std::max<std::size_t>(t.n_eval, 1), eval);
      break;
    }
  }
  return out;
}

std::unique_ptr<TaskObjective> make_objective(const ExperimentConfig& cfg) {
  cfg.validate();
  const TaskSpec& t = cfg.task;
  switch (t.name) {
    case TaskName::vdp_fit:
      return std::make_unique<VdpObjective>(t, cfg.solver);
    case TaskName::memorize:
      return std::make_unique<MemorizeObjective>(t, cfg.solver, cfg.seed);
    default:
      break;
  }
  TaskData d = make_task_data(cfg);
  switch (t.name) {
    case TaskName::reflection:
      return std::make_unique<FlowRegressionObjective>(cfg.model, std::move(d.train),
                                                       std::move(d.eval), cfg.horizon, cfg.solver,
                                                       cfg.engine);
    case TaskName::annuli:
      return std::make_unique<FlowClassifierObjective>(cfg.model, 2, std::move(d.train),
                                                       std::move(d.eval), cfg.horizon, cfg.solver,
                                                       cfg.engine);
    case TaskName::latent_flow_ae:
      return std::make_unique<LatentAeObjective>(cfg.model, cfg.decoder, std::move(d.latent_x0),
                                                 std::move(d.train), std::move(d.eval),
                                                 cfg.horizon, cfg.solver, cfg.engine);
    default:
      break;
  }
  throw ConfigError("unhandled task");
}

Vec initial_params(const ExperimentConfig& cfg, const TaskObjective& obj) {
  Rng init = Rng(cfg.seed).split(kInitStream);
  return obj.initial_params(init);
}

RunResult train_run(const ExperimentConfig& cfg,
                    const std::function<void(const TrainMetrics&)>& on_epoch) {
  const auto obj = make_objective(cfg);
  Rng shuffle = Rng(cfg.seed).split(kShuffleStream);
  RunResult out{train_loop(*obj, initial_params(cfg, *obj), cfg.train, shuffle, on_epoch), {},
                shuffle};
  out.final_eval = evaluate(*obj, out.train.params, cfg.train.threads);
  out.rng = shuffle;
  return out;
}

GradCheckReport experiment_grad_check(const ExperimentConfig& cfg) {
  const auto obj = make_objective(cfg);
  const GradCheckSettings& gc = cfg.grad_check;
  GradientFixture fixture;
  fixture.flip_adjoint = gc.mutation == "flip_adjoint_sign";
  fixture.loss_weight = gc.loss == "zero" ? 0.0 : 1.0;
  obj->set_fixture(fixture);

  const Vec params = initial_params(cfg, *obj);
  const std::size_t n_examples = std::min(gc.examples, obj->train_size());
  if (n_examples == 0) throw ConfigError("grad-check: task has no training examples");

  Vec analytic(params.size(), 0.0);
  for (std::size_t i = 0; i < n_examples; ++i) {
    const ExampleResult r = obj->train_example(params, i, true);
    axpy(1.0, r.grad, analytic);
  }
  auto loss_at = [&](const Vec& p) {
    double s = 0.0;
    for (std::size_t i = 0; i < n_examples; ++i) s += obj->train_example(p, i, false).loss;
    return s;
  };

  const std::size_t dim = params.size();
  const std::size_t n_coords = gc.coords == 0 ? dim : std::min(gc.coords, dim);
  GradCheckReport report;
  Vec p = params;
  for (std::size_t k = 0; k < n_coords; ++k) {
    const std::size_t c = n_coords == dim ? k : k * dim / n_coords;
    p[c] = params[c] + gc.step;
    const double up = loss_at(p);
    p[c] = params[c] - gc.step;
    const double down = loss_at(p);
    p[c] = params[c];
    GradCheckEntry e;
    e.coord = c;
    e.analytic = analytic[c];
    e.fd = (up - down) / (2.0 * gc.step);
    e.rel_err = relative_error(e.analytic, e.fd, gc.floor);
    if (!std::isfinite(e.rel_err)) {
      throw NumericalError("grad-check: non-finite derivative at coordinate " +
                               std::to_string(c),
                           0.0);
    }
    report.max_rel_err = std::max(report.max_rel_err, e.rel_err);
    report.entries.push_back(e);
  }
  std::stable_sort(report.entries.begin(), report.entries.end(),
                   [](const GradCheckEntry& a, const GradCheckEntry& b) {
                     return a.rel_err > b.rel_err;
                   });
  return report;
}

}  // namespace ncode
