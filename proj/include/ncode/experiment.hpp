#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>

#include "ncode/adjoint.hpp"
#include "ncode/control.hpp"
#include "ncode/odesolve.hpp"
#include "ncode/tasks.hpp"
#include "ncode/train.hpp"

namespace ncode {

enum class ModelVariant { ncode, node };

std::string to_string(ModelVariant v);
ModelVariant model_variant_from_string(const std::string& s);
std::string to_string(GradientEngine e);
GradientEngine engine_from_string(const std::string& s);

struct GradCheckSettings {
  std::string loss = "task";      // "task" or "zero"
  std::string mutation = "none";  // "none" or "flip_adjoint_sign"
  std::size_t examples = 1;       // examples summed into the checked loss
  double step = 1e-5;
  double threshold = 1e-3;
  double floor = 1e-4;            // denominator floor of the relative error
  std::size_t coords = 0;         // evenly spaced coordinates checked; 0 = all

  bool operator==(const GradCheckSettings&) const = default;
};

/// Everything a run needs. The model block is used by the flow tasks;
/// memorize and vdp_fit have fixed model structure.
struct ExperimentConfig {
  TaskSpec task;
  ModelVariant variant = ModelVariant::ncode;
  DynamicsSpec model;
  MlpSpec decoder;          // latent_flow_ae only
  double horizon = 1.0;
  SolverConfig solver;
  GradientEngine engine = GradientEngine::adjoint;
  TrainOptions train;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  GradCheckSettings grad_check;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Defaults for a task; `variant` = node gives the fixed-weight baseline
/// where one exists (reflection, annuli).
ExperimentConfig default_config(TaskName task, ModelVariant variant = ModelVariant::ncode);

struct TaskData {
  Dataset train;
  Dataset eval;
  Vec latent_x0;  // latent_flow_ae only
};

/// Seeded datasets of every task but memorize (UnsupportedError). For
/// vdp_fit the rows are observation times {t} with targets {x(t)}.
TaskData make_task_data(const ExperimentConfig& cfg);

std::unique_ptr<TaskObjective> make_objective(const ExperimentConfig& cfg);

/// Initial trainable vector for the config's seed.
Vec initial_params(const ExperimentConfig& cfg, const TaskObjective& obj);

struct RunResult {
  TrainResult train;
  EvalSummary final_eval;
  Rng rng;
};

/// Seeds data, initialization and shuffling from cfg.seed and trains.
RunResult train_run(const ExperimentConfig& cfg,
                    const std::function<void(const TrainMetrics&)>& on_epoch = {});

/// Central differences of the summed loss of the first `grad_check.examples`
/// training examples against the configured gradient engine, at the
/// initial parameters of the config's seed.
GradCheckReport experiment_grad_check(const ExperimentConfig& cfg);

}  // namespace ncode
