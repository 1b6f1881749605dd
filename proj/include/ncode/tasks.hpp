#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ncode/adjoint.hpp"
#include "ncode/control.hpp"
#include "ncode/dynamics.hpp"
#include "ncode/numcore.hpp"
#include "ncode/odesolve.hpp"
#include "ncode/train.hpp"

namespace ncode {

/// Gradient-check fixtures: the loss is scaled by `loss_weight` and, with
/// `flip_adjoint`, every adjoint product is negated.
struct GradientFixture {
  bool flip_adjoint = false;
  double loss_weight = 1.0;
};

enum class TaskName { reflection, annuli, vdp_fit, memorize, latent_flow_ae };

std::string to_string(TaskName t);
TaskName task_from_string(const std::string& s);

struct TaskSpec {
  TaskName name = TaskName::reflection;
  std::size_t n_train = 64;
  std::size_t n_eval = 64;

  // reflection
  double range_lo = -1.0;
  double range_hi = 1.0;

  // annuli
  double r1 = 1.0;
  double r2 = 1.5;
  double r3 = 2.0;

  // van der pol
  double vdp_mu_true = 1.0;
  double vdp_mu_init = 0.5;
  double vdp_x0 = 2.0;
  double vdp_horizon = 10.0;
  std::size_t vdp_n_obs = 101;

  // memorize
  std::size_t mem_bits = 100;
  std::size_t mem_patterns = 3;
  std::size_t mem_repeats = 2;
  double mem_presentation = 0.5;
  double mem_query = 0.5;
  double mem_degradation = 0.5;

  // latent flow autoencoder
  std::size_t ae_data_dim = 16;
  std::size_t ae_factors = 2;

  void validate() const;
  bool operator==(const TaskSpec&) const = default;
};

struct Dataset {
  std::vector<Vec> inputs;
  std::vector<Vec> targets;           // regression targets (empty for classification)
  std::vector<std::size_t> labels;    // classification labels (empty for regression)
  std::size_t size() const { return inputs.size(); }
};

/// x uniform in [lo, hi], target -x.
Dataset gen_reflection(std::size_t n_points, double lo, double hi, Rng& rng);

/// Class 0 uniform in the disk of radius r1, class 1 uniform in the annulus
/// [r2, r3]; n_per_class of each, interleaved 0, 1, 0, 1, ...
Dataset gen_annuli(std::size_t n_per_class, double r1, double r2, double r3, Rng& rng);

/// Best accuracy over line classifiers sign(w·x + c), swept over `n_angles`
/// normal directions and every threshold between projected points.
double best_linear_accuracy(const Dataset& data, std::size_t n_angles = 720);

/// Fixed smooth map from latent factors to observations: y = tanh(A s + c).
struct LatentGenerator {
  Matrix a;
  Vec c;
  Vec operator()(std::span<const double> s) const;
};

LatentGenerator make_latent_generator(std::size_t factors, std::size_t data_dim, Rng& rng);

/// Factors uniform in [-1, 1]; inputs and targets both hold the observation.
Dataset gen_latent_data(const LatentGenerator& gen, std::size_t n, Rng& rng);

// ---- memorization ----

struct Episode {
  Matrix patterns;                    // m x n, entries +-1
  std::vector<std::size_t> order;     // presentation order, each pattern `repeats` times
  std::size_t query_index = 0;
  Vec degraded;                       // query with n * degradation entries zeroed
  Vec target;                         // clean query pattern
};

Episode make_episode(const TaskSpec& task, Rng& rng);

/// Model for the Hebbian memory: x_dim = n, theta0 and gains are both n x n.
DynamicsSpec memorize_model_spec(std::size_t n_bits);

struct EpisodeResult {
  Vec final_x;
  Vec reconstruction;  // sign(final_x), sign(0) = 0
  double error_rate = 0.0;
  std::size_t n_rhs_evals = 0;
};

/// Fraction of bits where sign(x) differs from the target; a zero readout
/// counts as a mismatch.
double bit_error_rate(std::span<const double> x, std::span<const double> target);

/// Piecewise integration: x is reset to each stimulus in turn while theta
/// carries over; the last segment starts from the degraded query.
EpisodeResult run_episode(const Episode& ep, std::span<const double> theta0,
                          std::span<const double> gains, double presentation, double query,
                          const SolverConfig& cfg);

struct EpisodeGradient {
  double loss = 0.0;  // mean squared error of the final x against the target
  Vec grad;           // (theta0, gains), matching memorize_model_spec's meta layout
  EpisodeResult result;
};

EpisodeGradient episode_gradient(const Episode& ep, std::span<const double> mu,
                                 double presentation, double query, const SolverConfig& cfg,
                                 const GradientFixture& fixture = {});

/// Episode loss without the backward pass.
double episode_loss(const Episode& ep, std::span<const double> mu, double presentation,
                    double query, const SolverConfig& cfg);

// ---- van der pol ----

/// (dx/dt, dtheta/dt) = (mu (x - x^3/3 - theta), x / mu).
std::pair<double, double> vdp_rhs(double x, double theta, double mu);

/// Planar form with p = {mu}.
class VanDerPolDynamics final : public Dynamics {
 public:
  std::size_t x_dim() const override { return 1; }
  std::size_t theta_dim() const override { return 1; }
  std::size_t param_dim() const override { return 1; }
  void eval(double t, std::span<const double> z, std::span<const double> p,
            std::span<double> dz) const override;
  void vjp(double t, std::span<const double> z, std::span<const double> p,
           std::span<const double> a, std::span<double> gz, std::span<double> gp) const override;
};

/// x(t) on `n_obs` uniform times over [0, horizon], starting from (x0, 0).
Trajectory vdp_observe(double mu, double x0, double horizon, std::size_t n_obs,
                       const SolverConfig& cfg);

/// Integrated squared tracking error and its mu-gradient.
struct VdpLoss {
  double loss = 0.0;
  double grad = 0.0;
  std::size_t n_rhs_evals = 0;
};

VdpLoss vdp_loss(const Trajectory& observed, double mu, const SolverConfig& cfg, bool with_grad,
                 const GradientFixture& fixture = {});

struct VdpFitOptions {
  std::size_t max_steps = 300;
  double lr = 0.05;
  double grad_tol = 1e-6;
};

struct VdpFit {
  double mu = 0.0;
  std::vector<double> losses;
  std::size_t n_rhs_evals = 0;
};

VdpFit fit_vdp(const Trajectory& observed, double mu_init, const SolverConfig& cfg,
               const VdpFitOptions& options = {});

// ---- latent flow ----

/// Spec for dx/dt = theta x, theta constant, with gamma an MLP on the data.
/// `nnz_per_row` = 0 means a dense m x m theta.
DynamicsSpec latent_flow_spec(std::size_t latent_dim, std::size_t data_dim,
                              std::size_t hidden, std::size_t nnz_per_row = 0);

/// x(T) for a dense m x m theta applied to x0.
StateVec latent_flow_encode(std::span<const double> theta, std::span<const double> x0, double T,
                            const SolverConfig& cfg, std::size_t nnz_per_row = 0);

// ---- training objectives ----

/// Objective with the extra hooks the runner needs for export and replay.
/// Trainable vectors are (mu, head) with the head trailing.
class TaskObjective : public Objective {
 public:
  virtual std::size_t head_dim() const { return 0; }
  virtual Vec initial_params(Rng& rng) const = 0;
  /// Model output for one raw input row.
  virtual Vec predict(std::span<const double> params, std::span<const double> input) const = 0;
  /// x-trajectory of eval example `index` on `n_samples` uniform times.
  virtual Trajectory sample_trajectory(std::span<const double> params, std::size_t index,
                                       std::size_t n_samples) const = 0;
  virtual bool classification() const { return false; }

  void set_fixture(const GradientFixture& f) { fixture_ = f; }

 protected:
  GradientFixture fixture_;
};

/// x(T) regressed onto targets with a terminal mean squared error.
class FlowRegressionObjective final : public TaskObjective {
 public:
  FlowRegressionObjective(DynamicsSpec spec, Dataset train, Dataset eval, double horizon,
                          SolverConfig cfg, GradientEngine engine = GradientEngine::adjoint);
  std::size_t param_dim() const override { return spec_.meta_dim(); }
  std::size_t train_size() const override { return train_.size(); }
  std::size_t eval_size() const override { return eval_.size(); }
  ExampleResult train_example(std::span<const double> params, std::size_t index,
                              bool with_grad) const override;
  ExampleResult eval_example(std::span<const double> params, std::size_t index) const override;
  Vec initial_params(Rng& rng) const override;
  Vec predict(std::span<const double> params, std::span<const double> input) const override;
  Trajectory sample_trajectory(std::span<const double> params, std::size_t index,
                               std::size_t n_samples) const override;
  const DynamicsSpec& spec() const { return spec_; }

 private:
  ExampleResult example(std::span<const double> params, const Vec& x, const Vec& y,
                        bool with_grad) const;
  DynamicsSpec spec_;
  Dataset train_;
  Dataset eval_;
  double horizon_;
  SolverConfig cfg_;
  GradientEngine engine_;
};

/// Softmax cross-entropy of a linear head on x(T); params = (mu, W, b).
class FlowClassifierObjective final : public TaskObjective {
 public:
  FlowClassifierObjective(DynamicsSpec spec, std::size_t n_classes, Dataset train, Dataset eval,
                          double horizon, SolverConfig cfg,
                          GradientEngine engine = GradientEngine::adjoint);
  std::size_t param_dim() const override { return spec_.meta_dim() + head_dim(); }
  std::size_t head_dim() const override { return n_classes_ * spec_.x_dim + n_classes_; }
  std::size_t train_size() const override { return train_.size(); }
  std::size_t eval_size() const override { return eval_.size(); }
  ExampleResult train_example(std::span<const double> params, std::size_t index,
                              bool with_grad) const override;
  ExampleResult eval_example(std::span<const double> params, std::size_t index) const override;
  Vec initial_params(Rng& rng) const override;
  /// Class probabilities.
  Vec predict(std::span<const double> params, std::span<const double> input) const override;
  Trajectory sample_trajectory(std::span<const double> params, std::size_t index,
                               std::size_t n_samples) const override;
  bool classification() const override { return true; }
  const DynamicsSpec& spec() const { return spec_; }

 private:
  ExampleResult example(std::span<const double> params, const Vec& x, std::size_t label,
                        bool with_grad) const;
  DynamicsSpec spec_;
  std::size_t n_classes_;
  Dataset train_;
  Dataset eval_;
  double horizon_;
  SolverConfig cfg_;
  GradientEngine engine_;
};

/// Episodes are regenerated from split streams of `seed`: index i of the
/// training stream and index i of a disjoint held-out stream.
class MemorizeObjective final : public TaskObjective {
 public:
  MemorizeObjective(TaskSpec task, SolverConfig cfg, std::uint64_t seed);
  std::size_t param_dim() const override { return spec_.meta_dim(); }
  std::size_t train_size() const override { return task_.n_train; }
  std::size_t eval_size() const override { return task_.n_eval; }
  ExampleResult train_example(std::span<const double> params, std::size_t index,
                              bool with_grad) const override;
  ExampleResult eval_example(std::span<const double> params, std::size_t index) const override;
  /// Small random theta0 and zero gains: the untrained memory.
  Vec initial_params(Rng& rng) const override;
  Vec predict(std::span<const double> params, std::span<const double> input) const override;
  Trajectory sample_trajectory(std::span<const double> params, std::size_t index,
                               std::size_t n_samples) const override;
  Episode train_episode(std::size_t index) const;
  Episode eval_episode(std::size_t index) const;

 private:
  TaskSpec task_;
  DynamicsSpec spec_;
  SolverConfig cfg_;
  std::uint64_t seed_;
};

/// Single-example objective over params = {mu} of the planar oscillator.
class VdpObjective final : public TaskObjective {
 public:
  VdpObjective(TaskSpec task, SolverConfig cfg);
  std::size_t param_dim() const override { return 1; }
  std::size_t train_size() const override { return 1; }
  std::size_t eval_size() const override { return 1; }
  ExampleResult train_example(std::span<const double> params, std::size_t index,
                              bool with_grad) const override;
  ExampleResult eval_example(std::span<const double> params, std::size_t index) const override;
  Vec initial_params(Rng& rng) const override;
  /// input = {t}: x(t) under the fitted mu.
  Vec predict(std::span<const double> params, std::span<const double> input) const override;
  Trajectory sample_trajectory(std::span<const double> params, std::size_t index,
                               std::size_t n_samples) const override;
  const Trajectory& observed() const { return observed_; }

 private:
  TaskSpec task_;
  SolverConfig cfg_;
  Trajectory observed_;
};

/// Encoder gamma(y) sets theta; x(T) = expm(theta T) x0 from a shared x0;
/// an MLP decoder reconstructs y. params = (mu, decoder).
class LatentAeObjective final : public TaskObjective {
 public:
  LatentAeObjective(DynamicsSpec spec, MlpSpec decoder, Vec x0, Dataset train, Dataset eval,
                    double horizon, SolverConfig cfg,
                    GradientEngine engine = GradientEngine::adjoint);
  std::size_t param_dim() const override { return spec_.meta_dim() + decoder_.param_count(); }
  std::size_t head_dim() const override { return decoder_.param_count(); }
  std::size_t train_size() const override { return train_.size(); }
  std::size_t eval_size() const override { return eval_.size(); }
  ExampleResult train_example(std::span<const double> params, std::size_t index,
                              bool with_grad) const override;
  ExampleResult eval_example(std::span<const double> params, std::size_t index) const override;
  Vec initial_params(Rng& rng) const override;
  /// Reconstruction of one observation.
  Vec predict(std::span<const double> params, std::span<const double> input) const override;
  Trajectory sample_trajectory(std::span<const double> params, std::size_t index,
                               std::size_t n_samples) const override;
  const DynamicsSpec& spec() const { return spec_; }

 private:
  ExampleResult example(std::span<const double> params, const Vec& y, bool with_grad) const;
  DynamicsSpec spec_;
  MlpSpec decoder_;
  Vec x0_;
  Dataset train_;
  Dataset eval_;
  double horizon_;
  SolverConfig cfg_;
  GradientEngine engine_;
};

/// Trains the latent-flow autoencoder end to end; returns per-epoch metrics
/// whose eval_loss is the reconstruction MSE.
TrainResult toy_autoencode(const LatentAeObjective& objective, const TrainOptions& options,
                           Rng& rng);

}  // namespace ncode
