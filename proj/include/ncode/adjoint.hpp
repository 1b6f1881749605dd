#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "ncode/control.hpp"
#include "ncode/dynamics.hpp"
#include "ncode/netblocks.hpp"
#include "ncode/odesolve.hpp"

namespace ncode {

/// Differentiable running cost ℓ(z, t; q). `q` holds trainable loss-side
/// parameters such as a readout head; most losses have none.
class PointLoss {
 public:
  virtual ~PointLoss() = default;
  virtual std::size_t param_dim() const { return 0; }
  virtual double value(double t, std::span<const double> z, std::span<const double> q) const = 0;
  /// gz += ∂ℓ/∂z, gq += ∂ℓ/∂q.
  virtual void gradient(double t, std::span<const double> z, std::span<const double> q,
                        std::span<double> gz, std::span<double> gq) const = 0;
};

enum class LossKind { terminal, integrated };
enum class Quadrature { solver_grid, fixed_grid };

struct LossSpec {
  LossKind kind = LossKind::terminal;
  std::shared_ptr<const PointLoss> point;
  Quadrature quadrature = Quadrature::solver_grid;
  std::size_t n_points = 0;  // fixed_grid only: uniform points including both ends
  double weight = 1.0;

  std::size_t param_dim() const { return point ? point->param_dim() : 0; }
  void validate() const;

  static LossSpec terminal(std::shared_ptr<const PointLoss> p, double weight = 1.0);
  static LossSpec integrated(std::shared_ptr<const PointLoss> p, double weight = 1.0);
  static LossSpec fixed_grid(std::shared_ptr<const PointLoss> p, std::size_t n_points,
                             double weight = 1.0);
};

class ZeroLoss final : public PointLoss {
 public:
  double value(double, std::span<const double>, std::span<const double>) const override {
    return 0.0;
  }
  void gradient(double, std::span<const double>, std::span<const double>, std::span<double>,
                std::span<double>) const override {}
};

class ConstantLoss final : public PointLoss {
 public:
  explicit ConstantLoss(double c) : c_(c) {}
  double value(double, std::span<const double>, std::span<const double>) const override {
    return c_;
  }
  void gradient(double, std::span<const double>, std::span<const double>, std::span<double>,
                std::span<double>) const override {}

 private:
  double c_;
};

/// ℓ = coeff · z[index].
class ComponentLoss final : public PointLoss {
 public:
  explicit ComponentLoss(std::size_t index, double coeff = 1.0) : index_(index), coeff_(coeff) {}
  double value(double t, std::span<const double> z, std::span<const double> q) const override;
  void gradient(double t, std::span<const double> z, std::span<const double> q,
                std::span<double> gz, std::span<double> gq) const override;

 private:
  std::size_t index_;
  double coeff_;
};

/// ℓ = Σ_{i < n} z_i².
class SquaredNormLoss final : public PointLoss {
 public:
  explicit SquaredNormLoss(std::size_t n) : n_(n) {}
  double value(double t, std::span<const double> z, std::span<const double> q) const override;
  void gradient(double t, std::span<const double> z, std::span<const double> q,
                std::span<double> gz, std::span<double> gq) const override;

 private:
  std::size_t n_;
};

/// Mean squared error between z[0..n) and a fixed target.
class TargetMseLoss final : public PointLoss {
 public:
  explicit TargetMseLoss(Vec target) : target_(std::move(target)) {}
  double value(double t, std::span<const double> z, std::span<const double> q) const override;
  void gradient(double t, std::span<const double> z, std::span<const double> q,
                std::span<double> gz, std::span<double> gq) const override;

 private:
  Vec target_;
};

/// Softmax cross-entropy of a linear head on x = z[0..x_dim); q = (W, b)
/// with W n_classes x x_dim row-major.
class SoftmaxCrossEntropyLoss final : public PointLoss {
 public:
  SoftmaxCrossEntropyLoss(std::size_t x_dim, std::size_t n_classes, std::size_t label);
  std::size_t param_dim() const override { return n_classes_ * x_dim_ + n_classes_; }
  double value(double t, std::span<const double> z, std::span<const double> q) const override;
  void gradient(double t, std::span<const double> z, std::span<const double> q,
                std::span<double> gz, std::span<double> gq) const override;

 private:
  std::size_t x_dim_;
  std::size_t n_classes_;
  std::size_t label_;
};

/// Mean squared error between decoder(z[0..latent)) and a target; q holds
/// the decoder network parameters.
class DecoderMseLoss final : public PointLoss {
 public:
  DecoderMseLoss(MlpSpec decoder, Vec target);
  std::size_t param_dim() const override { return decoder_.param_count(); }
  double value(double t, std::span<const double> z, std::span<const double> q) const override;
  void gradient(double t, std::span<const double> z, std::span<const double> q,
                std::span<double> gz, std::span<double> gq) const override;

 private:
  MlpSpec decoder_;
  Vec target_;
};

/// ℓ = (z[index] - y(t))² against samples (times, values), linearly
/// interpolated between samples.
class TrackingLoss final : public PointLoss {
 public:
  TrackingLoss(Vec times, Vec values, std::size_t index = 0);
  double value(double t, std::span<const double> z, std::span<const double> q) const override;
  void gradient(double t, std::span<const double> z, std::span<const double> q,
                std::span<double> gz, std::span<double> gq) const override;
  double observed(double t) const;

 private:
  Vec times_;
  Vec values_;
  std::size_t index_;
};

/// Terminal kind: weight · ℓ(z(T), T). Integrated kind: trapezoid over the
/// recorded points (solver_grid) or over the n uniform points, which must
/// coincide with the recorded times (fixed_grid).
double loss_integral(const Trajectory& traj, const LossSpec& loss, std::span<const double> q = {});

struct GradientResult {
  double loss = 0.0;
  Vec grad_p;   // ∂l/∂p for the dynamics parameters
  Vec grad_z0;  // a(0)
  Vec grad_q;   // ∂l/∂q for loss parameters
  std::size_t n_rhs_evals = 0;
};

/// Continuous adjoint: forward solve on [0, T], then state and adjoint are
/// integrated jointly back to 0. Terminal and fixed-grid costs enter as jumps
/// in a, solver-grid integrated costs as continuous forcing.
GradientResult adjoint_solve(const Dynamics& h, std::span<const double> p,
                             std::span<const double> z0, double T, const LossSpec& loss,
                             std::span<const double> q, const SolverConfig& cfg);

/// Exact gradient of the fixed-step discrete solve by reverse accumulation
/// through the unrolled steps. Integrated costs use trapezoid weights on the
/// step grid.
GradientResult backprop_through_solver(const Dynamics& h, std::span<const double> p,
                                       std::span<const double> z0, double T,
                                       const LossSpec& loss, std::span<const double> q,
                                       const SolverConfig& cfg);

struct BackwardSegment {
  Vec z;  // recomputed state at t_start
  Vec a;  // adjoint at t_start
  std::size_t n_rhs_evals = 0;
};

/// Integrates (z, a) from t_end back to t_start starting at (z_end, a_end)
/// and adds ∫ aᵀ ∂h/∂p dt to grad_p. A non-null `running` adds
/// weight · ∂ℓ/∂z forcing and accumulates ∫ weight ∂ℓ/∂q into grad_q.
BackwardSegment backward_segment(const Dynamics& h, std::span<const double> p,
                                 std::span<const double> z_end, std::span<const double> a_end,
                                 double t_end, double t_start, const PointLoss* running,
                                 double weight, std::span<const double> q,
                                 std::span<double> grad_p, std::span<double> grad_q,
                                 const SolverConfig& cfg);

enum class GradientEngine { adjoint, discrete };

struct ModelGradient {
  double loss = 0.0;
  Vec grad_mu;  // full meta-parameter vector (gamma slice via the initial map)
  Vec grad_q;
  Vec grad_x0;
  std::size_t n_rhs_evals = 0;
};

/// Loss and gradient for one example of a controlled model: theta(0) from
/// gamma(gamma_input), then the chosen engine, then the chain rule through
/// gamma. An empty `gamma_input` means x0.
ModelGradient model_gradient(const DynamicsSpec& spec, const Dynamics& h,
                             std::span<const double> mu, std::span<const double> x0,
                             std::span<const double> gamma_input, double T, const LossSpec& loss,
                             std::span<const double> q, const SolverConfig& cfg,
                             GradientEngine engine = GradientEngine::adjoint);

ModelGradient model_gradient(const DynamicsSpec& spec, std::span<const double> mu,
                             std::span<const double> x0, double T, const LossSpec& loss,
                             const SolverConfig& cfg,
                             GradientEngine engine = GradientEngine::adjoint);

/// Loss value only, no backward pass.
double model_loss(const DynamicsSpec& spec, std::span<const double> mu,
                  std::span<const double> x0, std::span<const double> gamma_input, double T,
                  const LossSpec& loss, std::span<const double> q, const SolverConfig& cfg);

struct GradCheckEntry {
  std::size_t coord = 0;
  double analytic = 0.0;
  double fd = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::vector<GradCheckEntry> entries;  // sorted by rel_err, largest first
};

/// |a - f| / max(|a|, |f|, floor); zero when both vanish.
double relative_error(double analytic, double fd, double floor = 1e-8);

/// Central differences of `loss_fn` around `params` against `analytic`.
GradCheckReport grad_check(const std::function<double(std::span<const double>)>& loss_fn,
                           std::span<const double> params, std::span<const double> analytic,
                           double step = 1e-5, double floor = 1e-8);

/// Adjoint gradient of a controlled model against central differences over mu.
GradCheckReport grad_check(const DynamicsSpec& spec, std::span<const double> mu,
                           std::span<const double> x0, double T, const LossSpec& loss,
                           const SolverConfig& cfg, double step = 1e-5);

/// CSV `coord,adjoint,fd,rel_err`.
void write_grad_check_csv(std::ostream& os, const GradCheckReport& report);

}  // namespace ncode
