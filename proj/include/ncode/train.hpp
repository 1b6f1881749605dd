#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ncode/numcore.hpp"

namespace ncode {

enum class OptMethod { sgd, adam };

std::string to_string(OptMethod m);
OptMethod opt_method_from_string(const std::string& s);

struct OptState {
  OptMethod method = OptMethod::adam;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Vec m;
  Vec v;
  std::size_t step_count = 0;

  static OptState adam(std::size_t n, double lr = 3e-4);
  static OptState sgd(std::size_t n, double lr);
};

/// Bias-corrected Adam update of `params` in place. A non-finite gradient
/// throws OptimizerError and leaves both `opt` and `params` untouched.
void adam_step(OptState& opt, std::span<double> params, std::span<const double> grad);
void sgd_step(OptState& opt, std::span<double> params, std::span<const double> grad);
/// Dispatches on opt.method.
void optimizer_step(OptState& opt, std::span<double> params, std::span<const double> grad);

/// softmax(W x + b) with max subtraction.
Vec classify_head(std::span<const double> x, const Matrix& w, std::span<const double> b);
Vec softmax(std::span<const double> logits);
/// -log p[label].
double cross_entropy(std::span<const double> probs, std::size_t label);

struct TrainMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
  double accuracy = 0.0;
  std::size_t n_rhs_evals = 0;
  long long wall_ms = 0;
};

/// CSV `epoch,train_loss,eval_loss,accuracy,nfe,wall_ms`.
void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const TrainMetrics& m);
void write_metrics_csv(std::ostream& os, const std::vector<TrainMetrics>& rows);

struct ExampleResult {
  double loss = 0.0;
  Vec grad;                // empty unless requested
  double score = 0.0;      // per-example accuracy contribution in [0, 1]
  std::size_t n_rhs_evals = 0;
};

/// A supervised problem over one flat trainable vector.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::size_t param_dim() const = 0;
  virtual std::size_t train_size() const = 0;
  virtual std::size_t eval_size() const = 0;
  virtual ExampleResult train_example(std::span<const double> params, std::size_t index,
                                      bool with_grad) const = 0;
  virtual ExampleResult eval_example(std::span<const double> params, std::size_t index) const = 0;
};

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Exceptions from
/// workers are rethrown (the lowest failing index wins). threads = 0 uses
/// every available core.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

struct EvalSummary {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t n_rhs_evals = 0;
};

EvalSummary evaluate(const Objective& obj, std::span<const double> params, std::size_t threads = 1);

/// Mean loss and gradient over `indices`, summed in index-list order.
ExampleResult batch_gradient(const Objective& obj, std::span<const double> params,
                             std::span<const std::size_t> indices, std::size_t threads = 1);

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  OptMethod method = OptMethod::adam;
  double lr = 3e-4;
  std::size_t threads = 1;          // 0: all available cores
  std::size_t max_steps = 0;        // 0: no cap on optimizer steps
  std::size_t plateau_patience = 0; // 0: constant learning rate
  bool shuffle = true;
  std::size_t eval_every = 1;       // metrics rows on these epochs and the last

  bool operator==(const TrainOptions&) const = default;
};

struct TrainResult {
  std::vector<TrainMetrics> metrics;
  Vec params;
  OptState opt;
  std::size_t steps = 0;
};

/// Mini-batch training. `on_epoch` sees each metrics row as it is produced,
/// so callers keep partial results when a solver error aborts the run.
TrainResult train_loop(const Objective& obj, Vec params, const TrainOptions& options, Rng& rng,
                       const std::function<void(const TrainMetrics&)>& on_epoch = {});

}  // namespace ncode
