#include "ncode/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <ostream>
#include <thread>

#include "ncode/odesolve.hpp"

namespace ncode {

std::string to_string(OptMethod m) { return m == OptMethod::sgd ? "sgd" : "adam"; }

OptMethod opt_method_from_string(const std::string& s) {
  if (s == "sgd") return OptMethod::sgd;
  if (s == "adam") return OptMethod::adam;
  throw ConfigError("unknown optimizer '" + s + "' (valid: sgd, adam)");
}

OptState OptState::adam(std::size_t n, double lr) {
  OptState o;
  o.method = OptMethod::adam;
  o.lr = lr;
  o.m.assign(n, 0.0);
  o.v.assign(n, 0.0);
  return o;
}

OptState OptState::sgd(std::size_t n, double lr) {
  OptState o = adam(n, lr);
  o.method = OptMethod::sgd;
  return o;
}

namespace {

void check_step(const OptState& opt, std::span<double> params, std::span<const double> grad) {
  if (grad.size() != params.size()) throw ShapeError("optimizer: gradient length differs");
  if (!all_finite(grad)) throw OptimizerError("optimizer: non-finite gradient, step refused");
  if (!(opt.lr > 0.0)) throw OptimizerError("optimizer: learning rate must be positive");
}

}  // namespace

void adam_step(OptState& opt, std::span<double> params, std::span<const double> grad) {
  check_step(opt, params, grad);
  if (opt.m.size() != params.size() || opt.v.size() != params.size()) {
    throw ShapeError("adam: moment length differs from parameters");
  }
  ++opt.step_count;
  const double k = static_cast<double>(opt.step_count);
  const double c1 = 1.0 - std::pow(opt.beta1, k);
  const double c2 = 1.0 - std::pow(opt.beta2, k);
  for (std::size_t i = 0; i < params.size(); ++i) {
    opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * grad[i];
    opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
    params[i] -= opt.lr * (opt.m[i] / c1) / (std::sqrt(opt.v[i] / c2) + opt.eps);
  }
}

void sgd_step(OptState& opt, std::span<double> params, std::span<const double> grad) {
  check_step(opt, params, grad);
  ++opt.step_count;
  axpy(-opt.lr, grad, params);
}

void optimizer_step(OptState& opt, std::span<double> params, std::span<const double> grad) {
  if (opt.method == OptMethod::adam) {
    adam_step(opt, params, grad);
  } else {
    sgd_step(opt, params, grad);
  }
}

Vec softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("softmax: empty logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vec p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

Vec classify_head(std::span<const double> x, const Matrix& w, std::span<const double> b) {
  if (w.cols != x.size() || w.rows != b.size()) {
    throw ShapeError("classify_head: W is " + std::to_string(w.rows) + "x" +
                     std::to_string(w.cols) + ", x has " + std::to_string(x.size()) +
                     ", b has " + std::to_string(b.size()));
  }
  Vec logits = matvec(w, x);
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += b[i];
  return softmax(logits);
}

double cross_entropy(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) throw ShapeError("cross_entropy: label out of range");
  return -std::log(probs[label]);
}

void write_metrics_header(std::ostream& os) {
  os << "epoch,train_loss,eval_loss,accuracy,nfe,wall_ms\n";
}

void write_metrics_row(std::ostream& os, const TrainMetrics& m) {
  os << m.epoch << ',' << format_double(m.train_loss) << ',' << format_double(m.eval_loss) << ','
     << format_double(m.accuracy) << ',' << m.n_rhs_evals << ',' << m.wall_ms << '\n';
}

void write_metrics_csv(std::ostream& os, const std::vector<TrainMetrics>& rows) {
  write_metrics_header(os);
  for (const auto& r : rows) write_metrics_row(os, r);
}

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t failed_at = std::numeric_limits<std::size_t>::max();
  std::exception_ptr failure;
  auto worker = [&](std::size_t w) {
    for (std::size_t i = w; i < n; i += threads) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_at) {
          failed_at = i;
          failure = std::current_exception();
        }
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  for (std::size_t w = 1; w < threads; ++w) pool.emplace_back(worker, w);
  worker(0);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

EvalSummary evaluate(const Objective& obj, std::span<const double> params, std::size_t threads) {
  const std::size_t n = obj.eval_size();
  std::vector<ExampleResult> res(n);
  parallel_for(n, threads, [&](std::size_t i) { res[i] = obj.eval_example(params, i); });
  EvalSummary s;
  for (const auto& r : res) {
    s.loss += r.loss;
    s.accuracy += r.score;
    s.n_rhs_evals += r.n_rhs_evals;
  }
  if (n > 0) {
    s.loss /= static_cast<double>(n);
    s.accuracy /= static_cast<double>(n);
  }
  return s;
}

ExampleResult batch_gradient(const Objective& obj, std::span<const double> params,
                             std::span<const std::size_t> indices, std::size_t threads) {
  std::vector<ExampleResult> res(indices.size());
  parallel_for(indices.size(), threads,
               [&](std::size_t k) { res[k] = obj.train_example(params, indices[k], true); });
  ExampleResult out;
  out.grad.assign(params.size(), 0.0);
  for (const auto& r : res) {
    out.loss += r.loss;
    out.score += r.score;
    out.n_rhs_evals += r.n_rhs_evals;
    axpy(1.0, r.grad, out.grad);
  }
  if (!indices.empty()) {
    const double inv = 1.0 / static_cast<double>(indices.size());
    out.loss *= inv;
    out.score *= inv;
    for (double& g : out.grad) g *= inv;
  }
  return out;
}

TrainResult train_loop(const Objective& obj, Vec params, const TrainOptions& options, Rng& rng,
                       const std::function<void(const TrainMetrics&)>& on_epoch) {
  if (params.size() != obj.param_dim()) {
    throw ShapeError("train: parameter vector has " + std::to_string(params.size()) +
                     " entries, objective expects " + std::to_string(obj.param_dim()));
  }
  if (options.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  TrainResult result;
  result.opt = options.method == OptMethod::adam ? OptState::adam(params.size(), options.lr)
                                                 : OptState::sgd(params.size(), options.lr);
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = obj.train_size();
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::size_t pending_nfe = 0;

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    if (options.max_steps != 0 && result.steps >= options.max_steps) break;
    std::vector<std::size_t> order(n);
    if (options.shuffle) {
      order = permutation(rng, n);
    } else {
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
    }
    TrainMetrics row;
    row.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < n; b += options.batch_size) {
      if (options.max_steps != 0 && result.steps >= options.max_steps) break;
      const std::size_t e = std::min(n, b + options.batch_size);
      const std::span<const std::size_t> idx(order.data() + b, e - b);
      const ExampleResult g = batch_gradient(obj, params, idx,
                                             options.threads);
      optimizer_step(result.opt, params, g.grad);
      ++result.steps;
      loss_sum += g.loss * static_cast<double>(idx.size());
      seen += idx.size();
      row.n_rhs_evals += g.n_rhs_evals;
    }
    row.train_loss = seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;
    const bool capped = options.max_steps != 0 && result.steps >= options.max_steps;
    const bool report = epoch % std::max<std::size_t>(options.eval_every, 1) == 0 ||
                        epoch == options.epochs || capped;
    if (options.plateau_patience > 0) {
      if (row.train_loss < best * (1.0 - 1e-4)) {
        best = row.train_loss;
        since_best = 0;
      } else if (++since_best >= options.plateau_patience) {
        result.opt.lr *= 0.5;
        since_best = 0;
      }
    }
    pending_nfe += row.n_rhs_evals;
    if (!report) continue;
    row.n_rhs_evals = pending_nfe;
    pending_nfe = 0;
    const EvalSummary ev = evaluate(obj, params, options.threads);
    row.eval_loss = ev.loss;
    row.accuracy = ev.accuracy;
    row.n_rhs_evals += ev.n_rhs_evals;
    row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    result.metrics.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace ncode
