#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ncode/errors.hpp"

namespace ncode {

using Vec = std::vector<double>;
using StateVec = std::vector<double>;

/// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, Vec values);

  static Matrix identity(std::size_t n);

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }

  bool operator==(const Matrix&) const = default;
};

/// One named block of a flat parameter vector. Vectors are 1 x n slots.
struct Slot {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Slot&) const = default;
};

/// Ordered slot list mapping flat indices onto matrices and vectors.
class Layout {
 public:
  Layout() = default;
  explicit Layout(std::vector<Slot> slots) : slots_(std::move(slots)) {}

  Layout& add(std::string name, std::size_t rows, std::size_t cols);
  Layout& add_vector(std::string name, std::size_t n) { return add(std::move(name), 1, n); }
  /// Appends every slot of `other`, prefixing names with `prefix`.
  Layout& append(const Layout& other, const std::string& prefix = "");

  std::size_t total() const;
  std::size_t offset(const std::string& name) const;
  const Slot& slot(const std::string& name) const;
  const std::vector<Slot>& slots() const { return slots_; }
  bool empty() const { return slots_.empty(); }

  std::span<double> view(std::span<double> flat, const std::string& name) const;
  std::span<const double> view(std::span<const double> flat, const std::string& name) const;

  bool operator==(const Layout&) const = default;

 private:
  std::vector<Slot> slots_;
};

/// Flat vector of the time-varying weights steering f.
struct ControlWeights {
  Vec values;
  Layout layout;
};

/// Trainable controller parameters.
struct MetaParams {
  Vec values;
  Layout layout;
};

/// Concatenates `weights` in slot order, row-major within each slot.
Vec flatten(const Layout& layout, const std::vector<Matrix>& weights);
std::vector<Matrix> unflatten(const Layout& layout, std::span<const double> flat);

ControlWeights make_control_weights(const Layout& layout, const std::vector<Matrix>& weights);

StateVec matvec(const Matrix& a, std::span<const double> v);
/// out = A v for a row-major rows x cols block held in a flat span.
void matvec(std::span<const double> a, std::size_t rows, std::size_t cols,
            std::span<const double> v, std::span<double> out);
/// out += Aᵀ w.
void matvec_transposed_add(std::span<const double> a, std::size_t rows, std::size_t cols,
                           std::span<const double> w, std::span<double> out);

double dot(std::span<const double> a, std::span<const double> b);
double max_abs(std::span<const double> v);
bool all_finite(std::span<const double> v);
/// y += alpha x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// Counter-based generator: draw i of stream `seed` depends only on (seed, i).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  /// Independent child stream; does not advance this generator.
  Rng split(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  bool operator==(const Rng&) const = default;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

Vec rand_normal(Rng& rng, std::size_t n, double mean, double stddev);
Vec rand_uniform(Rng& rng, std::size_t n, double lo, double hi);

/// Fisher-Yates permutation of [0, n).
std::vector<std::size_t> permutation(Rng& rng, std::size_t n);

}  // namespace ncode
