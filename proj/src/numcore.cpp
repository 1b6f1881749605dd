#include "ncode/numcore.hpp"

#include <cmath>
#include <numbers>

namespace ncode {

Matrix::Matrix(std::size_t r, std::size_t c, Vec values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) {
    throw ShapeError("matrix: " + std::to_string(data.size()) + " values for " +
                     std::to_string(r) + "x" + std::to_string(c));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Layout& Layout::add(std::string name, std::size_t rows, std::size_t cols) {
  for (const auto& s : slots_) {
    if (s.name == name) throw ShapeError("layout: duplicate slot '" + name + "'");
  }
  slots_.push_back({std::move(name), rows, cols});
  return *this;
}

Layout& Layout::append(const Layout& other, const std::string& prefix) {
  for (const auto& s : other.slots_) add(prefix + s.name, s.rows, s.cols);
  return *this;
}

std::size_t Layout::total() const {
  std::size_t n = 0;
  for (const auto& s : slots_) n += s.size();
  return n;
}

std::size_t Layout::offset(const std::string& name) const {
  std::size_t off = 0;
  for (const auto& s : slots_) {
    if (s.name == name) return off;
    off += s.size();
  }
  throw ShapeError("layout: no slot '" + name + "'");
}

const Slot& Layout::slot(const std::string& name) const {
  for (const auto& s : slots_) {
    if (s.name == name) return s;
  }
  throw ShapeError("layout: no slot '" + name + "'");
}

std::span<double> Layout::view(std::span<double> flat, const std::string& name) const {
  if (flat.size() != total()) throw ShapeError("layout: flat length mismatch");
  return flat.subspan(offset(name), slot(name).size());
}

std::span<const double> Layout::view(std::span<const double> flat,
                                     const std::string& name) const {
  if (flat.size() != total()) throw ShapeError("layout: flat length mismatch");
  return flat.subspan(offset(name), slot(name).size());
}

Vec flatten(const Layout& layout, const std::vector<Matrix>& weights) {
  const auto& slots = layout.slots();
  if (weights.size() != slots.size()) {
    throw ShapeError("flatten: " + std::to_string(weights.size()) + " blocks for " +
                     std::to_string(slots.size()) + " slots");
  }
  Vec flat;
  flat.reserve(layout.total());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const Matrix& w = weights[i];
    if (w.rows != slots[i].rows || w.cols != slots[i].cols || w.data.size() != w.rows * w.cols) {
      throw ShapeError("flatten: slot '" + slots[i].name + "' expects " +
                       std::to_string(slots[i].rows) + "x" + std::to_string(slots[i].cols) +
                       ", got " + std::to_string(w.rows) + "x" + std::to_string(w.cols));
    }
    flat.insert(flat.end(), w.data.begin(), w.data.end());
  }
  return flat;
}

std::vector<Matrix> unflatten(const Layout& layout, std::span<const double> flat) {
  if (flat.size() != layout.total()) {
    throw ShapeError("unflatten: length " + std::to_string(flat.size()) + " vs layout " +
                     std::to_string(layout.total()));
  }
  std::vector<Matrix> out;
  std::size_t off = 0;
  for (const auto& s : layout.slots()) {
    out.emplace_back(s.rows, s.cols, Vec(flat.begin() + off, flat.begin() + off + s.size()));
    off += s.size();
  }
  return out;
}

ControlWeights make_control_weights(const Layout& layout, const std::vector<Matrix>& weights) {
  return {flatten(layout, weights), layout};
}

StateVec matvec(const Matrix& a, std::span<const double> v) {
  if (a.cols != v.size()) {
    throw ShapeError("matvec: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                     " times vector of " + std::to_string(v.size()));
  }
  StateVec out(a.rows);
  matvec(a.data, a.rows, a.cols, v, out);
  return out;
}

void matvec(std::span<const double> a, std::size_t rows, std::size_t cols,
            std::span<const double> v, std::span<double> out) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* r = a.data() + i * cols;
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += r[j] * v[j];
    out[i] = s;
  }
}

void matvec_transposed_add(std::span<const double> a, std::size_t rows, std::size_t cols,
                           std::span<const double> w, std::span<double> out) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double wi = w[i];
    if (wi == 0.0) continue;
    const double* r = a.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += wi * r[j];
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

namespace {

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

}  // namespace

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix64(mix64(seed_) + counter_ * kGolden);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal(double mean, double stddev) {
  // Box-Muller, cosine branch only so every draw consumes exactly two words.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw ParameterError("rng: below(0)");
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

Rng Rng::split(std::uint64_t stream) const {
  return Rng(mix64(seed_ ^ mix64(stream + kGolden)) + stream, 0);
}

Vec rand_normal(Rng& rng, std::size_t n, double mean, double stddev) {
  if (!(stddev >= 0.0)) throw ParameterError("rand_normal: negative std");
  Vec out(n);
  for (auto& v : out) v = rng.normal(mean, stddev);
  return out;
}

Vec rand_uniform(Rng& rng, std::size_t n, double lo, double hi) {
  Vec out(n);
  for (auto& v : out) v = rng.uniform(lo, hi);
  return out;
}

std::vector<std::size_t> permutation(Rng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

}  // namespace ncode
