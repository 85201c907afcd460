#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace visemalign {

using Vec = std::vector<double>;

// Raised when operand dimensions are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a documented precondition is violated.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a NaN/Inf shows up where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles. Bias vectors are stored as n x 1.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, Vec data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix column(std::span<const double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  Vec col(std::size_t c) const;
  void add_to_col(std::size_t c, std::span<const double> v, double scale = 1.0);

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_string() const;

  void fill(double v);
  Matrix transposed() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vec data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);

// y = A x
Vec matvec(const Matrix& a, std::span<const double> x);
// y = A^T x
Vec matvec_transposed(const Matrix& a, std::span<const double> x);
// A += scale * u v^T
void add_outer(Matrix& a, std::span<const double> u, std::span<const double> v, double scale = 1.0);

Matrix relu(const Matrix& x);
Vec relu(std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
Vec add(std::span<const double> a, std::span<const double> b);

/// Numerically stable softmax (max-subtracted). Throws ContractError on empty input.
Vec softmax(std::span<const double> x);
/// log(softmax(x)) computed via log-sum-exp.
Vec log_softmax(std::span<const double> x);

bool all_finite(std::span<const double> x);

/// Seeded pseudo-random source. The engine is std::mt19937_64 (its output
/// sequence is fixed by the C++ standard); distributions are derived here
/// from raw 64-bit draws so results do not depend on the standard library
/// implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be > 0.
  std::size_t uniform_index(std::size_t n);
  // Standard normal via Box-Muller.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  // Draw an index with probability proportional to weights.
  std::size_t categorical(std::span<const double> weights);

  Matrix uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(i)]);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <std::floating_point Real>
using ScalarFnT = std::function<Real(std::span<const Real>)>;
using ScalarFn = ScalarFnT<double>;

/// Central-difference gradient of loss_fn at params:
///   g_i = (loss(p + eps e_i) - loss(p - eps e_i)) / (2 eps)
/// Throws NumericError if any probe returns a non-finite loss. Generic over
/// the scalar type so oracles can run in extended precision.
template <std::floating_point Real>
std::vector<Real> finite_diff_grad(const ScalarFnT<Real>& loss_fn, std::span<const Real> params, Real epsilon) {
  if (!(epsilon > 0)) throw ContractError("finite_diff_grad: epsilon must be positive");
  std::vector<Real> probe(params.begin(), params.end());
  std::vector<Real> grad(params.size());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const Real orig = probe[i];
    probe[i] = orig + epsilon;
    const Real up = loss_fn(probe);
    probe[i] = orig - epsilon;
    const Real down = loss_fn(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite loss at probe index " + std::to_string(i));
    }
    grad[i] = (up - down) / (2 * epsilon);
  }
  return grad;
}

inline Vec finite_diff_grad(const ScalarFn& loss_fn, std::span<const double> params, double epsilon) {
  return finite_diff_grad<double>(loss_fn, params, epsilon);
}

/// max(|a|, |b|, floor) normalised difference used by the gradient checks.
double relative_error(double a, double b, double floor = 1e-8);

}  // namespace visemalign
