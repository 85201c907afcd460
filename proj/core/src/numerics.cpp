#include "visemalign/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace visemalign {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, Vec data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    std::ostringstream os;
    os << "matrix data length " << data_.size() << " does not match " << rows << "x" << cols;
    throw ShapeError(os.str());
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged initializer for Matrix");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::column(std::span<const double> v) {
  return Matrix(v.size(), 1, Vec(v.begin(), v.end()));
}

Vec Matrix::col(std::size_t c) const {
  Vec out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void Matrix::add_to_col(std::size_t c, std::span<const double> v, double scale) {
  if (v.size() != rows_ || c >= cols_) throw ShapeError("add_to_col: bad column or length");
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) += scale * v[r];
}

std::string Matrix::shape_string() const {
  std::ostringstream os;
  os << rows_ << "x" << cols_;
  return os.str();
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: lhs " + a.shape_string() + " incompatible with rhs " +
                     b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Vec matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) {
    throw ShapeError("matvec: matrix " + a.shape_string() + " incompatible with vector of length " +
                     std::to_string(x.size()));
  }
  Vec y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
  return y;
}

Vec matvec_transposed(const Matrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) {
    throw ShapeError("matvec_transposed: matrix " + a.shape_string() +
                     " incompatible with vector of length " + std::to_string(x.size()));
  }
  Vec y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    if (x[i] == 0.0) continue;
    axpy(x[i], a.row(i), y);
  }
  return y;
}

void add_outer(Matrix& a, std::span<const double> u, std::span<const double> v, double scale) {
  if (a.rows() != u.size() || a.cols() != v.size()) {
    throw ShapeError("add_outer: target " + a.shape_string() + " vs outer " +
                     std::to_string(u.size()) + "x" + std::to_string(v.size()));
  }
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double ui = scale * u[i];
    if (ui == 0.0) continue;
    axpy(ui, v, a.row(i));
  }
}

Matrix relu(const Matrix& x) {
  Matrix out = x;
  for (double& v : out.data()) v = std::max(0.0, v);
  return out;
}

Vec relu(std::span<const double> x) {
  Vec out(x.begin(), x.end());
  for (double& v : out) v = std::max(0.0, v);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) {
    throw ShapeError("axpy: length " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  }
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Vec add(std::span<const double> a, std::span<const double> b) {
  Vec out(a.begin(), a.end());
  axpy(1.0, b, out);
  return out;
}

Vec softmax(std::span<const double> x) {
  if (x.empty()) throw ContractError("softmax: empty input");
  const double m = *std::max_element(x.begin(), x.end());
  Vec out(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

Vec log_softmax(std::span<const double> x) {
  if (x.empty()) throw ContractError("log_softmax: empty input");
  const double m = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double v : x) z += std::exp(v - m);
  const double lse = m + std::log(z);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  return out;
}

bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw ContractError("Rng::uniform_index: n must be positive");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t draw;
  do {
    draw = engine_();
  } while (draw >= limit);
  return static_cast<std::size_t>(draw % bound);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::size_t Rng::categorical(std::span<const double> weights) {
  if (weights.empty()) throw ContractError("Rng::categorical: empty weights");
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw ContractError("Rng::categorical: weights must have positive sum");
  const double target = uniform() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (target < acc) return i;
  }
  // Rounding can leave target == total; return the last positive entry.
  for (std::size_t i = weights.size(); i > 0; --i)
    if (weights[i - 1] > 0.0) return i - 1;
  return weights.size() - 1;
}

Matrix Rng::uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = uniform(lo, hi);
  return m;
}

double relative_error(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

}  // namespace visemalign

#include "visemalign/param_blocks.hpp"

namespace visemalign {

std::size_t total_size(const ParamBlocks& blocks) {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.value->size();
  return n;
}

Vec flatten(const ParamBlocks& blocks) {
  Vec out;
  out.reserve(total_size(blocks));
  for (const auto& b : blocks) {
    auto d = b.value->data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

void unflatten(std::span<const double> flat, const ParamBlocks& blocks) {
  if (flat.size() != total_size(blocks)) {
    throw ShapeError("unflatten: got " + std::to_string(flat.size()) + " values for " +
                     std::to_string(total_size(blocks)) + " parameters");
  }
  std::size_t off = 0;
  for (const auto& b : blocks) {
    auto d = b.value->data();
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + d.size()), d.begin());
    off += d.size();
  }
}

void require_finite(const ParamBlocks& blocks, std::string_view what) {
  for (const auto& b : blocks) {
    if (!all_finite(b.value->data())) {
      throw NumericError(std::string(what) + ": non-finite value in " + std::string(b.name));
    }
  }
}

}  // namespace visemalign
