#pragma once

// Shared primitives: error types, a deterministic RNG, and a dense
// row-major matrix used for embedding tables and transform matrices.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbrec {

using Index = std::int64_t;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input text. Carries the 1-based line number.
struct ParseError : Error {
  ParseError(const std::string& msg, std::size_t line_no)
      : Error("parse error at line " + std::to_string(line_no) + ": " + msg),
        line(line_no) {}
  std::size_t line;
};

// Invalid configuration (bad densities, unknown behavior, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Violated call contract (dimension mismatch, out-of-bounds index, ...).
struct ContractError : Error {
  using Error::Error;
};

// Filesystem-level failure. Message names the offending path.
struct IoError : Error {
  using Error::Error;
};

// Deterministic random source. All draws are derived from mt19937_64,
// whose output sequence is fixed by the standard, so identical seeds
// give identical streams on every platform. No std::*_distribution is
// used anywhere (their outputs are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Fresh seed for a derived stream.
  std::uint64_t next_seed() { return eng_(); }

  // Uniform in [0, 1), 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = eng_();
    while (x >= limit) x = eng_();
    return x % n;
  }

  // Standard normal via Box-Muller (kept portable on purpose).
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Dense row-major matrix of doubles.
class Mat {
 public:
  Mat() = default;
  Mat(Index rows, Index cols)
      : rows_(rows), cols_(cols), data_(checked_size(rows, cols), 0.0) {}

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(Index r, Index c) {
    return data_[static_cast<std::size_t>(r) * cols_ + c];
  }
  double operator()(Index r, Index c) const {
    return data_[static_cast<std::size_t>(r) * cols_ + c];
  }

  double* row(Index r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  const double* row(Index r) const {
    return data_.data() + static_cast<std::size_t>(r) * cols_;
  }
  std::span<double> row_span(Index r) { return {row(r), static_cast<std::size_t>(cols_)}; }
  std::span<const double> row_span(Index r) const {
    return {row(r), static_cast<std::size_t>(cols_)};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Mat& o) const = default;

 private:
  // Runs before the data_ member initializer; a negative dimension must
  // never reach the vector constructor.
  static std::size_t checked_size(Index rows, Index cols) {
    if (rows < 0 || cols < 0) throw ContractError("negative matrix dimension");
    return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }

  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

// y += a * x
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t k = 0; k < x.size(); ++k) y[k] += a * x[k];
}

inline void add_inplace(Mat& acc, const Mat& x) {
  if (!acc.same_shape(x)) throw ContractError("add_inplace: shape mismatch");
  for (std::size_t k = 0; k < acc.size(); ++k) acc.data()[k] += x.data()[k];
}

inline void scale_inplace(Mat& m, double a) {
  for (double& v : m.data()) v *= a;
}

// a (m x k) * b (k x n)
inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) throw ContractError("matmul: inner dimension mismatch");
  Mat out(a.rows(), b.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double* ar = a.row(r);
    double* or_ = out.row(r);
    for (Index k = 0; k < a.cols(); ++k) {
      const double av = ar[k];
      if (av == 0.0) continue;
      const double* br = b.row(k);
      for (Index c = 0; c < b.cols(); ++c) or_[c] += av * br[c];
    }
  }
  return out;
}

// a^T (k x m) * b (m x n); a is m x k
inline Mat matmul_trans_a(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows()) throw ContractError("matmul_trans_a: row count mismatch");
  Mat out(a.cols(), b.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double* ar = a.row(r);
    const double* br = b.row(r);
    for (Index k = 0; k < a.cols(); ++k) {
      const double av = ar[k];
      if (av == 0.0) continue;
      double* or_ = out.row(k);
      for (Index c = 0; c < b.cols(); ++c) or_[c] += av * br[c];
    }
  }
  return out;
}

// a (m x k) * b^T (k x n); b is n x k
inline Mat matmul_trans_b(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) throw ContractError("matmul_trans_b: column count mismatch");
  Mat out(a.rows(), b.rows());
  for (Index r = 0; r < a.rows(); ++r) {
    const double* ar = a.row(r);
    double* or_ = out.row(r);
    for (Index c = 0; c < b.rows(); ++c) or_[c] = dot({ar, (std::size_t)a.cols()}, b.row_span(c));
  }
  return out;
}

inline double squared_norm(const Mat& m) {
  double s = 0.0;
  for (double v : m.data()) s += v * v;
  return s;
}

inline bool all_finite(const Mat& m) {
  for (double v : m.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace mbrec
