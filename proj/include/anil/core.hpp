#pragma once

// Shared numeric types, error types, seeded random streams and a handful of
// small linear-algebra helpers used by every other header.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace anil {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class UnsupportedConfiguration : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class RankError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

using Engine = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Root of a tree of independent named random streams.
///
/// Every source of randomness (ground truth, task parameters, features,
/// noise, initialisation, ...) draws from its own engine derived from
/// (seed, label, index), so resizing one source never perturbs another.
/// Determinism is per seed on a given standard library; the Gaussian
/// sampler is std::normal_distribution (Marsaglia polar method in
/// libstdc++), which is not bit-identical across implementations.
class RngSpec {
 public:
  explicit RngSpec(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  RngSpec child(std::string_view label, std::uint64_t index = 0) const {
    return RngSpec(derive(label, index) ^ 0x5bd1e9955bd1e995ULL);
  }

  Engine stream(std::string_view label, std::uint64_t index = 0) const {
    std::uint64_t s = derive(label, index);
    std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
    return Engine(seq);
  }

 private:
  std::uint64_t derive(std::string_view label, std::uint64_t index) const {
    return splitmix64(splitmix64(seed_ ^ fnv1a(label)) + splitmix64(index + 1));
  }

  std::uint64_t seed_;
};

inline Matrix gaussian_matrix(Index rows, Index cols, Engine& eng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = normal(eng);
  return m;
}

inline Vector gaussian_vector(Index n, Engine& eng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = normal(eng);
  return v;
}

/// Uniform draw on the sphere {x : ||x||^2 = radius2}.
inline Vector uniform_sphere(Index n, double radius2, Engine& eng) {
  if (radius2 <= 0.0) return Vector::Zero(n);
  Vector v = gaussian_vector(n, eng);
  while (v.norm() == 0.0) v = gaussian_vector(n, eng);
  return v * (std::sqrt(radius2) / v.norm());
}

// ---------------------------------------------------------------------------
// Linear algebra helpers
// ---------------------------------------------------------------------------

/// Q factor of a Householder QR with the diagonal of R made non-negative, so
/// the factorisation (and hence the returned basis) is unique. Returns the
/// full square Q; the first a.cols() columns span col(a).
inline Matrix sign_fixed_full_q(const Matrix& a) {
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), a.rows());
  const Matrix& r = qr.matrixQR();
  for (Index j = 0; j < std::min(a.rows(), a.cols()); ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

inline Matrix orthonormal_columns(const Matrix& a) {
  return sign_fixed_full_q(a).leftCols(a.cols());
}

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// Eigenvalues (ascending) of a symmetric matrix.
inline Vector sym_eigenvalues(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

inline double lambda_min(const Matrix& a) { return sym_eigenvalues(a)(0); }
inline double lambda_max(const Matrix& a) { return sym_eigenvalues(a)(a.rows() - 1); }

/// Squared singular values of m (min(rows, cols) of them, ascending, clamped at 0).
inline Vector squared_singular_values(const Matrix& m) {
  if (m.size() == 0) return Vector();
  Matrix gram = m.rows() <= m.cols() ? Matrix(m * m.transpose()) : Matrix(m.transpose() * m);
  return sym_eigenvalues(gram).cwiseMax(0.0);
}

inline double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return std::sqrt(squared_singular_values(m).maxCoeff());
}

/// Principal square root of a symmetric PSD matrix.
inline Matrix psd_sqrt(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a));
  Vector ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline bool is_symmetric(const Matrix& a, double tol) {
  return a.rows() == a.cols() && (a - a.transpose()).cwiseAbs().maxCoeff() <= tol;
}

/// Logarithmically spaced grid, inclusive of both ends.
inline std::vector<double> log_grid(double lo, double hi, int n) {
  std::vector<double> g(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double t = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
    g[static_cast<std::size_t>(i)] = std::pow(10.0, std::log10(lo) + t * (std::log10(hi) - std::log10(lo)));
  }
  return g;
}

}  // namespace anil
