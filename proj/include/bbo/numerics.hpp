#pragma once

// Dense vector/matrix primitives, SPD solves, rank-1 inverse updates and
// seeded random sampling. Everything downstream builds on this module.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace bbo {

class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

using Vec = std::vector<double>;

// Row-major dense matrix of 64-bit reals.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;  // rows*cols entries, row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t n);
  static Matrix diagonal(const Vec& d);

  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  bool square() const { return rows == cols; }
};

// Basic dense ops (sizes validated; dimension mismatch throws numeric_error).
Vec matvec(const Matrix& a, const Vec& x);
Vec matvec_transposed(const Matrix& a, const Vec& x);  // aᵀ·x
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
// a += s * u vᵀ
void add_outer(Matrix& a, const Vec& u, const Vec& v, double s = 1.0);

double dot(const Vec& a, const Vec& b);
double norm2(const Vec& x);
double norm_inf(const Vec& x);
// y += s * x
void axpy(Vec& y, const Vec& x, double s);

// Deterministic pseudo-random stream.
//
// Generator: xoshiro256++ with splitmix64 seed expansion (both public-domain
// reference algorithms, reimplemented here so draw sequences are stable across
// platforms and standard libraries). Uniform doubles take the top 53 bits of
// a 64-bit draw; normals use the Marsaglia polar transform with one cached
// spare. Identical seed => identical sequence, byte for byte.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n); n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n);
  // Standard normal draw (polar method).
  double normal();

  // Independent child stream; deterministic function of (seed, stream index).
  Rng spawn(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t s_[4] = {0, 0, 0, 0};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// n i.i.d. N(0,1) draws.
Vec sample_standard_normal(Rng& rng, std::size_t n);

// Given a_inv = A⁻¹, returns (A + u vᵀ)⁻¹ via the Sherman-Morrison identity.
// Throws numeric_error if |1 + vᵀA⁻¹u| < 1e-12 (singular update).
Matrix sherman_morrison_update(const Matrix& a_inv, const Vec& u, const Vec& v);

// Solves a·x = b for symmetric positive-definite a by unpivoted Cholesky.
// The input is symmetrized as (A+Aᵀ)/2 first to absorb rank-1-update drift.
// Throws numeric_error on a non-positive pivot.
Vec solve_spd(const Matrix& a, const Vec& b);

// Solves a·x = b for general square a by LU with partial pivoting.
// Throws numeric_error if the matrix is numerically singular.
Vec solve_dense(const Matrix& a, const Vec& b);

// Full inverse of a symmetric positive-definite matrix (one Cholesky
// factorization, n triangular solve pairs). Same symmetrization and error
// behaviour as solve_spd.
Matrix invert_spd(const Matrix& a);

// Returns x unchanged if ‖x‖₂ ≤ radius, else x scaled onto the radius ball.
Vec project_ball(const Vec& x, double radius);

}  // namespace bbo
