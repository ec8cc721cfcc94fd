#include "bbo/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace bbo {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw numeric_error(msg);
}

// splitmix64: seed expander (also used to derive child streams).
std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(const Vec& d) {
  Matrix m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m.at(i, i) = d[i];
  return m;
}

Vec matvec(const Matrix& a, const Vec& x) {
  require(a.cols == x.size(), "matvec: dimension mismatch");
  Vec y(a.rows, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double acc = 0.0;
    const double* row = a.data.data() + i * a.cols;
    for (std::size_t j = 0; j < a.cols; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
  return y;
}

Vec matvec_transposed(const Matrix& a, const Vec& x) {
  require(a.rows == x.size(), "matvec_transposed: dimension mismatch");
  Vec y(a.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* row = a.data.data() + i * a.cols;
    const double xi = x[i];
    for (std::size_t j = 0; j < a.cols; ++j) y[j] += row[j] * xi;
  }
  return y;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols == b.rows, "matmul: dimension mismatch");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.data.data() + k * b.cols;
      double* crow = c.data.data() + i * c.cols;
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require(a.rows == b.rows && a.cols == b.cols, "add: dimension mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
  return c;
}

Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  for (double& v : c.data) v *= s;
  return c;
}

void add_outer(Matrix& a, const Vec& u, const Vec& v, double s) {
  require(a.rows == u.size() && a.cols == v.size(), "add_outer: dimension mismatch");
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double su = s * u[i];
    double* row = a.data.data() + i * a.cols;
    for (std::size_t j = 0; j < a.cols; ++j) row[j] += su * v[j];
  }
}

double dot(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), "dot: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(const Vec& x) { return std::sqrt(dot(x, x)); }

double norm_inf(const Vec& x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::fabs(v));
  return m;
}

void axpy(Vec& y, const Vec& x, double s) {
  require(y.size() == x.size(), "axpy: dimension mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * x[i];
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t sm = seed;
  for (auto& word : s_) word = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  require(n > 0, "uniform_int: n must be positive");
  // Rejection sampling over the largest multiple of n to avoid modulo bias.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Marsaglia polar method: rejection-sample a point in the unit disc.
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

Rng Rng::spawn(std::uint64_t stream) const {
  // Child seed mixes the parent seed with the stream index through splitmix64
  // so distinct (seed, stream) pairs land on unrelated trajectories.
  std::uint64_t x = seed_ ^ (0xA3EC647659359ACDULL * (stream + 1));
  const std::uint64_t child = splitmix64(x);
  return Rng(child);
}

Vec sample_standard_normal(Rng& rng, std::size_t n) {
  Vec out(n);
  for (double& v : out) v = rng.normal();
  return out;
}

Matrix sherman_morrison_update(const Matrix& a_inv, const Vec& u, const Vec& v) {
  require(a_inv.square(), "sherman_morrison_update: matrix must be square");
  require(a_inv.rows == u.size() && a_inv.rows == v.size(),
          "sherman_morrison_update: dimension mismatch");
  const Vec au = matvec(a_inv, u);        // A⁻¹u
  const Vec va = matvec_transposed(a_inv, v);  // (vᵀA⁻¹)ᵀ
  const double denom = 1.0 + dot(v, au);
  if (std::fabs(denom) < 1e-12)
    throw numeric_error("sherman_morrison_update: singular update (|1 + vᵀA⁻¹u| < 1e-12)");
  Matrix out = a_inv;
  add_outer(out, au, va, -1.0 / denom);
  return out;
}

namespace {

// Unpivoted Cholesky of the symmetrized input: returns L (lower triangle in
// place). Symmetrizing first absorbs drift from accumulated rank-1 updates.
Matrix cholesky_factor(const Matrix& a) {
  const std::size_t n = a.rows;
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      m.at(i, j) = 0.5 * (a.at(i, j) + a.at(j, i));

  for (std::size_t k = 0; k < n; ++k) {
    double diag = m.at(k, k);
    for (std::size_t j = 0; j < k; ++j) diag -= m.at(k, j) * m.at(k, j);
    if (!(diag > 0.0))
      throw numeric_error("solve_spd: matrix not positive definite (pivot " +
                          std::to_string(k) + ")");
    const double lkk = std::sqrt(diag);
    m.at(k, k) = lkk;
    for (std::size_t i = k + 1; i < n; ++i) {
      double acc = m.at(i, k);
      for (std::size_t j = 0; j < k; ++j) acc -= m.at(i, j) * m.at(k, j);
      m.at(i, k) = acc / lkk;
    }
  }
  return m;
}

// Forward substitution L y = b, then back substitution Lᵀ x = y, in place.
void cholesky_solve_inplace(const Matrix& l, Vec& x) {
  const std::size_t n = l.rows;
  for (std::size_t i = 0; i < n; ++i) {
    double acc = x[i];
    for (std::size_t j = 0; j < i; ++j) acc -= l.at(i, j) * x[j];
    x[i] = acc / l.at(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double acc = x[ii];
    for (std::size_t j = ii + 1; j < n; ++j) acc -= l.at(j, ii) * x[j];
    x[ii] = acc / l.at(ii, ii);
  }
}

}  // namespace

Vec solve_spd(const Matrix& a, const Vec& b) {
  require(a.square(), "solve_spd: matrix must be square");
  require(a.rows == b.size(), "solve_spd: dimension mismatch");
  const Matrix l = cholesky_factor(a);
  Vec x(b);
  cholesky_solve_inplace(l, x);
  return x;
}

Matrix invert_spd(const Matrix& a) {
  require(a.square(), "invert_spd: matrix must be square");
  const std::size_t n = a.rows;
  const Matrix l = cholesky_factor(a);
  Matrix inv(n, n);
  Vec col(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(col.begin(), col.end(), 0.0);
    col[j] = 1.0;
    cholesky_solve_inplace(l, col);
    for (std::size_t i = 0; i < n; ++i) inv.at(i, j) = col[i];
  }
  return inv;
}

Vec solve_dense(const Matrix& a, const Vec& b) {
  require(a.square(), "solve_dense: matrix must be square");
  require(a.rows == b.size(), "solve_dense: dimension mismatch");
  const std::size_t n = a.rows;
  Matrix m = a;
  Vec x = b;

  for (std::size_t k = 0; k < n; ++k) {
    // Partial pivoting.
    std::size_t piv = k;
    double best = std::fabs(m.at(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double cand = std::fabs(m.at(i, k));
      if (cand > best) {
        best = cand;
        piv = i;
      }
    }
    if (best < 1e-300) throw numeric_error("solve_dense: matrix is singular");
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(m.at(k, j), m.at(piv, j));
      std::swap(x[k], x[piv]);
    }
    const double pivot = m.at(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = m.at(i, k) / pivot;
      if (f == 0.0) continue;
      m.at(i, k) = 0.0;
      for (std::size_t j = k + 1; j < n; ++j) m.at(i, j) -= f * m.at(k, j);
      x[i] -= f * x[k];
    }
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double acc = x[ii];
    for (std::size_t j = ii + 1; j < n; ++j) acc -= m.at(ii, j) * x[j];
    x[ii] = acc / m.at(ii, ii);
  }
  return x;
}

Vec project_ball(const Vec& x, double radius) {
  require(radius > 0.0, "project_ball: radius must be positive");
  const double n = norm2(x);
  if (n <= radius) return x;
  Vec out = x;
  const double f = radius / n;
  for (double& v : out) v *= f;
  return out;
}

}  // namespace bbo
