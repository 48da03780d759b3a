#include "sdls/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sdls/error.hpp"

namespace sdls {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorCode::kGeometry, "matrix data length " + std::to_string(data_.size()) +
                                          " != " + std::to_string(rows_) + "x" +
                                          std::to_string(cols_));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_columns(std::span<const Vector> columns) {
  if (columns.empty()) return {};
  const std::size_t rows = columns.front().size();
  Matrix m(rows, columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c].size() != rows) {
      throw Error(ErrorCode::kGeometry, "column " + std::to_string(c) + " has length " +
                                            std::to_string(columns[c].size()) + ", expected " +
                                            std::to_string(rows));
    }
    m.set_column(c, columns[c]);
  }
  return m;
}

Vector Matrix::column(std::size_t c) const {
  Vector out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void Matrix::set_column(std::size_t c, std::span<const double> values) {
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Matrix::all_finite() const { return sdls::all_finite(data_); }

double Matrix::frobenius_norm() const { return l2_norm(data_); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error(ErrorCode::kGeometry, "matmul inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw Error(ErrorCode::kGeometry, "matvec dimension mismatch");
  Vector out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
    out[i] = s;
  }
  return out;
}

Vector matvec_transposed(const Matrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) throw Error(ErrorCode::kGeometry, "matvec dimension mismatch");
  Vector out(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a(i, j) * x[i];
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kGeometry, "dot dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) {
  // Scaled accumulation so tiny and huge entries do not under/overflow.
  double scale = 0.0;
  double ssq = 1.0;
  for (double x : v) {
    if (x == 0.0) continue;
    const double ax = std::abs(x);
    if (scale < ax) {
      ssq = 1.0 + ssq * (scale / ax) * (scale / ax);
      scale = ax;
    } else {
      ssq += (ax / scale) * (ax / scale);
    }
  }
  return scale * std::sqrt(ssq);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

Vector column_mean(const Matrix& m) {
  Vector mu(m.rows(), 0.0);
  if (m.cols() == 0) return mu;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) s += m(r, c);
    mu[r] = s / static_cast<double>(m.cols());
  }
  return mu;
}

Matrix center_columns(const Matrix& m) {
  const Vector mu = column_mean(m);
  Matrix out = m;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) -= mu[r];
  return out;
}

namespace {

struct Reflector {
  double tau = 0.0;
  double beta = 0.0;  // resulting diagonal entry
  std::vector<double> v;  // v[0] == 1
};

// Householder vector for x so that (I − tau v vᵀ) x = beta e1.
Reflector make_reflector(std::span<const double> x) {
  Reflector h;
  h.v.assign(x.begin(), x.end());
  const double alpha = x[0];
  const double tail = l2_norm(x.subspan(1));
  h.v[0] = 1.0;
  if (tail == 0.0) {
    h.tau = 0.0;
    h.beta = alpha;
    for (std::size_t i = 1; i < h.v.size(); ++i) h.v[i] = 0.0;
    return h;
  }
  const double beta = -std::copysign(std::hypot(alpha, tail), alpha);
  h.tau = (beta - alpha) / beta;
  const double scale = 1.0 / (alpha - beta);
  for (std::size_t i = 1; i < h.v.size(); ++i) h.v[i] *= scale;
  h.beta = beta;
  return h;
}

// Applies (I − tau v vᵀ) to rows [offset, offset+len(v)) and columns [col0, cols) of a.
void apply_reflector(const Reflector& h, Matrix& a, std::size_t offset, std::size_t col0) {
  if (h.tau == 0.0) return;
  for (std::size_t c = col0; c < a.cols(); ++c) {
    double w = 0.0;
    for (std::size_t i = 0; i < h.v.size(); ++i) w += h.v[i] * a(offset + i, c);
    w *= h.tau;
    for (std::size_t i = 0; i < h.v.size(); ++i) a(offset + i, c) -= w * h.v[i];
  }
}

// Householder triangularisation. Returns the reflectors; `a` is overwritten
// with R in its upper triangle (entries below the diagonal are zeroed).
std::vector<Reflector> householder_in_place(Matrix& a) {
  const std::size_t n = std::min(a.rows(), a.cols());
  std::vector<Reflector> reflectors;
  reflectors.reserve(n);
  std::vector<double> x;
  for (std::size_t j = 0; j < n; ++j) {
    x.resize(a.rows() - j);
    for (std::size_t i = j; i < a.rows(); ++i) x[i - j] = a(i, j);
    Reflector h = make_reflector(x);
    a(j, j) = h.beta;
    for (std::size_t i = j + 1; i < a.rows(); ++i) a(i, j) = 0.0;
    apply_reflector(h, a, j, j + 1);
    reflectors.push_back(std::move(h));
  }
  return reflectors;
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.all_finite()) throw Error(ErrorCode::kNonFinite, std::string(what) + " has non-finite entries");
}

void fix_column_signs(Matrix& u) {
  for (std::size_t c = 0; c < u.cols(); ++c) {
    std::size_t best = 0;
    double best_abs = -1.0;
    for (std::size_t r = 0; r < u.rows(); ++r) {
      const double a = std::abs(u(r, c));
      if (a > best_abs) {
        best_abs = a;
        best = r;
      }
    }
    if (u(best, c) < 0.0)
      for (std::size_t r = 0; r < u.rows(); ++r) u(r, c) = -u(r, c);
  }
}

struct LeftSvd {
  Matrix u;                     // rows × rows, columns sorted by sigma
  std::vector<double> sigma;    // descending
};

// Left singular vectors of a (d × n) through one-sided Jacobi on aᵀ: the
// accumulated right rotations of aᵀ are the left singular vectors of a.
LeftSvd left_singular_vectors(const Matrix& a) {
  const std::size_t d = a.rows();
  Matrix work = a.transposed();  // n × d
  if (work.rows() > d) {
    // aᵀ = Q R; R has the same right singular vectors and is only d × d.
    householder_in_place(work);
    Matrix r(d, d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) r(i, j) = work(i, j);
    work = std::move(r);
  }
  const std::size_t m = work.rows();
  Matrix v = Matrix::identity(d);

  constexpr int kMaxSweeps = 80;
  constexpr double kTol = 1e-15;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = work(i, p), wq = work(i, q);
          alpha += wp * wp;
          beta += wq * wq;
          gamma += wp * wq;
        }
        if (gamma == 0.0 || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = work(i, p), wq = work(i, q);
          work(i, p) = c * wp - s * wq;
          work(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(d);
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += work(i, j) * work(i, j);
    sigma[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });
  LeftSvd out{Matrix(d, d), std::vector<double>(d)};
  for (std::size_t k = 0; k < d; ++k) {
    out.sigma[k] = sigma[order[k]];
    for (std::size_t i = 0; i < d; ++i) out.u(i, k) = v(i, order[k]);
  }
  return out;
}

}  // namespace

PcaBasis pca_top_k(const Matrix& centered, std::size_t k) {
  require_finite(centered, "PCA input");
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  if (k > std::min(centered.rows(), centered.cols())) {
    throw Error(ErrorCode::kInvalidArgument,
                "k=" + std::to_string(k) + " exceeds min(rows, cols)=" +
                    std::to_string(std::min(centered.rows(), centered.cols())));
  }
  LeftSvd svd = left_singular_vectors(centered);
  const double top = svd.sigma.empty() ? 0.0 : svd.sigma.front();
  std::size_t rank = 0;
  while (rank < svd.sigma.size() && top > 0.0 && svd.sigma[rank] > 1e-10 * top) ++rank;

  PcaBasis out;
  out.effective_k = std::min(k, rank);
  out.components = Matrix(centered.rows(), out.effective_k);
  for (std::size_t c = 0; c < out.effective_k; ++c)
    for (std::size_t r = 0; r < centered.rows(); ++r) out.components(r, c) = svd.u(r, c);
  fix_column_signs(out.components);
  out.singular_values = std::move(svd.sigma);
  return out;
}

Vector first_principal_component(const Matrix& samples) {
  if (samples.cols() == 0) throw Error(ErrorCode::kInvalidArgument, "no samples");
  require_finite(samples, "PCA input");
  const Matrix centered = center_columns(samples);
  if (centered.frobenius_norm() == 0.0 || samples.rows() == 0)
    throw Error(ErrorCode::kZeroVariance, "samples have zero variance");
  PcaBasis basis = pca_top_k(centered, 1);
  if (basis.effective_k == 0) throw Error(ErrorCode::kZeroVariance, "samples have zero variance");
  return basis.components.column(0);
}

QrFactors qr_orthonormal_basis(const Matrix& v) {
  require_finite(v, "QR input");
  const std::size_t d = v.rows();
  const std::size_t c = v.cols();
  if (c > d) {
    throw Error(ErrorCode::kInvalidArgument,
                "QR needs cols <= rows, got " + std::to_string(d) + "x" + std::to_string(c));
  }
  Matrix work = v;
  const std::vector<Reflector> reflectors = householder_in_place(work);

  QrFactors out;
  out.r = Matrix(c, c);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = i; j < c; ++j) out.r(i, j) = work(i, j);

  // Q = H_0 H_1 … H_{c−1} applied to the first c columns of I.
  out.q = Matrix(d, c);
  for (std::size_t i = 0; i < c; ++i) out.q(i, i) = 1.0;
  for (std::size_t j = c; j-- > 0;) apply_reflector(reflectors[j], out.q, j, 0);

  for (std::size_t i = 0; i < c; ++i) {
    if (out.r(i, i) < 0.0) {
      for (std::size_t j = i; j < c; ++j) out.r(i, j) = -out.r(i, j);
      for (std::size_t r = 0; r < d; ++r) out.q(r, i) = -out.q(r, i);
    }
  }

  const double threshold = 1e-12 * v.frobenius_norm();
  for (std::size_t i = 0; i < c; ++i) {
    if (std::abs(out.r(i, i)) < threshold || v.frobenius_norm() == 0.0) {
      out.dependent_column = i;
      break;
    }
  }
  return out;
}

Vector l2_normalize(std::span<const double> v) {
  if (!all_finite(v)) throw Error(ErrorCode::kNonFinite, "vector has non-finite entries");
  const double n = l2_norm(v);
  if (n < 1e-12) throw Error(ErrorCode::kZeroVector, "cannot normalise a vector with norm < 1e-12");
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

Vector project_out_subspace(std::span<const double> v, const Matrix& basis) {
  if (basis.rows() != v.size()) throw Error(ErrorCode::kGeometry, "basis rows != vector dim");
  for (std::size_t i = 0; i < basis.cols(); ++i) {
    for (std::size_t j = i; j < basis.cols(); ++j) {
      double g = 0.0;
      for (std::size_t r = 0; r < basis.rows(); ++r) g += basis(r, i) * basis(r, j);
      const double expected = i == j ? 1.0 : 0.0;
      if (std::abs(g - expected) > 1e-8)
        throw Error(ErrorCode::kNotOrthonormal, "basis columns are not orthonormal");
    }
  }
  const Vector coeffs = matvec_transposed(basis, v);
  Vector out(v.begin(), v.end());
  for (std::size_t c = 0; c < basis.cols(); ++c)
    for (std::size_t r = 0; r < basis.rows(); ++r) out[r] -= basis(r, c) * coeffs[c];
  return out;
}

}  // namespace sdls
