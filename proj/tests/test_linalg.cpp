#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sdls/error.hpp"
#include "sdls/linalg.hpp"

using namespace sdls;

namespace {

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

Eigen::MatrixXd projector(const Matrix& u) {
  const Eigen::MatrixXd e = oracle::to_eigen(u);
  return e * e.transpose();
}

}  // namespace

TEST(Pca, ProjectorMatchesEigendecompositionOnRandomInstances) {
  Rng rng(101);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 4 + rng.below(12);
    const std::size_t n = d + 2 + rng.below(20);
    const std::size_t k = 1 + rng.below(d - 1);
    const Matrix x = center_columns(oracle::random_matrix(rng, d, n));
    const PcaBasis basis = pca_top_k(x, k);
    ASSERT_EQ(basis.effective_k, k);
    EXPECT_LT(max_abs(projector(basis.components) - oracle::eigen_projector(x, k)), 1e-6) << "trial " << trial;
  }
}

TEST(Pca, FirstComponentMatchesPowerIteration) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix x = oracle::random_matrix(rng, 6, 30);
    for (std::size_t c = 0; c < x.cols(); ++c) x(0, c) *= 4.0;  // clear spectral gap
    const Vector p = first_principal_component(x);
    const Eigen::VectorXd ref = oracle::power_iteration(center_columns(x));
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], ref(static_cast<Eigen::Index>(i)), 1e-8);
  }
}

TEST(Pca, SignConventionAndOrder) {
  Rng rng(9);
  const Matrix x = center_columns(oracle::random_matrix(rng, 5, 12));
  const PcaBasis b = pca_top_k(x, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    const Vector col = b.components.column(c);
    const auto it = std::max_element(col.begin(), col.end(), [](double a, double z) { return std::abs(a) < std::abs(z); });
    EXPECT_GE(*it, 0.0);
  }
  for (std::size_t i = 1; i < b.singular_values.size(); ++i)
    EXPECT_GE(b.singular_values[i - 1], b.singular_values[i]);
}

TEST(Pca, RankDeficientReportsEffectiveK) {
  // Two distinct directions only.
  Matrix x(4, 6);
  for (std::size_t c = 0; c < 6; ++c) {
    x(0, c) = static_cast<double>(c);
    x(1, c) = static_cast<double>(c % 2);
  }
  const PcaBasis b = pca_top_k(center_columns(x), 4);
  EXPECT_EQ(b.effective_k, 2u);
}

TEST(Pca, RejectsBadK) {
  const Matrix x(3, 4, 1.0);
  EXPECT_THROW(pca_top_k(x, 0), Error);
  EXPECT_THROW(pca_top_k(x, 4), Error);
}

TEST(Pca, ZeroVarianceFirstComponent) {
  const Matrix x(3, 5, 2.0);
  try {
    first_principal_component(x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kZeroVariance);
  }
}

TEST(Pca, NonFiniteInputRejected) {
  Matrix x(2, 3, 1.0);
  x(1, 1) = std::nan("");
  EXPECT_THROW(pca_top_k(x, 1), Error);
}

TEST(Qr, OrthonormalAndReconstructs) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 3 + rng.below(20);
    const std::size_t c = 1 + rng.below(d);
    const Matrix v = oracle::random_matrix(rng, d, c);
    const QrFactors f = qr_orthonormal_basis(v);
    ASSERT_FALSE(f.dependent_column);
    const Eigen::MatrixXd q = oracle::to_eigen(f.q);
    const Eigen::MatrixXd r = oracle::to_eigen(f.r);
    EXPECT_LT(max_abs(q.transpose() * q - Eigen::MatrixXd::Identity(c, c)), 1e-10);
    EXPECT_LT(max_abs(q * r - oracle::to_eigen(v)), 1e-10);
    for (std::size_t i = 0; i < c; ++i) {
      EXPECT_GE(f.r(i, i), 0.0);
      for (std::size_t j = 0; j < i; ++j) EXPECT_EQ(f.r(i, j), 0.0);
    }
  }
}

TEST(Qr, FlagsDependentColumn) {
  Matrix v(4, 3);
  for (std::size_t r = 0; r < 4; ++r) {
    v(r, 0) = static_cast<double>(r + 1);
    v(r, 1) = static_cast<double>(r * r);
    v(r, 2) = 2.0 * v(r, 0) - v(r, 1);
  }
  const QrFactors f = qr_orthonormal_basis(v);
  ASSERT_TRUE(f.dependent_column);
  EXPECT_EQ(*f.dependent_column, 2u);
}

TEST(Qr, OrthonormalInputIsIdentityUpToSign) {
  const Matrix v = Matrix::identity(3);
  const QrFactors f = qr_orthonormal_basis(v);
  EXPECT_LT(max_abs(oracle::to_eigen(f.q) - Eigen::MatrixXd::Identity(3, 3)), 1e-15);
}

TEST(ProjectOut, IdempotentAndOrthogonal) {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 5 + rng.below(20);
    const std::size_t k = 1 + rng.below(d - 1);
    const Matrix basis = qr_orthonormal_basis(oracle::random_matrix(rng, d, k)).q;
    Vector v(d);
    for (double& x : v) x = rng.normal();
    const Vector p = project_out_subspace(v, basis);
    const Vector pp = project_out_subspace(p, basis);
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(p[i], pp[i], 1e-10);
    for (double x : matvec_transposed(basis, p)) EXPECT_NEAR(x, 0.0, 1e-10);
  }
}

TEST(ProjectOut, RejectsNonOrthonormalBasis) {
  Matrix basis(3, 1, 1.0);
  const Vector v = {1.0, 2.0, 3.0};
  EXPECT_THROW(project_out_subspace(v, basis), Error);
}

TEST(Normalize, UnitAndZero) {
  const Vector v = l2_normalize(Vector{3.0, 4.0});
  EXPECT_DOUBLE_EQ(v[0], 0.6);
  EXPECT_DOUBLE_EQ(v[1], 0.8);
  EXPECT_THROW(l2_normalize(Vector{0.0, 0.0}), Error);
}

TEST(MatrixBasics, ColumnsAndProducts) {
  const Vector a = {1, 2}, b = {3, 4};
  const std::vector<Vector> cols = {a, b};
  const Matrix m = Matrix::from_columns(cols);
  EXPECT_EQ(m(0, 1), 3.0);
  EXPECT_EQ(m.column(1), b);
  const Vector y = matvec(m, Vector{1.0, 1.0});
  EXPECT_EQ(y, (Vector{4.0, 6.0}));
  EXPECT_EQ(matmul(m, Matrix::identity(2)), m);
  EXPECT_EQ(column_mean(m), (Vector{2.0, 3.0}));
}
