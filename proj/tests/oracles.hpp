#pragma once

// Brute-force reference implementations used by the unit and acceptance
// tests. None of these share code with the library paths they check.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "sdls/corpus.hpp"
#include "sdls/linalg.hpp"
#include "sdls/metrics.hpp"
#include "sdls/rng.hpp"

namespace oracle {

inline Eigen::MatrixXd to_eigen(const sdls::Matrix& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r, c);
  return out;
}

inline sdls::Matrix from_eigen(const Eigen::MatrixXd& m) {
  sdls::Matrix out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(r, c) = m(r, c);
  return out;
}

inline sdls::Matrix random_matrix(sdls::Rng& rng, std::size_t rows, std::size_t cols) {
  sdls::Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

/// Projector onto the top-k eigenvectors of the scatter matrix X Xᵀ.
inline Eigen::MatrixXd eigen_projector(const sdls::Matrix& centered, std::size_t k) {
  const Eigen::MatrixXd x = to_eigen(centered);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x * x.transpose());
  const Eigen::MatrixXd v = es.eigenvectors().rightCols(static_cast<Eigen::Index>(k));
  return v * v.transpose();
}

/// Leading eigenvector of X Xᵀ by power iteration (sign: largest |entry| ≥ 0).
inline Eigen::VectorXd power_iteration(const sdls::Matrix& centered, int iters = 5000) {
  const Eigen::MatrixXd x = to_eigen(centered);
  const Eigen::MatrixXd c = x * x.transpose();
  Eigen::VectorXd v = Eigen::VectorXd::Ones(c.rows()).normalized();
  for (int i = 0; i < iters; ++i) v = (c * v).normalized();
  Eigen::Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v(arg) < 0) v = -v;
  return v;
}

/// Global ICV by explicit covariance eigendecomposition.
inline Eigen::VectorXd global_icv(const sdls::Matrix& diffs, std::size_t k) {
  const Eigen::MatrixXd d = to_eigen(diffs);
  const Eigen::VectorXd mu = d.rowwise().mean();
  const Eigen::MatrixXd centered = d.colwise() - mu;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centered * centered.transpose() /
                                                     static_cast<double>(d.cols() - 1));
  const Eigen::MatrixXd u = es.eigenvectors().rightCols(static_cast<Eigen::Index>(k));
  return u * (u.transpose() * mu);
}

struct NormalEquations {
  Eigen::VectorXd coef;
  Eigen::VectorXd se;
  double r2 = 0.0;
};

/// OLS via (XᵀX)⁻¹Xᵀy with classical standard errors.
inline NormalEquations normal_equations(const sdls::Matrix& xm, const std::vector<double>& yv) {
  const Eigen::MatrixXd x = to_eigen(xm);
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(yv.data(), static_cast<Eigen::Index>(yv.size()));
  const Eigen::MatrixXd xtx_inv = (x.transpose() * x).inverse();
  NormalEquations out;
  out.coef = xtx_inv * x.transpose() * y;
  const Eigen::VectorXd resid = y - x * out.coef;
  const double sigma2 = resid.squaredNorm() / static_cast<double>(x.rows() - x.cols());
  out.se = (sigma2 * xtx_inv.diagonal()).cwiseSqrt();
  const double ybar = y.mean();
  out.r2 = 1.0 - resid.squaredNorm() / (y.array() - ybar).square().sum();
  return out;
}

/// Macro/micro F1 from explicit per-label confusion counts.
inline std::pair<double, double> confusion_f1(const std::vector<std::vector<bool>>& pred,
                                              const std::vector<std::vector<bool>>& ref) {
  const std::size_t labels = pred.empty() ? 0 : pred[0].size();
  double macro_sum = 0.0;
  std::size_t scored = 0;
  std::size_t tp_all = 0, fp_all = 0, fn_all = 0;
  for (std::size_t l = 0; l < labels; ++l) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i][l] && ref[i][l]) ++tp;
      if (pred[i][l] && !ref[i][l]) ++fp;
      if (!pred[i][l] && ref[i][l]) ++fn;
    }
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
    if (tp + fp + fn == 0) continue;
    ++scored;
    macro_sum += 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
  }
  const double macro = scored == 0 ? 1.0 : macro_sum / static_cast<double>(scored);
  const std::size_t denom = 2 * tp_all + fp_all + fn_all;
  const double micro = denom == 0 ? 1.0 : 2.0 * tp_all / static_cast<double>(denom);
  return {macro, micro};
}

/// Filters passing rows, then sorts by the full preference key.
inline std::optional<sdls::OperatingPointRow> exhaustive_select(const std::vector<sdls::OperatingPointRow>& rows) {
  std::vector<sdls::OperatingPointRow> pass;
  for (const auto& r : rows)
    if (r.passes_selection) pass.push_back(r);
  if (pass.empty()) return std::nullopt;
  std::sort(pass.begin(), pass.end(), [](const auto& a, const auto& b) {
    return std::make_tuple(-a.delta_hsr, -a.macro_f1, std::abs(a.lambda), a.condition_id) <
           std::make_tuple(-b.delta_hsr, -b.macro_f1, std::abs(b.lambda), b.condition_id);
  });
  return pass.front();
}

/// HSR by string search over the space-joined report: every phrase
/// occurrence bounded by spaces, minus any touching a negative phrase.
inline std::pair<std::size_t, std::size_t> naive_hsr_counts(const sdls::Tokens& tokens,
                                                            const sdls::CueDictionary& dict) {
  std::string text = " ";
  std::vector<std::size_t> token_at;  // char offset → token index
  token_at.push_back(0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (std::size_t c = 0; c < tokens[i].size(); ++c) {
      text += tokens[i][c];
      token_at.push_back(i);
    }
    text += ' ';
    token_at.push_back(i);
  }
  auto occurrences = [&](const sdls::Tokens& phrase) {
    std::vector<std::pair<std::size_t, std::size_t>> out;  // token range
    std::string needle = " ";
    for (const auto& t : phrase) needle += t + " ";
    for (std::size_t pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) {
      const std::size_t first = token_at[pos + 1];
      out.emplace_back(first, first + phrase.size());
    }
    return out;
  };
  std::set<std::size_t> excluded;
  for (const auto& n : dict.negatives())
    for (auto [b, e] : occurrences(n))
      for (std::size_t i = b; i < e; ++i) excluded.insert(i);
  std::set<std::size_t> covered;
  for (const auto& p : dict.phrases())
    for (auto [b, e] : occurrences(p.tokens)) {
      bool clash = false;
      for (std::size_t i = b; i < e; ++i) clash |= excluded.count(i) > 0;
      if (clash) continue;
      for (std::size_t i = b; i < e; ++i) covered.insert(i);
    }
  return {covered.size(), tokens.size()};
}

/// δ columns for class c: t·(s + e_c) + small noise, with s ⟂ e_c, e_c
/// mutually orthogonal and ‖e_c‖ = ratio·‖s‖.
inline std::map<std::string, sdls::Matrix> planted_classes(sdls::Rng& rng, std::size_t dim, std::size_t classes,
                                                           std::size_t per_class, double ratio,
                                                           sdls::Vector& style) {
  sdls::Matrix g = random_matrix(rng, dim, classes + 1);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(to_eigen(g));
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, classes + 1);
  style.assign(dim, 0.0);
  for (std::size_t r = 0; r < dim; ++r) style[r] = q(r, 0);
  std::map<std::string, sdls::Matrix> out;
  for (std::size_t c = 0; c < classes; ++c) {
    sdls::Matrix d(dim, per_class);
    for (std::size_t j = 0; j < per_class; ++j) {
      const double t = 0.5 + rng.uniform();
      for (std::size_t r = 0; r < dim; ++r)
        d(r, j) = t * (q(r, 0) + ratio * q(r, c + 1)) + 1e-3 * rng.normal();
    }
    out["class" + std::to_string(c)] = d;
  }
  return out;
}

}  // namespace oracle
