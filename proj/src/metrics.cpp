#include "sdls/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "sdls/csv.hpp"
#include "sdls/error.hpp"
#include "sdls/rng.hpp"

namespace sdls {

double hsr(const Tokens& report, const CueDictionary& dict) {
  if (report.empty()) throw Error(ErrorCode::kUndefinedRate, "HSR is undefined for an empty report");
  std::vector<bool> covered(report.size(), false);
  for (const auto& s : find_cue_spans(report, dict))
    for (std::size_t i = s.begin; i < s.end; ++i) covered[i] = true;
  const auto n = static_cast<double>(std::count(covered.begin(), covered.end(), true));
  return n / static_cast<double>(report.size());
}

std::size_t hsc(const Tokens& report, const CueDictionary& dict) {
  // sentence index of every token; a period closes its sentence
  std::vector<std::size_t> sentence(report.size());
  std::size_t s = 0;
  for (std::size_t i = 0; i < report.size(); ++i) {
    sentence[i] = s;
    if (report[i] == ".") ++s;
  }
  std::set<std::size_t> cued;
  for (const auto& span : find_cue_spans(report, dict)) cued.insert(sentence[span.begin]);
  return cued.size();
}

double mean_of(std::span<const double> xs) {
  if (xs.empty()) throw Error(ErrorCode::kInvalidArgument, "mean of an empty list");
  // Offsetting by the first value keeps a constant list's mean exact.
  const double c0 = xs[0];
  double acc = 0.0;
  for (double x : xs) acc += x - c0;
  return c0 + acc / static_cast<double>(xs.size());
}

double delta_hsr(std::span<const double> baseline, std::span<const double> method) {
  return mean_of(baseline) - mean_of(method);
}

double SyntheticJudge::prob(const Tokens& report) const {
  const double h = report.empty() ? 0.0 : hsr(report, *dict_);
  const double z = coef_.intercept + coef_.hsr * h + coef_.hsc * static_cast<double>(hsc(report, *dict_)) +
                   coef_.length * static_cast<double>(report.size());
  return 1.0 / (1.0 + std::exp(-z));
}

double SyntheticJudge::prob(const std::string&, const std::string&, const Tokens& report) const {
  return prob(report);
}

ExternalJudge ExternalJudge::load(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  if (rows.empty() || rows[0] != std::vector<std::string>{"image_id", "condition", "score"})
    throw Error(ErrorCode::kParse, path.string() + ": expected header image_id,condition,score");
  std::map<std::pair<std::string, std::string>, double> scores;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 3) throw Error(ErrorCode::kParse, path.string() + ": bad row " + std::to_string(i + 1));
    double v = 0.0;
    try {
      v = std::stod(rows[i][2]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kParse, path.string() + ": bad score on row " + std::to_string(i + 1));
    }
    if (!(v >= 0.0 && v <= 1.0))
      throw Error(ErrorCode::kParse, path.string() + ": score outside [0,1] on row " + std::to_string(i + 1));
    scores[{rows[i][0], rows[i][1]}] = v;
  }
  return ExternalJudge(std::move(scores));
}

double ExternalJudge::prob(const std::string& image_id, const std::string& condition, const Tokens&) const {
  const auto it = scores_.find({image_id, condition});
  if (it == scores_.end())
    throw Error(ErrorCode::kInvalidArgument, "no external score for (" + image_id + ", " + condition + ")");
  return it->second;
}

// ---------------------------------------------------------------------------

std::vector<bool> label_findings(const Tokens& report, const FindingLexicon& lexicon) {
  std::vector<bool> out(lexicon.labels.size(), false);
  for (std::size_t i = 0; i < report.size(); ++i) {
    const auto label = lexicon.label_of(report[i]);
    if (!label) continue;
    bool negated = false;
    for (std::size_t back = 1; back <= 3 && back <= i; ++back) {
      const std::string& t = report[i - back];
      if (t == ".") break;
      if (t == "no") {
        negated = true;
        break;
      }
    }
    if (!negated) out[*label] = true;
  }
  return out;
}

F1Scores f1_from_labels(const std::vector<std::vector<bool>>& pred, const std::vector<std::vector<bool>>& ref) {
  if (pred.size() != ref.size()) throw Error(ErrorCode::kPairing, "pred/ref case counts differ");
  if (pred.empty()) throw Error(ErrorCode::kInvalidArgument, "no cases to score");
  const std::size_t nl = ref[0].size();
  std::vector<std::size_t> tp(nl, 0), fp(nl, 0), fn(nl, 0);
  for (std::size_t c = 0; c < pred.size(); ++c) {
    if (pred[c].size() != nl || ref[c].size() != nl) throw Error(ErrorCode::kGeometry, "label vector size mismatch");
    for (std::size_t l = 0; l < nl; ++l) {
      tp[l] += pred[c][l] && ref[c][l];
      fp[l] += pred[c][l] && !ref[c][l];
      fn[l] += !pred[c][l] && ref[c][l];
    }
  }
  F1Scores s;
  double macro = 0.0;
  std::size_t TP = 0, FP = 0, FN = 0;
  for (std::size_t l = 0; l < nl; ++l) {
    TP += tp[l];
    FP += fp[l];
    FN += fn[l];
    const std::size_t denom = 2 * tp[l] + fp[l] + fn[l];
    if (denom == 0) continue;
    macro += 2.0 * static_cast<double>(tp[l]) / static_cast<double>(denom);
    ++s.labels_scored;
  }
  s.macro = s.labels_scored ? macro / static_cast<double>(s.labels_scored) : 1.0;
  const std::size_t denom = 2 * TP + FP + FN;
  s.micro = denom ? 2.0 * static_cast<double>(TP) / static_cast<double>(denom) : 1.0;
  return s;
}

F1Scores fidelity_f1(const std::vector<Tokens>& pred, const std::vector<Tokens>& ref, const FindingLexicon& lexicon) {
  std::vector<std::vector<bool>> p, r;
  for (const auto& t : pred) p.push_back(label_findings(t, lexicon));
  for (const auto& t : ref) r.push_back(label_findings(t, lexicon));
  return f1_from_labels(p, r);
}

double example_f1(const std::vector<bool>& pred, const std::vector<bool>& ref) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t l = 0; l < ref.size(); ++l) {
    tp += pred[l] && ref[l];
    fp += pred[l] && !ref[l];
    fn += !pred[l] && ref[l];
  }
  const std::size_t denom = 2 * tp + fp + fn;
  return denom ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 1.0;
}

// ---------------------------------------------------------------------------

bool passes_selection(double macro_f1, double baseline_macro_f1, double delta) {
  return macro_f1 >= baseline_macro_f1 && delta > 0.0;
}

namespace {

bool ranks_before(const OperatingPointRow& a, const OperatingPointRow& b) {
  if (a.delta_hsr != b.delta_hsr) return a.delta_hsr > b.delta_hsr;
  if (a.macro_f1 != b.macro_f1) return a.macro_f1 > b.macro_f1;
  if (std::abs(a.lambda) != std::abs(b.lambda)) return std::abs(a.lambda) < std::abs(b.lambda);
  return a.condition_id < b.condition_id;
}

}  // namespace

std::optional<OperatingPointRow> select_operating_point(const std::vector<OperatingPointRow>& rows) {
  const OperatingPointRow* best = nullptr;
  for (const auto& r : rows)
    if (r.passes_selection && (!best || ranks_before(r, *best))) best = &r;
  if (!best) return std::nullopt;
  return *best;
}

std::optional<OperatingPointRow> strongest_suppression(const std::vector<OperatingPointRow>& rows) {
  const OperatingPointRow* best = nullptr;
  for (const auto& r : rows)
    if (!best || ranks_before(r, *best)) best = &r;
  if (!best) return std::nullopt;
  return *best;
}

// ---------------------------------------------------------------------------

Interval paired_bootstrap_ci(std::span<const double> deltas, std::size_t resamples, double alpha, std::uint64_t seed) {
  if (deltas.empty()) throw Error(ErrorCode::kInvalidArgument, "bootstrap needs at least one delta");
  if (resamples < 2) throw Error(ErrorCode::kInvalidArgument, "bootstrap needs at least 2 resamples");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must lie in (0, 1)");
  Rng rng(seed);
  const std::size_t n = deltas.size();
  const double c0 = deltas[0];
  std::vector<double> means(resamples);
  for (auto& m : means) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += deltas[rng.below(n)] - c0;
    m = c0 + acc / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  auto quantile = [&](double p) {
    const double h = static_cast<double>(resamples - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, resamples - 1);
    const double f = h - static_cast<double>(lo);
    return f == 0.0 ? means[lo] : means[lo] + f * (means[hi] - means[lo]);
  };
  return {quantile(alpha / 2.0), quantile(1.0 - alpha / 2.0)};
}

nlohmann::json OlsResult::to_json() const {
  nlohmann::json terms = nlohmann::json::array();
  for (std::size_t i = 0; i < names.size(); ++i)
    terms.push_back({{"term", names[i]}, {"coef", coef[i]}, {"se", se[i]}, {"t", t[i]}});
  return {{"terms", terms}, {"r2", r2}, {"n", n}};
}

OlsResult ols(const Matrix& x, std::span<const double> y, std::vector<std::string> names) {
  const std::size_t n = x.rows(), p = x.cols();
  if (y.size() != n) throw Error(ErrorCode::kGeometry, "response length != design rows");
  if (names.size() != p) throw Error(ErrorCode::kGeometry, "one name per design column required");
  if (n <= p) throw Error(ErrorCode::kSingularDesign, "need more rows than predictors");
  if (!x.all_finite() || !all_finite(y)) throw Error(ErrorCode::kNonFinite, "non-finite regression input");
  const QrFactors qr = qr_orthonormal_basis(x);
  if (qr.dependent_column)
    throw Error(ErrorCode::kSingularDesign, "design column '" + names[*qr.dependent_column] + "' is collinear");
  for (std::size_t i = 0; i < p; ++i)
    if (std::abs(qr.r(i, i)) < 1e-10 * x.frobenius_norm())
      throw Error(ErrorCode::kSingularDesign, "design column '" + names[i] + "' is collinear");
  const Vector qty = matvec_transposed(qr.q, y);
  // back substitution R β = Qᵀy
  Vector beta(p);
  for (std::size_t i = p; i-- > 0;) {
    double acc = qty[i];
    for (std::size_t j = i + 1; j < p; ++j) acc -= qr.r(i, j) * beta[j];
    beta[i] = acc / qr.r(i, i);
  }
  // R⁻¹ by columns, then diag((RᵀR)⁻¹) = row norms² of R⁻¹
  Matrix rinv(p, p);
  for (std::size_t c = 0; c < p; ++c)
    for (std::size_t i = p; i-- > 0;) {
      double acc = i == c ? 1.0 : 0.0;
      for (std::size_t j = i + 1; j < p; ++j) acc -= qr.r(i, j) * rinv(j, c);
      rinv(i, c) = acc / qr.r(i, i);
    }
  const Vector fitted = matvec(x, beta);
  double rss = 0.0, tss = 0.0;
  const double ybar = mean_of(y);
  for (std::size_t i = 0; i < n; ++i) {
    rss += (y[i] - fitted[i]) * (y[i] - fitted[i]);
    tss += (y[i] - ybar) * (y[i] - ybar);
  }
  const double sigma2 = rss / static_cast<double>(n - p);
  OlsResult out;
  out.names = std::move(names);
  out.coef = beta;
  out.n = n;
  out.r2 = tss > 0.0 ? 1.0 - rss / tss : 1.0;
  for (std::size_t i = 0; i < p; ++i) {
    double v = 0.0;
    for (std::size_t c = 0; c < p; ++c) v += rinv(i, c) * rinv(i, c);
    const double se = std::sqrt(sigma2 * v);
    out.se.push_back(se);
    out.t.push_back(se > 0.0 ? beta[i] / se : (beta[i] == 0.0 ? 0.0 : std::copysign(INFINITY, beta[i])));
  }
  return out;
}

OlsResult ols_decoupling(const std::vector<DecouplingRow>& rows) {
  Matrix x(rows.size(), 4);
  Vector y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = rows[i].similarity;
    x(i, 2) = rows[i].hsr;
    x(i, 3) = rows[i].length;
    y[i] = rows[i].history_free_prob;
  }
  return ols(x, y, {"intercept", "similarity", "hsr", "length"});
}

double unigram_f1(const Tokens& a, const Tokens& b) {
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  std::map<std::string, std::size_t> ca, cb;
  for (const auto& t : a) ++ca[t];
  for (const auto& t : b) ++cb[t];
  std::size_t overlap = 0;
  for (const auto& [t, n] : ca)
    if (auto it = cb.find(t); it != cb.end()) overlap += std::min(n, it->second);
  if (overlap == 0) return 0.0;
  const double p = static_cast<double>(overlap) / static_cast<double>(a.size());
  const double r = static_cast<double>(overlap) / static_cast<double>(b.size());
  return 2.0 * p * r / (p + r);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorCode::kInvalidArgument, "spearman needs two equal lists of >= 2");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = mean_of(rx), my = mean_of(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::kZeroVariance, "spearman of a constant list");
  return sxy / std::sqrt(sxx * syy);
}

double attention_entropy(std::span<const double> w) {
  double h = 0.0;
  for (double p : w)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

std::vector<double> attention_diffusion(const GenerationTrace& trace, std::span<const std::size_t> steps) {
  std::vector<double> out;
  for (std::size_t s : steps) {
    if (s >= trace.cross_attention.size()) throw Error(ErrorCode::kInvalidArgument, "step beyond the trace");
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& layer : trace.cross_attention[s])
      for (const auto& head : layer) {
        acc += attention_entropy(head);
        ++n;
      }
    if (n == 0) throw Error(ErrorCode::kInvalidArgument, "trace step has no attention maps");
    out.push_back(acc / static_cast<double>(n));
  }
  return out;
}

}  // namespace sdls
