#pragma once

// Suppression and fidelity metrics, the operating-point selection rule and
// the statistics used to summarise sweeps.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdls/corpus.hpp"
#include "sdls/linalg.hpp"
#include "sdls/model.hpp"

namespace sdls {

/// Fraction of tokens covered by cue spans (negative phrases excluded first).
double hsr(const Tokens& report, const CueDictionary& dict);
/// Number of period-delimited sentences containing at least one cue span.
std::size_t hsc(const Tokens& report, const CueDictionary& dict);

double mean_of(std::span<const double> xs);
/// mean(baseline) − mean(method).
double delta_hsr(std::span<const double> baseline, std::span<const double> method);

// ---------------------------------------------------------------------------
// Judges

class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::string name() const = 0;
  /// Probability the report contains prior-comparison content.
  virtual double prob(const std::string& image_id, const std::string& condition, const Tokens& report) const = 0;
};

struct JudgeCoefficients {
  double intercept = -3.0;
  double hsr = 6.0;
  double hsc = 1.5;
  double length = -0.02;
};

/// Logistic over (hsr, hsc, token count) with frozen coefficients.
class SyntheticJudge : public Judge {
 public:
  SyntheticJudge(const CueDictionary& dict, JudgeCoefficients coef = {}) : dict_(&dict), coef_(coef) {}
  std::string name() const override { return "synthetic-logistic"; }
  double prob(const std::string& image_id, const std::string& condition, const Tokens& report) const override;
  double prob(const Tokens& report) const;

 private:
  const CueDictionary* dict_;
  JudgeCoefficients coef_;
};

/// Scores read from a CSV with header image_id,condition,score.
class ExternalJudge : public Judge {
 public:
  static ExternalJudge load(const std::filesystem::path& path);
  explicit ExternalJudge(std::map<std::pair<std::string, std::string>, double> scores) : scores_(std::move(scores)) {}
  std::string name() const override { return "external"; }
  double prob(const std::string& image_id, const std::string& condition, const Tokens& report) const override;

 private:
  std::map<std::pair<std::string, std::string>, double> scores_;
};

// ---------------------------------------------------------------------------
// Fidelity

/// Label i is positive iff a lexicon term of label i appears with no "no"
/// among the three preceding tokens of the same sentence.
std::vector<bool> label_findings(const Tokens& report, const FindingLexicon& lexicon);

struct F1Scores {
  double macro = 0.0;
  double micro = 0.0;
  std::size_t labels_scored = 0;  // labels present in pred or ref
};

/// Labels absent from both pred and ref are left out of the macro mean.
F1Scores f1_from_labels(const std::vector<std::vector<bool>>& pred, const std::vector<std::vector<bool>>& ref);
F1Scores fidelity_f1(const std::vector<Tokens>& pred, const std::vector<Tokens>& ref, const FindingLexicon& lexicon);
/// Per-case F1 over label sets (1 when both are empty).
double example_f1(const std::vector<bool>& pred, const std::vector<bool>& ref);

// ---------------------------------------------------------------------------
// Operating points

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct OperatingPointRow {
  std::string condition_id;
  std::string vector;
  std::string strategy;
  double lambda = 0.0;
  double mean_hsr = 0.0;
  double delta_hsr = 0.0;
  double mean_judge = 0.0;
  double delta_judge = 0.0;
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  bool passes_selection = false;
  Interval ci_delta_hsr;
  Interval ci_delta_f1;
};

bool passes_selection(double macro_f1, double baseline_macro_f1, double delta_hsr);

/// Among passing rows: max ΔHSR, then higher macro-F1, then smaller |λ|
/// (then condition id, so the choice is independent of row order).
std::optional<OperatingPointRow> select_operating_point(const std::vector<OperatingPointRow>& rows);

/// Same ordering with no pass filter: the row with the largest ΔHSR, i.e.
/// the best swept λ of a sweep.
std::optional<OperatingPointRow> strongest_suppression(const std::vector<OperatingPointRow>& rows);

// ---------------------------------------------------------------------------
// Statistics

/// Percentile bootstrap of the mean of paired deltas.
Interval paired_bootstrap_ci(std::span<const double> deltas, std::size_t resamples = 10000, double alpha = 0.05,
                             std::uint64_t seed = 7);

struct OlsResult {
  std::vector<std::string> names;
  Vector coef;
  Vector se;
  Vector t;
  double r2 = 0.0;
  std::size_t n = 0;
  nlohmann::json to_json() const;
};

/// Least squares via Householder QR. X is n×p and should include an
/// intercept column if one is wanted.
OlsResult ols(const Matrix& x, std::span<const double> y, std::vector<std::string> names);

struct DecouplingRow {
  double history_free_prob = 0.0;
  double similarity = 0.0;
  double hsr = 0.0;
  double length = 0.0;
};

/// history_free_prob ~ 1 + similarity + hsr + length
OlsResult ols_decoupling(const std::vector<DecouplingRow>& rows);

/// Unigram F1 between two token lists (bag-of-words overlap).
double unigram_f1(const Tokens& a, const Tokens& b);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

/// Shannon entropy (nats) of one attention distribution.
double attention_entropy(std::span<const double> weights);
/// Per requested step: entropy averaged over layers and heads.
std::vector<double> attention_diffusion(const GenerationTrace& trace, std::span<const std::size_t> steps);

}  // namespace sdls
