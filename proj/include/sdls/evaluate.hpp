#pragma once

// Joins sweep outputs to references and baseline rows and produces the
// operating-point table.

#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdls/metrics.hpp"
#include "sdls/steering.hpp"

namespace sdls {

struct CaseMetric {
  std::string image_id;
  double hsr = 0.0;  // empty generations count as 0
  std::size_t hsc = 0;
  double judge = 0.0;
  double example_f1 = 0.0;
  std::size_t length = 0;
  Tokens tokens;
};

struct EvalOptions {
  std::size_t bootstrap_resamples = 10000;
  std::uint64_t seed = 7;
};

struct EvalResult {
  OperatingPointRow baseline;
  std::vector<OperatingPointRow> rows;  // one per non-failed condition, sweep order
  std::optional<OperatingPointRow> selected;
  std::vector<std::string> failed_conditions;
  std::map<std::string, std::vector<CaseMetric>> cases;  // "baseline" plus each condition id
};

EvalResult evaluate_sweep(const SweepResult& sweep, const std::vector<EvalCase>& refs, const CueDictionary& dict,
                          const FindingLexicon& lexicon, const Judge& judge, const EvalOptions& options = {});

/// Rows restricted to one vector label and strategy.
std::vector<OperatingPointRow> rows_for(const EvalResult& r, const std::string& vector_label, Strategy s);

/// Regression of the judge's history-free probability on similarity to the
/// baseline output, HSR and length, pooled over every condition row.
OlsResult decoupling_regression(const EvalResult& r);

void write_case_metrics_csv(const std::filesystem::path& path, const EvalResult& r,
                            const nlohmann::json& provenance = nullptr);
void write_operating_points_csv(const std::filesystem::path& path, const EvalResult& r,
                                const nlohmann::json& provenance = nullptr);
nlohmann::json row_to_json(const OperatingPointRow& row);
nlohmann::json eval_summary(const EvalResult& r);

}  // namespace sdls
