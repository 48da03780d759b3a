#include "sdls/evaluate.hpp"

#include <cmath>
#include <fstream>
#include <unordered_map>

#include "sdls/csv.hpp"
#include "sdls/error.hpp"

namespace sdls {

namespace {

struct Scored {
  std::vector<CaseMetric> cases;
  F1Scores f1;
  double mean_hsr = 0.0;
  double mean_judge = 0.0;
};

Scored score(const std::vector<CaseOutput>& outputs, const std::vector<EvalCase>& refs,
             const std::string& condition, const CueDictionary& dict, const FindingLexicon& lexicon,
             const Judge& judge) {
  std::unordered_map<std::string, const CaseOutput*> by_id;
  for (const auto& o : outputs) by_id[o.image_id] = &o;
  Scored s;
  std::vector<std::vector<bool>> pred, ref;
  std::vector<double> h, j;
  for (const auto& r : refs) {
    const auto it = by_id.find(r.image_id);
    if (it == by_id.end()) throw Error(ErrorCode::kPairing, condition + ": no output for " + r.image_id);
    const Tokens& toks = it->second->tokens;
    CaseMetric m;
    m.image_id = r.image_id;
    m.hsr = toks.empty() ? 0.0 : hsr(toks, dict);
    m.hsc = hsc(toks, dict);
    m.judge = judge.prob(r.image_id, condition, toks);
    pred.push_back(label_findings(toks, lexicon));
    ref.push_back(label_findings(r.reference.tokens, lexicon));
    m.example_f1 = example_f1(pred.back(), ref.back());
    m.length = toks.size();
    m.tokens = toks;
    h.push_back(m.hsr);
    j.push_back(m.judge);
    s.cases.push_back(std::move(m));
  }
  s.f1 = f1_from_labels(pred, ref);
  s.mean_hsr = mean_of(h);
  s.mean_judge = mean_of(j);
  return s;
}

std::string num(double x) { return format_lambda(x); }

}  // namespace

EvalResult evaluate_sweep(const SweepResult& sweep, const std::vector<EvalCase>& refs, const CueDictionary& dict,
                          const FindingLexicon& lexicon, const Judge& judge, const EvalOptions& options) {
  if (refs.empty()) throw Error(ErrorCode::kEmptyCorpus, "no reference cases");
  EvalResult out;
  const Scored base = score(sweep.baseline, refs, "baseline", dict, lexicon, judge);
  out.baseline.condition_id = "baseline";
  out.baseline.mean_hsr = base.mean_hsr;
  out.baseline.mean_judge = base.mean_judge;
  out.baseline.macro_f1 = base.f1.macro;
  out.baseline.micro_f1 = base.f1.micro;
  out.cases["baseline"] = base.cases;

  for (const auto& run : sweep.conditions) {
    if (run.failed) {
      out.failed_conditions.push_back(run.condition.id);
      continue;
    }
    const Scored s = score(run.outputs, refs, run.condition.id, dict, lexicon, judge);
    OperatingPointRow row;
    row.condition_id = run.condition.id;
    row.vector = run.condition.vector_label;
    row.strategy = std::string(strategy_name(run.condition.strategy));
    row.lambda = run.condition.lambda;
    row.mean_hsr = s.mean_hsr;
    row.delta_hsr = base.mean_hsr - s.mean_hsr;
    row.mean_judge = s.mean_judge;
    row.delta_judge = base.mean_judge - s.mean_judge;
    row.macro_f1 = s.f1.macro;
    row.micro_f1 = s.f1.micro;
    row.passes_selection = passes_selection(row.macro_f1, out.baseline.macro_f1, row.delta_hsr);
    std::vector<double> dh, df;
    for (std::size_t i = 0; i < s.cases.size(); ++i) {
      dh.push_back(base.cases[i].hsr - s.cases[i].hsr);
      df.push_back(s.cases[i].example_f1 - base.cases[i].example_f1);
    }
    row.ci_delta_hsr = paired_bootstrap_ci(dh, options.bootstrap_resamples, 0.05, options.seed);
    row.ci_delta_f1 = paired_bootstrap_ci(df, options.bootstrap_resamples, 0.05, options.seed);
    out.rows.push_back(row);
    out.cases[row.condition_id] = s.cases;
  }
  out.selected = select_operating_point(out.rows);
  return out;
}

std::vector<OperatingPointRow> rows_for(const EvalResult& r, const std::string& vector_label, Strategy s) {
  std::vector<OperatingPointRow> out;
  for (const auto& row : r.rows)
    if (row.vector == vector_label && row.strategy == strategy_name(s)) out.push_back(row);
  return out;
}

OlsResult decoupling_regression(const EvalResult& r) {
  const auto& base = r.cases.at("baseline");
  std::vector<DecouplingRow> rows;
  for (const auto& row : r.rows) {
    const auto& cs = r.cases.at(row.condition_id);
    for (std::size_t i = 0; i < cs.size(); ++i)
      rows.push_back({1.0 - cs[i].judge, unigram_f1(cs[i].tokens, base[i].tokens), cs[i].hsr,
                      static_cast<double>(cs[i].length)});
  }
  return ols_decoupling(rows);
}

void write_case_metrics_csv(const std::filesystem::path& path, const EvalResult& r, const nlohmann::json& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  if (!provenance.is_null()) out << "# provenance: " << provenance.dump() << '\n';
  out << "condition_id,image_id,hsr,hsc,judge_prob,example_f1,length\n";
  auto emit = [&](const std::string& id) {
    for (const auto& c : r.cases.at(id))
      out << csv_row({id, c.image_id, num(c.hsr), std::to_string(c.hsc), num(c.judge), num(c.example_f1),
                      std::to_string(c.length)})
          << '\n';
  };
  emit("baseline");
  for (const auto& row : r.rows) emit(row.condition_id);
}

void write_operating_points_csv(const std::filesystem::path& path, const EvalResult& r,
                                const nlohmann::json& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  if (!provenance.is_null()) out << "# provenance: " << provenance.dump() << '\n';
  out << "condition_id,vector,strategy,lambda,mean_hsr,delta_hsr,mean_judge,delta_judge,macro_f1,micro_f1,"
         "passes_selection,delta_hsr_lo,delta_hsr_hi,delta_f1_lo,delta_f1_hi,selected\n";
  auto emit = [&](const OperatingPointRow& x, bool selected) {
    out << csv_row({x.condition_id, x.vector, x.strategy, num(x.lambda), num(x.mean_hsr), num(x.delta_hsr),
                    num(x.mean_judge), num(x.delta_judge), num(x.macro_f1), num(x.micro_f1),
                    x.passes_selection ? "1" : "0", num(x.ci_delta_hsr.lo), num(x.ci_delta_hsr.hi),
                    num(x.ci_delta_f1.lo), num(x.ci_delta_f1.hi), selected ? "1" : "0"})
        << '\n';
  };
  emit(r.baseline, false);
  for (const auto& row : r.rows) emit(row, r.selected && r.selected->condition_id == row.condition_id);
}

nlohmann::json row_to_json(const OperatingPointRow& x) {
  return {{"condition_id", x.condition_id},
          {"vector", x.vector},
          {"strategy", x.strategy},
          {"lambda", x.lambda},
          {"mean_hsr", x.mean_hsr},
          {"delta_hsr", x.delta_hsr},
          {"mean_judge", x.mean_judge},
          {"delta_judge", x.delta_judge},
          {"macro_f1", x.macro_f1},
          {"micro_f1", x.micro_f1},
          {"passes_selection", x.passes_selection},
          {"ci_delta_hsr", {x.ci_delta_hsr.lo, x.ci_delta_hsr.hi}},
          {"ci_delta_f1", {x.ci_delta_f1.lo, x.ci_delta_f1.hi}}};
}

nlohmann::json eval_summary(const EvalResult& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back(row_to_json(row));
  return {{"baseline", row_to_json(r.baseline)},
          {"conditions", rows},
          {"failed_conditions", r.failed_conditions},
          {"selected", r.selected ? row_to_json(*r.selected) : nlohmann::json(nullptr)},
          {"verdict", r.selected ? "operating point selected" : "no condition passes the selection rule"},
          {"bootstrap", {{"method", "percentile"}, {"alpha", 0.05}}}};
}

}  // namespace sdls
