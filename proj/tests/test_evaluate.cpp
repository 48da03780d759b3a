#include <gtest/gtest.h>

#include <filesystem>

#include "sdls/error.hpp"
#include "sdls/evaluate.hpp"
#include "sdls/probe.hpp"

using namespace sdls;
namespace fs = std::filesystem;

namespace {

// Hand-built sweep: one condition emits the reference, one adds a cue,
// one drops every finding.
struct Table {
  CueDictionary dict = CueDictionary::default_dictionary();
  FindingLexicon lex = make_lexicon(14, 40);
  std::vector<EvalCase> refs;
  SweepResult sweep;

  Table() {
    const std::string a = lex.labels[0].terms[0], b = lex.labels[1].terms[0];
    refs = {{"i0", {"i0", tokenize("small " + a + " .")}, true},
            {"i1", {"i1", tokenize("large " + b + " .")}, false},
            {"i2", {"i2", tokenize(a + " and " + b + " .")}, true}};
    for (const auto& r : refs) {
      Tokens cued = r.reference.tokens;
      cued.insert(cued.begin(), "stable");
      sweep.baseline.push_back({r.image_id, cued, true, ""});
    }
    auto add = [&](double lambda, auto make) {
      ConditionRun run;
      run.condition = {condition_id("v", Strategy::kSteerFairAttentionOutput, lambda), "v",
                       Strategy::kSteerFairAttentionOutput, lambda};
      for (const auto& r : refs) run.outputs.push_back({r.image_id, make(r), true, ""});
      sweep.conditions.push_back(run);
    };
    add(-0.1, [](const EvalCase& r) { return r.reference.tokens; });
    add(-0.2, [](const EvalCase& r) {
      Tokens t = r.reference.tokens;
      t.insert(t.begin(), {"compared", "to", "prior"});
      return t;
    });
    add(-0.3, [](const EvalCase&) { return tokenize("lungs clear ."); });
  }
};

}  // namespace

TEST(Evaluate, RowsSelectionAndBaseline) {
  Table t;
  const SyntheticJudge judge(t.dict);
  const EvalResult r = evaluate_sweep(t.sweep, t.refs, t.dict, t.lex, judge, {500, 3});
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.baseline.delta_hsr, 0.0);
  EXPECT_EQ(r.baseline.macro_f1, 1.0);
  EXPECT_GT(r.rows[0].delta_hsr, 0.0);
  EXPECT_EQ(r.rows[0].macro_f1, 1.0);
  EXPECT_TRUE(r.rows[0].passes_selection);
  EXPECT_LT(r.rows[1].delta_hsr, 0.0);
  EXPECT_FALSE(r.rows[1].passes_selection);
  EXPECT_LT(r.rows[2].macro_f1, 1.0);
  EXPECT_FALSE(r.rows[2].passes_selection);
  ASSERT_TRUE(r.selected);
  EXPECT_EQ(r.selected->condition_id, r.rows[0].condition_id);
  EXPECT_LE(r.rows[0].ci_delta_hsr.lo, r.rows[0].delta_hsr);
  EXPECT_GE(r.rows[0].ci_delta_hsr.hi, r.rows[0].delta_hsr);
  EXPECT_EQ(r.cases.at("baseline").size(), 3u);
  EXPECT_EQ(rows_for(r, "v", Strategy::kSteerFairAttentionOutput).size(), 3u);
  EXPECT_TRUE(rows_for(r, "v", Strategy::kGlobalInjection).empty());
}

TEST(Evaluate, EmptyGenerationCountsAsZeroAndFailuresAreSkipped) {
  Table t;
  t.sweep.conditions[0].outputs[1].tokens.clear();
  t.sweep.conditions[2].failed = true;
  t.sweep.conditions[2].error = "boom";
  const SyntheticJudge judge(t.dict);
  const EvalResult r = evaluate_sweep(t.sweep, t.refs, t.dict, t.lex, judge, {200, 3});
  EXPECT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.failed_conditions, (std::vector<std::string>{t.sweep.conditions[2].condition.id}));
  EXPECT_EQ(r.cases.at(r.rows[0].condition_id)[1].hsr, 0.0);
}

TEST(Evaluate, OutputsWrite) {
  Table t;
  const SyntheticJudge judge(t.dict);
  const EvalResult r = evaluate_sweep(t.sweep, t.refs, t.dict, t.lex, judge, {200, 3});
  const fs::path dir = fs::temp_directory_path() / "sdls_tests";
  fs::create_directories(dir);
  write_case_metrics_csv(dir / "cases.csv", r);
  write_operating_points_csv(dir / "ops.csv", r, nlohmann::json{{"seed", 3}});
  EXPECT_GT(fs::file_size(dir / "cases.csv"), 0u);
  const nlohmann::json s = eval_summary(r);
  EXPECT_EQ(s.at("selected").at("condition_id"), r.rows[0].condition_id);
  const OlsResult d = decoupling_regression(r);
  EXPECT_EQ(d.n, 9u);
}
