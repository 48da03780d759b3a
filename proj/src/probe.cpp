#include "sdls/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "sdls/csv.hpp"
#include "sdls/error.hpp"

namespace sdls {

std::vector<CurvePoint> delta_logit_curve(const ToyModel& model, const InjectionPlan& plan,
                                          const std::vector<double>& lambdas, const std::vector<int>& cue_ids,
                                          const std::vector<ProbeInput>& probes) {
  if (probes.empty()) throw Error(ErrorCode::kInvalidArgument, "no probe inputs");
  if (cue_ids.empty()) throw Error(ErrorCode::kInvalidArgument, "no cue token ids");
  std::vector<std::vector<std::vector<double>>> base;
  for (const auto& p : probes) {
    if (p.ids.empty()) throw Error(ErrorCode::kInvalidArgument, "empty probe for " + p.image_id);
    base.push_back(teacher_forced_logits(model, p.image_id, p.ids, nullptr));
  }
  std::vector<CurvePoint> curve;
  for (double lambda : lambdas) {
    InjectionPlan pl = plan;
    pl.lambda = lambda;
    const HookProgram prog = compile_plan(pl, model.config());
    std::vector<double> per_probe;
    for (std::size_t i = 0; i < probes.size(); ++i) {
      const auto logits = teacher_forced_logits(model, probes[i].image_id, probes[i].ids, &prog);
      double acc = 0.0;
      for (std::size_t t = 0; t < logits.size(); ++t)
        for (int c : cue_ids) acc += logits[t][static_cast<std::size_t>(c)] - base[i][t][static_cast<std::size_t>(c)];
      per_probe.push_back(acc / static_cast<double>(logits.size() * cue_ids.size()));
    }
    CurvePoint pt;
    pt.lambda = lambda;
    pt.n = per_probe.size();
    pt.mean_delta_logit = mean_of(per_probe);
    double ss = 0.0;
    for (double x : per_probe) ss += (x - pt.mean_delta_logit) * (x - pt.mean_delta_logit);
    pt.stderr_ = pt.n > 1 ? std::sqrt(ss / static_cast<double>(pt.n - 1) / static_cast<double>(pt.n)) : 0.0;
    curve.push_back(pt);
  }
  return curve;
}

std::vector<int> cue_token_ids(const Vocabulary& vocab, const CueDictionary& dict) {
  std::vector<int> ids;
  for (const auto& t : dict.single_token_cues())
    if (auto id = vocab.find(t)) ids.push_back(*id);
  return ids;
}

AttentionProbe attention_probe(const ToyModel& model, const std::vector<std::string>& image_ids,
                               const CueDictionary& dict, const FindingLexicon& lexicon, const HookProgram* program) {
  DecodeConfig greedy;
  greedy.mode = DecodeConfig::Mode::kGreedy;
  AttentionProbe out;
  double cue_sum = 0.0, finding_sum = 0.0;
  for (const auto& id : image_ids) {
    const GenerationTrace trace = generate(model, id, program, greedy);
    // tokens before EOS; specials never appear earlier
    std::size_t n = trace.tokens.size();
    if (n && trace.tokens.back() == Vocabulary::kEos) --n;
    Tokens toks;
    for (std::size_t t = 0; t < n; ++t) toks.push_back(model.vocab().token(trace.tokens[t]));
    std::vector<bool> is_cue(n, false);
    for (const auto& s : find_cue_spans(toks, dict))
      for (std::size_t i = s.begin; i < s.end; ++i) is_cue[i] = true;
    for (std::size_t t = 0; t < n; ++t) {
      const bool finding = lexicon.label_of(toks[t]).has_value();
      if (!is_cue[t] && !finding) continue;
      const std::size_t step[] = {t};
      const double h = attention_diffusion(trace, step)[0];
      if (is_cue[t]) {
        cue_sum += h;
        ++out.cue_tokens;
        out.per_token.emplace_back("cue", h);
      } else {
        finding_sum += h;
        ++out.finding_tokens;
        out.per_token.emplace_back("finding", h);
      }
    }
  }
  if (out.cue_tokens == 0 || out.finding_tokens == 0)
    throw Error(ErrorCode::kDegenerate, "attention probe saw no cue or no finding emissions");
  out.mean_cue_entropy = cue_sum / static_cast<double>(out.cue_tokens);
  out.mean_finding_entropy = finding_sum / static_cast<double>(out.finding_tokens);
  return out;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path, const nlohmann::json& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  if (!provenance.is_null()) out << "# provenance: " << provenance.dump() << '\n';
  return out;
}

}  // namespace

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve,
                     const nlohmann::json& provenance) {
  auto out = open_csv(path, provenance);
  out << "lambda,mean_delta_logit,stderr,n\n";
  for (const auto& p : curve)
    out << csv_row({format_lambda(p.lambda), format_lambda(p.mean_delta_logit), format_lambda(p.stderr_),
                    std::to_string(p.n)})
        << '\n';
}

void write_attention_csv(const std::filesystem::path& path, const AttentionProbe& probe,
                         const nlohmann::json& provenance) {
  auto out = open_csv(path, provenance);
  out << "kind,entropy\n";
  for (const auto& [kind, h] : probe.per_token) out << csv_row({kind, format_lambda(h)}) << '\n';
}

nlohmann::json trace_to_json(const GenerationTrace& trace, const Vocabulary& vocab, std::size_t top_k) {
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t t = 0; t < trace.tokens.size(); ++t) {
    nlohmann::json step = {{"token", vocab.token(trace.tokens[t])}};
    if (t < trace.step_logits.size()) {
      const auto& logits = trace.step_logits[t];
      std::vector<std::size_t> order(logits.size());
      std::iota(order.begin(), order.end(), 0);
      const std::size_t k = std::min(top_k, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
      nlohmann::json top = nlohmann::json::array();
      for (std::size_t i = 0; i < k; ++i)
        top.push_back({{"token", vocab.token(static_cast<int>(order[i]))}, {"logit", logits[order[i]]}});
      step["top_logits"] = std::move(top);
    }
    if (t < trace.cross_attention.size()) {
      const std::size_t at[] = {t};
      step["cross_attention_entropy"] = attention_diffusion(trace, at)[0];
    }
    steps.push_back(std::move(step));
  }
  return {{"tokens", vocab.decode(trace.tokens)}, {"steps", std::move(steps)}};
}

}  // namespace sdls
