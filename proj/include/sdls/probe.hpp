#pragma once

// Mechanistic probes on a trained model: dose-response of cue-token logits
// and cross-attention entropy at cue vs. finding emissions.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdls/metrics.hpp"
#include "sdls/steering.hpp"

namespace sdls {

struct ProbeInput {
  std::string image_id;
  std::vector<int> ids;  // teacher-forced continuation (usually a baseline output)
};

struct CurvePoint {
  double lambda = 0.0;
  double mean_delta_logit = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

/// For each λ, the cue-token logit shift against the unsteered model on
/// identical teacher-forced prefixes, averaged over steps and cue ids and
/// then over probes. `plan.lambda` is replaced by each grid value.
std::vector<CurvePoint> delta_logit_curve(const ToyModel& model, const InjectionPlan& plan,
                                          const std::vector<double>& lambdas, const std::vector<int>& cue_ids,
                                          const std::vector<ProbeInput>& probes);

/// Vocabulary ids of single-token cue phrases.
std::vector<int> cue_token_ids(const Vocabulary& vocab, const CueDictionary& dict);

struct AttentionProbe {
  double mean_cue_entropy = 0.0;
  double mean_finding_entropy = 0.0;
  std::size_t cue_tokens = 0;
  std::size_t finding_tokens = 0;
  std::vector<std::pair<std::string, double>> per_token;  // (token kind, entropy) rows for CSV
};

/// Greedy-decodes each image and averages entropy at cue-span tokens and at
/// finding-term tokens.
AttentionProbe attention_probe(const ToyModel& model, const std::vector<std::string>& image_ids,
                               const CueDictionary& dict, const FindingLexicon& lexicon,
                               const HookProgram* program = nullptr);

/// Header lambda,mean_delta_logit,stderr,n.
void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve,
                     const nlohmann::json& provenance = nullptr);
/// Header kind,entropy (one row per probed emission).
void write_attention_csv(const std::filesystem::path& path, const AttentionProbe& probe,
                         const nlohmann::json& provenance = nullptr);

/// Tokens, top-k logits per step and per-step mean cross-attention entropy.
nlohmann::json trace_to_json(const GenerationTrace& trace, const Vocabulary& vocab, std::size_t top_k = 5);

}  // namespace sdls
