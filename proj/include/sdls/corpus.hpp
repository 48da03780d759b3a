#pragma once

// Synthetic paired-report corpus: cue dictionary, tokenisation, the planted
// finding lexicon, generation, class assignment and JSONL persistence.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace sdls {

using Tokens = std::vector<std::string>;

/// Lowercases, splits on whitespace and peels trailing punctuation
/// (".,;:!?") off each word into separate tokens.
Tokens tokenize(std::string_view text);
std::string join_tokens(const Tokens& tokens);

enum class CueCategory { kStability = 0, kComparison = 1, kProgression = 2, kImprovement = 3 };
inline constexpr std::array<CueCategory, 4> kAllCategories = {
    CueCategory::kStability, CueCategory::kComparison, CueCategory::kProgression,
    CueCategory::kImprovement};

std::string_view category_name(CueCategory c);
CueCategory parse_category(std::string_view name);

struct CuePhrase {
  Tokens tokens;
  CueCategory category;
};

class CueDictionary {
 public:
  /// The shipped lists (four categories plus negative phrases).
  static CueDictionary default_dictionary();
  static CueDictionary from_json(const nlohmann::json& j);
  static CueDictionary load(const std::filesystem::path& path);

  CueDictionary(std::vector<CuePhrase> phrases, std::vector<Tokens> negatives);

  nlohmann::json to_json() const;

  const std::vector<CuePhrase>& phrases() const noexcept { return phrases_; }
  const std::vector<Tokens>& negatives() const noexcept { return negatives_; }
  std::vector<const CuePhrase*> phrases_in(CueCategory c) const;
  /// Tokens that are single-token cue phrases (unambiguous cue words).
  std::vector<std::string> single_token_cues() const;

 private:
  std::vector<CuePhrase> phrases_;
  std::vector<Tokens> negatives_;
};

struct CueSpan {
  std::size_t begin = 0;  // token index
  std::size_t end = 0;    // one past the last token
  CueCategory category = CueCategory::kStability;
  std::size_t phrase_index = 0;
};

/// Marks tokens covered by any negative phrase.
std::vector<bool> negative_mask(const Tokens& tokens, const CueDictionary& dict);
/// Every occurrence of every cue phrase as a contiguous token run that does
/// not touch a token excluded by a negative phrase. Sorted by (begin, end).
std::vector<CueSpan> find_cue_spans(const Tokens& tokens, const CueDictionary& dict);

struct Report {
  std::string image_id;
  Tokens tokens;
  friend bool operator==(const Report&, const Report&) = default;
};

enum class EditClass { kMinimal, kGeneral };
std::string_view edit_class_name(EditClass e);

struct PairedReport {
  std::string image_id;
  Report r_hist;
  Report r_curr;
  EditClass edit_class = EditClass::kGeneral;
  std::optional<CueCategory> semantic_class;
  friend bool operator==(const PairedReport&, const PairedReport&) = default;
};

struct EvalCase {
  std::string image_id;
  Report reference;       // cue-free current report
  bool had_history = false;  // whether the generator path would have added history
  friend bool operator==(const EvalCase&, const EvalCase&) = default;
};

struct CorpusConfig {
  std::size_t n_pairs = 5000;
  double history_fraction = 0.76;
  std::size_t finding_lexicon_size = 40;
  std::size_t label_set_size = 14;
  std::uint64_t seed = 7;
  std::size_t n_eval = 300;
  /// Probability that an opacity-class finding is decorated with a
  /// progression cue in a with-history report.
  double entanglement = 0.4;
  bool minimal_subset = true;

  void validate() const;
  nlohmann::json to_json() const;
  static CorpusConfig from_json(const nlohmann::json& j);
};

struct Corpus {
  CorpusConfig config;
  std::vector<PairedReport> pairs;
  std::vector<EvalCase> eval;
};

// ---------------------------------------------------------------------------
// Planted findings.

struct FindingLabel {
  std::string name;
  Tokens terms;
  bool opacity_class = false;
};

struct FindingLexicon {
  std::vector<FindingLabel> labels;
  std::size_t term_count() const;
  /// label index for a term, if the token is a lexicon term.
  std::optional<std::size_t> label_of(std::string_view token) const;
};

/// First `label_set_size` labels of the built-in 14-label list, with terms
/// taken round-robin until `finding_lexicon_size` terms are selected.
FindingLexicon make_lexicon(std::size_t label_set_size, std::size_t finding_lexicon_size);

inline constexpr std::array<std::string_view, 5> kSeverities = {"", "mild", "small", "moderate",
                                                                "large"};
inline constexpr std::array<std::string_view, 4> kLateralities = {"", "left", "right",
                                                                  "bilateral"};

struct PlantedFinding {
  std::size_t label = 0;
  std::size_t term = 0;
  std::size_t severity = 0;    // index into kSeverities
  std::size_t laterality = 0;  // index into kLateralities
};

/// Everything the synthetic image shows; derived from the image id alone.
struct ImageSpec {
  std::vector<PlantedFinding> findings;  // empty means "no finding"
  std::size_t normal_term = 0;           // term used when findings is empty
  std::optional<std::size_t> negated_label;
};

ImageSpec image_spec(std::string_view image_id, const FindingLexicon& lexicon);

/// The cue-free current report an image deterministically maps to.
Tokens current_report(const ImageSpec& spec, const FindingLexicon& lexicon);

/// All tokens the generator can emit plus every dictionary token.
Tokens generator_inventory(const FindingLexicon& lexicon, const CueDictionary& dict);

// ---------------------------------------------------------------------------

Corpus gen_corpus(const CorpusConfig& config, const CueDictionary& dict);

/// Category of the longest cue phrase in r_hist; ties by category order.
CueCategory assign_semantic_class(const PairedReport& pair, const CueDictionary& dict);

std::size_t token_edit_distance(const Tokens& a, const Tokens& b);

/// Validates every PairedReport invariant; throws Error(kInvariant) naming it.
void validate_pair(const PairedReport& pair, const CueDictionary& dict);

nlohmann::json pair_to_json(const PairedReport& pair);
PairedReport pair_from_json(const nlohmann::json& j);

/// JSONL, one pair per line. An optional leading {"provenance": ...} line is
/// written when `provenance` is not null.
void save_pairs(const std::filesystem::path& path, const std::vector<PairedReport>& pairs,
                const nlohmann::json& provenance = nullptr);
std::vector<PairedReport> load_corpus(const std::filesystem::path& path, const CueDictionary& dict);

void save_eval(const std::filesystem::path& path, const std::vector<EvalCase>& eval,
               const nlohmann::json& provenance = nullptr);
std::vector<EvalCase> load_eval(const std::filesystem::path& path, const CueDictionary& dict);

}  // namespace sdls
