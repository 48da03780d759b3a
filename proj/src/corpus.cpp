#include "sdls/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sdls/error.hpp"
#include "sdls/rng.hpp"

namespace sdls {

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string word;
  auto flush = [&]() {
    if (word.empty()) return;
    std::vector<std::string> trailing;
    while (!word.empty() && std::string_view(".,;:!?").find(word.back()) != std::string_view::npos) {
      trailing.emplace_back(1, word.back());
      word.pop_back();
    }
    if (!word.empty()) out.push_back(word);
    out.insert(out.end(), trailing.rbegin(), trailing.rend());
    word.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return out;
}

std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::string_view category_name(CueCategory c) {
  switch (c) {
    case CueCategory::kStability: return "stability";
    case CueCategory::kComparison: return "comparison";
    case CueCategory::kProgression: return "progression";
    case CueCategory::kImprovement: return "improvement";
  }
  return "stability";
}

CueCategory parse_category(std::string_view name) {
  for (CueCategory c : kAllCategories)
    if (category_name(c) == name) return c;
  throw Error(ErrorCode::kParse, "unknown cue category '" + std::string(name) + "'");
}

std::string_view edit_class_name(EditClass e) {
  return e == EditClass::kMinimal ? "minimal" : "general";
}

// ---------------------------------------------------------------------------
// Cue dictionary

CueDictionary CueDictionary::default_dictionary() {
  const std::vector<std::pair<CueCategory, std::vector<std::string_view>>> lists = {
      {CueCategory::kStability,
       {"stable", "unchanged", "no change", "no significant change", "no interval change",
        "persistent", "remains", "similar", "chronic", "long-standing"}},
      {CueCategory::kComparison,
       {"prior", "previous", "compared with", "compared to", "since the previous", "again seen"}},
      {CueCategory::kProgression,
       {"worsened", "increased", "larger", "more", "progression", "development of",
        "now demonstrates"}},
      {CueCategory::kImprovement,
       {"improved", "decreased", "smaller", "less", "resolved", "resolution", "clearing"}},
  };
  std::vector<CuePhrase> phrases;
  for (const auto& [category, list] : lists)
    for (std::string_view p : list) phrases.push_back({tokenize(p), category});
  return CueDictionary(std::move(phrases), {tokenize("no prior"), tokenize("no previous")});
}

CueDictionary::CueDictionary(std::vector<CuePhrase> phrases, std::vector<Tokens> negatives)
    : phrases_(std::move(phrases)), negatives_(std::move(negatives)) {
  std::set<Tokens> seen;
  auto check = [](const Tokens& t, std::string_view what) {
    if (t.empty()) throw Error(ErrorCode::kInvariant, std::string(what) + " phrase is empty");
    for (const auto& tok : t)
      for (char ch : tok)
        if (std::isupper(static_cast<unsigned char>(ch)))
          throw Error(ErrorCode::kInvariant, std::string(what) + " phrase '" + join_tokens(t) +
                                                 "' is not lowercase");
  };
  for (const auto& p : phrases_) {
    check(p.tokens, "cue");
    if (!seen.insert(p.tokens).second)
      throw Error(ErrorCode::kInvariant,
                  "cue phrase '" + join_tokens(p.tokens) + "' appears more than once");
  }
  std::set<Tokens> neg_seen;
  for (const auto& n : negatives_) {
    check(n, "negative");
    if (!neg_seen.insert(n).second)
      throw Error(ErrorCode::kInvariant, "negative phrase '" + join_tokens(n) + "' duplicated");
  }
}

CueDictionary CueDictionary::from_json(const nlohmann::json& j) {
  try {
    std::vector<CuePhrase> phrases;
    const auto& cats = j.at("categories");
    for (CueCategory c : kAllCategories) {
      const std::string key(category_name(c));
      if (!cats.contains(key)) continue;
      for (const auto& p : cats.at(key)) phrases.push_back({tokenize(p.get<std::string>()), c});
    }
    for (const auto& [key, _] : cats.items()) parse_category(key);
    std::vector<Tokens> negatives;
    if (j.contains("negatives"))
      for (const auto& n : j.at("negatives")) negatives.push_back(tokenize(n.get<std::string>()));
    // Raw phrases must already be lowercase; tokenize() would hide that.
    for (const auto& [key, list] : cats.items())
      for (const auto& p : list) {
        const auto s = p.get<std::string>();
        if (std::any_of(s.begin(), s.end(), [](unsigned char ch) { return std::isupper(ch); }))
          throw Error(ErrorCode::kInvariant, "cue phrase '" + s + "' is not lowercase");
      }
    return CueDictionary(std::move(phrases), std::move(negatives));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("cue dictionary: ") + e.what());
  }
}

CueDictionary CueDictionary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

nlohmann::json CueDictionary::to_json() const {
  nlohmann::json cats = nlohmann::json::object();
  for (CueCategory c : kAllCategories) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto* p : phrases_in(c)) list.push_back(join_tokens(p->tokens));
    cats[std::string(category_name(c))] = list;
  }
  nlohmann::json negs = nlohmann::json::array();
  for (const auto& n : negatives_) negs.push_back(join_tokens(n));
  return {{"version", 1}, {"categories", cats}, {"negatives", negs}};
}

std::vector<const CuePhrase*> CueDictionary::phrases_in(CueCategory c) const {
  std::vector<const CuePhrase*> out;
  for (const auto& p : phrases_)
    if (p.category == c) out.push_back(&p);
  return out;
}

std::vector<std::string> CueDictionary::single_token_cues() const {
  std::vector<std::string> out;
  for (const auto& p : phrases_)
    if (p.tokens.size() == 1) out.push_back(p.tokens.front());
  return out;
}

namespace {

bool matches_at(const Tokens& tokens, std::size_t pos, const Tokens& phrase) {
  if (pos + phrase.size() > tokens.size()) return false;
  for (std::size_t k = 0; k < phrase.size(); ++k)
    if (tokens[pos + k] != phrase[k]) return false;
  return true;
}

}  // namespace

std::vector<bool> negative_mask(const Tokens& tokens, const CueDictionary& dict) {
  std::vector<bool> mask(tokens.size(), false);
  for (const auto& neg : dict.negatives())
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (matches_at(tokens, i, neg))
        for (std::size_t k = 0; k < neg.size(); ++k) mask[i + k] = true;
  return mask;
}

std::vector<CueSpan> find_cue_spans(const Tokens& tokens, const CueDictionary& dict) {
  const std::vector<bool> excluded = negative_mask(tokens, dict);
  std::vector<CueSpan> spans;
  const auto& phrases = dict.phrases();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (std::size_t p = 0; p < phrases.size(); ++p) {
      const Tokens& ph = phrases[p].tokens;
      if (!matches_at(tokens, i, ph)) continue;
      bool touches_excluded = false;
      for (std::size_t k = 0; k < ph.size(); ++k) touches_excluded |= excluded[i + k];
      if (touches_excluded) continue;
      spans.push_back({i, i + ph.size(), phrases[p].category, p});
    }
  }
  std::sort(spans.begin(), spans.end(), [](const CueSpan& a, const CueSpan& b) {
    return std::tie(a.begin, a.end, a.phrase_index) < std::tie(b.begin, b.end, b.phrase_index);
  });
  return spans;
}

CueCategory assign_semantic_class(const PairedReport& pair, const CueDictionary& dict) {
  const auto spans = find_cue_spans(pair.r_hist.tokens, dict);
  if (spans.empty())
    throw Error(ErrorCode::kUnclassifiable, "no cue phrase in r_hist of " + pair.image_id);
  const CueSpan* best = nullptr;
  for (const auto& s : spans) {
    if (!best) {
      best = &s;
      continue;
    }
    const std::size_t len = s.end - s.begin;
    const std::size_t best_len = best->end - best->begin;
    if (len > best_len || (len == best_len && static_cast<int>(s.category) <
                                                  static_cast<int>(best->category)))
      best = &s;
  }
  return best->category;
}

// ---------------------------------------------------------------------------
// Lexicon and planted images

std::size_t FindingLexicon::term_count() const {
  std::size_t n = 0;
  for (const auto& l : labels) n += l.terms.size();
  return n;
}

std::optional<std::size_t> FindingLexicon::label_of(std::string_view token) const {
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (const auto& t : labels[i].terms)
      if (t == token) return i;
  return std::nullopt;
}

FindingLexicon make_lexicon(std::size_t label_set_size, std::size_t finding_lexicon_size) {
  struct Entry {
    std::string_view name;
    std::vector<std::string_view> terms;
    bool opacity;
  };
  static const std::vector<Entry> kMaster = {
      {"no_finding", {"clear", "normal", "unremarkable"}, false},
      {"enlarged_cardiomediastinum", {"mediastinum", "mediastinal", "widening"}, false},
      {"cardiomegaly", {"cardiomegaly", "cardiac-enlargement"}, false},
      {"lung_lesion", {"nodule", "mass", "lesion"}, false},
      {"lung_opacity", {"opacity", "opacities", "haziness"}, true},
      {"edema", {"edema", "congestion", "vascular-congestion"}, true},
      {"consolidation", {"consolidation", "consolidations", "airspace-disease"}, true},
      {"pneumonia", {"pneumonia", "infection", "infiltrate"}, true},
      {"atelectasis", {"atelectasis", "collapse", "atelectatic-change"}, false},
      {"pneumothorax", {"pneumothorax", "pneumothoraces"}, false},
      {"pleural_effusion", {"effusion", "effusions", "fluid"}, false},
      {"pleural_other", {"thickening", "scarring", "blunting"}, false},
      {"fracture", {"fracture", "fractures", "deformity"}, false},
      {"support_devices", {"tube", "catheter", "pacemaker"}, false},
  };
  if (label_set_size < 2 || label_set_size > kMaster.size())
    throw Error(ErrorCode::kConfig, "label_set_size must be in [2, " +
                                        std::to_string(kMaster.size()) + "]");
  if (finding_lexicon_size < label_set_size)
    throw Error(ErrorCode::kConfig, "finding_lexicon_size must be >= label_set_size");
  FindingLexicon lex;
  for (std::size_t i = 0; i < label_set_size; ++i)
    lex.labels.push_back({std::string(kMaster[i].name), {}, kMaster[i].opacity});
  std::size_t selected = 0;
  for (std::size_t round = 0; selected < finding_lexicon_size; ++round) {
    bool any = false;
    for (std::size_t i = 0; i < label_set_size && selected < finding_lexicon_size; ++i) {
      if (round < kMaster[i].terms.size()) {
        lex.labels[i].terms.emplace_back(kMaster[i].terms[round]);
        ++selected;
        any = true;
      }
    }
    if (!any) break;
  }
  return lex;
}

ImageSpec image_spec(std::string_view image_id, const FindingLexicon& lexicon) {
  Rng rng(stable_hash(image_id, 0x51u));
  ImageSpec spec;
  const std::size_t n_labels = lexicon.labels.size();
  if (rng.bernoulli(0.12)) {
    spec.normal_term = rng.below(lexicon.labels[0].terms.size());
  } else {
    const double u = rng.uniform();
    std::size_t n = u < 0.45 ? 1 : (u < 0.80 ? 2 : 3);
    n = std::min(n, n_labels - 1);
    std::vector<std::size_t> pool;
    for (std::size_t l = 1; l < n_labels; ++l) pool.push_back(l);
    rng.shuffle(pool.begin(), pool.end());
    pool.resize(n);
    std::sort(pool.begin(), pool.end());
    for (std::size_t label : pool) {
      PlantedFinding f;
      f.label = label;
      f.term = rng.below(lexicon.labels[label].terms.size());
      f.severity = rng.below(kSeverities.size());
      f.laterality = rng.below(kLateralities.size());
      spec.findings.push_back(f);
    }
  }
  if (rng.bernoulli(0.3)) {
    std::vector<std::size_t> absent;
    for (std::size_t l = 1; l < n_labels; ++l) {
      const bool present = std::any_of(spec.findings.begin(), spec.findings.end(),
                                       [&](const PlantedFinding& f) { return f.label == l; });
      if (!present) absent.push_back(l);
    }
    if (!absent.empty()) spec.negated_label = absent[rng.below(absent.size())];
  }
  return spec;
}

namespace {

Tokens finding_body(const PlantedFinding& f, const FindingLexicon& lexicon) {
  Tokens body;
  if (f.severity) body.emplace_back(kSeverities[f.severity]);
  if (f.laterality) body.emplace_back(kLateralities[f.laterality]);
  body.push_back(lexicon.labels[f.label].terms[f.term]);
  return body;
}

struct Sentence {
  Tokens body;
  std::optional<std::size_t> label;  // set for decoratable sentences
};

std::vector<Sentence> current_sentences(const ImageSpec& spec, const FindingLexicon& lexicon) {
  std::vector<Sentence> out;
  if (spec.findings.empty()) {
    out.push_back({{lexicon.labels[0].terms[spec.normal_term], "study"}, 0});
  }
  for (const auto& f : spec.findings) out.push_back({finding_body(f, lexicon), f.label});
  if (spec.negated_label)
    out.push_back({{"no", lexicon.labels[*spec.negated_label].terms[0]}, std::nullopt});
  return out;
}

struct CueTemplate {
  CueCategory category;
  std::vector<std::string_view> prefix;
  std::vector<std::string_view> suffix;
  double weight;
};

const std::vector<CueTemplate>& cue_templates() {
  using C = CueCategory;
  static const std::vector<CueTemplate> kTemplates = {
      {C::kStability, {"stable"}, {}, 0.45},
      {C::kStability, {"unchanged"}, {}, 0.12},
      {C::kStability, {}, {"is", "unchanged"}, 0.10},
      {C::kStability, {"persistent"}, {}, 0.08},
      {C::kStability, {}, {",", "no", "interval", "change"}, 0.07},
      {C::kStability, {"chronic"}, {}, 0.05},
      {C::kStability, {}, {"remains", "similar"}, 0.04},
      {C::kStability, {"long-standing"}, {}, 0.03},
      {C::kStability, {}, {",", "no", "significant", "change"}, 0.03},
      {C::kStability, {}, {",", "no", "change"}, 0.03},
      {C::kComparison, {"compared", "to", "prior", ","}, {}, 0.35},
      {C::kComparison, {}, {"again", "seen"}, 0.25},
      {C::kComparison, {"compared", "with", "previous", ","}, {}, 0.15},
      {C::kComparison, {}, {",", "since", "the", "previous", "study"}, 0.10},
      {C::kComparison, {"prior"}, {}, 0.08},
      {C::kComparison, {"previous"}, {}, 0.07},
      {C::kProgression, {"worsened"}, {}, 0.50},
      {C::kProgression, {"increased"}, {}, 0.14},
      {C::kProgression, {"development", "of"}, {}, 0.08},
      {C::kProgression, {"larger"}, {}, 0.07},
      {C::kProgression, {"more"}, {}, 0.06},
      {C::kProgression, {"now", "demonstrates"}, {}, 0.08},
      {C::kProgression, {}, {",", "progression"}, 0.07},
      {C::kImprovement, {"improved"}, {}, 0.40},
      {C::kImprovement, {"decreased"}, {}, 0.15},
      {C::kImprovement, {"smaller"}, {}, 0.10},
      {C::kImprovement, {"less"}, {}, 0.08},
      {C::kImprovement, {}, {"has", "resolved"}, 0.10},
      {C::kImprovement, {}, {",", "resolution"}, 0.07},
      {C::kImprovement, {"clearing"}, {}, 0.10},
  };
  return kTemplates;
}

CueCategory draw_category(Rng& rng, bool opacity, double entanglement) {
  using C = CueCategory;
  if (opacity) {
    if (rng.bernoulli(entanglement)) return C::kProgression;
    const double u = rng.uniform();
    return u < 0.5 ? C::kStability : (u < 0.8 ? C::kComparison : C::kImprovement);
  }
  const double u = rng.uniform();
  if (u < 0.65) return C::kStability;
  if (u < 0.85) return C::kComparison;
  if (u < 0.95) return C::kImprovement;
  return C::kProgression;
}

enum class TemplateFilter { kAny, kPrefixOnly, kSingleWordPrefix };

const CueTemplate& draw_template(Rng& rng, CueCategory c, TemplateFilter filter) {
  std::vector<const CueTemplate*> pool;
  double total = 0.0;
  for (const auto& t : cue_templates()) {
    if (t.category != c) continue;
    if (filter != TemplateFilter::kAny && (t.prefix.empty() || !t.suffix.empty())) continue;
    if (filter == TemplateFilter::kSingleWordPrefix && t.prefix.size() != 1) continue;
    pool.push_back(&t);
    total += t.weight;
  }
  double u = rng.uniform() * total;
  for (const auto* t : pool) {
    if (u < t->weight) return *t;
    u -= t->weight;
  }
  return *pool.back();
}

Tokens assemble(const std::vector<Tokens>& sentences) {
  Tokens out;
  for (const auto& s : sentences) {
    out.insert(out.end(), s.begin(), s.end());
    out.emplace_back(".");
  }
  return out;
}

}  // namespace

Tokens current_report(const ImageSpec& spec, const FindingLexicon& lexicon) {
  std::vector<Tokens> bodies;
  for (auto& s : current_sentences(spec, lexicon)) bodies.push_back(std::move(s.body));
  return assemble(bodies);
}

Tokens generator_inventory(const FindingLexicon& lexicon, const CueDictionary& dict) {
  std::set<std::string> tokens = {".", ",", "no", "study"};
  for (const auto& l : lexicon.labels)
    for (const auto& t : l.terms) tokens.insert(t);
  for (auto s : kSeverities)
    if (!s.empty()) tokens.emplace(s);
  for (auto s : kLateralities)
    if (!s.empty()) tokens.emplace(s);
  for (const auto& t : cue_templates()) {
    for (auto p : t.prefix) tokens.emplace(p);
    for (auto p : t.suffix) tokens.emplace(p);
  }
  for (const auto& p : dict.phrases()) tokens.insert(p.tokens.begin(), p.tokens.end());
  for (const auto& n : dict.negatives()) tokens.insert(n.begin(), n.end());
  return Tokens(tokens.begin(), tokens.end());
}

void CorpusConfig::validate() const {
  if (!(history_fraction >= 0.0 && history_fraction <= 1.0))
    throw Error(ErrorCode::kConfig, "history_fraction must lie in [0, 1]");
  if (!(entanglement >= 0.0 && entanglement <= 1.0))
    throw Error(ErrorCode::kConfig, "entanglement must lie in [0, 1]");
  if (label_set_size > finding_lexicon_size)
    throw Error(ErrorCode::kConfig, "label_set_size must not exceed finding_lexicon_size");
  if (minimal_subset && history_fraction > 0.0 && n_pairs < 50)
    throw Error(ErrorCode::kConfig, "a minimal-edit subset of 50 pairs needs n_pairs >= 50");
  make_lexicon(label_set_size, finding_lexicon_size);
}

nlohmann::json CorpusConfig::to_json() const {
  return {{"n_pairs", n_pairs},
          {"history_fraction", history_fraction},
          {"finding_lexicon_size", finding_lexicon_size},
          {"label_set_size", label_set_size},
          {"seed", seed},
          {"n_eval", n_eval},
          {"entanglement", entanglement},
          {"minimal_subset", minimal_subset}};
}

CorpusConfig CorpusConfig::from_json(const nlohmann::json& j) {
  CorpusConfig c;
  try {
    c.n_pairs = j.value("n_pairs", c.n_pairs);
    c.history_fraction = j.value("history_fraction", c.history_fraction);
    c.finding_lexicon_size = j.value("finding_lexicon_size", c.finding_lexicon_size);
    c.label_set_size = j.value("label_set_size", c.label_set_size);
    c.seed = j.value("seed", c.seed);
    c.n_eval = j.value("n_eval", c.n_eval);
    c.entanglement = j.value("entanglement", c.entanglement);
    c.minimal_subset = j.value("minimal_subset", c.minimal_subset);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("corpus config: ") + e.what());
  }
  return c;
}

Corpus gen_corpus(const CorpusConfig& config, const CueDictionary& dict) {
  config.validate();
  const FindingLexicon lexicon = make_lexicon(config.label_set_size, config.finding_lexicon_size);
  Rng rng(config.seed);
  Corpus corpus;
  corpus.config = config;

  if (config.history_fraction > 0.0) {
    corpus.pairs.reserve(config.n_pairs);
    for (std::size_t i = 0; i < config.n_pairs; ++i) {
      PairedReport pair;
      pair.image_id = "img" + std::to_string(config.seed) + "-" + std::to_string(i);
      const ImageSpec spec = image_spec(pair.image_id, lexicon);
      const auto sentences = current_sentences(spec, lexicon);
      const bool minimal = config.minimal_subset && i < 50;

      std::vector<Tokens> curr, hist;
      std::size_t cues = 0;
      bool first = true;
      for (const auto& s : sentences) {
        curr.push_back(s.body);
        if (!s.label || cues >= 3 || (!first && (minimal || !rng.bernoulli(0.15)))) {
          hist.push_back(s.body);
          continue;
        }
        const bool opacity = lexicon.labels[*s.label].opacity_class;
        const CueCategory cat = draw_category(rng, opacity, config.entanglement);
        const auto filter = minimal ? TemplateFilter::kSingleWordPrefix
                                    : (first ? TemplateFilter::kPrefixOnly : TemplateFilter::kAny);
        const CueTemplate& t = draw_template(rng, cat, filter);
        Tokens decorated(t.prefix.begin(), t.prefix.end());
        decorated.insert(decorated.end(), s.body.begin(), s.body.end());
        decorated.insert(decorated.end(), t.suffix.begin(), t.suffix.end());
        hist.push_back(std::move(decorated));
        ++cues;
        first = false;
      }
      pair.r_curr = {pair.image_id, assemble(curr)};
      pair.r_hist = {pair.image_id, assemble(hist)};
      pair.edit_class = minimal ? EditClass::kMinimal : EditClass::kGeneral;
      pair.semantic_class = assign_semantic_class(pair, dict);
      corpus.pairs.push_back(std::move(pair));
    }
  }

  corpus.eval.reserve(config.n_eval);
  for (std::size_t i = 0; i < config.n_eval; ++i) {
    EvalCase ec;
    ec.image_id = "eval" + std::to_string(config.seed) + "-" + std::to_string(i);
    ec.reference = {ec.image_id, current_report(image_spec(ec.image_id, lexicon), lexicon)};
    ec.had_history = rng.bernoulli(config.history_fraction);
    corpus.eval.push_back(std::move(ec));
  }
  return corpus;
}

std::size_t token_edit_distance(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

namespace {

void validate_report(const Report& r, std::string_view role) {
  if (r.tokens.empty())
    throw Error(ErrorCode::kInvariant, "report_non_empty: " + std::string(role) + " of " +
                                           r.image_id + " is empty");
  for (const auto& t : r.tokens) {
    if (t.empty() || std::any_of(t.begin(), t.end(),
                                 [](unsigned char ch) { return std::isspace(ch); }))
      throw Error(ErrorCode::kInvariant, "token_no_whitespace: " + std::string(role) + " of " +
                                             r.image_id + " has a token with whitespace");
  }
}

}  // namespace

void validate_pair(const PairedReport& pair, const CueDictionary& dict) {
  validate_report(pair.r_hist, "r_hist");
  validate_report(pair.r_curr, "r_curr");
  if (pair.r_hist.tokens == pair.r_curr.tokens)
    throw Error(ErrorCode::kInvariant, "hist_differs_from_curr: " + pair.image_id);
  if (!find_cue_spans(pair.r_curr.tokens, dict).empty())
    throw Error(ErrorCode::kInvariant, "curr_cue_free: r_curr of " + pair.image_id +
                                           " contains a cue phrase");
  if (pair.edit_class == EditClass::kMinimal &&
      token_edit_distance(pair.r_hist.tokens, pair.r_curr.tokens) > 3)
    throw Error(ErrorCode::kInvariant, "minimal_edit_distance: " + pair.image_id +
                                           " is marked minimal but differs by more than 3 tokens");
}

nlohmann::json pair_to_json(const PairedReport& pair) {
  nlohmann::json j = {{"image_id", pair.image_id},
                      {"r_hist", pair.r_hist.tokens},
                      {"r_curr", pair.r_curr.tokens},
                      {"edit_class", edit_class_name(pair.edit_class)}};
  j["semantic_class"] = pair.semantic_class
                            ? nlohmann::json(std::string(category_name(*pair.semantic_class)))
                            : nlohmann::json(nullptr);
  return j;
}

PairedReport pair_from_json(const nlohmann::json& j) {
  PairedReport p;
  p.image_id = j.at("image_id").get<std::string>();
  p.r_hist = {p.image_id, j.at("r_hist").get<Tokens>()};
  p.r_curr = {p.image_id, j.at("r_curr").get<Tokens>()};
  const auto ec = j.at("edit_class").get<std::string>();
  if (ec == "minimal")
    p.edit_class = EditClass::kMinimal;
  else if (ec == "general")
    p.edit_class = EditClass::kGeneral;
  else
    throw Error(ErrorCode::kParse, "edit_class must be minimal|general, got '" + ec + "'");
  if (j.contains("semantic_class") && !j.at("semantic_class").is_null())
    p.semantic_class = parse_category(j.at("semantic_class").get<std::string>());
  return p;
}

namespace {

template <typename T, typename ToJson>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items,
                 const nlohmann::json& provenance, ToJson to_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  if (!provenance.is_null()) out << nlohmann::json{{"provenance", provenance}}.dump() << '\n';
  for (const auto& item : items) out << to_json(item).dump() << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

template <typename FromJson>
auto read_jsonl(const std::filesystem::path& path, FromJson from_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  using T = decltype(from_json(nlohmann::json{}));
  std::vector<T> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.is_object() && j.contains("provenance") && j.size() == 1) continue;
      items.push_back(from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParse,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (items.empty()) throw Error(ErrorCode::kEmptyCorpus, path.string() + " holds no records");
  return items;
}

}  // namespace

void save_pairs(const std::filesystem::path& path, const std::vector<PairedReport>& pairs,
                const nlohmann::json& provenance) {
  write_jsonl(path, pairs, provenance, pair_to_json);
}

std::vector<PairedReport> load_corpus(const std::filesystem::path& path,
                                      const CueDictionary& dict) {
  return read_jsonl(path, [&](const nlohmann::json& j) {
    PairedReport p = pair_from_json(j);
    validate_pair(p, dict);
    return p;
  });
}

void save_eval(const std::filesystem::path& path, const std::vector<EvalCase>& eval,
               const nlohmann::json& provenance) {
  write_jsonl(path, eval, provenance, [](const EvalCase& e) {
    return nlohmann::json{{"image_id", e.image_id},
                          {"reference", e.reference.tokens},
                          {"had_history", e.had_history}};
  });
}

std::vector<EvalCase> load_eval(const std::filesystem::path& path, const CueDictionary& dict) {
  return read_jsonl(path, [&](const nlohmann::json& j) {
    EvalCase e;
    e.image_id = j.at("image_id").get<std::string>();
    e.reference = {e.image_id, j.at("reference").get<Tokens>()};
    e.had_history = j.value("had_history", false);
    validate_report(e.reference, "reference");
    if (!find_cue_spans(e.reference.tokens, dict).empty())
      throw Error(ErrorCode::kInvariant, "curr_cue_free: reference of " + e.image_id +
                                             " contains a cue phrase");
    return e;
  });
}

}  // namespace sdls
