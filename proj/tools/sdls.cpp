// Command-line front end: one subcommand per pipeline stage, all of them
// reading an optional JSON config and writing into a run directory.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sdls/bundle.hpp"
#include "sdls/corpus.hpp"
#include "sdls/digest.hpp"
#include "sdls/error.hpp"
#include "sdls/evaluate.hpp"
#include "sdls/forge.hpp"
#include "sdls/model.hpp"
#include "sdls/pipeline.hpp"
#include "sdls/probe.hpp"
#include "sdls/steering.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sdls;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string run_dir = "runs/default";
  std::string dict_path;
};

json load_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

class Context {
 public:
  Context(std::string command, const Common& common) : command_(std::move(command)), common_(common) {
    if (!common.config_path.empty()) config_ = load_json(common.config_path);
    if (!config_.is_object()) throw Error(ErrorCode::kConfig, "config must be a JSON object");
    dict_ = common.dict_path.empty() ? CueDictionary::default_dictionary() : CueDictionary::load(common.dict_path);
  }

  json section(const std::string& name) const {
    return config_.contains(name) ? config_.at(name) : json::object();
  }
  const CueDictionary& dict() const { return dict_; }
  std::uint64_t seed_or(std::uint64_t fallback) const { return common_.seed.value_or(fallback); }

  fs::path run_path(const std::string& given, const std::string& default_name) const {
    if (!given.empty()) return given;
    return fs::path(common_.run_dir) / default_name;
  }
  fs::path output(const std::string& given, const std::string& default_name) const {
    const fs::path p = run_path(given, default_name);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    return p;
  }

  void input(const fs::path& p) { inputs_[p.generic_string()] = sha256_file(p.string()); }

  /// Config and seed that produced an output, plus digests of its inputs.
  json provenance(const json& effective, std::uint64_t seed) const {
    json in = json::object();
    for (const auto& [path, digest] : inputs_) in[fs::path(path).filename().string()] = digest;
    return {{"tool", "sdls"}, {"version", kVersion}, {"command", command_},
            {"seed", seed},   {"config", effective}, {"inputs", in}};
  }

 private:
  std::string command_;
  Common common_;
  json config_ = json::object();
  CueDictionary dict_ = CueDictionary::default_dictionary();
  std::map<std::string, std::string> inputs_;
};

/// Leading provenance line of a JSONL file written by gen-corpus, if any.
json jsonl_provenance(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string line;
  if (!in || !std::getline(in, line)) return nullptr;
  try {
    json j = json::parse(line);
    if (j.is_object() && j.contains("provenance")) return j.at("provenance");
  } catch (const json::exception&) {
  }
  return nullptr;
}

CorpusConfig corpus_config_for(const Context& ctx, const fs::path& corpus_path) {
  const json prov = jsonl_provenance(corpus_path);
  if (prov.is_object() && prov.contains("config")) return CorpusConfig::from_json(prov.at("config"));
  return CorpusConfig::from_json(ctx.section("corpus"));
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Seed for every random choice of this stage");
  sub->add_option("--config", c.config_path, "JSON config with per-stage sections")->check(CLI::ExistingFile);
  sub->add_option("--run", c.run_dir, "Run directory holding default inputs and outputs");
  sub->add_option("--dict", c.dict_path, "Cue dictionary JSON overriding the built-in one")->check(CLI::ExistingFile);
}

// ---------------------------------------------------------------------------

struct GenCorpusArgs {
  std::optional<std::size_t> n_pairs, n_eval;
  std::optional<double> history_fraction, entanglement;
  std::string out, eval_out;
};

int gen_corpus_cmd(const Common& common, const GenCorpusArgs& a) {
  Context ctx("gen-corpus", common);
  CorpusConfig cfg = CorpusConfig::from_json(ctx.section("corpus"));
  cfg.seed = ctx.seed_or(cfg.seed);
  if (a.n_pairs) cfg.n_pairs = *a.n_pairs;
  if (a.n_eval) cfg.n_eval = *a.n_eval;
  if (a.history_fraction) cfg.history_fraction = *a.history_fraction;
  if (a.entanglement) cfg.entanglement = *a.entanglement;
  cfg.validate();
  const Corpus corpus = gen_corpus(cfg, ctx.dict());
  const json prov = ctx.provenance(cfg.to_json(), cfg.seed);
  save_pairs(ctx.output(a.out, "corpus.jsonl"), corpus.pairs, prov);
  save_eval(ctx.output(a.eval_out, "eval.jsonl"), corpus.eval, prov);
  std::cout << "pairs " << corpus.pairs.size() << " eval " << corpus.eval.size() << '\n';
  return 0;
}

struct TrainArgs {
  std::string corpus, out;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
};

int train_cmd(const Common& common, const TrainArgs& a) {
  Context ctx("train", common);
  const fs::path corpus_path = ctx.run_path(a.corpus, "corpus.jsonl");
  ctx.input(corpus_path);
  const auto pairs = load_corpus(corpus_path, ctx.dict());
  const CorpusConfig cc = corpus_config_for(ctx, corpus_path);
  const Vocabulary vocab = Vocabulary::for_corpus(cc, ctx.dict());

  ToyModelConfig mc = ToyModelConfig::from_json(ctx.section("model"));
  mc.vocab_size = vocab.size();
  mc.label_set_size = cc.label_set_size;
  mc.finding_lexicon_size = cc.finding_lexicon_size;
  mc.seed = ctx.seed_or(mc.seed);
  mc.validate();

  TrainConfig tc = TrainConfig::from_json(ctx.section("train"));
  tc.seed = ctx.seed_or(tc.seed);
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.lr) tc.lr = *a.lr;

  TrainResult r = train(init_model(mc, vocab), pairs, tc);
  json meta = r.model.training_meta();
  meta["provenance"] = ctx.provenance({{"model", mc.to_json()}, {"train", tc.to_json()}}, tc.seed);
  r.model.set_training_meta(std::move(meta));
  r.model.save(ctx.output(a.out, "model.ckpt"));
  std::cout << "final loss " << r.report.final_loss << " steps " << r.report.steps << '\n';
  return 0;
}

struct ExtractArgs {
  std::string model, corpus, out;
};

int extract_cmd(const Common& common, const ExtractArgs& a) {
  Context ctx("extract", common);
  const fs::path model_path = ctx.run_path(a.model, "model.ckpt");
  const fs::path corpus_path = ctx.run_path(a.corpus, "corpus.jsonl");
  ctx.input(model_path);
  ctx.input(corpus_path);
  const ToyModel model = ToyModel::load(model_path);
  const auto pairs = load_corpus(corpus_path, ctx.dict());
  const ActivationBundle b = extract_bundle(model, pairs, ctx.provenance(json::object(), ctx.seed_or(0)));
  const std::string digest = write_bundle(b, ctx.output(a.out, "bundle.sdlsb"));
  std::cout << "samples " << b.samples.size() << " checksum " << digest << '\n';
  return 0;
}

struct ForgeArgs {
  std::string bundle, corpus, out_dir;
  std::vector<std::string> kinds;
  std::vector<std::size_t> ks;
};

int forge_cmd(const Common& common, const ForgeArgs& a) {
  Context ctx("forge", common);
  const fs::path bundle_path = ctx.run_path(a.bundle, "bundle.sdlsb");
  const fs::path corpus_path = ctx.run_path(a.corpus, "corpus.jsonl");
  ctx.input(bundle_path);
  ctx.input(corpus_path);
  const json section = ctx.section("forge");
  ForgeOptions opt;
  opt.control_seed = ctx.seed_or(section.value("control_seed", opt.control_seed));
  opt.style_k = section.value("style_k", opt.style_k);
  opt.style_reference_k = section.value("style_reference_k", opt.style_reference_k);
  if (section.contains("k")) opt.icv_ks = opt.specific50_ks = section.at("k").get<std::vector<std::size_t>>();
  if (!a.ks.empty()) opt.icv_ks = opt.specific50_ks = a.ks;
  std::vector<std::string> kinds = a.kinds;
  if (kinds.empty() && section.contains("kinds")) kinds = section.at("kinds").get<std::vector<std::string>>();
  for (const auto& k : kinds) opt.kinds.push_back(parse_vector_kind(k));

  const ActivationBundle bundle = read_bundle(bundle_path);
  const auto pairs = load_corpus(corpus_path, ctx.dict());
  const auto vectors = forge_arsenal(bundle, pairs, ctx.dict(), opt);

  const json effective = {{"kinds", kinds}, {"k", opt.icv_ks}, {"control_seed", opt.control_seed},
                          {"style_k", opt.style_k}, {"style_reference_k", opt.style_reference_k}};
  const json prov = ctx.provenance(effective, opt.control_seed);
  const fs::path dir = ctx.run_path(a.out_dir, "vectors");
  fs::create_directories(dir);
  json index = {{"provenance", prov}, {"vectors", json::array()}};
  for (const auto& v : vectors) {
    SteeringVector out = v;
    out.provenance["run"] = prov;
    const std::string file = out.label() + ".json";
    save_vector(dir / file, out);
    index["vectors"].push_back({{"label", out.label()}, {"kind", vector_kind_name(out.kind)}, {"file", file}});
    std::cout << out.label() << '\n';
  }
  write_json(dir / "index.json", index);
  return 0;
}

struct SteerArgs {
  std::string model, eval, spec, out, vectors_dir;
  std::vector<std::string> vectors, strategies;
  std::vector<double> lambdas;
  std::size_t workers = 1;
};

std::vector<fs::path> indexed_vectors(const fs::path& dir) {
  const json index = load_json(dir / "index.json");
  std::vector<fs::path> out;
  for (const auto& v : index.at("vectors")) out.push_back(dir / v.at("file").get<std::string>());
  return out;
}

int steer_cmd(const Common& common, const SteerArgs& a) {
  Context ctx("steer", common);
  const fs::path model_path = ctx.run_path(a.model, "model.ckpt");
  const fs::path eval_path = ctx.run_path(a.eval, "eval.jsonl");
  ctx.input(model_path);
  ctx.input(eval_path);
  json spec_json = ctx.section("sweep");
  if (!a.spec.empty()) {
    spec_json = load_json(a.spec);
    ctx.input(a.spec);
  }
  SweepSpec spec = spec_json.empty() ? SweepSpec{} : SweepSpec::from_json(spec_json);
  if (spec.strategies.empty()) spec.strategies.assign(kAllStrategies.begin(), kAllStrategies.end());
  if (!a.strategies.empty()) {
    spec.strategies.clear();
    for (const auto& s : a.strategies) spec.strategies.push_back(parse_strategy(s));
  }
  if (!a.lambdas.empty()) spec.fine_grid = a.lambdas;

  std::vector<fs::path> files(a.vectors.begin(), a.vectors.end());
  if (files.empty()) files = indexed_vectors(ctx.run_path(a.vectors_dir, "vectors"));
  for (const auto& f : files) {
    ctx.input(f);
    spec.vectors.push_back(std::make_shared<const SteeringVector>(load_vector(f)));
  }
  spec.validate();

  const ToyModel model = ToyModel::load(model_path);
  const auto eval = load_eval(eval_path, ctx.dict());
  const SweepResult result = run_sweep(model, spec, eval, std::max<std::size_t>(1, a.workers));
  const json prov = ctx.provenance(spec.to_json(), ctx.seed_or(0));
  const fs::path out = ctx.output(a.out, "sweep.csv");
  write_sweep_csv(out, result, prov);
  json manifest = sweep_manifest(result, spec);
  manifest["provenance"] = prov;
  write_json(fs::path(out).replace_extension(".json"), manifest);
  std::size_t failed = 0;
  for (const auto& c : result.conditions) failed += c.failed ? 1 : 0;
  std::cout << "conditions " << result.conditions.size() << " failed " << failed << '\n';
  return 0;
}

struct EvalArgs {
  std::string sweep, eval, out_dir, judge_scores;
  std::optional<std::size_t> resamples;
};

int eval_cmd(const Common& common, const EvalArgs& a) {
  Context ctx("eval", common);
  const fs::path sweep_path = ctx.run_path(a.sweep, "sweep.csv");
  const fs::path eval_path = ctx.run_path(a.eval, "eval.jsonl");
  ctx.input(sweep_path);
  ctx.input(eval_path);
  const json section = ctx.section("eval");
  EvalOptions opt;
  opt.bootstrap_resamples = a.resamples.value_or(section.value("bootstrap_resamples", opt.bootstrap_resamples));
  opt.seed = ctx.seed_or(section.value("seed", opt.seed));

  const SweepResult sweep = read_sweep_csv(sweep_path);
  const auto eval = load_eval(eval_path, ctx.dict());
  const CorpusConfig cc = corpus_config_for(ctx, eval_path);
  const FindingLexicon lexicon = make_lexicon(cc.label_set_size, cc.finding_lexicon_size);

  std::unique_ptr<Judge> judge;
  if (!a.judge_scores.empty()) {
    ctx.input(a.judge_scores);
    judge = std::make_unique<ExternalJudge>(ExternalJudge::load(a.judge_scores));
  } else {
    judge = std::make_unique<SyntheticJudge>(ctx.dict());
  }
  const EvalResult r = evaluate_sweep(sweep, eval, ctx.dict(), lexicon, *judge, opt);

  const json effective = {{"bootstrap_resamples", opt.bootstrap_resamples}, {"judge", judge->name()}};
  const json prov = ctx.provenance(effective, opt.seed);
  const fs::path dir = ctx.run_path(a.out_dir, "eval");
  fs::create_directories(dir);
  write_case_metrics_csv(dir / "case_metrics.csv", r, prov);
  write_operating_points_csv(dir / "operating_points.csv", r, prov);
  json summary = eval_summary(r);
  summary["bootstrap"]["resamples"] = opt.bootstrap_resamples;
  summary["judge"] = judge->name();
  try {
    summary["decoupling"] = decoupling_regression(r).to_json();
  } catch (const Error& e) {
    summary["decoupling"] = {{"error", e.what()}};
  }
  summary["provenance"] = prov;
  write_json(dir / "summary.json", summary);
  std::cout << "baseline hsr " << r.baseline.mean_hsr << " macro_f1 " << r.baseline.macro_f1 << '\n';
  std::cout << "selected " << (r.selected ? r.selected->condition_id : std::string("none")) << '\n';
  return 0;
}

struct ProbeArgs {
  std::string model, vector, eval, out_dir, strategy = "steerfair_attention_output", trace_dump;
  std::vector<double> lambdas;
  std::size_t n_probe = 60;
};

int probe_cmd(const Common& common, const ProbeArgs& a) {
  Context ctx("probe", common);
  const fs::path model_path = ctx.run_path(a.model, "model.ckpt");
  const fs::path vector_path = ctx.run_path(a.vector, "vectors/sdiv.json");
  const fs::path eval_path = ctx.run_path(a.eval, "eval.jsonl");
  ctx.input(model_path);
  ctx.input(vector_path);
  ctx.input(eval_path);
  const ToyModel model = ToyModel::load(model_path);
  const auto eval = load_eval(eval_path, ctx.dict());
  if (eval.empty()) throw Error(ErrorCode::kEmptyCorpus, "eval set is empty");
  const CorpusConfig cc = corpus_config_for(ctx, eval_path);
  const FindingLexicon lexicon = make_lexicon(cc.label_set_size, cc.finding_lexicon_size);

  InjectionPlan plan;
  plan.strategy = parse_strategy(a.strategy);
  plan.vector = std::make_shared<const SteeringVector>(load_vector(vector_path));
  std::vector<double> grid = {0.0};
  const auto& sweep = a.lambdas.empty() ? kFineGrid : a.lambdas;
  grid.insert(grid.end(), sweep.begin(), sweep.end());

  const DecodeConfig decode;
  std::vector<ProbeInput> probes;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    ids.push_back(eval[i].image_id);
    if (i < a.n_probe) {
      GenerationTrace t = generate(model, eval[i].image_id, nullptr, decode);
      if (!t.tokens.empty()) probes.push_back({eval[i].image_id, std::move(t.tokens)});
    }
  }
  const auto curve = delta_logit_curve(model, plan, grid, cue_token_ids(model.vocab(), ctx.dict()), probes);
  const AttentionProbe attention = attention_probe(model, ids, ctx.dict(), lexicon);

  std::vector<double> mag, delta;
  for (const auto& p : curve)
    if (p.lambda != 0.0) {
      mag.push_back(std::abs(p.lambda));
      delta.push_back(p.mean_delta_logit);
    }
  const json effective = {{"strategy", a.strategy}, {"lambdas", grid}, {"n_probe", a.n_probe}};
  const json prov = ctx.provenance(effective, ctx.seed_or(0));
  const fs::path dir = ctx.run_path(a.out_dir, "probe");
  fs::create_directories(dir);
  write_curve_csv(dir / "delta_logit.csv", curve, prov);
  write_attention_csv(dir / "attention_entropy.csv", attention, prov);
  json summary = {{"spearman_abs_lambda_delta_logit", mag.size() >= 2 ? json(spearman(mag, delta)) : json(nullptr)},
                  {"mean_cue_entropy", attention.mean_cue_entropy},
                  {"mean_finding_entropy", attention.mean_finding_entropy},
                  {"cue_tokens", attention.cue_tokens},
                  {"finding_tokens", attention.finding_tokens},
                  {"provenance", prov}};
  write_json(dir / "probe.json", summary);
  if (!a.trace_dump.empty()) {
    DecodeConfig greedy;
    greedy.mode = DecodeConfig::Mode::kGreedy;
    json dump = trace_to_json(generate(model, ids.front(), nullptr, greedy), model.vocab());
    dump["image_id"] = ids.front();
    dump["provenance"] = prov;
    write_json(a.trace_dump, dump);
  }
  std::cout << "spearman " << summary["spearman_abs_lambda_delta_logit"] << " cue_entropy "
            << attention.mean_cue_entropy << " finding_entropy " << attention.mean_finding_entropy << '\n';
  return 0;
}

int report_cmd(const Common& common) {
  Context ctx("report", common);
  const fs::path run = common.run_dir;
  if (!fs::is_directory(run)) throw Error(ErrorCode::kInvalidArgument, "no run directory " + run.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(run))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  json listing = json::array();
  for (const auto& f : files)
    listing.push_back({{"path", fs::relative(f, run).generic_string()},
                       {"bytes", fs::file_size(f)},
                       {"sha256", sha256_file(f.string())}});
  json manifest = {{"run", run.filename().string()}, {"files", listing}};
  if (fs::exists(run / "eval/summary.json")) {
    const json s = load_json(run / "eval/summary.json");
    manifest["verdict"] = s.at("verdict");
    manifest["selected"] = s.at("selected");
    manifest["baseline"] = s.at("baseline");
  }
  if (fs::exists(run / "probe/probe.json")) {
    json p = load_json(run / "probe/probe.json");
    p.erase("provenance");
    manifest["probe"] = p;
  }
  manifest["provenance"] = ctx.provenance(json::object(), ctx.seed_or(0));
  write_json(run / "manifest.json", manifest);
  std::cout << "files " << files.size() << '\n';
  return 0;
}

int exit_code_for(const Error& e) { return is_validation_error(e.code()) ? 2 : 1; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic decomposition steering toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Common common;
  GenCorpusArgs gca;
  auto* gc = app.add_subcommand("gen-corpus", "Generate the paired corpus and eval set (JSONL)");
  add_common(gc, common);
  gc->add_option("--n-pairs", gca.n_pairs);
  gc->add_option("--n-eval", gca.n_eval);
  gc->add_option("--history-fraction", gca.history_fraction);
  gc->add_option("--entanglement", gca.entanglement);
  gc->add_option("--out", gca.out, "Corpus JSONL (default <run>/corpus.jsonl)");
  gc->add_option("--eval-out", gca.eval_out, "Eval JSONL (default <run>/eval.jsonl)");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train the toy encoder-decoder on a corpus");
  add_common(tr, common);
  tr->add_option("--corpus", ta.corpus);
  tr->add_option("--out", ta.out);
  tr->add_option("--epochs", ta.epochs);
  tr->add_option("--lr", ta.lr);

  ExtractArgs ea;
  auto* ex = app.add_subcommand("extract", "Write an activation bundle of hist/curr MCVs");
  add_common(ex, common);
  ex->add_option("--model", ea.model);
  ex->add_option("--corpus", ea.corpus);
  ex->add_option("--out", ea.out);

  ForgeArgs fa;
  auto* fo = app.add_subcommand("forge", "Build steering vectors from a bundle");
  add_common(fo, common);
  fo->add_option("--bundle", fa.bundle);
  fo->add_option("--corpus", fa.corpus);
  fo->add_option("--out-dir", fa.out_dir);
  fo->add_option("--kind", fa.kinds, "Vector kind (repeatable)");
  fo->add_option("--k", fa.ks, "ICV component count (repeatable)");

  SteerArgs sa;
  auto* st = app.add_subcommand("steer", "Run a condition sweep and write per-case generations");
  add_common(st, common);
  st->add_option("--model", sa.model);
  st->add_option("--eval", sa.eval);
  st->add_option("--spec", sa.spec, "Sweep spec JSON")->check(CLI::ExistingFile);
  st->add_option("--vector", sa.vectors, "Vector file (repeatable; default all in <run>/vectors)");
  st->add_option("--vectors-dir", sa.vectors_dir);
  st->add_option("--strategy", sa.strategies, "Strategy (repeatable)");
  st->add_option("--lambda", sa.lambdas, "Fine-grid λ (repeatable)");
  st->add_option("--workers", sa.workers)->check(CLI::PositiveNumber);
  st->add_option("--out", sa.out);

  EvalArgs va;
  auto* ev = app.add_subcommand("eval", "Score a sweep and select an operating point");
  add_common(ev, common);
  ev->add_option("--sweep", va.sweep);
  ev->add_option("--eval", va.eval);
  ev->add_option("--out-dir", va.out_dir);
  ev->add_option("--judge-scores", va.judge_scores, "CSV image_id,condition,score")->check(CLI::ExistingFile);
  ev->add_option("--resamples", va.resamples);

  ProbeArgs pa;
  auto* pr = app.add_subcommand("probe", "Δlogit dose-response and cross-attention entropy");
  add_common(pr, common);
  pr->add_option("--model", pa.model);
  pr->add_option("--vector", pa.vector);
  pr->add_option("--eval", pa.eval);
  pr->add_option("--out-dir", pa.out_dir);
  pr->add_option("--strategy", pa.strategy);
  pr->add_option("--lambda", pa.lambdas);
  pr->add_option("--n-probe", pa.n_probe);
  pr->add_option("--trace-dump", pa.trace_dump, "Write a JSON decode trace of the first eval image");

  auto* rp = app.add_subcommand("report", "Write <run>/manifest.json over every artifact");
  add_common(rp, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gc) return gen_corpus_cmd(common, gca);
    if (*tr) return train_cmd(common, ta);
    if (*ex) return extract_cmd(common, ea);
    if (*fo) return forge_cmd(common, fa);
    if (*st) return steer_cmd(common, sa);
    if (*ev) return eval_cmd(common, va);
    if (*pr) return probe_cmd(common, pa);
    if (*rp) return report_cmd(common);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const json::exception& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
