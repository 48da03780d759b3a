#include "sdls/steering.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include "sdls/csv.hpp"
#include "sdls/error.hpp"

namespace sdls {

namespace {

constexpr std::array<std::pair<Strategy, std::string_view>, 6> kStrategyNames = {{
    {Strategy::kGlobalInjection, "global_injection"},
    {Strategy::kSteerFairLayerOutput, "steerfair_layer_output"},
    {Strategy::kSteerFairAttentionOutput, "steerfair_attention_output"},
    {Strategy::kGentleInject, "gentle_inject"},
    {Strategy::kIcvToken, "icv_token"},
    {Strategy::kEncoderConcat, "encoder_concat"},
}};

Vector segment(const Vector& v, std::size_t index, std::size_t d) {
  return Vector(v.begin() + static_cast<std::ptrdiff_t>(index * d),
                v.begin() + static_cast<std::ptrdiff_t>((index + 1) * d));
}

Vector segment_mean(const Vector& v, const LayerGeometry& g) {
  Vector m(g.d_model, 0.0);
  for (std::size_t l = 0; l < g.layers; ++l)
    for (std::size_t i = 0; i < g.d_model; ++i) m[i] += v[l * g.d_model + i];
  for (double& x : m) x /= static_cast<double>(g.layers);
  return m;
}

std::size_t segment_index(const HookSite& site, const LayerGeometry& g) {
  if (g.layers == 1) return 0;
  switch (site.kind) {
    case SiteKind::kEmbeddingOutput: return 0;
    case SiteKind::kLayerOutput:
    case SiteKind::kAttentionOutput: return site.layer + 1;
    case SiteKind::kFirstLayerCls: return 1;
    default: break;
  }
  throw Error(ErrorCode::kInternal, "site has no segment");
}

Vector unit_or_cancel(const Vector& v, const std::string& what) {
  if (l2_norm(v) < 1e-12) throw Error(ErrorCode::kCancellation, what + " is zero; cannot normalise");
  return l2_normalize(v);
}

LayerGeometry model_geometry(const ToyModelConfig& c) { return {c.n_dec_layers + 1, c.d_model}; }

template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

std::vector<CaseOutput> run_cases(const HookedModel& hooked, const std::vector<EvalCase>& eval,
                                  const DecodeConfig& decode) {
  std::vector<CaseOutput> out;
  out.reserve(eval.size());
  for (const auto& e : eval) {
    CaseOutput c{e.image_id, {}, true, {}};
    try {
      c.tokens = hooked.model().vocab().decode(hooked.generate(e.image_id, decode).tokens);
    } catch (const std::exception& ex) {
      c.ok = false;
      c.error = ex.what();
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

std::string_view strategy_name(Strategy s) {
  for (const auto& [k, n] : kStrategyNames)
    if (k == s) return n;
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  for (const auto& [k, n] : kStrategyNames)
    if (n == name) return k;
  throw Error(ErrorCode::kParse, "unknown strategy '" + std::string(name) + "'");
}

std::string_view slice_mode_name(SliceMode m) { return m == SliceMode::kPerLayer ? "per_layer" : "shared_mean"; }

SliceMode parse_slice_mode(std::string_view name) {
  if (name == "per_layer") return SliceMode::kPerLayer;
  if (name == "shared_mean") return SliceMode::kSharedMean;
  throw Error(ErrorCode::kParse, "unknown slicing mode '" + std::string(name) + "'");
}

void InjectionPlan::validate(const ToyModelConfig& config) const {
  if (!std::isfinite(lambda)) throw Error(ErrorCode::kPlan, "lambda must be finite");
  if (!vector) throw Error(ErrorCode::kPlan, "plan has no vector");
  const LayerGeometry g = model_geometry(config);
  if (vector->v.size() != g.dim() || vector->geometry != g)
    throw Error(ErrorCode::kGeometry, "vector geometry " + std::to_string(vector->geometry.layers) + "x" +
                                          std::to_string(vector->geometry.d_model) + " does not match model " +
                                          std::to_string(g.layers) + "x" + std::to_string(g.d_model));
  if (decay && !(*decay > 0.0 && *decay <= 1.0)) throw Error(ErrorCode::kPlan, "decay must lie in (0, 1]");
}

std::vector<HookSite> resolve_sites(Strategy strategy, std::size_t n) {
  std::vector<HookSite> sites;
  switch (strategy) {
    case Strategy::kGlobalInjection:
      sites.push_back({SiteKind::kEmbeddingOutput, 0});
      for (std::size_t l = 0; l < n; ++l) sites.push_back({SiteKind::kLayerOutput, l});
      break;
    case Strategy::kSteerFairLayerOutput:
      for (std::size_t l = 0; l < n; ++l) sites.push_back({SiteKind::kLayerOutput, l});
      break;
    case Strategy::kSteerFairAttentionOutput:
      for (std::size_t l = 0; l < n; ++l) sites.push_back({SiteKind::kAttentionOutput, l});
      break;
    case Strategy::kGentleInject: sites.push_back({SiteKind::kFirstLayerCls, 0}); break;
    case Strategy::kIcvToken: sites.push_back({SiteKind::kDecoderInputPrefix, 0}); break;
    case Strategy::kEncoderConcat: sites.push_back({SiteKind::kEncoderOutputConcat, 0}); break;
  }
  return sites;
}

Vector slice_vector_for_site(const SteeringVector& v, const HookSite& site, const LayerGeometry& g,
                             SliceMode mode) {
  if (g.layers == 0 || g.d_model == 0 || v.v.size() != g.dim())
    throw Error(ErrorCode::kGeometry, "vector dim " + std::to_string(v.v.size()) + " != L*d_model = " +
                                          std::to_string(g.dim()));
  const bool pseudo = site.kind == SiteKind::kDecoderInputPrefix || site.kind == SiteKind::kEncoderOutputConcat;
  if (pseudo || mode == SliceMode::kSharedMean) return unit_or_cancel(segment_mean(v.v, g), "mean segment");
  const std::size_t idx = segment_index(site, g);
  if (idx >= g.layers) throw Error(ErrorCode::kPlan, "site layer beyond vector geometry");
  return unit_or_cancel(segment(v.v, idx, g.d_model), "segment " + std::to_string(idx));
}

HookProgram compile_plan(const InjectionPlan& plan, const ToyModelConfig& config) {
  plan.validate(config);
  const LayerGeometry g = model_geometry(config);
  HookProgram prog;
  prog.lambda = plan.lambda;
  prog.decay = plan.decay;
  for (const HookSite& site : resolve_sites(plan.strategy, config.n_dec_layers)) {
    switch (site.kind) {
      case SiteKind::kDecoderInputPrefix:
        prog.prefix_token = slice_vector_for_site(*plan.vector, site, g, plan.slicing);
        break;
      case SiteKind::kEncoderOutputConcat:
        prog.encoder_token = slice_vector_for_site(*plan.vector, site, g, plan.slicing);
        break;
      case SiteKind::kFirstLayerCls: {
        // Additive shift by the raw segment of the unit-normalised vector.
        const Vector unit = unit_or_cancel(plan.vector->v, "vector");
        Vector dir = plan.slicing == SliceMode::kSharedMean ? segment_mean(unit, g)
                                                            : segment(unit, segment_index(site, g), g.d_model);
        prog.sites.push_back({site, std::move(dir), false});
        break;
      }
      default:
        prog.sites.push_back({site, slice_vector_for_site(*plan.vector, site, g, plan.slicing), true});
    }
  }
  return prog;
}

void HookedModel::apply(const InjectionPlan& plan) {
  if (program_) throw Error(ErrorCode::kPlanConflict, "a plan is already applied; remove it first");
  program_ = compile_plan(plan, model_->config());
}

GenerationTrace HookedModel::generate(std::string_view image_id, const DecodeConfig& decode) const {
  return sdls::generate(*model_, image_id, program(), decode);
}

HookedModel apply_plan(const ToyModel& model, const InjectionPlan& plan) {
  HookedModel h(model);
  h.apply(plan);
  return h;
}

// ---------------------------------------------------------------------------

const std::vector<double>& SweepSpec::grid_for(Strategy s) const {
  return s == Strategy::kGentleInject ? gentle_grid : fine_grid;
}

void SweepSpec::validate() const {
  if (strategies.empty()) throw Error(ErrorCode::kConfig, "sweep has no strategies");
  if (vectors.empty()) throw Error(ErrorCode::kConfig, "sweep has no vectors");
  for (Strategy s : strategies)
    if (grid_for(s).empty()) throw Error(ErrorCode::kConfig, "empty lambda grid for " + std::string(strategy_name(s)));
  for (const auto* grid : {&fine_grid, &gentle_grid})
    for (double l : *grid)
      if (!std::isfinite(l)) throw Error(ErrorCode::kConfig, "lambda grid has a non-finite value");
  if (decay && !(*decay > 0.0 && *decay <= 1.0)) throw Error(ErrorCode::kConfig, "decay must lie in (0, 1]");
}

nlohmann::json SweepSpec::to_json() const {
  nlohmann::json j = {{"fine_grid", fine_grid},
                      {"gentle_grid", gentle_grid},
                      {"decode", decode.to_json()},
                      {"slicing", slice_mode_name(slicing)}};
  j["strategies"] = nlohmann::json::array();
  for (Strategy s : strategies) j["strategies"].push_back(strategy_name(s));
  j["decay"] = decay ? nlohmann::json(*decay) : nlohmann::json(nullptr);
  return j;
}

SweepSpec SweepSpec::from_json(const nlohmann::json& j) {
  SweepSpec s;
  try {
    if (j.contains("strategies"))
      for (const auto& n : j.at("strategies")) s.strategies.push_back(parse_strategy(n.get<std::string>()));
    s.fine_grid = j.value("fine_grid", s.fine_grid);
    s.gentle_grid = j.value("gentle_grid", s.gentle_grid);
    if (j.contains("decode")) s.decode = DecodeConfig::from_json(j.at("decode"));
    if (j.contains("decay") && !j.at("decay").is_null()) s.decay = j.at("decay").get<double>();
    if (j.contains("slicing")) s.slicing = parse_slice_mode(j.at("slicing").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("sweep spec: ") + e.what());
  }
  return s;
}

std::string format_lambda(double lambda) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, lambda);
  if (ec != std::errc()) throw Error(ErrorCode::kInternal, "cannot format lambda");
  return std::string(buf, end);
}

std::string condition_id(const std::string& vector_label, Strategy s, double lambda) {
  return vector_label + "|" + std::string(strategy_name(s)) + "|" + format_lambda(lambda);
}

std::vector<Condition> enumerate_conditions(const SweepSpec& spec) {
  std::vector<Condition> out;
  for (const auto& v : spec.vectors)
    for (Strategy s : spec.strategies)
      for (double l : spec.grid_for(s)) out.push_back({condition_id(v->label(), s, l), v->label(), s, l});
  return out;
}

SweepResult run_sweep(const ToyModel& model, const SweepSpec& spec, const std::vector<EvalCase>& eval,
                      std::size_t workers) {
  spec.validate();
  if (eval.empty()) throw Error(ErrorCode::kEmptyCorpus, "evaluation set is empty");
  const auto conds = enumerate_conditions(spec);
  std::map<std::string, std::shared_ptr<const SteeringVector>> by_label;
  for (const auto& v : spec.vectors)
    if (!by_label.emplace(v->label(), v).second)
      throw Error(ErrorCode::kConfig, "duplicate vector label " + v->label());

  SweepResult result;
  result.conditions.resize(conds.size());
  // Task 0 is the shared baseline; task i+1 is condition i.
  parallel_for(conds.size() + 1, workers, [&](std::size_t task) {
    if (task == 0) {
      result.baseline = run_cases(HookedModel(model), eval, spec.decode);
      return;
    }
    ConditionRun& run = result.conditions[task - 1];
    run.condition = conds[task - 1];
    try {
      InjectionPlan plan{run.condition.strategy, run.condition.lambda, by_label.at(run.condition.vector_label),
                         spec.decay, spec.slicing};
      run.outputs = run_cases(apply_plan(model, plan), eval, spec.decode);
      for (const auto& o : run.outputs)
        if (!o.ok) {
          run.failed = true;
          run.error = o.image_id + ": " + o.error;
          break;
        }
    } catch (const std::exception& e) {
      run.failed = true;
      run.error = e.what();
    }
  });
  return result;
}

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& result, const nlohmann::json& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  if (!provenance.is_null()) out << "# provenance: " << provenance.dump() << '\n';
  out << "condition_id,vector,strategy,lambda,image_id,status,error,tokens\n";
  for (const auto& c : result.baseline)
    out << csv_row({"baseline", "", "", "", c.image_id, c.ok ? "ok" : "failed", c.error, join_tokens(c.tokens)}) << '\n';
  for (const auto& run : result.conditions) {
    const auto& cd = run.condition;
    if (run.outputs.empty())
      out << csv_row({cd.id, cd.vector_label, std::string(strategy_name(cd.strategy)), format_lambda(cd.lambda), "",
                      "failed", run.error, ""})
          << '\n';
    for (const auto& c : run.outputs)
      out << csv_row({cd.id, cd.vector_label, std::string(strategy_name(cd.strategy)), format_lambda(cd.lambda),
                      c.image_id, c.ok ? "ok" : "failed", c.error, join_tokens(c.tokens)})
          << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

SweepResult read_sweep_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  if (rows.empty()) throw Error(ErrorCode::kParse, path.string() + ": empty sweep file");
  const std::vector<std::string> header = {"condition_id", "vector", "strategy", "lambda",
                                           "image_id",     "status", "error",    "tokens"};
  if (rows[0] != header) throw Error(ErrorCode::kParse, path.string() + ": unexpected sweep header");
  SweepResult r;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i];
    if (f.size() != header.size())
      throw Error(ErrorCode::kParse, path.string() + ": row " + std::to_string(i + 1) + " has " +
                                         std::to_string(f.size()) + " fields");
    CaseOutput c{f[4], tokenize(f[7]), f[5] == "ok", f[6]};
    if (f[0] == "baseline") {
      r.baseline.push_back(std::move(c));
      continue;
    }
    auto [it, fresh] = index.emplace(f[0], r.conditions.size());
    if (fresh) {
      ConditionRun run;
      double lambda = 0.0;
      std::from_chars(f[3].data(), f[3].data() + f[3].size(), lambda);
      run.condition = {f[0], f[1], parse_strategy(f[2]), lambda};
      r.conditions.push_back(std::move(run));
    }
    ConditionRun& run = r.conditions[it->second];
    if (!c.ok) {
      run.failed = true;
      if (run.error.empty()) run.error = c.image_id.empty() ? c.error : c.image_id + ": " + c.error;
    }
    if (!c.image_id.empty()) run.outputs.push_back(std::move(c));
  }
  return r;
}

nlohmann::json sweep_manifest(const SweepResult& result, const SweepSpec& spec) {
  nlohmann::json conds = nlohmann::json::array();
  for (const auto& run : result.conditions)
    conds.push_back({{"id", run.condition.id},
                     {"vector", run.condition.vector_label},
                     {"strategy", strategy_name(run.condition.strategy)},
                     {"lambda", run.condition.lambda},
                     {"failed", run.failed},
                     {"error", run.error},
                     {"cases", run.outputs.size()}});
  return {{"spec", spec.to_json()}, {"baseline_cases", result.baseline.size()}, {"conditions", conds}};
}

}  // namespace sdls
