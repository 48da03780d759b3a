#pragma once

// Turns (vector, strategy, λ) into decoder hook programs and runs paired
// baseline / intervention sweeps over an evaluation set.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdls/forge.hpp"
#include "sdls/model.hpp"

namespace sdls {

enum class Strategy {
  kGlobalInjection,
  kSteerFairLayerOutput,
  kSteerFairAttentionOutput,
  kGentleInject,
  kIcvToken,
  kEncoderConcat,
};
inline constexpr std::array<Strategy, 6> kAllStrategies = {
    Strategy::kGlobalInjection, Strategy::kSteerFairLayerOutput, Strategy::kSteerFairAttentionOutput,
    Strategy::kGentleInject,    Strategy::kIcvToken,             Strategy::kEncoderConcat};
std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);

enum class SliceMode {
  kPerLayer,    // layer-indexed segment of the MCV-space vector
  kSharedMean,  // mean over segments at every site
};
std::string_view slice_mode_name(SliceMode m);
SliceMode parse_slice_mode(std::string_view name);

struct InjectionPlan {
  Strategy strategy = Strategy::kSteerFairAttentionOutput;
  double lambda = 0.0;
  std::shared_ptr<const SteeringVector> vector;
  std::optional<double> decay;
  SliceMode slicing = SliceMode::kPerLayer;

  void validate(const ToyModelConfig& config) const;
};

/// Site set a strategy touches on a decoder with `n_dec_layers` layers.
std::vector<HookSite> resolve_sites(Strategy strategy, std::size_t n_dec_layers);

/// d_model-dim unit direction for `site`. Layer sites use segment ℓ+1
/// (embedding output is segment 0, first_layer_cls is segment 1); the
/// pseudo-token sites use the normalised mean of all segments.
Vector slice_vector_for_site(const SteeringVector& v, const HookSite& site, const LayerGeometry& geometry,
                             SliceMode mode = SliceMode::kPerLayer);

HookProgram compile_plan(const InjectionPlan& plan, const ToyModelConfig& config);

/// A model handle carrying at most one active plan.
class HookedModel {
 public:
  explicit HookedModel(const ToyModel& model) : model_(&model) {}

  void apply(const InjectionPlan& plan);  // kPlanConflict when a plan is active
  void remove() noexcept { program_.reset(); }
  bool hooked() const noexcept { return program_.has_value(); }
  const HookProgram* program() const noexcept { return program_ ? &*program_ : nullptr; }
  const ToyModel& model() const noexcept { return *model_; }

  GenerationTrace generate(std::string_view image_id, const DecodeConfig& decode) const;

 private:
  const ToyModel* model_;
  std::optional<HookProgram> program_;
};

HookedModel apply_plan(const ToyModel& model, const InjectionPlan& plan);

// ---------------------------------------------------------------------------
// Sweeps

inline const std::vector<double> kFineGrid = {-0.1, -0.2, -0.3, -0.4, -0.5};
inline const std::vector<double> kGentleGrid = {-5.0, -10.0, -15.0, -20.0, -25.0};

struct SweepSpec {
  std::vector<Strategy> strategies;
  std::vector<double> fine_grid = kFineGrid;
  std::vector<double> gentle_grid = kGentleGrid;
  std::vector<std::shared_ptr<const SteeringVector>> vectors;
  DecodeConfig decode;
  std::optional<double> decay;
  SliceMode slicing = SliceMode::kPerLayer;

  const std::vector<double>& grid_for(Strategy s) const;
  void validate() const;
  /// Strategies, grids, decode and slicing only (vectors are files).
  nlohmann::json to_json() const;
  static SweepSpec from_json(const nlohmann::json& j);
};

struct Condition {
  std::string id;
  std::string vector_label;
  Strategy strategy = Strategy::kSteerFairAttentionOutput;
  double lambda = 0.0;
};

struct CaseOutput {
  std::string image_id;
  Tokens tokens;
  bool ok = true;
  std::string error;
  friend bool operator==(const CaseOutput&, const CaseOutput&) = default;
};

struct ConditionRun {
  Condition condition;
  std::vector<CaseOutput> outputs;  // aligned with the eval set
  bool failed = false;
  std::string error;
};

struct SweepResult {
  std::vector<CaseOutput> baseline;
  std::vector<ConditionRun> conditions;
};

/// Canonical condition id, e.g. "sdiv|steerfair_attention_output|-0.3".
std::string condition_id(const std::string& vector_label, Strategy s, double lambda);
std::string format_lambda(double lambda);

std::vector<Condition> enumerate_conditions(const SweepSpec& spec);

SweepResult run_sweep(const ToyModel& model, const SweepSpec& spec, const std::vector<EvalCase>& eval,
                      std::size_t workers = 1);

/// One row per (condition, case); baseline rows use condition id "baseline".
void write_sweep_csv(const std::filesystem::path& path, const SweepResult& result,
                     const nlohmann::json& provenance = nullptr);
SweepResult read_sweep_csv(const std::filesystem::path& path);
nlohmann::json sweep_manifest(const SweepResult& result, const SweepSpec& spec);

}  // namespace sdls
