#pragma once

// A small pre-LayerNorm encoder-decoder transformer over synthetic image
// grids. Training runs on a reverse-mode tape in float32; decoding runs a
// KV-cached float64 path that exposes every injection site used by the
// steering engine.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdls/corpus.hpp"
#include "sdls/linalg.hpp"

namespace sdls {

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  Vocabulary() = default;
  /// Specials first, then `tokens` in the given order (duplicates rejected).
  explicit Vocabulary(const Tokens& tokens);
  static Vocabulary for_corpus(const CorpusConfig& config, const CueDictionary& dict);

  std::size_t size() const noexcept { return tokens_.size(); }
  int id(std::string_view token) const;  // throws kVocabulary
  std::optional<int> find(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const Tokens& tokens() const noexcept { return tokens_; }

  std::vector<int> encode(const Tokens& tokens) const;
  /// Drops specials.
  Tokens decode(const std::vector<int>& ids) const;

 private:
  Tokens tokens_;
  std::unordered_map<std::string, int> index_;
};

struct ToyModelConfig {
  std::size_t d_model = 32;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t n_heads = 2;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 0;
  std::size_t max_len = 64;
  std::size_t image_tokens = 16;
  // Synthetic-world settings the image grid generator needs.
  std::size_t label_set_size = 14;
  std::size_t finding_lexicon_size = 40;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static ToyModelConfig from_json(const nlohmann::json& j);
};

struct ParamTensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;
};

/// image_tokens × d_model feature grid (row-major) for an image id. Findings
/// sit on ordered patches; the remaining patches carry low-amplitude noise.
std::vector<float> image_grid(std::string_view image_id, const ToyModelConfig& config);

// ---------------------------------------------------------------------------
// Injection hooks

enum class SiteKind {
  kEmbeddingOutput,
  kLayerOutput,
  kAttentionOutput,
  kFirstLayerCls,
  kDecoderInputPrefix,
  kEncoderOutputConcat,
};
std::string_view site_kind_name(SiteKind kind);

struct HookSite {
  SiteKind kind = SiteKind::kLayerOutput;
  std::size_t layer = 0;  // used by layer_output / attention_output
  friend bool operator==(const HookSite&, const HookSite&) = default;
};

struct SiteInjection {
  HookSite site;
  Vector direction;  // d_model
  bool norm_preserving = true;
};

/// A compiled intervention the decoder executes. A zero effective strength
/// (λ·γ^t == 0) leaves the forward pass untouched.
struct HookProgram {
  double lambda = 0.0;
  std::optional<double> decay;  // γ in (0, 1]
  std::vector<SiteInjection> sites;
  std::optional<Vector> prefix_token;   // prepended pseudo-token direction
  std::optional<Vector> encoder_token;  // appended encoder-memory direction
  bool record_site_states = false;

  double strength_at(std::size_t step) const;
};

struct SiteState {
  HookSite site;
  std::size_t step = 0;
  std::size_t position = 0;
  double norm_before = 0.0;
  double norm_after = 0.0;
};

/// ‖h‖·normalize(h/‖h‖ + λv). Requires ‖h‖ > 0 and ‖v‖ = 1 (±1e-6).
Vector norm_preserving_inject(std::span<const double> h, std::span<const double> v, double lambda);

struct GenerationTrace {
  std::vector<int> tokens;                      // generated ids, EOS included when emitted
  std::vector<std::vector<double>> step_logits;  // logits that produced tokens[t]
  std::vector<SiteState> site_states;
  /// [step][layer][head] → weights over encoder positions.
  std::vector<std::vector<std::vector<std::vector<double>>>> cross_attention;
};

struct DecodeConfig {
  enum class Mode { kGreedy, kBeam };
  Mode mode = Mode::kBeam;
  std::size_t beam_width = 4;
  std::size_t no_repeat_ngram = 3;
  std::size_t max_new_tokens = 40;

  nlohmann::json to_json() const;
  static DecodeConfig from_json(const nlohmann::json& j);
};

// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 20;
  double lr = 3e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
  /// Probability of training on r_hist instead of r_curr.
  double history_fraction = 0.76;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainReport {
  std::vector<double> epoch_loss;
  double final_loss = 0.0;
  std::size_t steps = 0;
};

struct InferenceWeights;  // float64 copy used by the decoder

class ToyModel {
 public:
  ToyModel(ToyModelConfig config, Vocabulary vocab, std::vector<ParamTensor> params);

  const ToyModelConfig& config() const noexcept { return config_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }
  const std::vector<ParamTensor>& params() const noexcept { return params_; }
  const InferenceWeights& weights() const { return *weights_; }

  /// sha256 over the little-endian float32 parameter blob.
  std::string checksum() const;
  std::size_t parameter_count() const;

  const nlohmann::json& training_meta() const noexcept { return training_meta_; }
  void set_training_meta(nlohmann::json meta) { training_meta_ = std::move(meta); }

  void save(const std::filesystem::path& path) const;
  static ToyModel load(const std::filesystem::path& path);

 private:
  ToyModelConfig config_;
  Vocabulary vocab_;
  std::vector<ParamTensor> params_;
  std::shared_ptr<const InferenceWeights> weights_;
  nlohmann::json training_meta_ = nlohmann::json::object();
};

ToyModel init_model(const ToyModelConfig& config, const Vocabulary& vocab);

struct TrainResult {
  ToyModel model;
  TrainReport report;
};

TrainResult train(const ToyModel& model, const std::vector<PairedReport>& pairs,
                  const TrainConfig& config);

/// Teacher-forced per-layer final-token states: index 0 is the embedding
/// output, index ℓ+1 the output of decoder layer ℓ.
std::vector<Vector> extract_activations(const ToyModel& model, std::string_view image_id,
                                        const Tokens& report);

GenerationTrace generate(const ToyModel& model, std::string_view image_id,
                         const HookProgram* program, const DecodeConfig& decode);

/// Runs the decoder over [BOS, ids...] and returns the logits at every
/// position (size ids.size() + 1 rows would predict one past the end; only
/// the first ids.size() rows are returned: row t predicts ids[t]).
std::vector<std::vector<double>> teacher_forced_logits(const ToyModel& model,
                                                       std::string_view image_id,
                                                       const std::vector<int>& ids,
                                                       const HookProgram* program);

// Training-path helpers exposed for gradient checks.
double sequence_loss(const ToyModel& model, std::string_view image_id, const std::vector<int>& ids);
/// Analytic gradient of sequence_loss in float64, one vector per parameter tensor.
std::vector<std::vector<double>> sequence_gradient(const ToyModel& model,
                                                   std::string_view image_id,
                                                   const std::vector<int>& ids);
/// Same loss with every parameter taken from `params` instead of the model.
double sequence_loss_with(const ToyModel& model, const std::vector<std::vector<double>>& params,
                          std::string_view image_id, const std::vector<int>& ids);

}  // namespace sdls
