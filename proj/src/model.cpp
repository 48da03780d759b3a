#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "model_internal.hpp"
#include "sdls/digest.hpp"
#include "sdls/error.hpp"
#include "sdls/rng.hpp"

namespace sdls {

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(const Tokens& tokens) {
  tokens_ = {"<pad>", "<bos>", "<eos>"};
  tokens_.insert(tokens_.end(), tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw Error(ErrorCode::kVocabulary, "duplicate token '" + tokens_[i] + "'");
  }
}

Vocabulary Vocabulary::for_corpus(const CorpusConfig& config, const CueDictionary& dict) {
  return Vocabulary(
      generator_inventory(make_lexicon(config.label_set_size, config.finding_lexicon_size), dict));
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) throw Error(ErrorCode::kVocabulary, "unknown token '" + std::string(token) + "'");
  return it->second;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<int> Vocabulary::encode(const Tokens& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Tokens Vocabulary::decode(const std::vector<int>& ids) const {
  Tokens out;
  for (int id : ids)
    if (id > kEos) out.push_back(token(id));
  return out;
}

// ---------------------------------------------------------------------------
// Configs

void ToyModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    throw Error(ErrorCode::kConfig, "d_model (" + std::to_string(d_model) +
                                        ") must be divisible by n_heads (" +
                                        std::to_string(n_heads) + ")");
  if (n_dec_layers == 0) throw Error(ErrorCode::kConfig, "need at least one decoder layer");
  if (vocab_size <= static_cast<std::size_t>(Vocabulary::kEos))
    throw Error(ErrorCode::kConfig, "vocab_size must exceed the special tokens");
  if (max_len < 2) throw Error(ErrorCode::kConfig, "max_len must be >= 2");
  if (image_tokens < 4) throw Error(ErrorCode::kConfig, "image_tokens must be >= 4");
  if (d_ff == 0) throw Error(ErrorCode::kConfig, "d_ff must be positive");
}

nlohmann::json ToyModelConfig::to_json() const {
  return {{"d_model", d_model},           {"n_enc_layers", n_enc_layers},
          {"n_dec_layers", n_dec_layers}, {"n_heads", n_heads},
          {"d_ff", d_ff},                 {"vocab_size", vocab_size},
          {"max_len", max_len},           {"image_tokens", image_tokens},
          {"label_set_size", label_set_size}, {"finding_lexicon_size", finding_lexicon_size},
          {"seed", seed}};
}

ToyModelConfig ToyModelConfig::from_json(const nlohmann::json& j) {
  ToyModelConfig c;
  try {
    c.d_model = j.value("d_model", c.d_model);
    c.n_enc_layers = j.value("n_enc_layers", c.n_enc_layers);
    c.n_dec_layers = j.value("n_dec_layers", c.n_dec_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_len = j.value("max_len", c.max_len);
    c.image_tokens = j.value("image_tokens", c.image_tokens);
    c.label_set_size = j.value("label_set_size", c.label_set_size);
    c.finding_lexicon_size = j.value("finding_lexicon_size", c.finding_lexicon_size);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("model config: ") + e.what());
  }
  return c;
}

nlohmann::json DecodeConfig::to_json() const {
  return {{"mode", mode == Mode::kGreedy ? "greedy" : "beam"},
          {"beam_width", beam_width},
          {"no_repeat_ngram", no_repeat_ngram},
          {"max_new_tokens", max_new_tokens}};
}

DecodeConfig DecodeConfig::from_json(const nlohmann::json& j) {
  DecodeConfig d;
  const std::string mode = j.value("mode", std::string("beam"));
  if (mode == "greedy")
    d.mode = Mode::kGreedy;
  else if (mode == "beam")
    d.mode = Mode::kBeam;
  else
    throw Error(ErrorCode::kConfig, "decode mode must be greedy|beam");
  d.beam_width = j.value("beam_width", d.beam_width);
  d.no_repeat_ngram = j.value("no_repeat_ngram", d.no_repeat_ngram);
  d.max_new_tokens = j.value("max_new_tokens", d.max_new_tokens);
  if (d.beam_width == 0) throw Error(ErrorCode::kConfig, "beam_width must be >= 1");
  return d;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs}, {"lr", lr},       {"batch_size", batch_size},
          {"seed", seed},     {"beta1", beta1}, {"beta2", beta2},
          {"eps", eps},       {"clip_norm", clip_norm}, {"history_fraction", history_fraction}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.history_fraction = j.value("history_fraction", c.history_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("train config: ") + e.what());
  }
  if (c.batch_size == 0) throw Error(ErrorCode::kConfig, "batch_size must be >= 1");
  if (!(c.history_fraction >= 0.0 && c.history_fraction <= 1.0))
    throw Error(ErrorCode::kConfig, "history_fraction must lie in [0, 1]");
  return c;
}

// ---------------------------------------------------------------------------
// Layout

namespace detail {

Layout make_layout(const ToyModelConfig& c) {
  Layout L{};
  auto add = [&](std::string name, std::size_t rows, std::size_t cols, Init init) {
    L.specs.push_back({std::move(name), rows, cols, init});
    return static_cast<int>(L.specs.size()) - 1;
  };
  const std::size_t d = c.d_model;
  auto attn = [&](const std::string& p) {
    AttnIdx a{};
    a.wq = add(p + ".wq", d, d, Init::kGaussian);
    a.bq = add(p + ".bq", 1, d, Init::kZero);
    a.wk = add(p + ".wk", d, d, Init::kGaussian);
    a.bk = add(p + ".bk", 1, d, Init::kZero);
    a.wv = add(p + ".wv", d, d, Init::kGaussian);
    a.bv = add(p + ".bv", 1, d, Init::kZero);
    a.wo = add(p + ".wo", d, d, Init::kGaussian);
    a.bo = add(p + ".bo", 1, d, Init::kZero);
    return a;
  };
  auto ff = [&](const std::string& p) {
    FfIdx f{};
    f.w1 = add(p + ".w1", d, c.d_ff, Init::kGaussian);
    f.b1 = add(p + ".b1", 1, c.d_ff, Init::kZero);
    f.w2 = add(p + ".w2", c.d_ff, d, Init::kGaussian);
    f.b2 = add(p + ".b2", 1, d, Init::kZero);
    return f;
  };
  L.tok_emb = add("tok_emb", c.vocab_size, d, Init::kGaussian);
  L.dec_pos = add("dec_pos", c.max_len, d, Init::kGaussian);
  L.img_w = add("img_proj.w", d, d, Init::kGaussian);
  L.img_b = add("img_proj.b", 1, d, Init::kZero);
  L.enc_pos = add("enc_pos", c.image_tokens, d, Init::kGaussian);
  for (std::size_t l = 0; l < c.n_enc_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    EncLayerIdx e{};
    e.ln1_g = add(p + ".ln1.g", 1, d, Init::kOne);
    e.ln1_b = add(p + ".ln1.b", 1, d, Init::kZero);
    e.attn = attn(p + ".attn");
    e.ln2_g = add(p + ".ln2.g", 1, d, Init::kOne);
    e.ln2_b = add(p + ".ln2.b", 1, d, Init::kZero);
    e.ff = ff(p + ".ff");
    L.enc.push_back(e);
  }
  L.enc_ln_g = add("enc.ln_f.g", 1, d, Init::kOne);
  L.enc_ln_b = add("enc.ln_f.b", 1, d, Init::kZero);
  for (std::size_t l = 0; l < c.n_dec_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    DecLayerIdx e{};
    e.ln1_g = add(p + ".ln1.g", 1, d, Init::kOne);
    e.ln1_b = add(p + ".ln1.b", 1, d, Init::kZero);
    e.self = attn(p + ".self");
    e.ln2_g = add(p + ".ln2.g", 1, d, Init::kOne);
    e.ln2_b = add(p + ".ln2.b", 1, d, Init::kZero);
    e.cross = attn(p + ".cross");
    e.ln3_g = add(p + ".ln3.g", 1, d, Init::kOne);
    e.ln3_b = add(p + ".ln3.b", 1, d, Init::kZero);
    e.ff = ff(p + ".ff");
    L.dec.push_back(e);
  }
  L.dec_ln_g = add("dec.ln_f.g", 1, d, Init::kOne);
  L.dec_ln_b = add("dec.ln_f.b", 1, d, Init::kZero);
  L.out_w = add("out.w", d, c.vocab_size, Init::kGaussian);
  L.out_b = add("out.b", 1, c.vocab_size, Init::kZero);
  return L;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model

namespace {

std::shared_ptr<const InferenceWeights> make_weights(const ToyModelConfig& config,
                                                     const std::vector<ParamTensor>& params) {
  auto w = std::make_shared<InferenceWeights>();
  w->layout = detail::make_layout(config);
  for (const auto& p : params) w->tensors.emplace_back(p.data.begin(), p.data.end());
  return w;
}

std::vector<std::uint8_t> param_blob(const std::vector<ParamTensor>& params) {
  std::vector<std::uint8_t> blob;
  for (const auto& p : params)
    for (float x : p.data) append_f32_le(blob, x);
  return blob;
}

constexpr char kCheckpointMagic[8] = {'S', 'D', 'L', 'S', 'C', 'K', 'P', 'T'};

}  // namespace

ToyModel::ToyModel(ToyModelConfig config, Vocabulary vocab, std::vector<ParamTensor> params)
    : config_(std::move(config)), vocab_(std::move(vocab)), params_(std::move(params)) {
  config_.validate();
  if (config_.vocab_size != vocab_.size())
    throw Error(ErrorCode::kConfig, "vocab_size does not match the vocabulary");
  const auto layout = detail::make_layout(config_);
  if (layout.specs.size() != params_.size())
    throw Error(ErrorCode::kGeometry, "parameter count does not match the layout");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& s = layout.specs[i];
    const auto& p = params_[i];
    if (p.name != s.name || p.rows != s.rows || p.cols != s.cols || p.data.size() != s.rows * s.cols)
      throw Error(ErrorCode::kGeometry, "parameter '" + p.name + "' does not match layout entry '" +
                                            s.name + "'");
  }
  weights_ = make_weights(config_, params_);
}

std::string ToyModel::checksum() const { return sha256_hex(param_blob(params_)); }

std::size_t ToyModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.data.size();
  return n;
}

void ToyModel::save(const std::filesystem::path& path) const {
  const auto blob = param_blob(params_);
  nlohmann::json order = nlohmann::json::array();
  for (const auto& p : params_) order.push_back({{"name", p.name}, {"shape", {p.rows, p.cols}}});
  nlohmann::json header = {{"format", "sdls-checkpoint"},
                           {"version", 1},
                           {"config", config_.to_json()},
                           {"seed", config_.seed},
                           {"vocab", vocab_.tokens()},
                           {"training", training_meta_},
                           {"param_order", order},
                           {"dtype", "float32"},
                           {"byte_order", "little"},
                           {"blob_bytes", blob.size()},
                           {"checksum", sha256_hex(blob)}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> bytes(kCheckpointMagic, kCheckpointMagic + 8);
  append_u32_le(bytes, static_cast<std::uint32_t>(text.size()));
  bytes.insert(bytes.end(), text.begin(), text.end());
  bytes.insert(bytes.end(), blob.begin(), blob.end());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

ToyModel ToyModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw Error(ErrorCode::kParse, path.string() + ": not a checkpoint (bad magic)");
  const std::uint32_t header_len = read_u32_le(bytes.data() + 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(header_len))
    throw Error(ErrorCode::kTruncated, path.string() + ": header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  std::vector<std::uint8_t> blob(bytes.begin() + 12 + header_len, bytes.end());
  if (blob.size() != header.at("blob_bytes").get<std::size_t>())
    throw Error(ErrorCode::kTruncated, path.string() + ": parameter blob has " +
                                           std::to_string(blob.size()) + " bytes, header says " +
                                           std::to_string(header.at("blob_bytes").get<std::size_t>()));
  if (sha256_hex(blob) != header.at("checksum").get<std::string>())
    throw Error(ErrorCode::kChecksum, path.string() + ": parameter checksum mismatch");

  ToyModelConfig config = ToyModelConfig::from_json(header.at("config"));
  Tokens tokens = header.at("vocab").get<Tokens>();
  if (tokens.size() < 3) throw Error(ErrorCode::kParse, "vocabulary too small");
  Vocabulary vocab(Tokens(tokens.begin() + 3, tokens.end()));
  const auto layout = detail::make_layout(config);
  std::vector<ParamTensor> params;
  std::size_t offset = 0;
  for (const auto& s : layout.specs) {
    ParamTensor p{s.name, s.rows, s.cols, std::vector<float>(s.rows * s.cols)};
    if (offset + 4 * p.data.size() > blob.size())
      throw Error(ErrorCode::kTruncated, "parameter blob ends inside '" + s.name + "'");
    for (float& x : p.data) {
      x = read_f32_le(blob.data() + offset);
      offset += 4;
    }
    params.push_back(std::move(p));
  }
  ToyModel model(config, std::move(vocab), std::move(params));
  model.set_training_meta(header.value("training", nlohmann::json::object()));
  return model;
}

ToyModel init_model(const ToyModelConfig& config, const Vocabulary& vocab) {
  ToyModelConfig c = config;
  if (c.vocab_size == 0) c.vocab_size = vocab.size();
  c.validate();
  const auto layout = detail::make_layout(c);
  Rng rng(c.seed);
  std::vector<ParamTensor> params;
  for (const auto& s : layout.specs) {
    ParamTensor p{s.name, s.rows, s.cols, std::vector<float>(s.rows * s.cols)};
    for (float& x : p.data) {
      switch (s.init) {
        case detail::Init::kGaussian: x = static_cast<float>(0.02 * rng.normal()); break;
        case detail::Init::kZero: x = 0.0f; break;
        case detail::Init::kOne: x = 1.0f; break;
      }
    }
    params.push_back(std::move(p));
  }
  return ToyModel(c, vocab, std::move(params));
}

// ---------------------------------------------------------------------------
// Synthetic image grid

std::vector<float> image_grid(std::string_view image_id, const ToyModelConfig& config) {
  const FindingLexicon lexicon = make_lexicon(config.label_set_size, config.finding_lexicon_size);
  const std::size_t d = config.d_model;
  const std::size_t p = config.image_tokens;

  // World embeddings: fixed, independent of model seed and image id.
  Rng world(0x5D15ULL);
  auto unit = [&](Rng& r) {
    std::vector<double> v(d);
    for (double& x : v) x = r.normal() / std::sqrt(static_cast<double>(d));
    return v;
  };
  std::vector<std::vector<double>> label_emb, sev_emb, lat_emb;
  std::vector<std::vector<std::vector<double>>> term_emb;
  for (const auto& l : lexicon.labels) {
    label_emb.push_back(unit(world));
    term_emb.emplace_back();
    for (std::size_t t = 0; t < l.terms.size(); ++t) term_emb.back().push_back(unit(world));
  }
  for (std::size_t i = 0; i < kSeverities.size(); ++i) sev_emb.push_back(unit(world));
  for (std::size_t i = 0; i < kLateralities.size(); ++i) lat_emb.push_back(unit(world));
  const auto negation_emb = unit(world);
  const auto normal_emb = unit(world);

  const ImageSpec spec = image_spec(image_id, lexicon);
  Rng rng(stable_hash(image_id, 0x1A6Eu));
  std::vector<double> grid(p * d);
  for (double& x : grid) x = 0.15 * rng.normal() / std::sqrt(static_cast<double>(d));

  const std::size_t needed = std::max<std::size_t>(spec.findings.size(), 1) + (spec.negated_label ? 1 : 0);
  std::vector<std::size_t> slots(p);
  for (std::size_t i = 0; i < p; ++i) slots[i] = i;
  rng.shuffle(slots.begin(), slots.end());
  slots.resize(std::min(needed, p));
  std::sort(slots.begin(), slots.end());

  auto place = [&](std::size_t slot, std::initializer_list<std::pair<const std::vector<double>*, double>> parts) {
    for (const auto& [vec, w] : parts)
      for (std::size_t k = 0; k < d; ++k) grid[slot * d + k] += w * (*vec)[k] * std::sqrt(static_cast<double>(d)) * 0.5;
  };
  std::size_t next = 0;
  if (spec.findings.empty()) {
    place(slots[next++], {{&normal_emb, 1.0}, {&term_emb[0][spec.normal_term], 0.8}});
  }
  for (const auto& f : spec.findings) {
    place(slots[next++], {{&label_emb[f.label], 1.0},
                          {&term_emb[f.label][f.term], 0.8},
                          {&sev_emb[f.severity], 0.6},
                          {&lat_emb[f.laterality], 0.6}});
  }
  if (spec.negated_label) place(slots[next++], {{&negation_emb, 1.0}, {&label_emb[*spec.negated_label], 1.0}});

  return std::vector<float>(grid.begin(), grid.end());
}

// ---------------------------------------------------------------------------
// Hooks

std::string_view site_kind_name(SiteKind kind) {
  switch (kind) {
    case SiteKind::kEmbeddingOutput: return "embedding_output";
    case SiteKind::kLayerOutput: return "layer_output";
    case SiteKind::kAttentionOutput: return "attention_output";
    case SiteKind::kFirstLayerCls: return "first_layer_cls";
    case SiteKind::kDecoderInputPrefix: return "decoder_input_prefix";
    case SiteKind::kEncoderOutputConcat: return "encoder_output_concat";
  }
  return "unknown";
}

double HookProgram::strength_at(std::size_t step) const {
  if (!decay) return lambda;
  return lambda * std::pow(*decay, static_cast<double>(step));
}

Vector norm_preserving_inject(std::span<const double> h, std::span<const double> v, double lambda) {
  if (h.size() != v.size()) throw Error(ErrorCode::kGeometry, "state and direction dims differ");
  if (!std::isfinite(lambda)) throw Error(ErrorCode::kNonFinite, "lambda is not finite");
  const double hn = l2_norm(h);
  if (!(hn > 0.0)) throw Error(ErrorCode::kZeroVector, "hidden state has zero norm");
  if (std::abs(l2_norm(v) - 1.0) > 1e-6)
    throw Error(ErrorCode::kInvalidArgument, "steering direction must be unit norm");
  if (lambda == 0.0) return Vector(h.begin(), h.end());
  Vector mixed(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) mixed[i] = h[i] / hn + lambda * v[i];
  const double mn = l2_norm(mixed);
  if (mn < 1e-10)
    throw Error(ErrorCode::kCancellation, "h/|h| + lambda*v cancels (norm < 1e-10)");
  for (double& x : mixed) x = hn * (x / mn);
  return mixed;
}

}  // namespace sdls
