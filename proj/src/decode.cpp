#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "model_internal.hpp"
#include "sdls/error.hpp"

namespace sdls {

namespace {

using detail::AttnIdx;
using detail::FfIdx;

// y[out] = x[in] · W[in×out] + b
void linear(const double* x, std::size_t in, const std::vector<double>& w, const std::vector<double>& b,
            std::size_t out, double* y) {
  for (std::size_t j = 0; j < out; ++j) y[j] = b[j];
  for (std::size_t i = 0; i < in; ++i) {
    const double xi = x[i];
    const double* row = w.data() + i * out;
    for (std::size_t j = 0; j < out; ++j) y[j] += xi * row[j];
  }
}

Vector layer_norm(const Vector& x, const std::vector<double>& g, const std::vector<double>& b) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double is = 1.0 / std::sqrt(var + 1e-5);
  Vector y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) * is * g[i] + b[i];
  return y;
}

/// Rows of a small row-major matrix, growable.
struct Rows {
  std::size_t cols = 0;
  std::vector<double> data;
  std::size_t size() const { return cols == 0 ? 0 : data.size() / cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }
  void push(const Vector& v) { data.insert(data.end(), v.begin(), v.end()); }
};

/// Single-query multi-head attention; probs (optional) receives [head][key].
Vector attend(const Vector& q, const Rows& k, const Rows& v, std::size_t heads,
              std::vector<std::vector<double>>* probs) {
  const std::size_t d = q.size();
  const std::size_t dh = d / heads;
  const std::size_t n = k.size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Vector out(d, 0.0);
  std::vector<double> s(n);
  for (std::size_t h = 0; h < heads; ++h) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      const double* kr = k.row(j) + h * dh;
      for (std::size_t c = 0; c < dh; ++c) acc += q[h * dh + c] * kr[c];
      s[j] = acc * scale;
      mx = std::max(mx, s[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      s[j] = std::exp(s[j] - mx);
      sum += s[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      s[j] /= sum;
      const double* vr = v.row(j) + h * dh;
      for (std::size_t c = 0; c < dh; ++c) out[h * dh + c] += s[j] * vr[c];
    }
    if (probs) probs->emplace_back(s.begin(), s.end());
  }
  return out;
}

double rms_row_norm(const std::vector<double>& data, std::size_t cols) {
  const std::size_t rows = data.size() / cols;
  double sq = 0.0;
  for (double x : data) sq += x * x;
  return std::sqrt(sq / static_cast<double>(rows));
}

struct StepOutput {
  Vector logits;
  std::vector<std::vector<std::vector<double>>> cross;  // [layer][head][pos]
  std::vector<Vector> states;                            // embedding + each layer output
};

/// Self-attention cache of one hypothesis.
struct Cache {
  std::vector<Rows> k, v;
  std::size_t position = 0;  // next positional index
};

class Decoder {
 public:
  Decoder(const ToyModel& model, std::string_view image_id, const HookProgram* program)
      : m_(model), W_(model.weights()), L_(W_.layout), c_(model.config()), program_(program) {
    d_ = c_.d_model;
    if (program_) validate_program();
    encode(image_id);
  }

  Cache start() {
    Cache cache;
    cache.k.assign(c_.n_dec_layers, Rows{d_, {}});
    cache.v.assign(c_.n_dec_layers, Rows{d_, {}});
    if (program_ && program_->prefix_token) {
      const double lam = program_->strength_at(0);
      if (lam != 0.0) {
        const double scale = lam * rms_row_norm(W_.at(L_.tok_emb), d_);
        Vector x(d_);
        for (std::size_t i = 0; i < d_; ++i) x[i] = scale * (*program_->prefix_token)[i];
        run(cache, std::move(x), std::nullopt, false, false);
      }
    }
    return cache;
  }

  StepOutput step(Cache& cache, int token, bool keep_states, bool keep_cross) {
    const std::size_t pos = cache.position;
    if (pos >= c_.max_len) throw Error(ErrorCode::kInvalidArgument, "decoder position exceeds max_len");
    if (token < 0 || static_cast<std::size_t>(token) >= m_.vocab().size())
      throw Error(ErrorCode::kVocabulary, "token id out of range");
    const auto& te = W_.at(L_.tok_emb);
    const auto& pe = W_.at(L_.dec_pos);
    Vector x(d_);
    for (std::size_t i = 0; i < d_; ++i)
      x[i] = te[static_cast<std::size_t>(token) * d_ + i] + pe[pos * d_ + i];
    ++cache.position;
    return run(cache, std::move(x), pos, keep_states, keep_cross);
  }

  std::vector<SiteState> site_states;

 private:
  void validate_program() const {
    for (const auto& s : program_->sites) {
      if ((s.site.kind == SiteKind::kLayerOutput || s.site.kind == SiteKind::kAttentionOutput) &&
          s.site.layer >= c_.n_dec_layers)
        throw Error(ErrorCode::kPlan, std::string(site_kind_name(s.site.kind)) + " layer " +
                                          std::to_string(s.site.layer) + " out of range");
      if (s.direction.size() != d_)
        throw Error(ErrorCode::kGeometry, "site direction has dim " +
                                              std::to_string(s.direction.size()) + ", expected " +
                                              std::to_string(d_));
    }
    for (const auto* tok : {&program_->prefix_token, &program_->encoder_token})
      if (*tok && (*tok)->size() != d_) throw Error(ErrorCode::kGeometry, "pseudo-token dim mismatch");
    if (!std::isfinite(program_->lambda)) throw Error(ErrorCode::kPlan, "lambda is not finite");
  }

  void encode(std::string_view image_id) {
    const std::size_t P = c_.image_tokens;
    const auto grid = image_grid(image_id, c_);
    std::vector<Vector> x(P, Vector(d_));
    const auto& ep = W_.at(L_.enc_pos);
    for (std::size_t r = 0; r < P; ++r) {
      Vector in(grid.begin() + static_cast<std::ptrdiff_t>(r * d_),
                grid.begin() + static_cast<std::ptrdiff_t>((r + 1) * d_));
      linear(in.data(), d_, W_.at(L_.img_w), W_.at(L_.img_b), d_, x[r].data());
      for (std::size_t i = 0; i < d_; ++i) x[r][i] += ep[r * d_ + i];
    }
    for (const auto& e : L_.enc) {
      Rows k{d_, {}}, v{d_, {}};
      std::vector<Vector> q(P);
      for (std::size_t r = 0; r < P; ++r) {
        const Vector a = layer_norm(x[r], W_.at(e.ln1_g), W_.at(e.ln1_b));
        q[r] = proj(a, e.attn.wq, e.attn.bq);
        k.push(proj(a, e.attn.wk, e.attn.bk));
        v.push(proj(a, e.attn.wv, e.attn.bv));
      }
      for (std::size_t r = 0; r < P; ++r) {
        const Vector o = proj(attend(q[r], k, v, c_.n_heads, nullptr), e.attn.wo, e.attn.bo);
        for (std::size_t i = 0; i < d_; ++i) x[r][i] += o[i];
      }
      for (std::size_t r = 0; r < P; ++r) {
        const Vector f = ff(e.ff, layer_norm(x[r], W_.at(e.ln2_g), W_.at(e.ln2_b)));
        for (std::size_t i = 0; i < d_; ++i) x[r][i] += f[i];
      }
    }
    Rows memory{d_, {}};
    for (std::size_t r = 0; r < P; ++r) memory.push(layer_norm(x[r], W_.at(L_.enc_ln_g), W_.at(L_.enc_ln_b)));
    if (program_ && program_->encoder_token) {
      const double lam = program_->strength_at(0);
      if (lam != 0.0) {
        const double scale = lam * rms_row_norm(memory.data, d_);
        Vector extra(d_);
        for (std::size_t i = 0; i < d_; ++i) extra[i] = scale * (*program_->encoder_token)[i];
        memory.push(extra);
      }
    }
    for (const auto& e : L_.dec) {
      Rows k{d_, {}}, v{d_, {}};
      for (std::size_t r = 0; r < memory.size(); ++r) {
        const Vector row(memory.row(r), memory.row(r) + d_);
        k.push(proj(row, e.cross.wk, e.cross.bk));
        v.push(proj(row, e.cross.wv, e.cross.bv));
      }
      cross_k_.push_back(std::move(k));
      cross_v_.push_back(std::move(v));
    }
  }

  Vector proj(const Vector& x, int w, int b) const {
    const auto& bias = W_.at(b);
    Vector y(bias.size());
    linear(x.data(), x.size(), W_.at(w), bias, bias.size(), y.data());
    return y;
  }

  Vector ff(const FfIdx& f, const Vector& x) const {
    Vector h = proj(x, f.w1, f.b1);
    for (double& v : h) v = std::max(v, 0.0);
    return proj(h, f.w2, f.b2);
  }

  void hook(Vector& h, SiteKind kind, std::size_t layer, std::optional<std::size_t> pos) {
    if (!program_ || !pos) return;
    const double lam = program_->strength_at(*pos);
    if (lam == 0.0) return;
    for (const auto& s : program_->sites) {
      if (s.site.kind != kind) continue;
      if ((kind == SiteKind::kLayerOutput || kind == SiteKind::kAttentionOutput) && s.site.layer != layer)
        continue;
      const double before = l2_norm(h);
      if (s.norm_preserving) {
        h = norm_preserving_inject(h, s.direction, lam);
      } else {
        for (std::size_t i = 0; i < d_; ++i) h[i] += lam * s.direction[i];
      }
      if (program_->record_site_states) site_states.push_back({s.site, *pos, *pos, before, l2_norm(h)});
    }
  }

  StepOutput run(Cache& cache, Vector x, std::optional<std::size_t> pos, bool keep_states, bool keep_cross) {
    StepOutput out;
    hook(x, SiteKind::kEmbeddingOutput, 0, pos);
    if (keep_states) out.states.push_back(x);
    for (std::size_t l = 0; l < L_.dec.size(); ++l) {
      const auto& e = L_.dec[l];
      const Vector a = layer_norm(x, W_.at(e.ln1_g), W_.at(e.ln1_b));
      cache.k[l].push(proj(a, e.self.wk, e.self.bk));
      cache.v[l].push(proj(a, e.self.wv, e.self.bv));
      Vector sa = proj(attend(proj(a, e.self.wq, e.self.bq), cache.k[l], cache.v[l], c_.n_heads, nullptr),
                       e.self.wo, e.self.bo);
      hook(sa, SiteKind::kAttentionOutput, l, pos);
      for (std::size_t i = 0; i < d_; ++i) x[i] += sa[i];

      const Vector c = layer_norm(x, W_.at(e.ln2_g), W_.at(e.ln2_b));
      std::vector<std::vector<double>> probs;
      const Vector ca = proj(attend(proj(c, e.cross.wq, e.cross.bq), cross_k_[l], cross_v_[l], c_.n_heads,
                                    keep_cross ? &probs : nullptr),
                             e.cross.wo, e.cross.bo);
      if (keep_cross) out.cross.push_back(std::move(probs));
      for (std::size_t i = 0; i < d_; ++i) x[i] += ca[i];

      const Vector f = ff(e.ff, layer_norm(x, W_.at(e.ln3_g), W_.at(e.ln3_b)));
      for (std::size_t i = 0; i < d_; ++i) x[i] += f[i];
      hook(x, SiteKind::kLayerOutput, l, pos);
      if (l == 0 && pos && *pos == 0) hook(x, SiteKind::kFirstLayerCls, 0, pos);
      if (keep_states) out.states.push_back(x);
    }
    out.logits = proj(layer_norm(x, W_.at(L_.dec_ln_g), W_.at(L_.dec_ln_b)), L_.out_w, L_.out_b);
    return out;
  }

  const ToyModel& m_;
  const InferenceWeights& W_;
  const detail::Layout& L_;
  const ToyModelConfig& c_;
  const HookProgram* program_;
  std::size_t d_ = 0;
  std::vector<Rows> cross_k_, cross_v_;
};

std::vector<double> log_softmax(const Vector& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

/// Tokens that would repeat an n-gram already present in `seq`.
std::vector<int> banned_tokens(const std::vector<int>& seq, std::size_t n) {
  std::vector<int> banned;
  if (n == 0 || seq.size() + 1 < n) return banned;
  const std::size_t tail = seq.size() - (n - 1);
  for (std::size_t s = 0; s + n <= seq.size(); ++s)
    if (std::equal(seq.begin() + static_cast<std::ptrdiff_t>(s),
                   seq.begin() + static_cast<std::ptrdiff_t>(s + n - 1),
                   seq.begin() + static_cast<std::ptrdiff_t>(tail)))
      banned.push_back(seq[s + n - 1]);
  return banned;
}

struct PathNode {
  std::shared_ptr<const PathNode> parent;
  int token = 0;
  Vector logits;
  std::vector<std::vector<std::vector<double>>> cross;
};

struct Hyp {
  Cache cache;
  std::shared_ptr<const PathNode> tail;
  std::vector<int> tokens;
  double score = 0.0;
  StepOutput next;  // output after feeding the last token
};

GenerationTrace unwind(const std::shared_ptr<const PathNode>& tail) {
  GenerationTrace trace;
  std::vector<const PathNode*> nodes;
  for (const PathNode* n = tail.get(); n; n = n->parent.get()) nodes.push_back(n);
  std::reverse(nodes.begin(), nodes.end());
  for (const PathNode* n : nodes) {
    trace.tokens.push_back(n->token);
    trace.step_logits.push_back(n->logits);
    trace.cross_attention.push_back(n->cross);
  }
  return trace;
}

std::size_t token_budget(const ToyModel& model, const DecodeConfig& decode) {
  // BOS occupies position 0; the last generated token is never fed back.
  return std::min(decode.max_new_tokens, model.config().max_len);
}

GenerationTrace greedy(Decoder& dec, const ToyModel& model, const DecodeConfig& decode) {
  Cache cache = dec.start();
  StepOutput out = dec.step(cache, Vocabulary::kBos, false, true);
  std::shared_ptr<const PathNode> tail;
  std::vector<int> seq;
  const std::size_t budget = token_budget(model, decode);
  for (std::size_t t = 0; t < budget; ++t) {
    Vector scores = out.logits;
    for (int b : banned_tokens(seq, decode.no_repeat_ngram))
      scores[static_cast<std::size_t>(b)] = -std::numeric_limits<double>::infinity();
    scores[Vocabulary::kPad] = scores[Vocabulary::kBos] = -std::numeric_limits<double>::infinity();
    const int tok = static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    tail = std::make_shared<PathNode>(PathNode{tail, tok, std::move(out.logits), std::move(out.cross)});
    seq.push_back(tok);
    if (tok == Vocabulary::kEos || t + 1 == budget) break;
    out = dec.step(cache, tok, false, true);
  }
  return unwind(tail);
}

GenerationTrace beam(Decoder& dec, const ToyModel& model, const DecodeConfig& decode) {
  const std::size_t W = decode.beam_width;
  const std::size_t budget = token_budget(model, decode);
  const double ninf = -std::numeric_limits<double>::infinity();

  std::vector<Hyp> live(1);
  live[0].cache = dec.start();
  live[0].next = dec.step(live[0].cache, Vocabulary::kBos, false, true);

  struct Finished {
    std::shared_ptr<const PathNode> tail;
    double norm_score;
  };
  std::vector<Finished> finished;

  struct Cand {
    double score;
    std::size_t hyp;
    int token;
  };

  for (std::size_t t = 0; t < budget && !live.empty(); ++t) {
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      std::vector<double> lp = log_softmax(live[h].next.logits);
      for (int b : banned_tokens(live[h].tokens, decode.no_repeat_ngram)) lp[static_cast<std::size_t>(b)] = ninf;
      lp[Vocabulary::kPad] = lp[Vocabulary::kBos] = ninf;
      std::vector<int> idx(lp.size());
      std::iota(idx.begin(), idx.end(), 0);
      const std::size_t take = std::min(2 * W, idx.size());
      std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                        [&](int a, int b) { return lp[a] > lp[b] || (lp[a] == lp[b] && a < b); });
      for (std::size_t i = 0; i < take; ++i)
        if (lp[idx[i]] > ninf) cands.push_back({live[h].score + lp[idx[i]], h, idx[i]});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.hyp != b.hyp) return a.hyp < b.hyp;
      return a.token < b.token;
    });

    std::vector<Hyp> next;
    const bool last = t + 1 == budget;
    for (std::size_t rank = 0; rank < cands.size() && next.size() < W; ++rank) {
      const Cand& c = cands[rank];
      const Hyp& parent = live[c.hyp];
      auto node = std::make_shared<PathNode>(PathNode{parent.tail, c.token, parent.next.logits, parent.next.cross});
      const double len = static_cast<double>(parent.tokens.size() + 1);
      if (c.token == Vocabulary::kEos) {
        if (rank < W) finished.push_back({node, c.score / len});
        continue;
      }
      if (last) {
        finished.push_back({node, c.score / len});
        continue;
      }
      Hyp h;
      h.cache = parent.cache;
      h.tail = node;
      h.tokens = parent.tokens;
      h.tokens.push_back(c.token);
      h.score = c.score;
      h.next = dec.step(h.cache, c.token, false, true);
      next.push_back(std::move(h));
    }
    live = std::move(next);
    if (finished.size() >= W) break;
  }
  if (finished.empty()) return {};
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i)
    if (finished[i].norm_score > finished[best].norm_score) best = i;
  return unwind(finished[best].tail);
}

}  // namespace

GenerationTrace generate(const ToyModel& model, std::string_view image_id, const HookProgram* program,
                         const DecodeConfig& decode) {
  if (decode.beam_width == 0) throw Error(ErrorCode::kConfig, "beam_width must be >= 1");
  Decoder dec(model, image_id, program);
  GenerationTrace trace = decode.mode == DecodeConfig::Mode::kGreedy ? greedy(dec, model, decode)
                                                                      : beam(dec, model, decode);
  trace.site_states = std::move(dec.site_states);
  return trace;
}

std::vector<std::vector<double>> teacher_forced_logits(const ToyModel& model, std::string_view image_id,
                                                       const std::vector<int>& ids,
                                                       const HookProgram* program) {
  if (ids.size() > model.config().max_len)
    throw Error(ErrorCode::kInvalidArgument, "sequence longer than max_len");
  Decoder dec(model, image_id, program);
  Cache cache = dec.start();
  std::vector<std::vector<double>> out;
  int input = Vocabulary::kBos;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    out.push_back(dec.step(cache, input, false, false).logits);
    input = ids[t];
  }
  return out;
}

std::vector<Vector> extract_activations(const ToyModel& model, std::string_view image_id,
                                        const Tokens& report) {
  if (report.empty()) throw Error(ErrorCode::kInvalidArgument, "empty report");
  if (report.size() + 1 > model.config().max_len)
    throw Error(ErrorCode::kInvalidArgument, "report longer than max_len - 1");
  const std::vector<int> ids = model.vocab().encode(report);
  Decoder dec(model, image_id, nullptr);
  Cache cache = dec.start();
  dec.step(cache, Vocabulary::kBos, false, false);
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) dec.step(cache, ids[t], false, false);
  return dec.step(cache, ids.back(), true, false).states;
}

}  // namespace sdls
