#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "model_internal.hpp"
#include "sdls/error.hpp"
#include "sdls/rng.hpp"
#include "tape.hpp"

namespace sdls {

namespace {

using detail::Layout;
using detail::Tape;

struct Sample {
  const std::vector<float>* grid;  // image_tokens × d
  std::vector<int> ids;            // report ids without BOS/EOS
};

template <typename T>
class Forward {
 public:
  using M = detail::Mat<T>;
  using Seg = typename Tape<T>::Segment;

  Forward(Tape<T>& tape, const ToyModelConfig& config, const Layout& layout,
          std::vector<M>& values, std::vector<M>* grads)
      : t_(tape), c_(config), L_(layout) {
    for (std::size_t i = 0; i < values.size(); ++i)
      p_.push_back(t_.param(&values[i], grads ? &(*grads)[i] : nullptr));
  }

  /// Mean next-token cross-entropy over every target in the batch.
  int loss(const std::vector<Sample>& batch) {
    const auto d = static_cast<Eigen::Index>(c_.d_model);
    const auto P = static_cast<Eigen::Index>(c_.image_tokens);
    const auto B = static_cast<Eigen::Index>(batch.size());
    const int heads = static_cast<int>(c_.n_heads);

    // Encoder over stacked image grids.
    M grid(B * P, d);
    std::vector<int> enc_pos_ids;
    std::vector<Seg> enc_segs;
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto& g = *batch[static_cast<std::size_t>(b)].grid;
      for (Eigen::Index r = 0; r < P; ++r) {
        for (Eigen::Index k = 0; k < d; ++k) grid(b * P + r, k) = static_cast<T>(g[static_cast<std::size_t>(r * d + k)]);
        enc_pos_ids.push_back(static_cast<int>(r));
      }
      enc_segs.push_back({b * P, P, b * P, P});
    }
    int x = t_.add(linear(t_.constant(std::move(grid)), L_.img_w, L_.img_b),
                   t_.gather_rows(p(L_.enc_pos), enc_pos_ids));
    for (const auto& e : L_.enc) {
      int a = t_.layer_norm(x, p(e.ln1_g), p(e.ln1_b));
      x = t_.add(x, attention(e.attn, a, a, heads, false, enc_segs));
      int f = t_.layer_norm(x, p(e.ln2_g), p(e.ln2_b));
      x = t_.add(x, ff(e.ff, f));
    }
    const int memory = t_.layer_norm(x, p(L_.enc_ln_g), p(L_.enc_ln_b));

    // Decoder, teacher-forced on [BOS, ids...] → [ids..., EOS].
    std::vector<int> inputs, positions, targets;
    std::vector<Seg> self_segs, cross_segs;
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto& ids = batch[static_cast<std::size_t>(b)].ids;
      const auto n = static_cast<Eigen::Index>(ids.size()) + 1;
      const auto q0 = static_cast<Eigen::Index>(inputs.size());
      inputs.push_back(Vocabulary::kBos);
      inputs.insert(inputs.end(), ids.begin(), ids.end());
      targets.insert(targets.end(), ids.begin(), ids.end());
      targets.push_back(Vocabulary::kEos);
      for (Eigen::Index i = 0; i < n; ++i) positions.push_back(static_cast<int>(i));
      self_segs.push_back({q0, n, q0, n});
      cross_segs.push_back({q0, n, b * P, P});
    }
    int y = t_.add(t_.gather_rows(p(L_.tok_emb), inputs), t_.gather_rows(p(L_.dec_pos), positions));
    for (const auto& e : L_.dec) {
      int a = t_.layer_norm(y, p(e.ln1_g), p(e.ln1_b));
      y = t_.add(y, attention(e.self, a, a, heads, true, self_segs));
      int c = t_.layer_norm(y, p(e.ln2_g), p(e.ln2_b));
      y = t_.add(y, attention(e.cross, c, memory, heads, false, cross_segs));
      int f = t_.layer_norm(y, p(e.ln3_g), p(e.ln3_b));
      y = t_.add(y, ff(e.ff, f));
    }
    int h = t_.layer_norm(y, p(L_.dec_ln_g), p(L_.dec_ln_b));
    return t_.cross_entropy(linear(h, L_.out_w, L_.out_b), std::move(targets));
  }

 private:
  int p(int idx) const { return p_[static_cast<std::size_t>(idx)]; }

  int linear(int x, int w, int b) { return t_.add_bias(t_.matmul(x, p(w)), p(b)); }

  int attention(const detail::AttnIdx& a, int q_in, int kv_in, int heads, bool causal,
                const std::vector<Seg>& segs) {
    int q = linear(q_in, a.wq, a.bq);
    int k = linear(kv_in, a.wk, a.bk);
    int v = linear(kv_in, a.wv, a.bv);
    return linear(t_.attention(q, k, v, heads, causal, segs), a.wo, a.bo);
  }

  int ff(const detail::FfIdx& f, int x) {
    return linear(t_.relu(linear(x, f.w1, f.b1)), f.w2, f.b2);
  }

  Tape<T>& t_;
  const ToyModelConfig& c_;
  const Layout& L_;
  std::vector<int> p_;
};

template <typename T>
std::vector<detail::Mat<T>> to_mats(const Layout& layout, const auto& flat) {
  std::vector<detail::Mat<T>> out;
  for (std::size_t i = 0; i < layout.specs.size(); ++i) {
    const auto& s = layout.specs[i];
    detail::Mat<T> m(static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
    for (std::size_t j = 0; j < s.rows * s.cols; ++j) m.data()[j] = static_cast<T>(flat[i][j]);
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<std::vector<double>> model_params_f64(const ToyModel& model) {
  std::vector<std::vector<double>> out;
  for (const auto& p : model.params()) out.emplace_back(p.data.begin(), p.data.end());
  return out;
}

void check_ids(const ToyModel& model, const std::vector<int>& ids) {
  if (ids.size() + 1 > model.config().max_len)
    throw Error(ErrorCode::kInvalidArgument, "sequence longer than max_len");
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= model.vocab().size())
      throw Error(ErrorCode::kVocabulary, "token id " + std::to_string(id) + " out of range");
}

}  // namespace

double sequence_loss_with(const ToyModel& model, const std::vector<std::vector<double>>& params,
                          std::string_view image_id, const std::vector<int>& ids) {
  check_ids(model, ids);
  const auto& layout = model.weights().layout;
  if (params.size() != layout.specs.size())
    throw Error(ErrorCode::kGeometry, "parameter list does not match the layout");
  auto values = to_mats<double>(layout, params);
  const auto grid = image_grid(image_id, model.config());
  Tape<double> tape;
  Forward<double> fwd(tape, model.config(), layout, values, nullptr);
  return tape.val(fwd.loss({Sample{&grid, ids}}))(0, 0);
}

double sequence_loss(const ToyModel& model, std::string_view image_id, const std::vector<int>& ids) {
  return sequence_loss_with(model, model_params_f64(model), image_id, ids);
}

std::vector<std::vector<double>> sequence_gradient(const ToyModel& model, std::string_view image_id,
                                                   const std::vector<int>& ids) {
  check_ids(model, ids);
  const auto& layout = model.weights().layout;
  auto values = to_mats<double>(layout, model_params_f64(model));
  std::vector<detail::Mat<double>> grads;
  for (const auto& v : values) grads.push_back(detail::Mat<double>::Zero(v.rows(), v.cols()));
  const auto grid = image_grid(image_id, model.config());
  Tape<double> tape;
  Forward<double> fwd(tape, model.config(), layout, values, &grads);
  tape.backward(fwd.loss({Sample{&grid, ids}}));
  std::vector<std::vector<double>> out;
  for (const auto& g : grads) out.emplace_back(g.data(), g.data() + g.size());
  return out;
}

TrainResult train(const ToyModel& model, const std::vector<PairedReport>& pairs,
                  const TrainConfig& config) {
  if (pairs.empty()) throw Error(ErrorCode::kEmptyCorpus, "training corpus is empty");
  if (config.batch_size == 0) throw Error(ErrorCode::kConfig, "batch_size must be >= 1");
  TrainReport report;
  if (config.epochs == 0) return {model, report};

  const auto& mc = model.config();
  const auto& layout = model.weights().layout;
  const Vocabulary& vocab = model.vocab();

  std::vector<std::vector<float>> flat;
  for (const auto& p : model.params()) flat.push_back(p.data);
  auto values = to_mats<float>(layout, flat);
  std::vector<detail::Mat<float>> grads, m1, m2;
  for (const auto& v : values) {
    grads.push_back(detail::Mat<float>::Zero(v.rows(), v.cols()));
    m1.push_back(detail::Mat<float>::Zero(v.rows(), v.cols()));
    m2.push_back(detail::Mat<float>::Zero(v.rows(), v.cols()));
  }

  // Image grids and encoded targets are fixed across epochs.
  std::unordered_map<std::string, std::vector<float>> grids;
  std::vector<std::vector<int>> hist_ids, curr_ids;
  for (const auto& pr : pairs) {
    if (!grids.contains(pr.image_id)) grids.emplace(pr.image_id, image_grid(pr.image_id, mc));
    hist_ids.push_back(vocab.encode(pr.r_hist.tokens));
    curr_ids.push_back(vocab.encode(pr.r_curr.tokens));
    if (hist_ids.back().size() + 1 > mc.max_len || curr_ids.back().size() + 1 > mc.max_len)
      throw Error(ErrorCode::kInvalidArgument, "report for " + pr.image_id + " exceeds max_len");
  }

  Rng rng(config.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const float b1 = static_cast<float>(config.beta1);
  const float b2 = static_cast<float>(config.beta2);
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Sample> batch;
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t k = order[i];
        const bool hist = rng.bernoulli(config.history_fraction);
        batch.push_back({&grids.at(pairs[k].image_id), hist ? hist_ids[k] : curr_ids[k]});
      }
      for (auto& g : grads) g.setZero();
      Tape<float> tape;
      Forward<float> fwd(tape, mc, layout, values, &grads);
      const int loss = fwd.loss(batch);
      const float lv = tape.val(loss)(0, 0);
      if (!std::isfinite(lv))
        throw Error(ErrorCode::kTraining, "loss diverged at epoch " + std::to_string(epoch) +
                                              ", step " + std::to_string(step));
      tape.backward(loss);

      double sq = 0.0;
      for (const auto& g : grads) sq += static_cast<double>(g.squaredNorm());
      const double gnorm = std::sqrt(sq);
      if (!std::isfinite(gnorm)) throw Error(ErrorCode::kTraining, "non-finite gradient");
      const float clip = gnorm > config.clip_norm ? static_cast<float>(config.clip_norm / gnorm) : 1.0f;

      ++step;
      const float c1 = 1.0f - std::pow(b1, static_cast<float>(step));
      const float c2 = 1.0f - std::pow(b2, static_cast<float>(step));
      const float lr = static_cast<float>(config.lr);
      const float eps = static_cast<float>(config.eps);
      for (std::size_t i = 0; i < values.size(); ++i) {
        auto g = (grads[i].array() * clip).eval();
        m1[i].array() = b1 * m1[i].array() + (1.0f - b1) * g;
        m2[i].array() = b2 * m2[i].array() + (1.0f - b2) * g.square();
        values[i].array() -= lr * (m1[i].array() / c1) / ((m2[i].array() / c2).sqrt() + eps);
      }
      epoch_loss += lv;
      ++batches;
    }
    report.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
  }
  report.final_loss = report.epoch_loss.back();
  report.steps = step;

  std::vector<ParamTensor> params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i)
    params[i].data.assign(values[i].data(), values[i].data() + values[i].size());
  ToyModel trained(mc, vocab, std::move(params));
  trained.set_training_meta({{"train_config", config.to_json()},
                             {"epoch_loss", report.epoch_loss},
                             {"final_loss", report.final_loss},
                             {"steps", report.steps},
                             {"n_pairs", pairs.size()},
                             {"init_checksum", model.checksum()}});
  return {std::move(trained), std::move(report)};
}

}  // namespace sdls
