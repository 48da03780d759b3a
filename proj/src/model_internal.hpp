#pragma once

#include <string>
#include <vector>

#include "sdls/model.hpp"

namespace sdls {

namespace detail {

struct AttnIdx {
  int wq, bq, wk, bk, wv, bv, wo, bo;
};
struct FfIdx {
  int w1, b1, w2, b2;
};
struct EncLayerIdx {
  int ln1_g, ln1_b;
  AttnIdx attn;
  int ln2_g, ln2_b;
  FfIdx ff;
};
struct DecLayerIdx {
  int ln1_g, ln1_b;
  AttnIdx self;
  int ln2_g, ln2_b;
  AttnIdx cross;
  int ln3_g, ln3_b;
  FfIdx ff;
};

enum class Init { kGaussian, kZero, kOne };

struct ParamSpec {
  std::string name;
  std::size_t rows, cols;
  Init init;
};

/// Declared parameter ordering; the checkpoint blob follows it.
struct Layout {
  int tok_emb, dec_pos, img_w, img_b, enc_pos;
  std::vector<EncLayerIdx> enc;
  int enc_ln_g, enc_ln_b;
  std::vector<DecLayerIdx> dec;
  int dec_ln_g, dec_ln_b;
  int out_w, out_b;
  std::vector<ParamSpec> specs;
};

Layout make_layout(const ToyModelConfig& config);

}  // namespace detail

struct InferenceWeights {
  detail::Layout layout;
  std::vector<std::vector<double>> tensors;  // same order as layout.specs
  const std::vector<double>& at(int idx) const { return tensors[static_cast<std::size_t>(idx)]; }
};

}  // namespace sdls
