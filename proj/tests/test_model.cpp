#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sdls/error.hpp"
#include "sdls/model.hpp"
#include "sdls/rng.hpp"

using namespace sdls;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  CueDictionary dict = CueDictionary::default_dictionary();
  CorpusConfig corpus;
  Vocabulary vocab;
  ToyModelConfig config;

  Fixture() {
    corpus.n_pairs = 60;
    corpus.n_eval = 10;
    vocab = Vocabulary::for_corpus(corpus, dict);
    config.vocab_size = vocab.size();
  }
};

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::kInternal;
}

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "sdls_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST(ModelConfig, HeadsMustDivideWidth) {
  Fixture f;
  f.config.d_model = 33;
  EXPECT_EQ(code_of([&] { f.config.validate(); }), ErrorCode::kConfig);
  f.config.d_model = 32;
  EXPECT_NO_THROW(f.config.validate());
  EXPECT_EQ(ToyModelConfig::from_json(f.config.to_json()).to_json(), f.config.to_json());
}

TEST(VocabularyTest, SpecialsFirstAndRoundTrip) {
  Fixture f;
  EXPECT_EQ(f.vocab.token(Vocabulary::kBos), f.vocab.tokens()[1]);
  const Tokens t = tokenize("stable effusion .");
  EXPECT_EQ(f.vocab.decode(f.vocab.encode(t)), t);
  EXPECT_EQ(code_of([&] { f.vocab.id("zebra"); }), ErrorCode::kVocabulary);
  EXPECT_EQ(code_of([&] { Vocabulary(Tokens{"a", "a"}); }), ErrorCode::kVocabulary);
}

TEST(Checkpoint, RoundTripIsExact) {
  Fixture f;
  const ToyModel m = init_model(f.config, f.vocab);
  const auto path = temp_path("m.ckpt");
  m.save(path);
  const ToyModel back = ToyModel::load(path);
  EXPECT_EQ(back.checksum(), m.checksum());
  EXPECT_EQ(back.vocab().tokens(), m.vocab().tokens());
  ASSERT_EQ(back.params().size(), m.params().size());
  for (std::size_t i = 0; i < m.params().size(); ++i) EXPECT_EQ(back.params()[i].data, m.params()[i].data);
}

TEST(Checkpoint, CorruptionIsDetected) {
  Fixture f;
  const auto path = temp_path("c.ckpt");
  init_model(f.config, f.vocab).save(path);
  auto bytes = read_bytes(path);

  auto flipped = bytes;
  flipped[flipped.size() - 5] ^= 0x40;
  write_bytes(path, flipped);
  EXPECT_EQ(code_of([&] { ToyModel::load(path); }), ErrorCode::kChecksum);

  auto cut = bytes;
  cut.resize(cut.size() - 100);
  write_bytes(path, cut);
  EXPECT_EQ(code_of([&] { ToyModel::load(path); }), ErrorCode::kTruncated);

  auto magic = bytes;
  magic[0] = 'X';
  write_bytes(path, magic);
  EXPECT_EQ(code_of([&] { ToyModel::load(path); }), ErrorCode::kParse);
}

TEST(Gradient, MatchesCentralDifferences) {
  Fixture f;
  f.config.d_model = 16;
  f.config.d_ff = 32;
  const ToyModel m = init_model(f.config, f.vocab);
  const std::vector<int> ids = f.vocab.encode(tokenize("stable small effusion ."));
  const auto grad = sequence_gradient(m, "img-3", ids);

  std::vector<std::vector<double>> params;
  for (const auto& p : m.params()) params.emplace_back(p.data.begin(), p.data.end());
  EXPECT_NEAR(sequence_loss_with(m, params, "img-3", ids), sequence_loss(m, "img-3", ids), 1e-4);

  Rng rng(3);
  std::size_t checked = 0;
  for (int attempt = 0; attempt < 200 && checked < 5; ++attempt) {
    const std::size_t t = rng.below(params.size());
    const std::size_t i = rng.below(params[t].size());
    if (std::abs(grad[t][i]) < 1e-3) continue;  // relative error is meaningless near zero
    const double h = 1e-5;
    auto plus = params, minus = params;
    plus[t][i] += h;
    minus[t][i] -= h;
    const double numeric =
        (sequence_loss_with(m, plus, "img-3", ids) - sequence_loss_with(m, minus, "img-3", ids)) / (2 * h);
    EXPECT_LT(std::abs(numeric - grad[t][i]) / std::abs(grad[t][i]), 1e-4) << m.params()[t].name << "[" << i << "]";
    ++checked;
  }
  EXPECT_EQ(checked, 5u);
}

TEST(Training, ZeroEpochsLeavesModelUnchanged) {
  Fixture f;
  const Corpus c = gen_corpus(f.corpus, f.dict);
  const ToyModel m = init_model(f.config, f.vocab);
  TrainConfig tc;
  tc.epochs = 0;
  const TrainResult r = train(m, c.pairs, tc);
  EXPECT_EQ(r.model.checksum(), m.checksum());
  EXPECT_EQ(r.report.steps, 0u);
}

TEST(Training, LossDecreasesAndIsDeterministic) {
  Fixture f;
  const Corpus c = gen_corpus(f.corpus, f.dict);
  const ToyModel m = init_model(f.config, f.vocab);
  TrainConfig tc;
  tc.epochs = 3;
  const TrainResult a = train(m, c.pairs, tc);
  const TrainResult b = train(m, c.pairs, tc);
  EXPECT_EQ(a.model.checksum(), b.model.checksum());
  ASSERT_EQ(a.report.epoch_loss.size(), 3u);
  EXPECT_LT(a.report.epoch_loss.back(), a.report.epoch_loss.front());
  EXPECT_EQ(code_of([&] { train(m, {}, tc); }), ErrorCode::kEmptyCorpus);
}

TEST(Inject, PreservesNormAndMovesTowardDirection) {
  Rng rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    Vector h(32), v(32);
    for (double& x : h) x = 3.0 * rng.normal();
    for (double& x : v) x = rng.normal();
    v = l2_normalize(v);
    const double lambda = rng.uniform() - 0.5;
    const Vector out = norm_preserving_inject(h, v, lambda);
    EXPECT_NEAR(l2_norm(out), l2_norm(h), 1e-9 * l2_norm(h));
    const double before = dot(h, v) / l2_norm(h), after = dot(out, v) / l2_norm(out);
    if (lambda > 0) EXPECT_GT(after, before);
    if (lambda < 0) EXPECT_LT(after, before);
  }
}

TEST(Inject, ZeroLambdaIsIdentityAndErrorsAreTyped) {
  const Vector h = {1.0, -2.0, 0.5};
  const Vector v = l2_normalize(Vector{1.0, 1.0, 0.0});
  EXPECT_EQ(norm_preserving_inject(h, v, 0.0), h);
  EXPECT_EQ(code_of([&] { norm_preserving_inject(Vector{0, 0, 0}, v, 0.1); }), ErrorCode::kZeroVector);
  EXPECT_EQ(code_of([&] { norm_preserving_inject(h, Vector{1, 1, 0}, 0.1); }), ErrorCode::kInvalidArgument);
  const Vector u = l2_normalize(h);
  EXPECT_EQ(code_of([&] { norm_preserving_inject(h, u, -1.0); }), ErrorCode::kCancellation);
}

TEST(Decode, TeacherForcedLogitsMatchGreedySteps) {
  Fixture f;
  const ToyModel m = init_model(f.config, f.vocab);
  DecodeConfig greedy;
  greedy.mode = DecodeConfig::Mode::kGreedy;
  greedy.max_new_tokens = 6;
  const GenerationTrace t = generate(m, "img-9", nullptr, greedy);
  ASSERT_FALSE(t.tokens.empty());
  const auto logits = teacher_forced_logits(m, "img-9", t.tokens, nullptr);
  ASSERT_EQ(logits.size(), t.tokens.size());
  for (std::size_t s = 0; s < logits.size(); ++s)
    for (std::size_t k = 0; k < logits[s].size(); ++k) EXPECT_NEAR(logits[s][k], t.step_logits[s][k], 1e-9);
}

TEST(Decode, ActivationsHaveOneStatePerSegment) {
  Fixture f;
  const ToyModel m = init_model(f.config, f.vocab);
  const auto acts = extract_activations(m, "img-1", tokenize("stable effusion ."));
  ASSERT_EQ(acts.size(), f.config.n_dec_layers + 1);
  for (const auto& a : acts) EXPECT_EQ(a.size(), f.config.d_model);
}

TEST(ImageGridTest, DeterministicAndSized) {
  Fixture f;
  const auto a = image_grid("img-5", f.config), b = image_grid("img-5", f.config);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), f.config.image_tokens * f.config.d_model);
  EXPECT_NE(a, image_grid("img-6", f.config));
}
