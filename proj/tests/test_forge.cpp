#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "sdls/bundle.hpp"
#include "sdls/error.hpp"
#include "sdls/forge.hpp"

using namespace sdls;
namespace fs = std::filesystem;

namespace {

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

const LayerGeometry kGeom{3, 4};

// n pairs with random activations; the first `minimal` are minimal edits.
struct Synthetic {
  std::vector<PairedReport> pairs;
  ActivationSet acts;
};

Synthetic synthetic(std::size_t n, std::size_t minimal, std::uint64_t seed) {
  Rng rng(seed);
  Synthetic s;
  s.acts.geometry = kGeom;
  for (std::size_t i = 0; i < n; ++i) {
    PairedReport p;
    p.image_id = "img-" + std::to_string(i);
    p.edit_class = i < minimal ? EditClass::kMinimal : EditClass::kGeneral;
    p.semantic_class = kAllCategories[i % 4];
    Vector h(kGeom.dim()), c(kGeom.dim());
    for (double& x : h) x = rng.normal() + 0.5;
    for (double& x : c) x = rng.normal();
    s.acts.hist[p.image_id] = h;
    s.acts.curr[p.image_id] = c;
    s.pairs.push_back(p);
  }
  return s;
}

}  // namespace

TEST(Mcv, ConcatenatesInLayerOrder) {
  const std::vector<Vector> states = {{1, 2}, {3, 4}, {5, 6}};
  EXPECT_EQ(build_mcv(states), (Vector{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(code_of([] { build_mcv(std::vector<Vector>{{1, 2}, {3}}); }), ErrorCode::kGeometry);
}

TEST(DiffMatrix, AntisymmetricUnderRoleSwap) {
  Synthetic s = synthetic(12, 0, 1);
  const Matrix d = diff_matrix(s.pairs, s.acts);
  ActivationSet swapped = s.acts;
  std::swap(swapped.hist, swapped.curr);
  const Matrix e = diff_matrix(s.pairs, swapped);
  for (std::size_t r = 0; r < d.rows(); ++r)
    for (std::size_t c = 0; c < d.cols(); ++c) EXPECT_EQ(d(r, c), -e(r, c));
  s.acts.curr.erase("img-3");
  EXPECT_EQ(code_of([&] { diff_matrix(s.pairs, s.acts); }), ErrorCode::kPairing);
}

TEST(GlobalIcv, MatchesCovarianceOracle) {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix d = oracle::random_matrix(rng, kGeom.dim(), 30);
    for (std::size_t k : {1u, 2u, 5u}) {
      const SteeringVector v = global_icv(d, k, kGeom);
      const Eigen::VectorXd ref = oracle::global_icv(d, k);
      for (std::size_t i = 0; i < v.v.size(); ++i) EXPECT_NEAR(v.v[i], ref(static_cast<Eigen::Index>(i)), 1e-6);
      EXPECT_EQ(v.effective_k, k);
    }
  }
}

TEST(GlobalIcv, FullRankReturnsMeanAndCapsK) {
  Rng rng(4);
  const Matrix d = oracle::random_matrix(rng, kGeom.dim(), 40);
  const SteeringVector v = global_icv(d, 100, kGeom);
  EXPECT_EQ(*v.k, 100u);
  EXPECT_EQ(*v.effective_k, kGeom.dim());
  const Vector mu = column_mean(d);
  for (std::size_t i = 0; i < mu.size(); ++i) EXPECT_NEAR(v.v[i], mu[i], 1e-10);
  EXPECT_EQ(v.label(), "global_icv_k100");
}

TEST(GlobalIcv, DegenerateInputs) {
  const Matrix same(kGeom.dim(), 5, 1.0);
  EXPECT_EQ(code_of([&] { global_icv(same, 1, kGeom); }), ErrorCode::kDegenerate);
  EXPECT_EQ(code_of([&] { global_icv(Matrix(5, 5, 0.0), 1, kGeom); }), ErrorCode::kGeometry);
  EXPECT_EQ(code_of([&] { global_icv(Matrix(kGeom.dim(), 1, 1.0), 1, kGeom); }), ErrorCode::kInvalidArgument);
}

TEST(Specific50, UsesFirstFiftyMinimalPairs) {
  const Synthetic s = synthetic(80, 60, 2);
  const SteeringVector v = specific50_icv(s.pairs, s.acts, 3);
  std::vector<PairedReport> first(s.pairs.begin(), s.pairs.begin() + 50);
  const SteeringVector ref = global_icv(diff_matrix(first, s.acts), 3, kGeom);
  EXPECT_EQ(v.v, ref.v);
  EXPECT_EQ(v.kind, VectorKind::kSpecific50Icv);

  const Synthetic few = synthetic(80, 49, 2);
  EXPECT_EQ(code_of([&] { specific50_icv(few.pairs, few.acts, 3); }), ErrorCode::kSubset);
}

TEST(Sdiv, TwoOrthogonalClassesGiveBisector) {
  const std::size_t dim = kGeom.dim();
  std::map<std::string, Matrix> classes;
  for (std::size_t c = 0; c < 2; ++c) {
    Matrix d(dim, 5, 0.0);
    for (std::size_t j = 0; j < 5; ++j) d(c * 3, j) = 1.0 + static_cast<double>(j);
    classes["c" + std::to_string(c)] = d;
  }
  const SteeringVector v = sdiv(classes, kGeom);
  const double s = 1.0 / std::sqrt(2.0);
  for (std::size_t i = 0; i < dim; ++i) EXPECT_NEAR(v.v[i], i == 0 || i == 3 ? s : 0.0, 1e-12);
}

TEST(Sdiv, SignFollowsClassMean) {
  const std::size_t dim = kGeom.dim();
  std::map<std::string, Matrix> classes;
  Matrix a(dim, 4, 0.0), b(dim, 4, 0.0);
  for (std::size_t j = 0; j < 4; ++j) {
    a(1, j) = -2.0 - static_cast<double>(j);
    b(5, j) = 1.0;
  }
  classes["a"] = a;
  classes["b"] = b;
  const SteeringVector v = sdiv(classes, kGeom);
  EXPECT_LT(v.v[1], 0.0);
  EXPECT_GT(v.v[5], 0.0);
  EXPECT_NEAR(l2_norm(v.v), 1.0, 1e-12);
}

TEST(Sdiv, DropsSmallAndDependentClasses) {
  const std::size_t dim = kGeom.dim();
  std::map<std::string, Matrix> classes;
  Matrix a(dim, 3, 0.0), b(dim, 3, 0.0), twin(dim, 3, 0.0), tiny(dim, 1, 1.0);
  for (std::size_t j = 0; j < 3; ++j) {
    a(0, j) = 1.0 + j;
    b(2, j) = 1.0 + j;
    twin(0, j) = 2.0 + j;
  }
  classes["a"] = a;
  classes["b"] = b;
  classes["c_twin"] = twin;
  classes["d_tiny"] = tiny;
  const SteeringVector v = sdiv(classes, kGeom);
  EXPECT_EQ(v.dropped_classes, (std::vector<std::string>{"d_tiny", "c_twin"}));
  EXPECT_NEAR(v.v[0], 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(Sdiv, SingleClassThrows) {
  std::map<std::string, Matrix> classes;
  Matrix a(kGeom.dim(), 3, 0.0);
  a(0, 0) = 1.0;
  a(0, 1) = 2.0;
  classes["only"] = a;
  EXPECT_EQ(code_of([&] { sdiv(classes, kGeom); }), ErrorCode::kInsufficientClasses);
}

TEST(Controls, Properties) {
  const Synthetic s = synthetic(40, 0, 9);
  const std::map<std::string, Matrix> classed = classed_diffs(s.pairs, s.acts, CueDictionary::default_dictionary());
  EXPECT_EQ(classed.size(), 4u);
  const SteeringVector ref = sdiv(classed, kGeom);

  const SteeringVector r1 = control_vector(VectorKind::kRandomControl, ref, 11);
  const SteeringVector r2 = control_vector(VectorKind::kRandomControl, ref, 11);
  EXPECT_EQ(r1.v, r2.v);
  EXPECT_NEAR(l2_norm(r1.v), 1.0, 1e-12);
  EXPECT_NE(control_vector(VectorKind::kRandomControl, ref, 12).v, r1.v);

  const SteeringVector sh = control_vector(VectorKind::kShuffledControl, ref, 11);
  Vector a = sh.v, b = ref.v;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);

  const SteeringVector orth = control_vector(VectorKind::kOrthogonalControl, ref, 11);
  EXPECT_NEAR(dot(orth.v, ref.v), 0.0, 1e-12);
  EXPECT_NEAR(l2_norm(orth.v), 1.0, 1e-12);

  SteeringVector one;
  one.v = {1.0};
  one.geometry = {1, 1};
  EXPECT_EQ(code_of([&] { control_vector(VectorKind::kOrthogonalControl, one, 1); }), ErrorCode::kImpossible);
  EXPECT_EQ(code_of([&] { control_vector(VectorKind::kSdiv, ref, 1); }), ErrorCode::kInvalidArgument);
}

TEST(Controls, StyleOrthoRemovesStyleSubspace) {
  Rng rng(12);
  const Matrix mcvs = oracle::random_matrix(rng, kGeom.dim(), 20);
  const Matrix basis = style_basis(mcvs, 3);
  ASSERT_EQ(basis.cols(), 3u);
  const SteeringVector g = global_icv(oracle::random_matrix(rng, kGeom.dim(), 10), 1, kGeom);
  const SteeringVector so = control_vector(VectorKind::kStyleOrtho, g, 0, &basis);
  for (double x : matvec_transposed(basis, so.v)) EXPECT_NEAR(x, 0.0, 1e-10);
  EXPECT_EQ(so.label(), "style_ortho_k1");
  EXPECT_EQ(code_of([&] { control_vector(VectorKind::kStyleOrtho, g, 0); }), ErrorCode::kInvalidArgument);
}

TEST(VectorFile, RoundTripAndCorruption) {
  Rng rng(5);
  const SteeringVector v = global_icv(oracle::random_matrix(rng, kGeom.dim(), 10), 2, kGeom);
  const auto path = temp_path("v.json");
  save_vector(path, v);
  const SteeringVector back = load_vector(path);
  EXPECT_EQ(back.v, v.v);
  EXPECT_EQ(back.kind, v.kind);
  EXPECT_EQ(back.k, v.k);
  EXPECT_EQ(back.geometry, v.geometry);

  nlohmann::json j = vector_to_json(v);
  j["L"] = 2;
  EXPECT_EQ(code_of([&] { vector_from_json(j); }), ErrorCode::kGeometry);
  j = vector_to_json(v);
  std::string payload = j["data"];
  payload[4] = payload[4] == 'A' ? 'B' : 'A';
  j["data"] = payload;
  EXPECT_EQ(code_of([&] { vector_from_json(j); }), ErrorCode::kChecksum);
  j = vector_to_json(v);
  j["format"] = "other";
  EXPECT_EQ(code_of([&] { vector_from_json(j); }), ErrorCode::kParse);
}

TEST(Bundle, RoundTripAndCorruption) {
  ActivationBundle b;
  b.layers = kGeom.layers;
  b.d_model = kGeom.d_model;
  b.provenance = {{"note", "test"}};
  Rng rng(8);
  for (int i = 0; i < 6; ++i) {
    Vector z(kGeom.dim());
    for (double& x : z) x = rng.normal();
    b.add("img-" + std::to_string(i), i % 2 ? "curr" : "hist", z);
  }
  const auto path = temp_path("b.sdlsb");
  const std::string sum = write_bundle(b, path);
  EXPECT_EQ(sum.size(), 64u);
  const ActivationBundle back = read_bundle(path);
  EXPECT_EQ(back, b);
  EXPECT_EQ(ActivationSet::from_bundle(back).hist.size(), 3u);

  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  auto write = [&](const std::vector<char>& data) {
    std::ofstream out(path, std::ios::binary);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
  };
  auto flipped = bytes;
  flipped.back() ^= 0x01;
  write(flipped);
  EXPECT_EQ(code_of([&] { read_bundle(path); }), ErrorCode::kChecksum);
  auto cut = bytes;
  cut.resize(cut.size() - 8);
  write(cut);
  EXPECT_EQ(code_of([&] { read_bundle(path); }), ErrorCode::kTruncated);
  auto magic = bytes;
  magic[0] = 'Z';
  write(magic);
  EXPECT_EQ(code_of([&] { read_bundle(path); }), ErrorCode::kParse);
}
