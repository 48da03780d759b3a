#include "sdls/forge.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "sdls/digest.hpp"
#include "sdls/error.hpp"
#include "sdls/rng.hpp"

namespace sdls {

namespace {

constexpr std::array<std::pair<VectorKind, std::string_view>, 7> kKindNames = {{
    {VectorKind::kGlobalIcv, "global_icv"},
    {VectorKind::kSpecific50Icv, "specific50_icv"},
    {VectorKind::kSdiv, "sdiv"},
    {VectorKind::kRandomControl, "random_control"},
    {VectorKind::kShuffledControl, "shuffled_control"},
    {VectorKind::kOrthogonalControl, "orthogonal_control"},
    {VectorKind::kStyleOrtho, "style_ortho"},
}};

SteeringVector icv_from(const Matrix& diffs, std::size_t k, const LayerGeometry& geometry, VectorKind kind) {
  if (diffs.rows() != geometry.dim())
    throw Error(ErrorCode::kGeometry, "difference matrix rows != L*d_model");
  if (diffs.cols() < 2) throw Error(ErrorCode::kInvalidArgument, "need at least 2 difference columns");
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  const Vector mu = column_mean(diffs);
  const Matrix centered = center_columns(diffs);
  const std::size_t k_cap = std::min({k, centered.rows(), centered.cols()});
  const PcaBasis basis = pca_top_k(centered, k_cap);
  if (basis.effective_k == 0)
    throw Error(ErrorCode::kDegenerate, "centred difference matrix has rank 0; projection basis is empty");
  const Vector coeff = matvec_transposed(basis.components, mu);
  Vector v = matvec(basis.components, coeff);
  if (l2_norm(v) == 0.0) throw Error(ErrorCode::kDegenerate, "mean difference projects to zero");
  SteeringVector out;
  out.v = std::move(v);
  out.kind = kind;
  out.k = k;
  out.effective_k = basis.effective_k;
  out.geometry = geometry;
  out.provenance = {{"n_columns", diffs.cols()}, {"mean_norm", l2_norm(mu)}};
  return out;
}

}  // namespace

std::string_view vector_kind_name(VectorKind kind) {
  for (const auto& [k, n] : kKindNames)
    if (k == kind) return n;
  return "unknown";
}

VectorKind parse_vector_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw Error(ErrorCode::kParse, "unknown vector kind '" + std::string(name) + "'");
}

bool is_control(VectorKind kind) {
  return kind == VectorKind::kRandomControl || kind == VectorKind::kShuffledControl ||
         kind == VectorKind::kOrthogonalControl;
}

std::string SteeringVector::label() const {
  std::string s(vector_kind_name(kind));
  if (k) s += "_k" + std::to_string(*k);
  return s;
}

Vector build_mcv(std::span<const Vector> states) {
  if (states.empty()) throw Error(ErrorCode::kGeometry, "no layer states");
  Vector z;
  z.reserve(states.size() * states[0].size());
  for (const auto& h : states) {
    if (h.size() != states[0].size())
      throw Error(ErrorCode::kGeometry, "layer states have mixed dims (" + std::to_string(states[0].size()) +
                                            " vs " + std::to_string(h.size()) + ")");
    z.insert(z.end(), h.begin(), h.end());
  }
  return z;
}

ActivationSet ActivationSet::from_bundle(const ActivationBundle& bundle) {
  ActivationSet set;
  set.geometry = {bundle.layers, bundle.d_model};
  for (std::size_t i = 0; i < bundle.samples.size(); ++i) {
    const auto& s = bundle.samples[i];
    if (s.role == "hist")
      set.hist[s.image_id] = bundle.mcv(i);
    else if (s.role == "curr")
      set.curr[s.image_id] = bundle.mcv(i);
  }
  return set;
}

Matrix diff_matrix(const std::vector<PairedReport>& pairs, const ActivationSet& acts) {
  Matrix d(acts.geometry.dim(), pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto h = acts.hist.find(pairs[i].image_id);
    const auto c = acts.curr.find(pairs[i].image_id);
    if (h == acts.hist.end() || c == acts.curr.end())
      throw Error(ErrorCode::kPairing, "missing " + std::string(h == acts.hist.end() ? "hist" : "curr") +
                                           " activation for " + pairs[i].image_id);
    if (h->second.size() != d.rows() || c->second.size() != d.rows())
      throw Error(ErrorCode::kGeometry, "activation dim mismatch for " + pairs[i].image_id);
    for (std::size_t r = 0; r < d.rows(); ++r) d(r, i) = h->second[r] - c->second[r];
  }
  return d;
}

SteeringVector global_icv(const Matrix& diffs, std::size_t k, const LayerGeometry& geometry) {
  return icv_from(diffs, k, geometry, VectorKind::kGlobalIcv);
}

SteeringVector specific50_icv(const std::vector<PairedReport>& pairs, const ActivationSet& acts, std::size_t k) {
  std::vector<PairedReport> subset;
  for (const auto& p : pairs) {
    if (p.edit_class != EditClass::kMinimal) continue;
    subset.push_back(p);
    if (subset.size() == 50) break;
  }
  if (subset.size() < 50)
    throw Error(ErrorCode::kSubset, "need 50 minimal-edit pairs, found " + std::to_string(subset.size()));
  return icv_from(diff_matrix(subset, acts), k, acts.geometry, VectorKind::kSpecific50Icv);
}

SteeringVector sdiv(const std::map<std::string, Matrix>& classed, const LayerGeometry& geometry) {
  std::vector<std::string> names;
  std::vector<Vector> dirs;
  std::vector<std::string> dropped;
  for (const auto& [name, d] : classed) {
    if (d.rows() != geometry.dim()) throw Error(ErrorCode::kGeometry, "class " + name + " has wrong dim");
    if (d.cols() < 2) {
      dropped.push_back(name);
      continue;
    }
    // Leading direction of the uncentred class matrix: the class mean is
    // what carries the shared shift, so it must not be removed first.
    const PcaBasis top = pca_top_k(d, 1);
    if (top.effective_k == 0) {
      dropped.push_back(name);
      continue;
    }
    Vector p = top.components.column(0);
    if (dot(p, column_mean(d)) < 0.0)
      for (double& x : p) x = -x;
    names.push_back(name);
    dirs.push_back(std::move(p));
  }
  for (;;) {
    if (dirs.size() < 2)
      throw Error(ErrorCode::kInsufficientClasses,
                  "SDIV needs at least 2 usable classes, have " + std::to_string(dirs.size()));
    if (dirs.size() > geometry.dim()) throw Error(ErrorCode::kGeometry, "more classes than dimensions");
    const QrFactors qr = qr_orthonormal_basis(Matrix::from_columns(dirs));
    if (qr.dependent_column) {
      const std::size_t drop = *qr.dependent_column;
      dropped.push_back(names[drop]);
      names.erase(names.begin() + static_cast<std::ptrdiff_t>(drop));
      dirs.erase(dirs.begin() + static_cast<std::ptrdiff_t>(drop));
      continue;
    }
    Vector mean(geometry.dim(), 0.0);
    for (std::size_t c = 0; c < qr.q.cols(); ++c)
      for (std::size_t r = 0; r < qr.q.rows(); ++r) mean[r] += qr.q(r, c);
    for (double& x : mean) x /= static_cast<double>(qr.q.cols());
    SteeringVector out;
    out.v = l2_normalize(mean);
    out.kind = VectorKind::kSdiv;
    out.geometry = geometry;
    out.dropped_classes = std::move(dropped);
    out.provenance = {{"classes", names}};
    return out;
  }
}

std::map<std::string, Matrix> classed_diffs(const std::vector<PairedReport>& pairs, const ActivationSet& acts,
                                            const CueDictionary& dict) {
  std::map<std::string, std::vector<PairedReport>> groups;
  for (const auto& p : pairs) {
    const CueCategory c = p.semantic_class ? *p.semantic_class : assign_semantic_class(p, dict);
    groups[std::string(category_name(c))].push_back(p);
  }
  std::map<std::string, Matrix> out;
  for (const auto& [name, g] : groups) out.emplace(name, diff_matrix(g, acts));
  return out;
}

Matrix style_basis(const Matrix& mcvs, std::size_t k) {
  const std::size_t cap = std::min({k, mcvs.rows(), mcvs.cols()});
  if (cap == 0) throw Error(ErrorCode::kInvalidArgument, "style basis needs samples and k >= 1");
  return pca_top_k(center_columns(mcvs), cap).components;
}

SteeringVector control_vector(VectorKind kind, const SteeringVector& reference, std::uint64_t seed,
                              const Matrix* style) {
  const std::size_t dim = reference.v.size();
  if (dim == 0) throw Error(ErrorCode::kInvalidArgument, "reference vector is empty");
  SteeringVector out;
  out.kind = kind;
  out.geometry = reference.geometry;
  out.provenance = {{"reference", reference.label()}, {"seed", seed}};
  Rng rng(seed);
  auto gaussian = [&] {
    Vector g(dim);
    for (double& x : g) x = rng.normal();
    return g;
  };
  switch (kind) {
    case VectorKind::kRandomControl:
      out.v = l2_normalize(gaussian());
      break;
    case VectorKind::kShuffledControl: {
      std::vector<std::size_t> perm(dim);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      rng.shuffle(perm.begin(), perm.end());
      out.v.resize(dim);
      for (std::size_t i = 0; i < dim; ++i) out.v[i] = reference.v[perm[i]];
      break;
    }
    case VectorKind::kOrthogonalControl: {
      if (dim < 2) throw Error(ErrorCode::kImpossible, "no orthogonal direction exists in dim 1");
      const Vector r = l2_normalize(reference.v);
      Vector g = gaussian();
      for (int pass = 0; pass < 2; ++pass) {
        const double a = dot(g, r);
        for (std::size_t i = 0; i < dim; ++i) g[i] -= a * r[i];
      }
      out.v = l2_normalize(g);
      break;
    }
    case VectorKind::kStyleOrtho:
      if (!style) throw Error(ErrorCode::kInvalidArgument, "style_ortho needs a style basis");
      out.v = project_out_subspace(reference.v, *style);
      out.k = reference.k;
      out.provenance["style_k"] = style->cols();
      break;
    default:
      throw Error(ErrorCode::kInvalidArgument, "not a control kind: " + std::string(vector_kind_name(kind)));
  }
  return out;
}

nlohmann::json vector_to_json(const SteeringVector& v) {
  std::vector<std::uint8_t> payload;
  payload.reserve(v.v.size() * 8);
  for (double x : v.v) append_f64_le(payload, x);
  nlohmann::json j = {{"format", "sdls-vector"},
                      {"version", 1},
                      {"kind", vector_kind_name(v.kind)},
                      {"dim", v.v.size()},
                      {"L", v.geometry.layers},
                      {"d_model", v.geometry.d_model},
                      {"norm", l2_norm(v.v)},
                      {"dropped_classes", v.dropped_classes},
                      {"provenance", v.provenance},
                      {"encoding", "base64-float64-le"},
                      {"checksum", sha256_hex(payload)},
                      {"data", base64_encode(payload)}};
  if (v.k) j["k"] = *v.k;
  if (v.effective_k) j["effective_k"] = *v.effective_k;
  return j;
}

SteeringVector vector_from_json(const nlohmann::json& j) {
  SteeringVector v;
  try {
    if (j.value("format", std::string()) != "sdls-vector")
      throw Error(ErrorCode::kParse, "not a vector file (format field)");
    v.kind = parse_vector_kind(j.at("kind").get<std::string>());
    v.geometry = {j.at("L").get<std::size_t>(), j.at("d_model").get<std::size_t>()};
    if (j.contains("k")) v.k = j.at("k").get<std::size_t>();
    if (j.contains("effective_k")) v.effective_k = j.at("effective_k").get<std::size_t>();
    v.dropped_classes = j.value("dropped_classes", std::vector<std::string>{});
    v.provenance = j.value("provenance", nlohmann::json::object());
    const auto payload = base64_decode(j.at("data").get<std::string>());
    if (sha256_hex(payload) != j.at("checksum").get<std::string>())
      throw Error(ErrorCode::kChecksum, "vector payload checksum mismatch");
    const std::size_t dim = j.at("dim").get<std::size_t>();
    if (payload.size() != dim * 8) throw Error(ErrorCode::kTruncated, "vector payload length != dim*8");
    if (dim != v.geometry.dim()) throw Error(ErrorCode::kGeometry, "dim != L*d_model");
    v.v.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) v.v[i] = read_f64_le(payload.data() + 8 * i);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("vector file: ") + e.what());
  }
  if (!all_finite(v.v)) throw Error(ErrorCode::kNonFinite, "vector has non-finite entries");
  return v;
}

void save_vector(const std::filesystem::path& path, const SteeringVector& v) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << vector_to_json(v).dump(2) << '\n';
}

SteeringVector load_vector(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  return vector_from_json(j);
}

}  // namespace sdls
