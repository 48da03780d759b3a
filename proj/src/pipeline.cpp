#include "sdls/pipeline.hpp"

#include <algorithm>

#include "sdls/error.hpp"

namespace sdls {

ActivationBundle extract_bundle(const ToyModel& model, const std::vector<PairedReport>& pairs,
                                nlohmann::json provenance) {
  ActivationBundle b;
  b.layers = model.config().n_dec_layers + 1;
  b.d_model = model.config().d_model;
  b.provenance = std::move(provenance);
  b.blob.reserve(pairs.size() * 2 * b.dim());
  for (const auto& p : pairs) {
    b.add(p.image_id, "hist", build_mcv(extract_activations(model, p.image_id, p.r_hist.tokens)));
    b.add(p.image_id, "curr", build_mcv(extract_activations(model, p.image_id, p.r_curr.tokens)));
  }
  return b;
}

std::vector<SteeringVector> forge_arsenal(const ActivationBundle& bundle, const std::vector<PairedReport>& pairs,
                                          const CueDictionary& dict, const ForgeOptions& options) {
  auto wanted = [&](VectorKind k) {
    if (!options.controls && is_control(k)) return false;
    return options.kinds.empty() || std::find(options.kinds.begin(), options.kinds.end(), k) != options.kinds.end();
  };
  const ActivationSet acts = ActivationSet::from_bundle(bundle);
  const Matrix d = diff_matrix(pairs, acts);

  std::vector<SteeringVector> out;
  const bool need_sdiv = wanted(VectorKind::kSdiv) || wanted(VectorKind::kRandomControl) ||
                         wanted(VectorKind::kShuffledControl) || wanted(VectorKind::kOrthogonalControl);
  std::optional<SteeringVector> reference;
  if (need_sdiv) reference = sdiv(classed_diffs(pairs, acts, dict), acts.geometry);
  if (wanted(VectorKind::kSdiv)) out.push_back(*reference);
  if (wanted(VectorKind::kGlobalIcv))
    for (std::size_t k : options.icv_ks) out.push_back(global_icv(d, k, acts.geometry));
  if (wanted(VectorKind::kSpecific50Icv))
    for (std::size_t k : options.specific50_ks) out.push_back(specific50_icv(pairs, acts, k));
  for (VectorKind kind : {VectorKind::kRandomControl, VectorKind::kShuffledControl, VectorKind::kOrthogonalControl})
    if (wanted(kind)) out.push_back(control_vector(kind, *reference, options.control_seed));
  if (wanted(VectorKind::kStyleOrtho)) {
    const SteeringVector style_ref = global_icv(d, options.style_reference_k, acts.geometry);
    std::vector<Vector> history_free;
    history_free.reserve(pairs.size());
    for (const auto& p : pairs) history_free.push_back(acts.curr.at(p.image_id));
    const Matrix basis = style_basis(Matrix::from_columns(history_free), options.style_k);
    out.push_back(control_vector(VectorKind::kStyleOrtho, style_ref, options.control_seed, &basis));
  }
  return out;
}

std::vector<std::shared_ptr<const SteeringVector>> share(std::vector<SteeringVector> vectors) {
  std::vector<std::shared_ptr<const SteeringVector>> out;
  out.reserve(vectors.size());
  for (auto& v : vectors) out.push_back(std::make_shared<const SteeringVector>(std::move(v)));
  return out;
}

}  // namespace sdls
