#pragma once

// Glue between stages: activation extraction into a bundle and the default
// vector arsenal built from one.

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdls/bundle.hpp"
#include "sdls/forge.hpp"
#include "sdls/model.hpp"

namespace sdls {

/// Teacher-forced MCVs for both sides of every pair (hist first, then curr).
ActivationBundle extract_bundle(const ToyModel& model, const std::vector<PairedReport>& pairs,
                                nlohmann::json provenance = nullptr);

struct ForgeOptions {
  /// Kinds to emit; empty means every kind.
  std::vector<VectorKind> kinds;
  std::vector<std::size_t> icv_ks{kIcvGrid.begin(), kIcvGrid.end()};
  std::vector<std::size_t> specific50_ks{kIcvGrid.begin(), kIcvGrid.end()};
  bool controls = true;
  std::uint64_t control_seed = 11;
  std::size_t style_k = 10;
  /// Global ICV whose style-orthogonalised copy is emitted.
  std::size_t style_reference_k = 1;
};

/// SDIV, the Global / Specific-50 ICV grids and, when enabled, the random,
/// shuffled and orthogonal controls of SDIV plus the style-orthogonalised
/// Global ICV, in that order, restricted to `options.kinds`. SDIV is only
/// computed when it or a control derived from it is requested.
std::vector<SteeringVector> forge_arsenal(const ActivationBundle& bundle, const std::vector<PairedReport>& pairs,
                                          const CueDictionary& dict, const ForgeOptions& options = {});

std::vector<std::shared_ptr<const SteeringVector>> share(std::vector<SteeringVector> vectors);

}  // namespace sdls
