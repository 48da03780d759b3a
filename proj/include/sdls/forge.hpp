#pragma once

// Steering-vector construction in concatenated hidden-state space: MCVs,
// difference matrices, Global / Specific-50 ICV, SDIV and controls.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdls/bundle.hpp"
#include "sdls/corpus.hpp"
#include "sdls/linalg.hpp"

namespace sdls {

struct LayerGeometry {
  std::size_t layers = 0;
  std::size_t d_model = 0;
  std::size_t dim() const noexcept { return layers * d_model; }
  friend bool operator==(const LayerGeometry&, const LayerGeometry&) = default;
};

enum class VectorKind {
  kGlobalIcv,
  kSpecific50Icv,
  kSdiv,
  kRandomControl,
  kShuffledControl,
  kOrthogonalControl,
  kStyleOrtho,
};
std::string_view vector_kind_name(VectorKind kind);
VectorKind parse_vector_kind(std::string_view name);
bool is_control(VectorKind kind);

struct SteeringVector {
  Vector v;
  VectorKind kind = VectorKind::kSdiv;
  std::optional<std::size_t> k;  // requested k for the ICV kinds
  std::optional<std::size_t> effective_k;
  LayerGeometry geometry;
  std::vector<std::string> dropped_classes;  // SDIV only
  nlohmann::json provenance = nlohmann::json::object();

  /// File-friendly label such as "global_icv_k3" or "sdiv".
  std::string label() const;
};

/// Concatenates per-layer states in layer order.
Vector build_mcv(std::span<const Vector> states);

/// MCVs keyed by image id, one map per report role.
struct ActivationSet {
  LayerGeometry geometry;
  std::unordered_map<std::string, Vector> hist;
  std::unordered_map<std::string, Vector> curr;

  static ActivationSet from_bundle(const ActivationBundle& bundle);
};

/// Column i = z(hist_i) − z(curr_i), in pair order.
Matrix diff_matrix(const std::vector<PairedReport>& pairs, const ActivationSet& acts);

inline constexpr std::array<std::size_t, 7> kIcvGrid = {1, 2, 3, 5, 10, 30, 100};

/// U_k U_kᵀ μ with U_k the top-k PCs of the centred difference matrix.
SteeringVector global_icv(const Matrix& diffs, std::size_t k, const LayerGeometry& geometry);

/// Same math over the first 50 minimal-edit pairs in corpus order.
SteeringVector specific50_icv(const std::vector<PairedReport>& pairs, const ActivationSet& acts,
                              std::size_t k);

/// Normalised mean of the QR-orthonormalised per-class first PCs. Classes
/// are processed in lexicographic order of their keys.
SteeringVector sdiv(const std::map<std::string, Matrix>& classed_diffs, const LayerGeometry& geometry);

/// Groups difference columns by semantic class (assigning it when absent).
std::map<std::string, Matrix> classed_diffs(const std::vector<PairedReport>& pairs, const ActivationSet& acts,
                                            const CueDictionary& dict);

/// Orthonormal basis of the top-k PCs of history-free MCVs (one per column).
Matrix style_basis(const Matrix& history_free_mcvs, std::size_t k = 10);

/// random / shuffled / orthogonal need `reference` (random only for its
/// geometry); style_ortho additionally needs `style`.
SteeringVector control_vector(VectorKind kind, const SteeringVector& reference, std::uint64_t seed,
                              const Matrix* style = nullptr);

// Vector file: JSON header plus base64 little-endian float64 payload.
nlohmann::json vector_to_json(const SteeringVector& v);
SteeringVector vector_from_json(const nlohmann::json& j);
void save_vector(const std::filesystem::path& path, const SteeringVector& v);
SteeringVector load_vector(const std::filesystem::path& path);

}  // namespace sdls
