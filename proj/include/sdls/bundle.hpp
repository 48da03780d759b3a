#pragma once

// Single-file activation bundle: "SDLSBNDL", u32 manifest length, UTF-8 JSON
// manifest, then a contiguous little-endian float32 blob of MCVs.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdls/linalg.hpp"

namespace sdls {

struct BundleSample {
  std::string image_id;
  std::string role;  // "hist" | "curr" (exporters may add others)
  std::uint64_t offset = 0;  // byte offset into the blob
  friend bool operator==(const BundleSample&, const BundleSample&) = default;
};

struct ActivationBundle {
  std::string backbone = "toy";
  std::size_t layers = 0;
  std::size_t d_model = 0;
  std::string dtype = "float32";
  std::vector<BundleSample> samples;
  std::vector<float> blob;
  nlohmann::json provenance = nullptr;

  std::size_t dim() const noexcept { return layers * d_model; }
  /// Upcast MCV of sample i.
  Vector mcv(std::size_t i) const;
  /// Appends one MCV; offset is assigned from the current blob size.
  void add(std::string image_id, std::string role, std::span<const double> z);

  friend bool operator==(const ActivationBundle&, const ActivationBundle&) = default;
};

/// Writes the bundle and returns the blob checksum (sha256 hex).
std::string write_bundle(const ActivationBundle& bundle, const std::filesystem::path& path);
ActivationBundle read_bundle(const std::filesystem::path& path);

}  // namespace sdls
