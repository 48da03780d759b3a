#include "sdls/bundle.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "sdls/digest.hpp"
#include "sdls/error.hpp"

namespace sdls {

namespace {

constexpr char kMagic[8] = {'S', 'D', 'L', 'S', 'B', 'N', 'D', 'L'};

std::vector<std::uint8_t> blob_bytes(const std::vector<float>& blob) {
  std::vector<std::uint8_t> out;
  out.reserve(blob.size() * 4);
  for (float x : blob) append_f32_le(out, x);
  return out;
}

[[noreturn]] void field_error(ErrorCode code, const std::string& field, const std::string& msg) {
  throw Error(code, "bundle field '" + field + "': " + msg);
}

}  // namespace

Vector ActivationBundle::mcv(std::size_t i) const {
  const std::size_t start = samples.at(i).offset / 4;
  return Vector(blob.begin() + static_cast<std::ptrdiff_t>(start),
                blob.begin() + static_cast<std::ptrdiff_t>(start + dim()));
}

void ActivationBundle::add(std::string image_id, std::string role, std::span<const double> z) {
  if (z.size() != dim())
    throw Error(ErrorCode::kGeometry, "MCV has dim " + std::to_string(z.size()) + ", bundle expects " +
                                          std::to_string(dim()));
  samples.push_back({std::move(image_id), std::move(role), blob.size() * 4});
  for (double x : z) blob.push_back(static_cast<float>(x));
}

std::string write_bundle(const ActivationBundle& bundle, const std::filesystem::path& path) {
  if (bundle.dtype != "float32") throw Error(ErrorCode::kInvalidArgument, "only float32 bundles are written");
  const std::size_t slice = bundle.dim() * 4;
  for (const auto& s : bundle.samples)
    if (s.offset + slice > bundle.blob.size() * 4)
      throw Error(ErrorCode::kGeometry, "sample " + s.image_id + " points past the blob");
  const auto bytes = blob_bytes(bundle.blob);
  const std::string checksum = sha256_hex(bytes);
  nlohmann::json index = nlohmann::json::array();
  for (const auto& s : bundle.samples)
    index.push_back({{"image_id", s.image_id}, {"role", s.role}, {"offset", s.offset}});
  nlohmann::json manifest = {{"format", "sdls-bundle"},
                             {"version", 1},
                             {"backbone", bundle.backbone},
                             {"L", bundle.layers},
                             {"d_model", bundle.d_model},
                             {"dtype", bundle.dtype},
                             {"byte_order", "little"},
                             {"sample_count", bundle.samples.size()},
                             {"samples", index},
                             {"blob_bytes", bytes.size()},
                             {"checksum", checksum},
                             {"provenance", bundle.provenance}};
  const std::string text = manifest.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  append_u32_le(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), bytes.begin(), bytes.end());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(ErrorCode::kIo, "write failed for " + path.string());
  return checksum;
}

ActivationBundle read_bundle(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12) field_error(ErrorCode::kTruncated, "magic", "file shorter than the fixed header");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) field_error(ErrorCode::kParse, "magic", "expected SDLSBNDL");
  const std::size_t mlen = read_u32_le(bytes.data() + 8);
  if (bytes.size() < 12 + mlen) field_error(ErrorCode::kTruncated, "manifest", "manifest runs past end of file");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(mlen));
  } catch (const nlohmann::json::exception& e) {
    field_error(ErrorCode::kParse, "manifest", e.what());
  }
  auto need = [&](const char* key) -> const nlohmann::json& {
    if (!m.contains(key)) field_error(ErrorCode::kParse, key, "missing");
    return m.at(key);
  };

  ActivationBundle b;
  try {
    b.backbone = need("backbone").get<std::string>();
    b.layers = need("L").get<std::size_t>();
    b.d_model = need("d_model").get<std::size_t>();
    b.dtype = need("dtype").get<std::string>();
    if (m.contains("provenance")) b.provenance = m.at("provenance");
    for (const auto& s : need("samples"))
      b.samples.push_back({s.at("image_id").get<std::string>(), s.at("role").get<std::string>(),
                           s.at("offset").get<std::uint64_t>()});
  } catch (const nlohmann::json::exception& e) {
    field_error(ErrorCode::kParse, "manifest", e.what());
  }
  if (b.dtype != "float32") field_error(ErrorCode::kParse, "dtype", "unsupported dtype '" + b.dtype + "'");
  if (need("sample_count").get<std::size_t>() != b.samples.size())
    field_error(ErrorCode::kGeometry, "sample_count", "does not match the sample index length");

  const std::size_t declared = need("blob_bytes").get<std::size_t>();
  const std::size_t actual = bytes.size() - 12 - mlen;
  if (actual < declared)
    field_error(ErrorCode::kTruncated, "blob_bytes",
                "declared " + std::to_string(declared) + " bytes, found " + std::to_string(actual));
  if (actual > declared)
    field_error(ErrorCode::kGeometry, "blob_bytes",
                "declared " + std::to_string(declared) + " bytes, found " + std::to_string(actual));
  if (declared % 4 != 0) field_error(ErrorCode::kGeometry, "blob_bytes", "not a multiple of 4");

  const std::span<const std::uint8_t> blob(bytes.data() + 12 + mlen, declared);
  if (sha256_hex(blob) != need("checksum").get<std::string>())
    field_error(ErrorCode::kChecksum, "checksum", "blob digest does not match the manifest");

  const std::size_t slice = b.dim() * 4;
  for (const auto& s : b.samples) {
    if (s.offset % 4 != 0) field_error(ErrorCode::kGeometry, "samples.offset", "unaligned offset for " + s.image_id);
    if (s.offset + slice > declared)
      field_error(ErrorCode::kGeometry, "samples.offset",
                  "slice of L*d_model*4 = " + std::to_string(slice) + " bytes for " + s.image_id +
                      " runs past the blob");
  }
  if (!b.samples.empty() && declared != b.samples.size() * slice)
    field_error(ErrorCode::kGeometry, "L*d_model",
                "blob holds " + std::to_string(declared) + " bytes, index implies " +
                    std::to_string(b.samples.size() * slice));

  b.blob.resize(declared / 4);
  for (std::size_t i = 0; i < b.blob.size(); ++i) b.blob[i] = read_f32_le(blob.data() + 4 * i);
  return b;
}

}  // namespace sdls
