#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sdls {

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::string& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Little-endian encode/decode helpers for float blobs.
void append_f32_le(std::vector<std::uint8_t>& out, float value);
void append_f64_le(std::vector<std::uint8_t>& out, double value);
float read_f32_le(const std::uint8_t* p);
double read_f64_le(const std::uint8_t* p);
void append_u32_le(std::vector<std::uint8_t>& out, std::uint32_t value);
std::uint32_t read_u32_le(const std::uint8_t* p);

}  // namespace sdls
