#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace igapod {

/// Artifact file: 8-byte magic, u32 format version, u64 header length, JSON
/// header, then a little-endian float64 payload. All integers little-endian.
struct Container {
  nlohmann::json header;
  std::vector<double> payload;
};

inline constexpr std::uint32_t kContainerVersion = 1;

void write_container(const std::string& path, const std::string& magic, const nlohmann::json& header,
                     const std::vector<double>& payload);

/// Reads the header only; the payload is not touched.
nlohmann::json read_container_header(const std::string& path, const std::string& magic);

/// IoError on missing files, bad magic, version mismatch or a truncated payload.
Container read_container(const std::string& path, const std::string& magic);

/// Raw little-endian float64 arrays (snapshot payloads).
void write_f64(const std::string& path, const std::vector<double>& values);
std::vector<double> read_f64(const std::string& path);

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string fnv1a_hex(const std::string& text);

}  // namespace igapod
