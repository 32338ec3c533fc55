#include "igapod/container.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "igapod/errors.hpp"

namespace igapod {

namespace {

template <class T>
void put_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes;
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <class T>
T get_le(std::istream& in, const std::string& path) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw IoError("truncated file: " + path);
  }
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

void write_doubles(std::ostream& out, const std::vector<double>& values) {
  for (double d : values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(d));
}

std::vector<double> read_doubles(std::istream& in, std::size_t n, const std::string& path) {
  std::vector<char> raw(n * 8);
  if (n > 0 && !in.read(raw.data(), static_cast<std::streamsize>(raw.size()))) {
    throw IoError("truncated payload: " + path);
  }
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[8 * k + i])) << (8 * i);
    out[k] = std::bit_cast<double>(v);
  }
  return out;
}

std::ofstream open_out(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  return in;
}

nlohmann::json read_header(std::istream& in, const std::string& path, const std::string& magic,
                           std::uint64_t& file_size) {
  in.seekg(0, std::ios::end);
  file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  std::array<char, 8> m{};
  if (!in.read(m.data(), 8)) throw IoError("truncated file: " + path);
  std::array<char, 8> expect{};
  std::memcpy(expect.data(), magic.data(), std::min<std::size_t>(8, magic.size()));
  if (m != expect) throw IoError("unexpected file type (bad magic): " + path);
  const auto version = get_le<std::uint32_t>(in, path);
  if (version != kContainerVersion) {
    throw IoError("unsupported format version " + std::to_string(version) + ": " + path);
  }
  const auto len = get_le<std::uint64_t>(in, path);
  if (len > file_size) throw IoError("corrupt header length: " + path);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw IoError("truncated header: " + path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt header in " + path + ": " + e.what());
  }
}

}  // namespace

void write_container(const std::string& path, const std::string& magic, const nlohmann::json& header,
                     const std::vector<double>& payload) {
  nlohmann::json h = header;
  h["payload_count"] = payload.size();
  const std::string text = h.dump();
  std::ofstream out = open_out(path);
  std::array<char, 8> m{};
  std::memcpy(m.data(), magic.data(), std::min<std::size_t>(8, magic.size()));
  out.write(m.data(), 8);
  put_le<std::uint32_t>(out, kContainerVersion);
  put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_doubles(out, payload);
  if (!out) throw IoError("write failed: " + path);
}

nlohmann::json read_container_header(const std::string& path, const std::string& magic) {
  std::ifstream in = open_in(path);
  std::uint64_t size = 0;
  return read_header(in, path, magic, size);
}

Container read_container(const std::string& path, const std::string& magic) {
  std::ifstream in = open_in(path);
  std::uint64_t size = 0;
  Container c;
  c.header = read_header(in, path, magic, size);
  if (!c.header.contains("payload_count") || !c.header["payload_count"].is_number_unsigned()) {
    throw IoError("header without payload_count: " + path);
  }
  const auto n = c.header["payload_count"].get<std::uint64_t>();
  const auto pos = static_cast<std::uint64_t>(in.tellg());
  if (pos + 8 * n != size) throw IoError("payload size does not match header: " + path);
  c.payload = read_doubles(in, n, path);
  return c;
}

void write_f64(const std::string& path, const std::vector<double>& values) {
  std::ofstream out = open_out(path);
  write_doubles(out, values);
  if (!out) throw IoError("write failed: " + path);
}

std::vector<double> read_f64(const std::string& path) {
  std::ifstream in = open_in(path);
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  if (size % 8 != 0) throw IoError("file size is not a multiple of 8 bytes: " + path);
  return read_doubles(in, size / 8, path);
}

std::string fnv1a_hex(const void* data, std::size_t size, std::uint64_t seed) {
  std::uint64_t h = seed;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string fnv1a_hex(const std::string& text) { return fnv1a_hex(text.data(), text.size()); }

}  // namespace igapod
