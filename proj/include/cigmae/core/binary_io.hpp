// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <type_traits>

#include "cigmae/core/error.hpp"

namespace cigmae::io {

namespace detail {
template <class V>
V to_little(V v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(V)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<V>(bytes);
  }
  return v;
}
}  // namespace detail

/// Little-endian byte sink.
class Writer {
 public:
  template <class V>
    requires std::is_arithmetic_v<V>
  void put(V v) {
    v = detail::to_little(v);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(V));
  }

  template <class V>
  void put_span(std::span<const V> vs) {
    if constexpr (std::endian::native == std::endian::little) {
      buf_.append(reinterpret_cast<const char*>(vs.data()), vs.size_bytes());
    } else {
      for (V v : vs) put(v);
    }
  }

  void put_bytes(std::string_view s) { buf_.append(s); }
  void put_string(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }

  const std::string& bytes() const { return buf_; }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

/// Little-endian byte source; short reads raise FormatError::truncated.
class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  template <class V>
    requires std::is_arithmetic_v<V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, data_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return detail::to_little(v);
  }

  template <class V>
  void get_span(std::span<V> out) {
    need(out.size_bytes());
    std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
    if constexpr (std::endian::native != std::endian::little)
      for (auto& v : out) v = detail::to_little(v);
  }

  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string get_string(std::size_t max_len = 1 << 20) {
    const auto n = get<std::uint32_t>();
    if (n > max_len) throw FormatError(FormatError::Code::integrity, "string length " + std::to_string(n) + " exceeds limit");
    return std::string(get_bytes(n));
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n)
      throw FormatError(FormatError::Code::truncated,
                        "unexpected end of data: need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_));
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Code::io, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Code::io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatError::Code::io, "write failed: " + path.string());
}

/// FNV-1a 64, used for file integrity trailers and config hashes.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

}  // namespace cigmae::io
