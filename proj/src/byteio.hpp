// Copyright 2026 The partdisc Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "partdisc/error.hpp"

namespace partdisc::detail {

// Little-endian encoding independent of host byte order.
class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    std::array<char, 4> b;
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out_.write(b.data(), 4);
  }
  void u64(std::uint64_t v) {
    std::array<char, 8> b;
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out_.write(b.data(), 8);
  }
  void i32(std::int32_t v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f32s(std::span<const float> v) {
    for (float f : v) u32(std::bit_cast<std::uint32_t>(f));
  }
  void f64s(std::span<const double> v) {
    for (double f : v) u64(std::bit_cast<std::uint64_t>(f));
  }

 private:
  std::ostream& out_;
};

class ByteReader {
 public:
  ByteReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  bool has(std::size_t n) const noexcept { return pos_ + n <= bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  std::uint8_t u8() { return bytes_[pos_++]; }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::int32_t i32() { return std::bit_cast<std::int32_t>(u32()); }
  void f32s(std::span<float> out) {
    for (float& f : out) f = std::bit_cast<float>(u32());
  }
  void f64s(std::span<double> out) {
    for (double& f : out) f = std::bit_cast<double>(u64());
  }
  void skip(std::size_t n) { pos_ += n; }

 private:
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small tagged files: 4-byte magic then u32 version.
inline void write_tag(ByteWriter& w, std::string_view magic, std::uint32_t version) {
  for (char c : magic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(version);
}

inline void read_tag(ByteReader& r, std::string_view magic, std::uint32_t version,
                     const std::filesystem::path& path) {
  if (!r.has(8)) fail(ErrorKind::kTruncated, path.string() + ": truncated header");
  for (char c : magic)
    if (r.u8() != static_cast<std::uint8_t>(c))
      fail(ErrorKind::kBadMagic, path.string() + ": not a " + std::string(magic) + " file");
  const std::uint32_t v = r.u32();
  if (v != version)
    fail(ErrorKind::kVersionMismatch, path.string() + ": version " + std::to_string(v) +
                                          ", expected " + std::to_string(version));
}

inline void need(const ByteReader& r, std::size_t bytes, const std::filesystem::path& path) {
  if (!r.has(bytes)) fail(ErrorKind::kTruncated, path.string() + ": truncated");
}

}  // namespace partdisc::detail
