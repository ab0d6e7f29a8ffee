// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0
//
// Little-endian byte writer/reader shared by the container formats.

#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bitsnap/error.hpp"

namespace bitsnap {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

static_assert(std::endian::native == std::endian::little,
              "container formats are written with native little-endian stores");

class ByteWriter {
 public:
  explicit ByteWriter(Bytes& out) : out_(out) {}

  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    out_.insert(out_.end(), p, p + sizeof(T));
  }

  void put_bytes(ByteView bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }

  void put_magic(std::string_view magic) {
    out_.insert(out_.end(), magic.begin(), magic.end());
  }

  // u16 length prefix followed by the raw UTF-8 bytes.
  void put_name(std::string_view name) {
    if (name.size() > 0xFFFF) {
      throw Error(ErrorCode::kInvalidArgument, "name longer than 65535 bytes");
    }
    put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    out_.insert(out_.end(), name.begin(), name.end());
  }

 private:
  Bytes& out_;
};

class ByteReader {
 public:
  explicit ByteReader(ByteView in) : in_(in) {}

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    require(sizeof(T));
    T value;
    std::memcpy(&value, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  ByteView get_bytes(std::size_t n) {
    require(n);
    auto view = in_.subspan(pos_, n);
    pos_ += n;
    return view;
  }

  std::string get_name() {
    const auto len = get<std::uint16_t>();
    auto raw = get_bytes(len);
    return std::string(raw.begin(), raw.end());
  }

  bool expect_magic(std::string_view magic) {
    if (remaining() < magic.size()) return false;
    const bool ok = std::memcmp(in_.data() + pos_, magic.data(), magic.size()) == 0;
    if (ok) pos_ += magic.size();
    return ok;
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void require(std::size_t n) const {
    if (in_.size() - pos_ < n) {
      throw Error(ErrorCode::kTruncatedPayload, "need " + std::to_string(n) + " bytes at offset " +
                                                    std::to_string(pos_) + ", have " +
                                                    std::to_string(in_.size() - pos_));
    }
  }

  ByteView in_;
  std::size_t pos_ = 0;
};

}  // namespace bitsnap
