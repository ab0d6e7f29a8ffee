// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0
//
// Memory-mapped slot file shared between training ranks (producers) and the
// persistence agent (consumer).
//
// File layout: a 64-byte region header ("BSSR", version, ranks, redundancy,
// slots per rank, slot capacity) followed by ranks * slots_per_rank slots.
// Each slot is a 64-byte header (state, rank, iteration, length, checksum)
// and `slot_capacity` payload bytes, padded to 64 bytes. The state word is
// only accessed atomically; the other header fields are written while the
// slot is WRITING and published by the release store of VALID.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>

#include "bitsnap/byte_io.hpp"

namespace bitsnap {

enum class SlotState : std::uint32_t { kEmpty = 0, kWriting = 1, kValid = 2, kPersisted = 3 };

std::string_view to_string(SlotState s);

struct SlotInfo {
  std::uint32_t rank = 0;
  std::uint32_t index = 0;
  SlotState state = SlotState::kEmpty;
  std::uint64_t iteration = 0;
  std::uint64_t length = 0;
  std::uint64_t checksum = 0;
};

class SlotRegion {
 public:
  struct Layout {
    std::uint32_t ranks = 1;
    std::uint32_t redundancy = 2;  // K retained iterations per rank
    std::uint64_t slot_capacity = 0;
  };

  /// Creates (or truncates) the backing file; every slot starts EMPTY.
  static SlotRegion create(const std::filesystem::path& path, const Layout& layout);
  /// Attaches to an existing file. Errors: kNotFound, kBadMagic, kUnsupportedVersion.
  static SlotRegion open(const std::filesystem::path& path);

  SlotRegion(SlotRegion&& other) noexcept;
  SlotRegion& operator=(SlotRegion&& other) noexcept;
  SlotRegion(const SlotRegion&) = delete;
  SlotRegion& operator=(const SlotRegion&) = delete;
  ~SlotRegion();

  std::uint32_t ranks() const;
  std::uint32_t redundancy() const;
  /// K retained slots plus one for the in-flight write.
  std::uint32_t slots_per_rank() const;
  std::uint64_t slot_capacity() const;
  std::size_t mapped_bytes() const { return size_; }
  const std::filesystem::path& path() const { return path_; }

  SlotState state(std::uint32_t rank, std::uint32_t index) const;
  /// Atomic compare-and-swap of the state word.
  bool transition(std::uint32_t rank, std::uint32_t index, SlotState from, SlotState to);
  void publish(std::uint32_t rank, std::uint32_t index, SlotState to);

  SlotInfo info(std::uint32_t rank, std::uint32_t index) const;
  /// Only meaningful for the slot owner while the slot is WRITING.
  void set_meta(std::uint32_t rank, std::uint32_t index, std::uint64_t iteration, std::uint64_t length,
                std::uint64_t checksum);
  std::span<std::uint8_t> payload(std::uint32_t rank, std::uint32_t index);
  ByteView payload(std::uint32_t rank, std::uint32_t index) const;

 private:
  SlotRegion() = default;
  struct SlotHeader;
  SlotHeader* header(std::uint32_t rank, std::uint32_t index) const;
  void check(std::uint32_t rank, std::uint32_t index) const;

  std::filesystem::path path_;
  std::uint8_t* base_ = nullptr;
  std::size_t size_ = 0;
};

}  // namespace bitsnap
