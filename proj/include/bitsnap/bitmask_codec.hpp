// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0
//
// Lossless delta compression for F16 model states.
//
// A delta record stores a packed change mask (1 bit per element, element e at
// byte e/8, bit e%8, LSB first, zero padded) and the *target* values at the
// changed positions in ascending index order. "Changed" means bitwise
// inequality, so -0.0/+0.0 and NaN payloads round-trip exactly.
//
// BSDL layout (little-endian):
//   "BSDL" | version u16 | n u64 | n_c u64 | name_len u16 | name | rank u8 |
//   extents u64[rank] | mask[ceil(n/8)] | payload[2*n_c]

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bitsnap/tensor.hpp"

namespace bitsnap {

struct DeltaRecord {
  std::string tensor_name;
  Shape shape;
  std::uint64_t total_elements = 0;
  std::uint64_t changed_count = 0;
  Bytes packed_mask;  // ceil(n/8) bytes
  Bytes payload;      // 2 * n_c bytes

  friend bool operator==(const DeltaRecord&, const DeltaRecord&) = default;
};

struct DeltaCheckpoint {
  std::uint64_t iteration = 0;
  std::uint64_t base_iteration = 0;  // the checkpoint this delta was computed against
  std::vector<DeltaRecord> records;
};

/// Errors: kNameMismatch, kDtypeMismatch, kShapeMismatch.
DeltaRecord encode_delta(const TensorBlob& base, const TensorBlob& target);

/// Errors: kInconsistentRecord when mask/payload sizes or popcount disagree,
/// plus the same structural errors as encode_delta.
TensorBlob decode_delta(const TensorBlob& base, const DeltaRecord& rec);

/// Throws kInconsistentRecord unless the record's internal sizes agree.
void verify_delta_record(const DeltaRecord& rec);

/// Delta k is taken against target k-1 (the base for k = 0). Only model
/// states participate. Errors: kStructureMismatch, kStaleIteration.
std::vector<DeltaCheckpoint> chain_encode(const Checkpoint& base, const std::vector<Checkpoint>& targets);

/// Applies one delta checkpoint to the model states it was computed against.
std::vector<TensorBlob> apply_delta(const std::vector<TensorBlob>& previous, const DeltaCheckpoint& delta);

inline constexpr std::uint16_t kDeltaFormatVersion = 1;
/// magic + version + n + n_c + name_len + rank; name and extents are extra.
inline constexpr std::uint64_t kDeltaFixedOverhead = 4 + 2 + 8 + 8 + 2 + 1;

/// ceil(n/8) + 2*n_c + kDeltaFixedOverhead. Throws kInvalidArgument if n_c > n.
std::uint64_t delta_size_bytes(std::uint64_t n, std::uint64_t n_c);
/// Storage cost of the unpacked one-byte-per-element mask variant, n + 2*n_c,
/// kept for comparison only.
std::uint64_t naive_delta_size_bytes(std::uint64_t n, std::uint64_t n_c);
/// True when storing the delta stays under the packed-mask break-even point,
/// n_c < 15/16 n. Callers store the tensor raw otherwise.
bool delta_beneficial(std::uint64_t n, std::uint64_t n_c);

std::size_t serialized_delta_size(const DeltaRecord& rec);
Bytes serialize_delta(const DeltaRecord& rec);
void serialize_delta(const DeltaRecord& rec, Bytes& out);
DeltaRecord deserialize_delta(ByteView bytes);

}  // namespace bitsnap
