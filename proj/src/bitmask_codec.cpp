// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0

#include "bitsnap/bitmask_codec.hpp"

#include <bit>
#include <cstring>
#include <unordered_map>

namespace bitsnap {

namespace {

constexpr std::string_view kDeltaMagic = "BSDL";

void check_pair(const TensorBlob& base, const TensorBlob& target) {
  if (base.name() != target.name()) {
    throw Error(ErrorCode::kNameMismatch, "'" + base.name() + "' vs '" + target.name() + "'");
  }
  if (base.dtype() != ElementType::kF16 || target.dtype() != ElementType::kF16) {
    throw Error(ErrorCode::kDtypeMismatch, "delta encoding requires f16 tensors ('" + base.name() + "')");
  }
  if (base.shape() != target.shape()) {
    throw Error(ErrorCode::kShapeMismatch, "tensor '" + base.name() + "'");
  }
}

std::uint64_t popcount_bytes(const Bytes& bytes) {
  std::uint64_t total = 0;
  std::size_t i = 0;
  for (; i + 8 <= bytes.size(); i += 8) {
    std::uint64_t word;
    std::memcpy(&word, bytes.data() + i, 8);
    total += std::popcount(word);
  }
  for (; i < bytes.size(); ++i) total += std::popcount(bytes[i]);
  return total;
}

}  // namespace

DeltaRecord encode_delta(const TensorBlob& base, const TensorBlob& target) {
  check_pair(base, target);
  const std::uint64_t n = target.numel();
  DeltaRecord rec;
  rec.tensor_name = target.name();
  rec.shape = target.shape();
  rec.total_elements = n;
  rec.packed_mask.assign((n + 7) / 8, 0);

  const std::uint8_t* b = base.data().data();
  const std::uint8_t* t = target.data().data();
  std::uint64_t changed = 0;
  for (std::uint64_t byte = 0; byte < rec.packed_mask.size(); ++byte) {
    const std::uint64_t first = byte * 8;
    const std::uint64_t count = std::min<std::uint64_t>(8, n - first);
    std::uint8_t bits = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
      std::uint16_t bv, tv;
      std::memcpy(&bv, b + 2 * (first + i), 2);
      std::memcpy(&tv, t + 2 * (first + i), 2);
      bits |= static_cast<std::uint8_t>((bv != tv) << i);
    }
    rec.packed_mask[byte] = bits;
    changed += std::popcount(bits);
  }

  rec.changed_count = changed;
  rec.payload.resize(2 * changed);
  std::uint8_t* out = rec.payload.data();
  for (std::uint64_t byte = 0; byte < rec.packed_mask.size(); ++byte) {
    unsigned bits = rec.packed_mask[byte];
    while (bits != 0) {
      const auto i = static_cast<std::uint64_t>(std::countr_zero(bits));
      std::memcpy(out, t + 2 * (byte * 8 + i), 2);
      out += 2;
      bits &= bits - 1;
    }
  }
  return rec;
}

void verify_delta_record(const DeltaRecord& rec) {
  const std::uint64_t n = rec.total_elements;
  if (element_count(rec.shape) != n) {
    throw Error(ErrorCode::kInconsistentRecord, "'" + rec.tensor_name + "': shape does not hold n elements");
  }
  if (rec.packed_mask.size() != (n + 7) / 8) {
    throw Error(ErrorCode::kInconsistentRecord, "'" + rec.tensor_name + "': mask is " +
                                                    std::to_string(rec.packed_mask.size()) +
                                                    " bytes, expected ceil(n/8)");
  }
  if (rec.changed_count > n) {
    throw Error(ErrorCode::kInconsistentRecord, "'" + rec.tensor_name + "': n_c exceeds n");
  }
  if (rec.payload.size() != 2 * rec.changed_count) {
    throw Error(ErrorCode::kInconsistentRecord, "'" + rec.tensor_name + "': payload is " +
                                                    std::to_string(rec.payload.size()) +
                                                    " bytes, expected 2*n_c = " +
                                                    std::to_string(2 * rec.changed_count));
  }
  if (n % 8 != 0 && !rec.packed_mask.empty()) {
    const auto pad = static_cast<std::uint8_t>(0xFFu << (n % 8));
    if ((rec.packed_mask.back() & pad) != 0) {
      throw Error(ErrorCode::kInconsistentRecord, "'" + rec.tensor_name + "': padding bits set");
    }
  }
  if (popcount_bytes(rec.packed_mask) != rec.changed_count) {
    throw Error(ErrorCode::kInconsistentRecord, "'" + rec.tensor_name + "': mask popcount != n_c");
  }
}

TensorBlob decode_delta(const TensorBlob& base, const DeltaRecord& rec) {
  if (base.name() != rec.tensor_name) {
    throw Error(ErrorCode::kNameMismatch, "'" + base.name() + "' vs '" + rec.tensor_name + "'");
  }
  if (base.dtype() != ElementType::kF16) {
    throw Error(ErrorCode::kDtypeMismatch, "delta base '" + base.name() + "' is not f16");
  }
  if (base.shape() != rec.shape) throw Error(ErrorCode::kShapeMismatch, "tensor '" + base.name() + "'");
  verify_delta_record(rec);

  Bytes data = base.data();
  std::uint8_t* out = data.data();
  const std::uint8_t* src = rec.payload.data();
  for (std::uint64_t byte = 0; byte < rec.packed_mask.size(); ++byte) {
    unsigned bits = rec.packed_mask[byte];
    while (bits != 0) {
      const auto i = static_cast<std::uint64_t>(std::countr_zero(bits));
      std::memcpy(out + 2 * (byte * 8 + i), src, 2);
      src += 2;
      bits &= bits - 1;
    }
  }
  return TensorBlob(base.name(), ElementType::kF16, base.shape(), std::move(data));
}

namespace {

void check_structure(const std::vector<TensorBlob>& a, const std::vector<TensorBlob>& b,
                     std::uint64_t iteration) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kStructureMismatch,
                "iteration " + std::to_string(iteration) + " has a different tensor count");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name() != b[i].name() || a[i].shape() != b[i].shape() || a[i].dtype() != b[i].dtype()) {
      throw Error(ErrorCode::kStructureMismatch, "iteration " + std::to_string(iteration) +
                                                     ": tensor " + std::to_string(i) + " ('" +
                                                     b[i].name() + "') differs from its predecessor");
    }
  }
}

}  // namespace

std::vector<DeltaCheckpoint> chain_encode(const Checkpoint& base, const std::vector<Checkpoint>& targets) {
  std::vector<DeltaCheckpoint> out;
  out.reserve(targets.size());
  const Checkpoint* prev = &base;
  for (const auto& target : targets) {
    if (target.iteration <= prev->iteration) {
      throw Error(ErrorCode::kStaleIteration, "iterations must be strictly increasing (" +
                                                  std::to_string(prev->iteration) + " then " +
                                                  std::to_string(target.iteration) + ")");
    }
    check_structure(prev->model_states, target.model_states, target.iteration);
    DeltaCheckpoint delta;
    delta.iteration = target.iteration;
    delta.base_iteration = prev->iteration;
    delta.records.reserve(target.model_states.size());
    for (std::size_t i = 0; i < target.model_states.size(); ++i) {
      delta.records.push_back(encode_delta(prev->model_states[i], target.model_states[i]));
    }
    out.push_back(std::move(delta));
    prev = &target;
  }
  return out;
}

std::vector<TensorBlob> apply_delta(const std::vector<TensorBlob>& previous, const DeltaCheckpoint& delta) {
  if (previous.size() != delta.records.size()) {
    throw Error(ErrorCode::kStructureMismatch, "delta for iteration " + std::to_string(delta.iteration) +
                                                   " covers " + std::to_string(delta.records.size()) +
                                                   " tensors, previous state has " +
                                                   std::to_string(previous.size()));
  }
  std::vector<TensorBlob> out;
  out.reserve(previous.size());
  for (std::size_t i = 0; i < previous.size(); ++i) {
    if (previous[i].name() != delta.records[i].tensor_name) {
      throw Error(ErrorCode::kStructureMismatch, "delta record '" + delta.records[i].tensor_name +
                                                     "' does not match tensor '" + previous[i].name() + "'");
    }
    out.push_back(decode_delta(previous[i], delta.records[i]));
  }
  return out;
}

std::uint64_t delta_size_bytes(std::uint64_t n, std::uint64_t n_c) {
  if (n_c > n) throw Error(ErrorCode::kInvalidArgument, "n_c exceeds n");
  return (n + 7) / 8 + 2 * n_c + kDeltaFixedOverhead;
}

std::uint64_t naive_delta_size_bytes(std::uint64_t n, std::uint64_t n_c) {
  if (n_c > n) throw Error(ErrorCode::kInvalidArgument, "n_c exceeds n");
  return n + 2 * n_c;
}

bool delta_beneficial(std::uint64_t n, std::uint64_t n_c) { return 16 * n_c < 15 * n; }

std::size_t serialized_delta_size(const DeltaRecord& rec) {
  return kDeltaFixedOverhead + rec.tensor_name.size() + 8 * rec.shape.size() + rec.packed_mask.size() +
         rec.payload.size();
}

void serialize_delta(const DeltaRecord& rec, Bytes& out) {
  out.reserve(out.size() + serialized_delta_size(rec));
  ByteWriter w(out);
  w.put_magic(kDeltaMagic);
  w.put<std::uint16_t>(kDeltaFormatVersion);
  w.put<std::uint64_t>(rec.total_elements);
  w.put<std::uint64_t>(rec.changed_count);
  w.put_name(rec.tensor_name);
  if (rec.shape.size() > 0xFF) throw Error(ErrorCode::kInvalidArgument, "rank above 255");
  w.put<std::uint8_t>(static_cast<std::uint8_t>(rec.shape.size()));
  for (auto e : rec.shape) w.put<std::uint64_t>(e);
  w.put_bytes(rec.packed_mask);
  w.put_bytes(rec.payload);
}

Bytes serialize_delta(const DeltaRecord& rec) {
  Bytes out;
  serialize_delta(rec, out);
  return out;
}

DeltaRecord deserialize_delta(ByteView bytes) {
  ByteReader r(bytes);
  if (!r.expect_magic(kDeltaMagic)) throw Error(ErrorCode::kBadMagic, "expected BSDL delta record");
  const auto version = r.get<std::uint16_t>();
  if (version != kDeltaFormatVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "BSDL version " + std::to_string(version));
  }
  DeltaRecord rec;
  rec.total_elements = r.get<std::uint64_t>();
  rec.changed_count = r.get<std::uint64_t>();
  rec.tensor_name = r.get_name();
  rec.shape.resize(r.get<std::uint8_t>());
  for (auto& e : rec.shape) e = r.get<std::uint64_t>();
  if (rec.changed_count > rec.total_elements) {
    throw Error(ErrorCode::kInconsistentRecord, "'" + rec.tensor_name + "': n_c exceeds n");
  }
  auto mask = r.get_bytes((rec.total_elements + 7) / 8);
  rec.packed_mask.assign(mask.begin(), mask.end());
  auto payload = r.get_bytes(2 * rec.changed_count);
  rec.payload.assign(payload.begin(), payload.end());
  if (r.remaining() != 0) throw Error(ErrorCode::kInconsistentRecord, "trailing bytes after '" + rec.tensor_name + "'");
  verify_delta_record(rec);
  return rec;
}

}  // namespace bitsnap
