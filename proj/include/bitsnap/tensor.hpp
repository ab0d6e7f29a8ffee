// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0
//
// Tensor container and checkpoint object model, plus the "BSNP" tensor
// container and the "BSCK" whole-checkpoint file.
//
// BSNP layout (little-endian):
//   "BSNP" | version u16 | dtype u8 | name_len u16 | name | rank u8 |
//   extents u64[rank] | payload
//
// BSCK layout:
//   "BSCK" | version u16 | iteration u64 | n_model u32 | n_optim u32 |
//   (length u64 | BSNP bytes) for every model tensor, then every optimizer tensor

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bitsnap/byte_io.hpp"

namespace bitsnap {

enum class ElementType : std::uint8_t { kF16 = 0, kF32 = 1 };

constexpr std::size_t byte_width(ElementType t) { return t == ElementType::kF16 ? 2 : 4; }
std::string_view to_string(ElementType t);

using Shape = std::vector<std::uint64_t>;

std::uint64_t element_count(const Shape& shape);

class TensorBlob {
 public:
  TensorBlob() = default;
  /// Throws kInvalidArgument when data.size() != product(shape) * byte_width(dtype).
  TensorBlob(std::string name, ElementType dtype, Shape shape, Bytes data);

  static TensorBlob from_f16_bits(std::string name, Shape shape, std::span<const std::uint16_t> bits);
  static TensorBlob from_f32(std::string name, Shape shape, std::span<const float> values);

  const std::string& name() const { return name_; }
  ElementType dtype() const { return dtype_; }
  const Shape& shape() const { return shape_; }
  const Bytes& data() const { return data_; }
  std::uint64_t numel() const { return element_count(shape_); }
  std::size_t nbytes() const { return data_.size(); }

  /// Copies out the payload; F16 as raw binary16 bits.
  std::vector<std::uint16_t> f16_bits() const;
  std::vector<float> f32_values() const;
  /// Widened view of either dtype, for metrics only.
  std::vector<float> to_float() const;

  friend bool operator==(const TensorBlob&, const TensorBlob&) = default;

 private:
  std::string name_;
  ElementType dtype_ = ElementType::kF32;
  Shape shape_;
  Bytes data_;
};

struct Checkpoint {
  std::uint64_t iteration = 0;
  std::vector<TensorBlob> model_states;      // F16
  std::vector<TensorBlob> optimizer_states;  // F32

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Validates dtype and name uniqueness; throws kInvalidArgument.
void validate_checkpoint(const Checkpoint& ckpt);

inline constexpr std::uint16_t kTensorFormatVersion = 1;
/// magic + version + dtype + name_len + rank
inline constexpr std::size_t kTensorFixedHeader = 4 + 2 + 1 + 2 + 1;

std::size_t serialized_tensor_size(const TensorBlob& t);
Bytes serialize_tensor(const TensorBlob& t);
void serialize_tensor(const TensorBlob& t, Bytes& out);
/// Errors: kBadMagic, kUnsupportedVersion, kTruncatedPayload.
TensorBlob deserialize_tensor(ByteView bytes);
/// Reads one tensor from the reader's current position.
TensorBlob read_tensor(ByteReader& reader);

inline constexpr std::uint16_t kCheckpointFormatVersion = 1;

Bytes serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(ByteView bytes);
void write_checkpoint_file(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint_file(const std::filesystem::path& path);

// IEEE binary16 <-> binary32, round-to-nearest-even on narrowing.
float half_to_float(std::uint16_t h);
std::uint16_t float_to_half(float f);

}  // namespace bitsnap
