// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0

#include "bitsnap/tensor.hpp"

#include <cstring>
#include <unordered_set>

#include "bitsnap/file_io.hpp"

namespace bitsnap {

namespace {

constexpr std::string_view kTensorMagic = "BSNP";
constexpr std::string_view kCheckpointMagic = "BSCK";

}  // namespace

std::string_view to_string(ElementType t) { return t == ElementType::kF16 ? "f16" : "f32"; }

std::uint64_t element_count(const Shape& shape) {
  std::uint64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

TensorBlob::TensorBlob(std::string name, ElementType dtype, Shape shape, Bytes data)
    : name_(std::move(name)), dtype_(dtype), shape_(std::move(shape)), data_(std::move(data)) {
  if (dtype_ != ElementType::kF16 && dtype_ != ElementType::kF32) {
    throw Error(ErrorCode::kInvalidArgument, "unknown dtype tag");
  }
  if (name_.size() > 0xFFFF) throw Error(ErrorCode::kInvalidArgument, "tensor name too long");
  if (shape_.size() > 0xFF) throw Error(ErrorCode::kInvalidArgument, "tensor rank above 255");
  const auto expected = numel() * byte_width(dtype_);
  if (data_.size() != expected) {
    throw Error(ErrorCode::kInvalidArgument,
                "tensor '" + name_ + "' holds " + std::to_string(data_.size()) +
                    " bytes, shape requires " + std::to_string(expected));
  }
}

TensorBlob TensorBlob::from_f16_bits(std::string name, Shape shape,
                                     std::span<const std::uint16_t> bits) {
  Bytes data(bits.size_bytes());
  if (!bits.empty()) std::memcpy(data.data(), bits.data(), data.size());
  return TensorBlob(std::move(name), ElementType::kF16, std::move(shape), std::move(data));
}

TensorBlob TensorBlob::from_f32(std::string name, Shape shape, std::span<const float> values) {
  Bytes data(values.size_bytes());
  if (!values.empty()) std::memcpy(data.data(), values.data(), data.size());
  return TensorBlob(std::move(name), ElementType::kF32, std::move(shape), std::move(data));
}

std::vector<std::uint16_t> TensorBlob::f16_bits() const {
  if (dtype_ != ElementType::kF16) throw Error(ErrorCode::kDtypeMismatch, name_ + " is not f16");
  std::vector<std::uint16_t> out(numel());
  if (!out.empty()) std::memcpy(out.data(), data_.data(), data_.size());
  return out;
}

std::vector<float> TensorBlob::f32_values() const {
  if (dtype_ != ElementType::kF32) throw Error(ErrorCode::kDtypeMismatch, name_ + " is not f32");
  std::vector<float> out(numel());
  if (!out.empty()) std::memcpy(out.data(), data_.data(), data_.size());
  return out;
}

std::vector<float> TensorBlob::to_float() const {
  if (dtype_ == ElementType::kF32) return f32_values();
  const auto bits = f16_bits();
  std::vector<float> out(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) out[i] = half_to_float(bits[i]);
  return out;
}

void validate_checkpoint(const Checkpoint& ckpt) {
  std::unordered_set<std::string> names;
  auto check = [&](const std::vector<TensorBlob>& list, ElementType want, const char* what) {
    for (const auto& t : list) {
      if (t.dtype() != want) {
        throw Error(ErrorCode::kInvalidArgument,
                    std::string(what) + " tensor '" + t.name() + "' must be " +
                        std::string(to_string(want)));
      }
      if (!names.insert(t.name()).second) {
        throw Error(ErrorCode::kInvalidArgument, "duplicate tensor name '" + t.name() + "'");
      }
    }
  };
  check(ckpt.model_states, ElementType::kF16, "model-state");
  check(ckpt.optimizer_states, ElementType::kF32, "optimizer-state");
}

std::size_t serialized_tensor_size(const TensorBlob& t) {
  return kTensorFixedHeader + t.name().size() + 8 * t.shape().size() + t.nbytes();
}

void serialize_tensor(const TensorBlob& t, Bytes& out) {
  out.reserve(out.size() + serialized_tensor_size(t));
  ByteWriter w(out);
  w.put_magic(kTensorMagic);
  w.put<std::uint16_t>(kTensorFormatVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dtype()));
  w.put_name(t.name());
  w.put<std::uint8_t>(static_cast<std::uint8_t>(t.shape().size()));
  for (auto e : t.shape()) w.put<std::uint64_t>(e);
  w.put_bytes(t.data());
}

Bytes serialize_tensor(const TensorBlob& t) {
  Bytes out;
  serialize_tensor(t, out);
  return out;
}

TensorBlob read_tensor(ByteReader& r) {
  if (!r.expect_magic(kTensorMagic)) throw Error(ErrorCode::kBadMagic, "expected BSNP tensor");
  const auto version = r.get<std::uint16_t>();
  if (version != kTensorFormatVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "BSNP version " + std::to_string(version));
  }
  const auto tag = r.get<std::uint8_t>();
  if (tag > static_cast<std::uint8_t>(ElementType::kF32)) {
    throw Error(ErrorCode::kInvalidArgument, "unknown dtype tag " + std::to_string(tag));
  }
  const auto dtype = static_cast<ElementType>(tag);
  auto name = r.get_name();
  Shape shape(r.get<std::uint8_t>());
  for (auto& e : shape) e = r.get<std::uint64_t>();

  // Guard the multiplication before trusting it for an allocation.
  std::uint64_t n = 1;
  for (auto e : shape) {
    if (e != 0 && n > (UINT64_MAX / 4) / e) {
      throw Error(ErrorCode::kTruncatedPayload, "shape of '" + name + "' exceeds addressable size");
    }
    n *= e;
  }
  const auto nbytes = n * byte_width(dtype);
  if (r.remaining() < nbytes) {
    throw Error(ErrorCode::kTruncatedPayload, "tensor '" + name + "' needs " +
                                                  std::to_string(nbytes) + " payload bytes, have " +
                                                  std::to_string(r.remaining()));
  }
  auto payload = r.get_bytes(nbytes);
  return TensorBlob(std::move(name), dtype, std::move(shape), Bytes(payload.begin(), payload.end()));
}

TensorBlob deserialize_tensor(ByteView bytes) {
  ByteReader r(bytes);
  auto t = read_tensor(r);
  if (r.remaining() != 0) {
    throw Error(ErrorCode::kInconsistentRecord,
                std::to_string(r.remaining()) + " trailing bytes after tensor '" + t.name() + "'");
  }
  return t;
}

Bytes serialize_checkpoint(const Checkpoint& ckpt) {
  validate_checkpoint(ckpt);
  Bytes out;
  ByteWriter w(out);
  w.put_magic(kCheckpointMagic);
  w.put<std::uint16_t>(kCheckpointFormatVersion);
  w.put<std::uint64_t>(ckpt.iteration);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.model_states.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.optimizer_states.size()));
  for (const auto* list : {&ckpt.model_states, &ckpt.optimizer_states}) {
    for (const auto& t : *list) {
      w.put<std::uint64_t>(serialized_tensor_size(t));
      serialize_tensor(t, out);
    }
  }
  return out;
}

Checkpoint deserialize_checkpoint(ByteView bytes) {
  ByteReader r(bytes);
  if (!r.expect_magic(kCheckpointMagic)) throw Error(ErrorCode::kBadMagic, "expected BSCK checkpoint");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointFormatVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "BSCK version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.iteration = r.get<std::uint64_t>();
  const auto n_model = r.get<std::uint32_t>();
  const auto n_optim = r.get<std::uint32_t>();
  auto read_list = [&](std::uint32_t count, std::vector<TensorBlob>& list) {
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto len = r.get<std::uint64_t>();
      list.push_back(deserialize_tensor(r.get_bytes(len)));
    }
  };
  read_list(n_model, ckpt.model_states);
  read_list(n_optim, ckpt.optimizer_states);
  validate_checkpoint(ckpt);
  return ckpt;
}

void write_checkpoint_file(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint read_checkpoint_file(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1Fu;
  std::uint32_t mant = h & 0x3FFu;
  std::uint32_t bits;
  if (exp == 0x1F) {
    bits = sign | 0x7F800000u | (mant << 13);
  } else if (exp != 0) {
    bits = sign | ((exp + 112) << 23) | (mant << 13);
  } else if (mant == 0) {
    bits = sign;
  } else {
    // subnormal: renormalize
    exp = 113;
    while ((mant & 0x400u) == 0) {
      mant <<= 1;
      --exp;
    }
    bits = sign | (exp << 23) | ((mant & 0x3FFu) << 13);
  }
  return std::bit_cast<float>(bits);
}

std::uint16_t float_to_half(float f) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
  const std::uint16_t sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);
  const std::uint32_t abs = x & 0x7FFFFFFFu;
  if (abs >= 0x7F800000u) {
    // inf / nan (keep a quiet payload bit for nan)
    return sign | 0x7C00u | (abs > 0x7F800000u ? 0x200u | ((abs >> 13) & 0x3FFu) : 0u);
  }
  if (abs >= 0x477FF000u) return sign | 0x7C00u;  // rounds past 65504
  if (abs < 0x33000001u) return sign;              // below half of the smallest subnormal
  std::uint32_t exp = abs >> 23;
  std::uint32_t mant = abs & 0x7FFFFFu;
  if (exp < 113) {
    mant |= 0x800000u;
    const std::uint32_t shift = 126 - exp;
    std::uint32_t half_mant = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (half_mant & 1u))) ++half_mant;
    return sign | static_cast<std::uint16_t>(half_mant);
  }
  std::uint32_t h = ((exp - 112) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;
  return sign | static_cast<std::uint16_t>(h);
}

}  // namespace bitsnap
