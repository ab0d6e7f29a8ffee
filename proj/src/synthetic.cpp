// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0

#include "bitsnap/synthetic.hpp"

#include <random>
#include <string>

#include "bitsnap/error.hpp"

namespace bitsnap {

namespace {

TensorBlob random_f16(const std::string& name, const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, 0.02f);
  std::vector<std::uint16_t> bits(element_count(shape));
  for (auto& b : bits) b = float_to_half(dist(rng));
  return TensorBlob::from_f16_bits(name, shape, bits);
}

TensorBlob random_f32(const std::string& name, const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> values(element_count(shape));
  for (auto& v : values) v = dist(rng);
  return TensorBlob::from_f32(name, shape, values);
}

}  // namespace

SyntheticLayout make_layout(std::uint64_t model_params, unsigned tensors, bool with_optimizer) {
  if (tensors == 0 || model_params < tensors) {
    throw Error(ErrorCode::kInvalidArgument, "need at least one element per tensor");
  }
  SyntheticLayout layout;
  std::uint64_t left = model_params;
  for (unsigned i = 0; i < tensors; ++i) {
    const std::uint64_t n = i + 1 == tensors ? left : model_params / tensors;
    left -= n;
    // 2-D when it factors evenly by a small row count, flat otherwise
    const Shape shape = n % 64 == 0 ? Shape{64, n / 64} : Shape{n};
    layout.model_shapes.push_back(shape);
    if (with_optimizer) {
      layout.optimizer_shapes.push_back(shape);
      layout.optimizer_shapes.push_back(shape);
    }
  }
  return layout;
}

Checkpoint synthetic_checkpoint(const SyntheticLayout& layout, std::uint64_t iteration, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Checkpoint ckpt;
  ckpt.iteration = iteration;
  for (std::size_t i = 0; i < layout.model_shapes.size(); ++i) {
    ckpt.model_states.push_back(random_f16("model." + std::to_string(i), layout.model_shapes[i], rng));
  }
  for (std::size_t i = 0; i < layout.optimizer_shapes.size(); ++i) {
    ckpt.optimizer_states.push_back(random_f32("optim." + std::to_string(i), layout.optimizer_shapes[i], rng));
  }
  return ckpt;
}

Checkpoint perturb(const Checkpoint& previous, std::uint64_t iteration, double change_fraction, std::uint64_t seed) {
  if (!(change_fraction >= 0.0 && change_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "change fraction must lie in [0, 1]");
  }
  std::mt19937_64 rng(seed);
  Checkpoint next;
  next.iteration = iteration;
  for (const auto& t : previous.model_states) {
    auto bits = t.f16_bits();
    if (change_fraction >= 1.0) {
      for (auto& b : bits) b ^= static_cast<std::uint16_t>((rng() & 0x3FF) | 1);
    } else if (change_fraction > 0.0) {
      // geometric gaps between changed positions
      std::geometric_distribution<std::uint64_t> gap(change_fraction);
      for (std::uint64_t i = gap(rng); i < bits.size(); i += 1 + gap(rng)) {
        bits[i] ^= static_cast<std::uint16_t>((rng() & 0x3FF) | 1);
      }
    }
    next.model_states.push_back(TensorBlob::from_f16_bits(t.name(), t.shape(), bits));
  }
  for (const auto& t : previous.optimizer_states) {
    next.optimizer_states.push_back(random_f32(t.name(), t.shape(), rng));
  }
  return next;
}

}  // namespace bitsnap
