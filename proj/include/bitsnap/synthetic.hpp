// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic checkpoints for benchmarks, tests and the CLI.

#pragma once

#include <cstdint>
#include <vector>

#include "bitsnap/tensor.hpp"

namespace bitsnap {

struct SyntheticLayout {
  std::vector<Shape> model_shapes;      // F16, named model.<i>
  std::vector<Shape> optimizer_shapes;  // F32, named optim.<i>
};

/// Splits `model_params` F16 elements over `tensors` 2-D tensors and adds two
/// optimizer moments per model tensor.
SyntheticLayout make_layout(std::uint64_t model_params, unsigned tensors, bool with_optimizer = true);

/// Model states ~ N(0, 0.02) rounded to F16, optimizer states ~ N(0, 1).
Checkpoint synthetic_checkpoint(const SyntheticLayout& layout, std::uint64_t iteration, std::uint64_t seed);

/// Next training step: each model element changes (bitwise) with probability
/// `change_fraction`; optimizer states are redrawn.
Checkpoint perturb(const Checkpoint& previous, std::uint64_t iteration, double change_fraction, std::uint64_t seed);

}  // namespace bitsnap
