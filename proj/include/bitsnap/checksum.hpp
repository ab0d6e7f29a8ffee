// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "bitsnap/byte_io.hpp"

namespace bitsnap {

/// XXH3-64 with seed 0.
std::uint64_t checksum(ByteView payload);

/// checksum of the empty payload.
inline constexpr std::uint64_t kEmptyChecksum = 0x2d06800538d394c2ull;

}  // namespace bitsnap
