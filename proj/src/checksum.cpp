// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0

#include "bitsnap/checksum.hpp"

#define XXH_INLINE_ALL
#include "xxhash.h"

namespace bitsnap {

std::uint64_t checksum(ByteView payload) { return XXH3_64bits(payload.data(), payload.size()); }

}  // namespace bitsnap
