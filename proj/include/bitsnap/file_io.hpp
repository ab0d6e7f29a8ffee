// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string_view>

#include "bitsnap/byte_io.hpp"

namespace bitsnap {

Bytes read_file(const std::filesystem::path& path);

/// Writes and fsyncs; does not rename.
void write_file(const std::filesystem::path& path, ByteView bytes);
void write_file(const std::filesystem::path& path, std::string_view text);

/// fsync on a directory so that renames inside it are durable.
void sync_directory(const std::filesystem::path& dir);

}  // namespace bitsnap
