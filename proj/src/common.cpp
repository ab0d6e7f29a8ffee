// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "bitsnap/error.hpp"
#include "bitsnap/file_io.hpp"

namespace bitsnap {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kBadMagic: return "bad-magic";
    case ErrorCode::kUnsupportedVersion: return "unsupported-version";
    case ErrorCode::kTruncatedPayload: return "truncated-payload";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kDtypeMismatch: return "dtype-mismatch";
    case ErrorCode::kNameMismatch: return "name-mismatch";
    case ErrorCode::kInconsistentRecord: return "inconsistent-record";
    case ErrorCode::kStructureMismatch: return "structure-mismatch";
    case ErrorCode::kMissingLink: return "missing-link";
    case ErrorCode::kCorruptManifest: return "corrupt-manifest";
    case ErrorCode::kTrackerMismatch: return "tracker-mismatch";
    case ErrorCode::kParseError: return "parse-error";
    case ErrorCode::kNotFound: return "not-found";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kLocked: return "locked";
    case ErrorCode::kBackpressure: return "backpressure";
    case ErrorCode::kStaleIteration: return "stale-iteration";
    case ErrorCode::kChecksumMismatch: return "checksum-mismatch";
    case ErrorCode::kColdStart: return "cold-start";
  }
  return "unknown";
}

namespace {

[[noreturn]] void throw_errno(const std::string& what, const std::filesystem::path& path) {
  throw Error(ErrorCode::kIo, what + " " + path.string() + ": " + std::strerror(errno));
}

class Fd {
 public:
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  int get() const { return fd_; }

 private:
  int fd_;
};

void write_all(const std::filesystem::path& path, const std::uint8_t* data, std::size_t size) {
  Fd fd(::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644));
  if (fd.get() < 0) throw_errno("open", path);
  while (size > 0) {
    const ssize_t n = ::write(fd.get(), data, size);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("write", path);
    }
    data += n;
    size -= static_cast<std::size_t>(n);
  }
  if (::fsync(fd.get()) != 0) throw_errno("fsync", path);
}

}  // namespace

Bytes read_file(const std::filesystem::path& path) {
  Fd fd(::open(path.c_str(), O_RDONLY | O_CLOEXEC));
  if (fd.get() < 0) {
    if (errno == ENOENT) throw Error(ErrorCode::kNotFound, path.string());
    throw_errno("open", path);
  }
  Bytes out;
  const off_t size = ::lseek(fd.get(), 0, SEEK_END);
  if (size < 0 || ::lseek(fd.get(), 0, SEEK_SET) < 0) throw_errno("seek", path);
  out.resize(static_cast<std::size_t>(size));
  std::size_t done = 0;
  while (done < out.size()) {
    const ssize_t n = ::read(fd.get(), out.data() + done, out.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("read", path);
    }
    if (n == 0) break;
    done += static_cast<std::size_t>(n);
  }
  out.resize(done);
  return out;
}

void write_file(const std::filesystem::path& path, ByteView bytes) {
  write_all(path, bytes.data(), bytes.size());
}

void write_file(const std::filesystem::path& path, std::string_view text) {
  write_all(path, reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
}

void sync_directory(const std::filesystem::path& dir) {
  Fd fd(::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC));
  if (fd.get() < 0) throw_errno("open dir", dir);
  if (::fsync(fd.get()) != 0) throw_errno("fsync dir", dir);
}

}  // namespace bitsnap
