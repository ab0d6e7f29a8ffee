// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0

#include "bitsnap/slot_region.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <utility>

#include "bitsnap/error.hpp"

namespace bitsnap {

namespace {

constexpr char kRegionMagic[4] = {'B', 'S', 'S', 'R'};
constexpr std::uint32_t kRegionVersion = 1;
constexpr std::size_t kAlign = 64;

struct RegionHeader {
  char magic[4];
  std::uint32_t version;
  std::uint32_t ranks;
  std::uint32_t redundancy;
  std::uint32_t slots_per_rank;
  std::uint32_t reserved0;
  std::uint64_t slot_capacity;
  std::uint64_t reserved[4];
};
static_assert(sizeof(RegionHeader) == kAlign);

constexpr std::size_t round_up(std::size_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

std::uint8_t* map_file(int fd, std::size_t size, const std::filesystem::path& path) {
  // populate up front so staging never page-faults on the hot path
  void* p = ::mmap(nullptr, size, PROT_READ | PROT_WRITE, MAP_SHARED | MAP_POPULATE, fd, 0);
  if (p == MAP_FAILED) throw Error(ErrorCode::kIo, "mmap " + path.string() + ": " + std::strerror(errno));
  return static_cast<std::uint8_t*>(p);
}

}  // namespace

struct SlotRegion::SlotHeader {
  std::uint32_t state;
  std::uint32_t rank;
  std::uint64_t iteration;
  std::uint64_t length;
  std::uint64_t checksum;
  std::uint64_t reserved[4];
};

namespace {

std::uint64_t load_field(std::uint64_t& field) {
  return std::atomic_ref<std::uint64_t>(field).load(std::memory_order_relaxed);
}

void store_field(std::uint64_t& field, std::uint64_t value) {
  std::atomic_ref<std::uint64_t>(field).store(value, std::memory_order_relaxed);
}

}  // namespace

std::string_view to_string(SlotState s) {
  switch (s) {
    case SlotState::kEmpty: return "EMPTY";
    case SlotState::kWriting: return "WRITING";
    case SlotState::kValid: return "VALID";
    case SlotState::kPersisted: return "PERSISTED";
  }
  return "UNKNOWN";
}

SlotRegion SlotRegion::create(const std::filesystem::path& path, const Layout& layout) {
  if (layout.ranks == 0 || layout.redundancy == 0) {
    throw Error(ErrorCode::kInvalidArgument, "slot region needs at least one rank and K >= 1");
  }
  const std::uint32_t per_rank = layout.redundancy + 1;
  const std::size_t slot_stride = sizeof(SlotHeader) + round_up(layout.slot_capacity);
  const std::size_t size = sizeof(RegionHeader) + std::size_t{layout.ranks} * per_rank * slot_stride;

  const int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorCode::kIo, "open " + path.string() + ": " + std::strerror(errno));
  if (::ftruncate(fd, static_cast<off_t>(size)) != 0) {
    ::close(fd);
    throw Error(ErrorCode::kIo, "ftruncate " + path.string() + ": " + std::strerror(errno));
  }
  SlotRegion region;
  try {
    region.base_ = map_file(fd, size, path);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  region.size_ = size;
  region.path_ = path;

  RegionHeader hdr{};
  std::memcpy(hdr.magic, kRegionMagic, 4);
  hdr.version = kRegionVersion;
  hdr.ranks = layout.ranks;
  hdr.redundancy = layout.redundancy;
  hdr.slots_per_rank = per_rank;
  hdr.slot_capacity = layout.slot_capacity;
  std::memcpy(region.base_, &hdr, sizeof(hdr));
  for (std::uint32_t r = 0; r < layout.ranks; ++r) {
    for (std::uint32_t i = 0; i < per_rank; ++i) region.header(r, i)->rank = r;
  }
  return region;
}

SlotRegion SlotRegion::open(const std::filesystem::path& path) {
  const int fd = ::open(path.c_str(), O_RDWR | O_CLOEXEC);
  if (fd < 0) {
    if (errno == ENOENT) throw Error(ErrorCode::kNotFound, path.string());
    throw Error(ErrorCode::kIo, "open " + path.string() + ": " + std::strerror(errno));
  }
  struct stat st {};
  if (::fstat(fd, &st) != 0 || static_cast<std::size_t>(st.st_size) < sizeof(RegionHeader)) {
    ::close(fd);
    throw Error(ErrorCode::kTruncatedPayload, path.string() + " is smaller than a region header");
  }
  const auto size = static_cast<std::size_t>(st.st_size);
  SlotRegion region;
  try {
    region.base_ = map_file(fd, size, path);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  region.size_ = size;
  region.path_ = path;

  RegionHeader hdr;
  std::memcpy(&hdr, region.base_, sizeof(hdr));
  if (std::memcmp(hdr.magic, kRegionMagic, 4) != 0) throw Error(ErrorCode::kBadMagic, path.string());
  if (hdr.version != kRegionVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "slot region version " + std::to_string(hdr.version));
  }
  const std::size_t expected = sizeof(RegionHeader) + std::size_t{hdr.ranks} * hdr.slots_per_rank *
                                                          (sizeof(SlotHeader) + round_up(hdr.slot_capacity));
  if (size < expected) throw Error(ErrorCode::kTruncatedPayload, path.string() + " is shorter than its layout");
  return region;
}

SlotRegion::SlotRegion(SlotRegion&& other) noexcept
    : path_(std::move(other.path_)), base_(std::exchange(other.base_, nullptr)), size_(std::exchange(other.size_, 0)) {}

SlotRegion& SlotRegion::operator=(SlotRegion&& other) noexcept {
  if (this != &other) {
    if (base_ != nullptr) ::munmap(base_, size_);
    path_ = std::move(other.path_);
    base_ = std::exchange(other.base_, nullptr);
    size_ = std::exchange(other.size_, 0);
  }
  return *this;
}

SlotRegion::~SlotRegion() {
  if (base_ != nullptr) ::munmap(base_, size_);
}

std::uint32_t SlotRegion::ranks() const { return reinterpret_cast<const RegionHeader*>(base_)->ranks; }
std::uint32_t SlotRegion::redundancy() const { return reinterpret_cast<const RegionHeader*>(base_)->redundancy; }
std::uint32_t SlotRegion::slots_per_rank() const {
  return reinterpret_cast<const RegionHeader*>(base_)->slots_per_rank;
}
std::uint64_t SlotRegion::slot_capacity() const {
  return reinterpret_cast<const RegionHeader*>(base_)->slot_capacity;
}

void SlotRegion::check(std::uint32_t rank, std::uint32_t index) const {
  if (rank >= ranks() || index >= slots_per_rank()) {
    throw Error(ErrorCode::kInvalidArgument,
                "slot (" + std::to_string(rank) + ", " + std::to_string(index) + ") outside the region");
  }
}

SlotRegion::SlotHeader* SlotRegion::header(std::uint32_t rank, std::uint32_t index) const {
  const std::size_t stride = sizeof(SlotHeader) + round_up(slot_capacity());
  const std::size_t offset = sizeof(RegionHeader) + (std::size_t{rank} * slots_per_rank() + index) * stride;
  return reinterpret_cast<SlotHeader*>(base_ + offset);
}

SlotState SlotRegion::state(std::uint32_t rank, std::uint32_t index) const {
  check(rank, index);
  return static_cast<SlotState>(std::atomic_ref<std::uint32_t>(header(rank, index)->state).load(std::memory_order_acquire));
}

bool SlotRegion::transition(std::uint32_t rank, std::uint32_t index, SlotState from, SlotState to) {
  check(rank, index);
  auto expected = static_cast<std::uint32_t>(from);
  return std::atomic_ref<std::uint32_t>(header(rank, index)->state)
      .compare_exchange_strong(expected, static_cast<std::uint32_t>(to), std::memory_order_acq_rel);
}

void SlotRegion::publish(std::uint32_t rank, std::uint32_t index, SlotState to) {
  check(rank, index);
  std::atomic_ref<std::uint32_t>(header(rank, index)->state).store(static_cast<std::uint32_t>(to), std::memory_order_release);
}

SlotInfo SlotRegion::info(std::uint32_t rank, std::uint32_t index) const {
  const SlotState s = state(rank, index);
  SlotHeader* h = header(rank, index);
  return SlotInfo{rank, index, s, load_field(h->iteration), load_field(h->length), load_field(h->checksum)};
}

void SlotRegion::set_meta(std::uint32_t rank, std::uint32_t index, std::uint64_t iteration, std::uint64_t length,
                          std::uint64_t checksum) {
  check(rank, index);
  if (length > slot_capacity()) throw Error(ErrorCode::kInvalidArgument, "payload exceeds slot capacity");
  SlotHeader* h = header(rank, index);
  store_field(h->iteration, iteration);
  store_field(h->length, length);
  store_field(h->checksum, checksum);
}

std::span<std::uint8_t> SlotRegion::payload(std::uint32_t rank, std::uint32_t index) {
  check(rank, index);
  auto* p = reinterpret_cast<std::uint8_t*>(header(rank, index)) + sizeof(SlotHeader);
  return {p, slot_capacity()};
}

ByteView SlotRegion::payload(std::uint32_t rank, std::uint32_t index) const {
  check(rank, index);
  const auto* p = reinterpret_cast<const std::uint8_t*>(header(rank, index)) + sizeof(SlotHeader);
  return {p, slot_capacity()};
}

}  // namespace bitsnap
