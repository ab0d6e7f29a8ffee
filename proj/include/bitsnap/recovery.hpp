// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0
//
// Restart protocol: every rank reports which iterations it holds a valid copy
// of (memory slot or disk), the reports are all-gathered, and everyone resumes
// from the newest iteration that all ranks hold. Anything newer is pruned from
// memory and disk on every rank.

#pragma once

#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "bitsnap/async_engine.hpp"

namespace bitsnap {

struct RankReport {
  std::uint32_t rank = 0;
  std::optional<std::uint64_t> latest_valid_iteration;
  std::vector<std::uint64_t> valid_iterations;  // ascending
  bool healthy = true;  // false when the rank could not inspect its own state
};

struct RankView {
  std::uint32_t rank = 0;
  std::vector<std::uint64_t> memory_valid;  // ascending, intact and chain-resolvable
  std::vector<std::uint64_t> disk_valid;    // ascending, loadable from the store

  RankReport report() const;
};

/// Read-only inspection; torn (WRITING) and checksum-failing slots do not count.
RankView inspect_rank(const SlotRegion& region, const CheckpointStore& store, std::uint32_t rank);

/// Newest iteration present in every report; nullopt means cold start.
std::optional<std::uint64_t> choose_iteration(std::span<const RankReport> reports);

/// Blocking all-gather among `ranks` participants (one call per rank per round).
class ReportExchange {
 public:
  explicit ReportExchange(std::uint32_t ranks);
  std::vector<RankReport> all_gather(const RankReport& mine);

 private:
  std::uint32_t ranks_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<RankReport> pending_;
  std::vector<RankReport> published_;
  std::uint64_t generation_ = 0;
};

struct RankRecovery {
  std::uint32_t rank = 0;
  RankReport report;
  std::optional<std::uint64_t> chosen;
  std::vector<std::uint64_t> pruned_memory;
  std::vector<std::uint64_t> pruned_disk;
  std::vector<std::uint64_t> flushed;  // memory copies written to disk during recovery
  std::optional<Checkpoint> checkpoint;
  std::optional<ChainState> chain;
};

/// One rank's side of the protocol. Producers and the agent must be stopped.
RankRecovery recover_rank(SlotRegion& region, CheckpointStore& store, std::uint32_t rank, ReportExchange& exchange);

struct RecoveryOutcome {
  std::optional<std::uint64_t> chosen;
  bool cold_start() const { return !chosen.has_value(); }
  std::vector<RankRecovery> ranks;  // indexed by rank
};

/// Runs recover_rank for every rank on its own thread against
/// `<cfg.root>/rank_<r>/` stores.
RecoveryOutcome recover(SlotRegion& region, const StoreConfig& cfg);

}  // namespace bitsnap
