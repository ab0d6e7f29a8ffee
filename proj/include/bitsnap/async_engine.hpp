// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0
//
// Asynchronous checkpointing: training ranks compress and stage checkpoints
// into the shared slot region and return immediately; a background agent
// writes staged slots into per-rank checkpoint stores.
//
// Slot lifecycle: EMPTY -> WRITING -> VALID -> PERSISTED -> EMPTY (eviction).
// Only the owning rank moves a slot out of EMPTY or PERSISTED; only the agent
// moves VALID -> PERSISTED. A VALID slot is never evicted, so every staged
// iteration reaches disk or stays in memory.

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "bitsnap/checkpoint_store.hpp"
#include "bitsnap/fault_injection.hpp"
#include "bitsnap/slot_region.hpp"

namespace bitsnap {

struct StageAck {
  std::uint32_t rank = 0;
  std::uint64_t iteration = 0;
  std::uint32_t slot = 0;
  std::uint64_t checksum = 0;
  std::vector<std::uint64_t> evicted;
};

/// Copies `bytes` into a free slot of `rank`, records its checksum and marks
/// it VALID. Evicts the oldest PERSISTED slots so at most K iterations stay
/// retained. Errors: kStaleIteration, kBackpressure (no slot is free or
/// evictable), kInvalidArgument (payload larger than a slot).
StageAck stage(SlotRegion& region, std::uint32_t rank, ByteView bytes, std::uint64_t iteration,
               FaultInjector* faults = nullptr);

/// Training-side handle for one rank: encodes each checkpoint (base/delta per
/// the refresh rule, quantized optimizer states) and stages it.
class CheckpointClient {
 public:
  CheckpointClient(SlotRegion& region, std::uint32_t rank, std::uint32_t max_cached_iteration,
                   EncodeOptions options = {}, FaultInjector* faults = nullptr);

  StageAck save(const Checkpoint& ckpt);
  /// Continue the delta chain from a recovered checkpoint.
  void resume_from(const Checkpoint& loaded, const ChainState& state);

  std::uint32_t rank() const { return rank_; }
  const CheckpointEncoder& encoder() const { return encoder_; }

 private:
  SlotRegion& region_;
  std::uint32_t rank_;
  CheckpointEncoder encoder_;
  FaultInjector* faults_;
};

std::filesystem::path rank_root(const std::filesystem::path& root, std::uint32_t rank);

struct AgentStatus {
  std::uint64_t persisted = 0;
  std::uint64_t failures = 0;
  std::string last_error;
  bool crashed = false;  // a SimulatedCrash stopped the background loop
};

/// Persists VALID slots into `<root>/rank_<r>/`, ascending iteration per rank.
class PersistAgent {
 public:
  /// `cfg.root` is the parent of the per-rank stores. Opens every rank store
  /// as writer.
  PersistAgent(SlotRegion& region, StoreConfig cfg);
  ~PersistAgent();
  PersistAgent(const PersistAgent&) = delete;
  PersistAgent& operator=(const PersistAgent&) = delete;

  /// One pass over all ranks. A store error leaves the slot VALID for the next
  /// pass and is recorded in status(). Returns the number of slots persisted.
  std::size_t persist_pending();

  /// Background loop polling every `poll` until stop().
  void start(std::chrono::milliseconds poll = std::chrono::milliseconds(1));
  void stop();
  /// Blocks until no VALID slot remains or the timeout passes.
  bool wait_idle(std::chrono::milliseconds timeout) const;

  AgentStatus status() const;
  CheckpointStore& store(std::uint32_t rank) { return *stores_.at(rank); }

 private:
  bool persist_slot(std::uint32_t rank, const SlotInfo& slot);
  void record_failure(const std::string& what);

  SlotRegion& region_;
  StoreConfig cfg_;
  std::vector<std::unique_ptr<CheckpointStore>> stores_;
  mutable std::mutex status_mu_;
  AgentStatus status_;
  std::atomic<bool> running_{false};
  std::thread worker_;
};

/// Free-form text report of every slot, one line per slot.
std::string describe_slots(const SlotRegion& region);

}  // namespace bitsnap
