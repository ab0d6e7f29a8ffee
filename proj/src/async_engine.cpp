// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0

#include "bitsnap/async_engine.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "bitsnap/checksum.hpp"

namespace bitsnap {

namespace {

bool retained(SlotState s) { return s == SlotState::kValid || s == SlotState::kPersisted; }

}  // namespace

StageAck stage(SlotRegion& region, std::uint32_t rank, ByteView bytes, std::uint64_t iteration,
               FaultInjector* faults) {
  if (rank >= region.ranks()) throw Error(ErrorCode::kInvalidArgument, "rank " + std::to_string(rank) + " out of range");
  if (bytes.size() > region.slot_capacity()) {
    throw Error(ErrorCode::kInvalidArgument, "checkpoint of " + std::to_string(bytes.size()) +
                                                 " bytes exceeds slot capacity " +
                                                 std::to_string(region.slot_capacity()));
  }
  const std::uint32_t slots = region.slots_per_rank();
  std::vector<SlotInfo> infos;
  for (std::uint32_t i = 0; i < slots; ++i) infos.push_back(region.info(rank, i));

  for (const auto& s : infos) {
    if (s.state != SlotState::kEmpty && s.iteration >= iteration) {
      throw Error(ErrorCode::kStaleIteration, "rank " + std::to_string(rank) + " already staged iteration " +
                                                  std::to_string(s.iteration));
    }
  }

  StageAck ack;
  ack.rank = rank;
  ack.iteration = iteration;
  std::optional<std::uint32_t> target;
  for (const auto& s : infos) {
    if (s.state == SlotState::kEmpty) {
      target = s.index;
      break;
    }
  }
  if (!target) {
    const SlotInfo* oldest = nullptr;
    for (const auto& s : infos) {
      if (s.state == SlotState::kPersisted && (oldest == nullptr || s.iteration < oldest->iteration)) oldest = &s;
    }
    if (oldest == nullptr || !region.transition(rank, oldest->index, SlotState::kPersisted, SlotState::kEmpty)) {
      throw Error(ErrorCode::kBackpressure,
                  "rank " + std::to_string(rank) + ": every slot holds an unpersisted checkpoint");
    }
    ack.evicted.push_back(oldest->iteration);
    target = oldest->index;
  }

  const std::uint32_t slot = *target;
  if (!region.transition(rank, slot, SlotState::kEmpty, SlotState::kWriting)) {
    throw Error(ErrorCode::kBackpressure, "slot changed state while claiming it");
  }
  region.set_meta(rank, slot, iteration, 0, 0);
  crash_point(faults, "stage.claimed");
  auto dst = region.payload(rank, slot);
  if (!bytes.empty()) std::memcpy(dst.data(), bytes.data(), bytes.size());
  crash_point(faults, "stage.copied");
  const std::uint64_t sum = checksum(bytes);
  region.set_meta(rank, slot, iteration, bytes.size(), sum);
  crash_point(faults, "stage.checksummed");
  region.publish(rank, slot, SlotState::kValid);
  crash_point(faults, "stage.published");
  ack.slot = slot;
  ack.checksum = sum;

  // Trim the ring back to K retained iterations, oldest persisted first.
  for (;;) {
    std::vector<SlotInfo> kept;
    for (std::uint32_t i = 0; i < slots; ++i) {
      auto s = region.info(rank, i);
      if (retained(s.state)) kept.push_back(s);
    }
    if (kept.size() <= region.redundancy()) break;
    const auto oldest = std::min_element(kept.begin(), kept.end(),
                                         [](const SlotInfo& a, const SlotInfo& b) { return a.iteration < b.iteration; });
    if (oldest->state != SlotState::kPersisted ||
        !region.transition(rank, oldest->index, SlotState::kPersisted, SlotState::kEmpty)) {
      break;
    }
    ack.evicted.push_back(oldest->iteration);
  }
  return ack;
}

CheckpointClient::CheckpointClient(SlotRegion& region, std::uint32_t rank, std::uint32_t max_cached_iteration,
                                   EncodeOptions options, FaultInjector* faults)
    : region_(region), rank_(rank), encoder_(max_cached_iteration, options), faults_(faults) {
  if (rank >= region.ranks()) throw Error(ErrorCode::kInvalidArgument, "rank " + std::to_string(rank) + " out of range");
}

StageAck CheckpointClient::save(const Checkpoint& ckpt) {
  const auto prior = encoder_.state();
  const EncodedCheckpoint encoded = encoder_.encode(ckpt);
  const Bytes bytes = serialize_encoded(encoded);
  try {
    return stage(region_, rank_, bytes, ckpt.iteration, faults_);
  } catch (const Error&) {
    // The encoder advanced past a checkpoint that was never staged. Rewind it
    // so the same iteration can be retried, as a base.
    encoder_.reset(prior, {});
    encoder_.force_base();
    throw;
  }
}

void CheckpointClient::resume_from(const Checkpoint& loaded, const ChainState& state) {
  encoder_.reset(state, loaded.model_states);
}

std::filesystem::path rank_root(const std::filesystem::path& root, std::uint32_t rank) {
  return root / ("rank_" + std::to_string(rank));
}

PersistAgent::PersistAgent(SlotRegion& region, StoreConfig cfg) : region_(region), cfg_(std::move(cfg)) {
  for (std::uint32_t r = 0; r < region_.ranks(); ++r) {
    StoreConfig rc = cfg_;
    rc.root = rank_root(cfg_.root, r);
    stores_.push_back(std::make_unique<CheckpointStore>(rc));
  }
}

PersistAgent::~PersistAgent() { stop(); }

void PersistAgent::record_failure(const std::string& what) {
  std::lock_guard lock(status_mu_);
  ++status_.failures;
  status_.last_error = what;
}

bool PersistAgent::persist_slot(std::uint32_t rank, const SlotInfo& slot) {
  const auto payload = region_.payload(rank, slot.index).first(slot.length);
  const std::string where = "rank " + std::to_string(rank) + " iteration " + std::to_string(slot.iteration);
  if (checksum(payload) != slot.checksum) {
    record_failure(where + ": staged bytes fail their checksum");
    return false;
  }
  EncodedCheckpoint encoded;
  try {
    encoded = deserialize_encoded(payload);
  } catch (const Error& e) {
    record_failure(where + ": " + e.what());
    return false;
  }
  if (encoded.manifest.iteration != slot.iteration) {
    record_failure(where + ": staged manifest names iteration " + std::to_string(encoded.manifest.iteration));
    return false;
  }
  crash_point(cfg_.faults, "persist.read");
  auto& store = *stores_[rank];
  try {
    store.commit(encoded);
  } catch (const Error& e) {
    // A previous agent may have committed it and died before marking the slot.
    if (!(e.code() == ErrorCode::kStaleIteration && store.loadable(slot.iteration))) {
      record_failure(where + ": " + e.what());
      return false;
    }
  }
  crash_point(cfg_.faults, "persist.committed");
  region_.transition(rank, slot.index, SlotState::kValid, SlotState::kPersisted);
  std::lock_guard lock(status_mu_);
  ++status_.persisted;
  return true;
}

std::size_t PersistAgent::persist_pending() {
  std::size_t done = 0;
  for (std::uint32_t r = 0; r < region_.ranks(); ++r) {
    std::vector<SlotInfo> pending;
    for (std::uint32_t i = 0; i < region_.slots_per_rank(); ++i) {
      auto s = region_.info(r, i);
      if (s.state == SlotState::kValid) pending.push_back(s);
    }
    std::sort(pending.begin(), pending.end(),
              [](const SlotInfo& a, const SlotInfo& b) { return a.iteration < b.iteration; });
    for (const auto& s : pending) {
      if (!persist_slot(r, s)) break;
      ++done;
    }
  }
  return done;
}

void PersistAgent::start(std::chrono::milliseconds poll) {
  if (running_.exchange(true)) return;
  worker_ = std::thread([this, poll] {
    while (running_.load()) {
      try {
        persist_pending();
      } catch (const SimulatedCrash&) {
        std::lock_guard lock(status_mu_);
        status_.crashed = true;
        running_ = false;
        return;
      } catch (const std::exception& e) {
        record_failure(e.what());
      }
      std::this_thread::sleep_for(poll);
    }
  });
}

void PersistAgent::stop() {
  running_ = false;
  if (worker_.joinable()) worker_.join();
}

bool PersistAgent::wait_idle(std::chrono::milliseconds timeout) const {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    bool pending = false;
    for (std::uint32_t r = 0; r < region_.ranks() && !pending; ++r) {
      for (std::uint32_t i = 0; i < region_.slots_per_rank(); ++i) {
        if (region_.state(r, i) == SlotState::kValid) {
          pending = true;
          break;
        }
      }
    }
    if (!pending) return true;
    if (std::chrono::steady_clock::now() >= deadline) return false;
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
}

AgentStatus PersistAgent::status() const {
  std::lock_guard lock(status_mu_);
  return status_;
}

std::string describe_slots(const SlotRegion& region) {
  std::ostringstream out;
  out << "slots-file " << region.path().string() << ": ranks=" << region.ranks() << " K=" << region.redundancy()
      << " slots/rank=" << region.slots_per_rank() << " capacity=" << region.slot_capacity() << "\n";
  for (std::uint32_t r = 0; r < region.ranks(); ++r) {
    for (std::uint32_t i = 0; i < region.slots_per_rank(); ++i) {
      const auto s = region.info(r, i);
      out << "rank " << r << " slot " << i << " " << to_string(s.state);
      if (s.state != SlotState::kEmpty) {
        char sum[24];
        std::snprintf(sum, sizeof(sum), "%016" PRIx64, s.checksum);
        out << " iter " << s.iteration << " bytes " << s.length << " checksum " << sum;
        if (s.state == SlotState::kValid || s.state == SlotState::kPersisted) {
          const bool ok = s.length <= region.slot_capacity() &&
                          checksum(region.payload(r, i).first(s.length)) == s.checksum;
          out << (ok ? " ok" : " CORRUPT");
        }
      }
      out << "\n";
    }
  }
  return out.str();
}

}  // namespace bitsnap
