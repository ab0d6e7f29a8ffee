// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0

#include "bitsnap/recovery.hpp"

#include <algorithm>
#include <exception>
#include <set>
#include <thread>

#include "bitsnap/checksum.hpp"

namespace bitsnap {

namespace {

bool intact(const SlotRegion& region, const SlotInfo& s) {
  return s.length <= region.slot_capacity() && checksum(region.payload(s.rank, s.index).first(s.length)) == s.checksum;
}

std::vector<SlotInfo> retained_slots(const SlotRegion& region, std::uint32_t rank) {
  std::vector<SlotInfo> out;
  for (std::uint32_t i = 0; i < region.slots_per_rank(); ++i) {
    auto s = region.info(rank, i);
    if (s.state == SlotState::kValid || s.state == SlotState::kPersisted) out.push_back(s);
  }
  std::sort(out.begin(), out.end(), [](const SlotInfo& a, const SlotInfo& b) { return a.iteration < b.iteration; });
  return out;
}

}  // namespace

RankReport RankView::report() const {
  std::set<std::uint64_t> all(memory_valid.begin(), memory_valid.end());
  all.insert(disk_valid.begin(), disk_valid.end());
  RankReport r;
  r.rank = rank;
  r.valid_iterations.assign(all.begin(), all.end());
  if (!all.empty()) r.latest_valid_iteration = *all.rbegin();
  return r;
}

RankView inspect_rank(const SlotRegion& region, const CheckpointStore& store, std::uint32_t rank) {
  RankView view;
  view.rank = rank;
  for (auto it : store.committed_iterations()) {
    if (store.loadable(it)) view.disk_valid.push_back(it);
  }
  // A memory copy counts when it is intact and its delta chain resolves
  // through disk or earlier memory copies.
  std::set<std::uint64_t> available(view.disk_valid.begin(), view.disk_valid.end());
  for (const auto& s : retained_slots(region, rank)) {
    if (!intact(region, s)) continue;
    CheckpointManifest m;
    try {
      m = peek_manifest(region.payload(rank, s.index).first(s.length));
    } catch (const Error&) {
      continue;
    }
    if (m.iteration != s.iteration) continue;
    if (available.count(m.iteration) != 0 || m.kind == CheckpointKind::kBase ||
        available.count(m.parent_iteration) != 0) {
      view.memory_valid.push_back(m.iteration);
      available.insert(m.iteration);
    }
  }
  return view;
}

std::optional<std::uint64_t> choose_iteration(std::span<const RankReport> reports) {
  if (reports.empty()) return std::nullopt;
  std::vector<std::uint64_t> common = reports.front().valid_iterations;
  for (const auto& r : reports.subspan(1)) {
    std::vector<std::uint64_t> next;
    std::set_intersection(common.begin(), common.end(), r.valid_iterations.begin(), r.valid_iterations.end(),
                          std::back_inserter(next));
    common = std::move(next);
  }
  if (common.empty()) return std::nullopt;
  return common.back();
}

ReportExchange::ReportExchange(std::uint32_t ranks) : ranks_(ranks) {
  if (ranks == 0) throw Error(ErrorCode::kInvalidArgument, "exchange needs at least one rank");
}

std::vector<RankReport> ReportExchange::all_gather(const RankReport& mine) {
  std::unique_lock lock(mu_);
  const auto gen = generation_;
  pending_.push_back(mine);
  if (pending_.size() == ranks_) {
    std::sort(pending_.begin(), pending_.end(), [](const RankReport& a, const RankReport& b) { return a.rank < b.rank; });
    published_ = std::move(pending_);
    pending_.clear();
    ++generation_;
    cv_.notify_all();
    return published_;
  }
  cv_.wait(lock, [&] { return generation_ != gen; });
  return published_;
}

RankRecovery recover_rank(SlotRegion& region, CheckpointStore& store, std::uint32_t rank, ReportExchange& exchange) {
  RankRecovery out;
  out.rank = rank;

  // Torn writes and corrupted copies are dropped before anyone reports.
  for (std::uint32_t i = 0; i < region.slots_per_rank(); ++i) {
    const auto s = region.info(rank, i);
    const bool torn = s.state == SlotState::kWriting;
    const bool bad = (s.state == SlotState::kValid || s.state == SlotState::kPersisted) && !intact(region, s);
    if (torn || bad) {
      region.publish(rank, i, SlotState::kEmpty);
      out.pruned_memory.push_back(s.iteration);
    }
  }

  RankView view;
  try {
    view = inspect_rank(region, store, rank);
    out.report = view.report();
  } catch (const Error&) {
    out.report = RankReport{rank, std::nullopt, {}, false};
  }
  const auto reports = exchange.all_gather(out.report);
  for (const auto& r : reports) {
    if (!r.healthy) {
      throw Error(ErrorCode::kIo, "rank " + std::to_string(r.rank) + " could not inspect its checkpoints; nothing pruned");
    }
  }
  out.chosen = choose_iteration(reports);
  const auto chosen = out.chosen;
  auto newer = [&](std::uint64_t it) { return !chosen || it > *chosen; };

  const std::set<std::uint64_t> resolvable(view.memory_valid.begin(), view.memory_valid.end());
  for (std::uint32_t i = 0; i < region.slots_per_rank(); ++i) {
    const auto s = region.info(rank, i);
    // copies whose delta chain cannot be resolved could never be persisted
    if (s.state != SlotState::kEmpty && (newer(s.iteration) || resolvable.count(s.iteration) == 0)) {
      region.publish(rank, i, SlotState::kEmpty);
      out.pruned_memory.push_back(s.iteration);
    }
  }

  if (const auto t = store.tracker(); t && newer(t->latest_iteration)) {
    std::optional<std::uint64_t> keep;
    for (auto it : store.committed_iterations()) {
      if (newer(it)) {
        out.pruned_disk.push_back(it);
      } else if (store.loadable(it)) {
        keep = it;
      }
    }
    store.rollback_to(keep);
  }
  if (!chosen) return out;

  for (const auto& s : retained_slots(region, rank)) {
    const auto t = store.tracker();
    if (!t || s.iteration > t->latest_iteration) {
      store.commit(deserialize_encoded(region.payload(rank, s.index).first(s.length)));
      out.flushed.push_back(s.iteration);
    }
    if (s.state == SlotState::kValid && store.loadable(s.iteration)) {
      region.transition(rank, s.index, SlotState::kValid, SlotState::kPersisted);
    }
  }

  out.checkpoint = store.load(*chosen);
  const auto m = store.read_manifest(*chosen);
  out.chain = ChainState{m.iteration, m.base_iteration, m.chain_position};
  return out;
}

RecoveryOutcome recover(SlotRegion& region, const StoreConfig& cfg) {
  const std::uint32_t ranks = region.ranks();
  std::vector<std::unique_ptr<CheckpointStore>> stores;
  for (std::uint32_t r = 0; r < ranks; ++r) {
    StoreConfig rc = cfg;
    rc.root = rank_root(cfg.root, r);
    stores.push_back(std::make_unique<CheckpointStore>(rc));
  }
  ReportExchange exchange(ranks);
  RecoveryOutcome outcome;
  outcome.ranks.resize(ranks);
  std::vector<std::exception_ptr> errors(ranks);
  std::vector<std::thread> workers;
  for (std::uint32_t r = 0; r < ranks; ++r) {
    workers.emplace_back([&, r] {
      try {
        outcome.ranks[r] = recover_rank(region, *stores[r], r, exchange);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  outcome.chosen = outcome.ranks.front().chosen;
  return outcome;
}

}  // namespace bitsnap
