// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0

#include "bitsnap/simulation.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "bitsnap/synthetic.hpp"

namespace bitsnap {

namespace {

std::string join(const std::vector<std::uint64_t>& v) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
  out << "]";
  return out.str();
}

std::string opt(const std::optional<std::uint64_t>& v) { return v ? std::to_string(*v) : "none"; }

}  // namespace

ScenarioResult run_failure_scenario(const std::filesystem::path& workdir, const ScenarioOptions& opts) {
  if (opts.failing_rank >= opts.ranks) throw Error(ErrorCode::kInvalidArgument, "failing rank out of range");
  std::filesystem::remove_all(workdir);
  std::filesystem::create_directories(workdir);
  ScenarioResult result;
  auto& trace = result.trace;

  const auto layout = make_layout(opts.params_per_rank, 2);
  // every rank saves its own shard; keep them to compare after recovery
  std::map<std::pair<std::uint32_t, std::uint64_t>, Checkpoint> saved;
  std::vector<Checkpoint> current;
  for (std::uint32_t r = 0; r < opts.ranks; ++r) {
    current.push_back(synthetic_checkpoint(layout, 0, 1000 + r));
  }
  const std::uint64_t capacity = 2 * serialize_checkpoint(current.front()).size() + 4096;

  StoreConfig cfg;
  cfg.root = workdir / "store";
  cfg.redundancy = opts.redundancy;
  {
    auto region = SlotRegion::create(workdir / "slots.bin", {opts.ranks, opts.redundancy, capacity});
    PersistAgent agent(region, cfg);
    std::vector<FaultInjector> faults(opts.ranks);
    std::vector<std::unique_ptr<CheckpointClient>> clients;
    for (std::uint32_t r = 0; r < opts.ranks; ++r) {
      clients.push_back(std::make_unique<CheckpointClient>(region, r, cfg.max_cached_iteration, EncodeOptions{},
                                                           &faults[r]));
    }
    const auto pos = std::find(opts.iterations.begin(), opts.iterations.end(), opts.failing_iteration);
    if (pos != opts.iterations.end()) {
      faults[opts.failing_rank].arm("stage.claimed", static_cast<std::uint64_t>(pos - opts.iterations.begin()) + 1);
    }
    trace.push_back("setup ranks=" + std::to_string(opts.ranks) + " interval=" + std::to_string(opts.interval) +
                    " K=" + std::to_string(opts.redundancy));

    bool failed = false;
    for (auto it : opts.iterations) {
      for (std::uint32_t r = 0; r < opts.ranks; ++r) {
        current[r] = perturb(current[r], it, 0.05, it * 131 + r);
        try {
          const auto kind = clients[r]->encoder().next_kind();
          const auto ack = clients[r]->save(current[r]);
          saved[{r, it}] = current[r];
          std::string line = "stage iter=" + std::to_string(it) + " rank=" + std::to_string(r) +
                             " slot=" + std::to_string(ack.slot) + " " + std::string(to_string(kind));
          if (!ack.evicted.empty()) line += " evicted=" + join(ack.evicted);
          trace.push_back(line);
        } catch (const SimulatedCrash& c) {
          failed = true;
          trace.push_back("stage iter=" + std::to_string(it) + " rank=" + std::to_string(r) + " FAILED at " + c.point);
        }
      }
      const auto persisted = agent.persist_pending();
      trace.push_back("persist iter=" + std::to_string(it) + " slots=" + std::to_string(persisted));
      if (failed) break;
    }
    trace.push_back("restart");
  }

  auto region = SlotRegion::open(workdir / "slots.bin");
  result.outcome = recover(region, cfg);
  for (const auto& rr : result.outcome.ranks) {
    trace.push_back("report rank=" + std::to_string(rr.rank) + " latest=" + opt(rr.report.latest_valid_iteration) +
                    " valid=" + join(rr.report.valid_iterations));
  }
  trace.push_back(result.outcome.cold_start() ? "cold-start" : "chosen " + opt(result.outcome.chosen));
  result.loads_match = !result.outcome.cold_start();
  for (const auto& rr : result.outcome.ranks) {
    auto memory = rr.pruned_memory;
    std::sort(memory.begin(), memory.end());
    memory.erase(std::unique(memory.begin(), memory.end()), memory.end());
    trace.push_back("prune rank=" + std::to_string(rr.rank) + " memory=" + join(memory) +
                    " disk=" + join(rr.pruned_disk));
    if (!rr.checkpoint) {
      result.loads_match = false;
      continue;
    }
    const auto it = saved.find({rr.rank, *result.outcome.chosen});
    const bool same = it != saved.end() && rr.checkpoint->model_states == it->second.model_states;
    result.loads_match = result.loads_match && same;
    trace.push_back("load rank=" + std::to_string(rr.rank) + " iter=" + std::to_string(rr.checkpoint->iteration) +
                    (same ? " model-states-match" : " MODEL-STATES-DIFFER"));
  }
  return result;
}

}  // namespace bitsnap
