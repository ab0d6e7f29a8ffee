// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0
//
// Scripted multi-rank failure scenarios driven end to end through the slot
// region, persist agent and recovery protocol.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bitsnap/recovery.hpp"

namespace bitsnap {

struct ScenarioOptions {
  std::uint32_t ranks = 4;
  std::uint32_t redundancy = 2;
  std::uint64_t interval = 20;
  std::vector<std::uint64_t> iterations{60, 80, 100};
  std::uint32_t failing_rank = 1;
  std::uint64_t failing_iteration = 100;
  std::uint64_t params_per_rank = 4096;
};

struct ScenarioResult {
  std::vector<std::string> trace;
  RecoveryOutcome outcome;
  bool loads_match = false;  // every rank reloaded exactly what it saved at `chosen`
};

/// Rank `failing_rank` dies while copying `failing_iteration` into its slot;
/// the agent has persisted everything else. Then every rank restarts and runs
/// recovery. Uses `workdir` for the slot file and per-rank stores.
ScenarioResult run_failure_scenario(const std::filesystem::path& workdir, const ScenarioOptions& opts = {});

}  // namespace bitsnap
