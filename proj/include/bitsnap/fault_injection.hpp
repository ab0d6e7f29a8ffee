// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0
//
// Named crash points for fault-injection tests. Production code calls
// `crash_point(injector, "name")`; with a null injector this is a no-op.

#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace bitsnap {

/// Models abrupt process death. Deliberately not a bitsnap::Error so that
/// error-path cleanup does not run: whatever was on disk stays there.
struct SimulatedCrash {
  std::string point;
  std::uint64_t hit = 0;
};

class FaultInjector {
 public:
  struct Hit {
    std::string point;
    std::uint64_t occurrence;  // 1-based count of this point so far
  };

  enum class Action { kCrash, kIoError };

  /// Fire on the `occurrence`-th time `point` is reached after this call: kCrash throws
  /// SimulatedCrash, kIoError throws Error(kIo) like a failed syscall would.
  void arm(std::string point, std::uint64_t occurrence = 1, Action action = Action::kCrash);
  void disarm();

  void hit(const std::string& point);

  std::vector<Hit> trace() const;
  bool fired() const;

 private:
  mutable std::mutex mu_;
  std::optional<Hit> armed_;
  Action action_ = Action::kCrash;
  bool fired_ = false;
  std::vector<Hit> trace_;
  std::map<std::string, std::uint64_t> counts_;
};

inline void crash_point(FaultInjector* injector, const char* point) {
  if (injector != nullptr) injector->hit(point);
}

}  // namespace bitsnap
