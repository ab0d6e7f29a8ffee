// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0

#include "bitsnap/fault_injection.hpp"

#include "bitsnap/error.hpp"

namespace bitsnap {

void FaultInjector::arm(std::string point, std::uint64_t occurrence, Action action) {
  std::lock_guard lock(mu_);
  const auto seen = counts_[point];
  armed_ = Hit{std::move(point), seen + occurrence};
  action_ = action;
  fired_ = false;
}

void FaultInjector::disarm() {
  std::lock_guard lock(mu_);
  armed_.reset();
}

void FaultInjector::hit(const std::string& point) {
  std::lock_guard lock(mu_);
  const auto occurrence = ++counts_[point];
  trace_.push_back({point, occurrence});
  if (armed_ && !fired_ && armed_->point == point && armed_->occurrence == occurrence) {
    fired_ = true;
    if (action_ == Action::kIoError) {
      throw Error(ErrorCode::kIo, "injected failure at " + point);
    }
    throw SimulatedCrash{point, occurrence};
  }
}

std::vector<FaultInjector::Hit> FaultInjector::trace() const {
  std::lock_guard lock(mu_);
  return trace_;
}

bool FaultInjector::fired() const {
  std::lock_guard lock(mu_);
  return fired_;
}

}  // namespace bitsnap
