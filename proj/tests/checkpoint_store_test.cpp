// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "bitsnap/checkpoint_store.hpp"
#include "bitsnap/error.hpp"
#include "bitsnap/file_io.hpp"
#include "bitsnap/synthetic.hpp"
#include "test_support.hpp"

using namespace bitsnap;
using bitsnap::testing::TempDir;
namespace fs = std::filesystem;

namespace {

StoreConfig config(const fs::path& root, std::uint32_t max_cached = 5) {
  StoreConfig cfg;
  cfg.root = root;
  cfg.max_cached_iteration = max_cached;
  return cfg;
}

Checkpoint first_checkpoint(std::uint64_t iteration = 0, std::uint64_t params = 3000) {
  return synthetic_checkpoint(make_layout(params, 3), iteration, 17);
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

// Optimizer states come back within the quantizer's per-cluster bound; the
// bound itself is tested elsewhere, so a loose absolute check suffices here.
void expect_optimizer_close(const Checkpoint& a, const Checkpoint& b) {
  ASSERT_EQ(a.optimizer_states.size(), b.optimizer_states.size());
  for (std::size_t i = 0; i < a.optimizer_states.size(); ++i) {
    const auto x = a.optimizer_states[i].f32_values(), y = b.optimizer_states[i].f32_values();
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t k = 0; k < x.size(); ++k) ASSERT_NEAR(x[k], y[k], 0.05);
  }
}

struct EnvGuard {
  explicit EnvGuard(const char* value) { ::setenv(kMaxCachedEnvVar, value, 1); }
  ~EnvGuard() { ::unsetenv(kMaxCachedEnvVar); }
};

}  // namespace

TEST(Tracker, WriteThenRead) {
  TempDir dir("tracker");
  write_tracker(dir.path(), {100, 80});
  EXPECT_EQ(read_tracker(dir.path()), (TrackerState{100, 80}));
  EXPECT_EQ(read_file(dir / kTrackerFileName), (Bytes{'1', '0', '0', '\n', '8', '0', '\n'}));
}

TEST(Tracker, CrashBeforeRenameKeepsPreviousState) {
  TempDir dir("tracker");
  write_tracker(dir.path(), {60, 60});
  FaultInjector faults;
  faults.arm("tracker.temp_written");
  EXPECT_THROW(write_tracker(dir.path(), {80, 60}, &faults), SimulatedCrash);
  EXPECT_EQ(read_tracker(dir.path()), (TrackerState{60, 60}));
}

TEST(Tracker, MalformedContentIsAParseError) {
  TempDir dir("tracker");
  const fs::path p = dir / kTrackerFileName;
  for (const std::string bad : {"", "100\n", "100\n80", "abc\n80\n", "80\n100\n", "1 00\n80\n", "100\n80\n\n"}) {
    write_file(p, bad);
    EXPECT_EQ(code_of([&] { read_tracker(dir.path()); }), ErrorCode::kParseError) << "'" << bad << "'";
  }
  fs::remove(p);
  EXPECT_EQ(code_of([&] { read_tracker(dir.path()); }), ErrorCode::kNotFound);
}

TEST(Store, FirstSaveIsBaseAndLoadsBitwise) {
  TempDir dir("store");
  CheckpointStore store(config(dir.path()));
  const auto c = first_checkpoint(7);
  const auto m = store.save(c);
  EXPECT_EQ(m.kind, CheckpointKind::kBase);
  EXPECT_EQ(store.tracker(), (TrackerState{7, 7}));
  EXPECT_EQ(read_file(iteration_dir(dir.path(), 7) / "type.txt"), (Bytes{'b', 'a', 's', 'e', '\n'}));
  const auto back = store.load();
  EXPECT_EQ(back.model_states, c.model_states);
  expect_optimizer_close(back, c);
  for (const auto& e : m.entries) {
    EXPECT_EQ(e.codec, e.role == TensorRole::kModel ? Codec::kRaw : Codec::kQuant);
  }
}

TEST(Store, RefreshRuleCountsCheckpointsSinceBase) {
  TempDir dir("store");
  CheckpointStore store(config(dir.path(), 5));
  auto c = first_checkpoint(0);
  std::vector<CheckpointKind> kinds;
  for (std::uint64_t it = 0; it <= 50; it += 10) {
    if (it > 0) c = perturb(c, it, 0.05, it);
    EXPECT_EQ(store.planned_kind(), store.tracker() && it != 50 ? CheckpointKind::kDelta : CheckpointKind::kBase);
    kinds.push_back(store.save(c).kind);
  }
  const std::vector<CheckpointKind> expected = {CheckpointKind::kBase,  CheckpointKind::kDelta, CheckpointKind::kDelta,
                                                CheckpointKind::kDelta, CheckpointKind::kDelta, CheckpointKind::kBase};
  EXPECT_EQ(kinds, expected);
  EXPECT_EQ(store.tracker(), (TrackerState{50, 50}));
  EXPECT_EQ(read_file(iteration_dir(dir.path(), 30) / "type.txt"), (Bytes{'d', 'e', 'l', 't', 'a', '\n'}));
}

TEST(Store, BaseRefreshTraceOverManySaves) {
  TempDir dir("store");
  CheckpointStore store(config(dir.path(), 3));
  auto c = first_checkpoint(1, 600);
  std::string trace;
  for (std::uint64_t it = 1; it <= 10; ++it) {
    if (it > 1) c = perturb(c, it, 0.1, it);
    trace += store.save(c).kind == CheckpointKind::kBase ? 'B' : 'D';
  }
  EXPECT_EQ(trace, "BDDBDDBDDB");
}

TEST(Store, EnvironmentOverridesMaxCached) {
  TempDir dir("store");
  EnvGuard env("2");
  CheckpointStore store(config(dir.path(), 5));
  EXPECT_EQ(store.config().max_cached_iteration, 2u);
  auto c = first_checkpoint(1, 600);
  std::string trace;
  for (std::uint64_t it = 1; it <= 5; ++it) {
    if (it > 1) c = perturb(c, it, 0.1, it);
    trace += store.save(c).kind == CheckpointKind::kBase ? 'B' : 'D';
  }
  EXPECT_EQ(trace, "BDBDB");
}

TEST(Store, BadEnvironmentValueIsRejected) {
  TempDir dir("store");
  EnvGuard env("five");
  EXPECT_EQ(code_of([&] { CheckpointStore store(config(dir.path())); }), ErrorCode::kParseError);
}

TEST(Store, EveryIntermediateIterationLoads) {
  TempDir dir("store");
  CheckpointStore store(config(dir.path(), 4));
  std::vector<Checkpoint> saved{first_checkpoint(0)};
  store.save(saved.back());
  for (std::uint64_t it = 1; it <= 9; ++it) {
    saved.push_back(perturb(saved.back(), it, 0.02 * it, it));
    store.save(saved.back());
  }
  CheckpointStore reader(config(dir.path()), CheckpointStore::Mode::kReader);
  for (const auto& c : saved) {
    const auto back = reader.load(c.iteration);
    ASSERT_EQ(back.iteration, c.iteration);
    ASSERT_EQ(back.model_states, c.model_states) << "iteration " << c.iteration;
    expect_optimizer_close(back, c);
  }
  EXPECT_EQ(load_checkpoint(config(dir.path())).model_states, saved.back().model_states);
}

TEST(Store, FifteenPercentDeltaShrinksModelStates) {
  TempDir dir("store");
  CheckpointStore store(config(dir.path()));
  const auto layout = make_layout(1 << 20, 1, false);
  const auto base = synthetic_checkpoint(layout, 0, 3);
  store.save(base);
  // exactly 15% of the elements change
  auto bits = base.model_states[0].f16_bits();
  const std::size_t n = bits.size(), n_c = n * 15 / 100;
  for (std::size_t i = 0; i < n_c; ++i) bits[i * n / n_c] ^= 1;
  Checkpoint next;
  next.iteration = 10;
  next.model_states.push_back(TensorBlob::from_f16_bits("model.0", base.model_states[0].shape(), bits));
  const auto m = store.save(next);
  ASSERT_EQ(m.kind, CheckpointKind::kDelta);
  ASSERT_EQ(m.entries.size(), 1u);
  const double ratio = static_cast<double>(m.entries[0].length) / static_cast<double>(m.entries[0].raw_bytes);
  EXPECT_NEAR(ratio, 0.425 / 2, 0.001);
}

TEST(Store, DenseChangeFallsBackToRawInsideDelta) {
  TempDir dir("store");
  CheckpointStore store(config(dir.path()));
  auto c = first_checkpoint(0);
  store.save(c);
  const auto m = store.save(perturb(c, 1, 1.0, 9));
  EXPECT_EQ(m.kind, CheckpointKind::kDelta);
  for (const auto& e : m.entries) {
    if (e.role == TensorRole::kModel) {
      EXPECT_EQ(e.codec, Codec::kRaw);
    }
  }
}

TEST(Store, MissingMiddleDeltaIsReported) {
  TempDir dir("store");
  {
    CheckpointStore store(config(dir.path()));
    auto c = first_checkpoint(10);
    store.save(c);
    for (std::uint64_t it : {20, 30, 40}) {
      c = perturb(c, it, 0.05, it);
      store.save(c);
    }
  }
  fs::remove_all(iteration_dir(dir.path(), 30));
  try {
    load_checkpoint(config(dir.path()), 40);
    FAIL() << "expected a missing link";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingLink);
    EXPECT_NE(std::string(e.what()).find("30"), std::string::npos) << e.what();
  }
  EXPECT_EQ(load_checkpoint(config(dir.path()), 20).iteration, 20u);
}

TEST(Store, TypeFileDisagreementIsDetected) {
  TempDir dir("store");
  CheckpointStore store(config(dir.path()));
  store.save(first_checkpoint(1));
  write_file(iteration_dir(dir.path(), 1) / "type.txt", std::string("delta\n"));
  EXPECT_EQ(code_of([&] { store.load(); }), ErrorCode::kTrackerMismatch);
}

TEST(Store, CorruptionIsDetected) {
  TempDir dir("store");
  CheckpointStore store(config(dir.path()));
  store.save(first_checkpoint(1));
  const auto manifest_path = iteration_dir(dir.path(), 1) / "manifest.bin";
  const auto tensors_path = iteration_dir(dir.path(), 1) / "tensors.bin";
  const auto manifest = read_file(manifest_path);
  const auto tensors = read_file(tensors_path);

  auto bad = manifest;
  bad[bad.size() / 2] ^= 0x10;
  write_file(manifest_path, bad);
  EXPECT_EQ(code_of([&] { store.load(); }), ErrorCode::kCorruptManifest);
  EXPECT_FALSE(store.loadable(1));
  write_file(manifest_path, manifest);

  bad = tensors;
  bad[bad.size() / 3] ^= 0x01;
  write_file(tensors_path, bad);
  EXPECT_EQ(code_of([&] { store.load(); }), ErrorCode::kChecksumMismatch);
  write_file(tensors_path, tensors);
  EXPECT_TRUE(store.loadable(1));
}

TEST(Store, IoErrorRemovesPartialDirectoryAndForcesBase) {
  TempDir dir("store");
  FaultInjector faults;
  auto cfg = config(dir.path());
  cfg.faults = &faults;
  CheckpointStore store(cfg);
  auto c = first_checkpoint(1);
  store.save(c);
  c = perturb(c, 2, 0.05, 2);
  store.save(c);

  faults.arm("store.manifest_written", 1, FaultInjector::Action::kIoError);
  const auto failed = perturb(c, 3, 0.05, 3);
  EXPECT_EQ(code_of([&] { store.save(failed); }), ErrorCode::kIo);
  EXPECT_FALSE(fs::exists(iteration_dir(dir.path(), 3)));
  EXPECT_FALSE(fs::exists(dir / ".tmp_iter_0000003"));
  EXPECT_EQ(store.tracker(), (TrackerState{2, 1}));
  EXPECT_TRUE(store.base_forced());

  const auto m = store.save(failed);
  EXPECT_EQ(m.kind, CheckpointKind::kBase);
  EXPECT_FALSE(store.base_forced());
  EXPECT_EQ(store.load().model_states, failed.model_states);
}

TEST(Store, IoErrorOnTrackerRenameUndoesTheDirectory) {
  TempDir dir("store");
  FaultInjector faults;
  auto cfg = config(dir.path());
  cfg.faults = &faults;
  CheckpointStore store(cfg);
  store.save(first_checkpoint(1));
  faults.arm("tracker.temp_written", 1, FaultInjector::Action::kIoError);
  EXPECT_EQ(code_of([&] { store.save(perturb(first_checkpoint(1), 2, 0.1, 1)); }), ErrorCode::kIo);
  EXPECT_FALSE(fs::exists(iteration_dir(dir.path(), 2)));
  EXPECT_EQ(store.tracker(), (TrackerState{1, 1}));
}

TEST(Store, EveryCrashPointLeavesOldOrNewState) {
  const std::vector<std::string> points = {"store.begin",      "store.tensors_written", "store.manifest_written",
                                           "store.type_written", "store.dir_renamed",   "tracker.temp_written",
                                           "tracker.renamed"};
  for (const auto& point : points) {
    TempDir dir("crash");
    auto c1 = first_checkpoint(1);
    auto c2 = perturb(c1, 2, 0.05, 2);
    {
      FaultInjector faults;
      auto cfg = config(dir.path());
      cfg.faults = &faults;
      CheckpointStore store(cfg);
      store.save(c1);
      faults.arm(point);
      EXPECT_THROW(store.save(c2), SimulatedCrash) << point;
    }
    // a fresh writer cleans up; the tracker is either the old or the new state
    CheckpointStore store(config(dir.path()));
    const auto t = store.tracker();
    ASSERT_TRUE(t.has_value()) << point;
    const bool committed = point == "tracker.renamed";
    EXPECT_EQ(t->latest_iteration, committed ? 2u : 1u) << point;
    EXPECT_EQ(store.load().model_states, (committed ? c2 : c1).model_states) << point;
    EXPECT_EQ(fs::exists(iteration_dir(dir.path(), 2)), committed) << point;
    for (const auto& entry : fs::directory_iterator(dir.path())) {
      EXPECT_EQ(entry.path().filename().string().rfind(".tmp", 0), std::string::npos) << entry.path();
    }
  }
}

TEST(Store, SecondWriterIsLockedOut) {
  TempDir dir("store");
  CheckpointStore writer(config(dir.path()));
  EXPECT_EQ(code_of([&] { CheckpointStore other(config(dir.path())); }), ErrorCode::kLocked);
  CheckpointStore reader(config(dir.path()), CheckpointStore::Mode::kReader);
  EXPECT_FALSE(reader.tracker().has_value());
}

TEST(Store, StaleAndMisdirectedSaves) {
  TempDir dir("store");
  CheckpointStore store(config(dir.path()));
  const auto c = first_checkpoint(5);
  store.save(c);
  EXPECT_EQ(code_of([&] { store.save(c); }), ErrorCode::kStaleIteration);
  auto wrong_prev = c;
  wrong_prev.iteration = 4;
  EXPECT_EQ(code_of([&] { store.save(perturb(c, 6, 0.1, 1), &wrong_prev); }), ErrorCode::kStructureMismatch);
}

TEST(Store, FreeFunctionDeltaNeedsPrev) {
  TempDir dir("store");
  const auto cfg = config(dir.path());
  const auto c = first_checkpoint(1);
  EXPECT_EQ(save_checkpoint(cfg, c, nullptr).kind, CheckpointKind::kBase);
  const auto next = perturb(c, 2, 0.1, 2);
  EXPECT_EQ(code_of([&] { save_checkpoint(cfg, next, nullptr); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(save_checkpoint(cfg, next, &c).kind, CheckpointKind::kDelta);
  EXPECT_EQ(load_checkpoint(cfg).model_states, next.model_states);
}

TEST(Store, ChainContinuesAcrossReopen) {
  TempDir dir("store");
  auto c = first_checkpoint(1);
  {
    CheckpointStore store(config(dir.path()));
    store.save(c);
  }
  c = perturb(c, 2, 0.1, 2);
  CheckpointStore store(config(dir.path()));
  EXPECT_EQ(store.save(c).kind, CheckpointKind::kDelta);
  EXPECT_EQ(store.load().model_states, c.model_states);
}

TEST(Store, RollbackDropsNewerCheckpoints) {
  TempDir dir("store");
  CheckpointStore store(config(dir.path()));
  auto c = first_checkpoint(1);
  store.save(c);
  std::vector<Checkpoint> saved{c};
  for (std::uint64_t it = 2; it <= 4; ++it) {
    saved.push_back(perturb(saved.back(), it, 0.05, it));
    store.save(saved.back());
  }
  store.rollback_to(2);
  EXPECT_EQ(store.tracker(), (TrackerState{2, 1}));
  EXPECT_EQ(store.committed_iterations(), (std::vector<std::uint64_t>{1, 2}));
  EXPECT_FALSE(fs::exists(iteration_dir(dir.path(), 3)));
  EXPECT_EQ(store.load().model_states, saved[1].model_states);
  // the chain resumes from the rolled-back point
  const auto m = store.save(perturb(saved[1], 3, 0.05, 99));
  EXPECT_EQ(m.kind, CheckpointKind::kDelta);
  EXPECT_EQ(m.parent_iteration, 2u);
  store.rollback_to(std::nullopt);
  EXPECT_FALSE(store.tracker().has_value());
  EXPECT_TRUE(store.committed_iterations().empty());
}

TEST(Store, InspectReportsChain) {
  TempDir dir("store");
  CheckpointStore store(config(dir.path()));
  auto c = first_checkpoint(1);
  store.save(c);
  store.save(perturb(c, 2, 0.05, 2));
  const auto info = store.inspect();
  ASSERT_EQ(info.size(), 2u);
  EXPECT_EQ(info[0].kind, CheckpointKind::kBase);
  EXPECT_EQ(info[1].kind, CheckpointKind::kDelta);
  EXPECT_EQ(info[1].parent_iteration, 1u);
  EXPECT_LT(info[1].stored_bytes, info[0].stored_bytes);
}

TEST(Manifest, RoundTripAndValidation) {
  CheckpointManifest m;
  m.iteration = 9;
  m.kind = CheckpointKind::kDelta;
  m.base_iteration = 5;
  m.parent_iteration = 8;
  m.chain_position = 3;
  m.entries.push_back({"w", TensorRole::kModel, Codec::kDelta, 0, 40, 80, 123});
  m.entries.push_back({"m", TensorRole::kOptimizer, Codec::kQuant, 40, 20, 64, 456});
  EXPECT_EQ(deserialize_manifest(serialize_manifest(m)), m);

  auto bad = m;
  bad.base_iteration = 9;
  EXPECT_EQ(code_of([&] { validate_manifest(bad); }), ErrorCode::kCorruptManifest);
  bad = m;
  bad.entries[1].codec = Codec::kDelta;
  EXPECT_EQ(code_of([&] { validate_manifest(bad); }), ErrorCode::kCorruptManifest);
  bad = m;
  bad.kind = CheckpointKind::kBase;
  EXPECT_EQ(code_of([&] { validate_manifest(bad); }), ErrorCode::kCorruptManifest);
}
