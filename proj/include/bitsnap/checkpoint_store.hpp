// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0
//
// On-disk base/delta checkpoint chains.
//
//   <root>/latest_checkpointed_iteration.txt   "<latest>\n<latest base>\n"
//   <root>/iter_<7-digit N>/type.txt           "base\n" or "delta\n"
//   <root>/iter_<7-digit N>/manifest.bin       BSMF manifest
//   <root>/iter_<7-digit N>/tensors.bin        concatenated BSNP/BSDL/BSQT blobs
//
// A save builds the directory under a temporary name, renames it into place
// and only then rewrites the tracker (temp file + rename). The tracker rename
// is the commit point; directories newer than the tracker are leftovers of an
// interrupted save and are removed the next time a writer opens the root.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bitsnap/byte_io.hpp"
#include "bitsnap/cluster_quantizer.hpp"
#include "bitsnap/fault_injection.hpp"
#include "bitsnap/tensor.hpp"

namespace bitsnap {

enum class CheckpointKind : std::uint8_t { kBase = 0, kDelta = 1 };
enum class Codec : std::uint8_t { kRaw = 0, kDelta = 1, kQuant = 2 };
enum class TensorRole : std::uint8_t { kModel = 0, kOptimizer = 1 };

std::string_view to_string(CheckpointKind kind);
std::string_view to_string(Codec codec);

struct ManifestEntry {
  std::string name;
  TensorRole role = TensorRole::kModel;
  Codec codec = Codec::kRaw;
  std::uint64_t offset = 0;  // into tensors.bin
  std::uint64_t length = 0;
  std::uint64_t raw_bytes = 0;  // uncompressed size, for reporting
  std::uint64_t checksum = 0;   // of the stored blob

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct CheckpointManifest {
  std::uint64_t iteration = 0;
  CheckpointKind kind = CheckpointKind::kBase;
  std::uint64_t base_iteration = 0;    // == iteration for a base
  std::uint64_t parent_iteration = 0;  // checkpoint the model-state deltas apply to; == iteration for a base
  std::uint32_t chain_position = 0;    // 0 for a base, k for the k-th delta after it
  std::vector<ManifestEntry> entries;  // model states first, then optimizer states

  friend bool operator==(const CheckpointManifest&, const CheckpointManifest&) = default;
};

/// Throws kCorruptManifest when the structural invariants do not hold.
void validate_manifest(const CheckpointManifest& m);
/// BSMF: magic, version, fields, entries, trailing checksum of everything before it.
Bytes serialize_manifest(const CheckpointManifest& m);
CheckpointManifest deserialize_manifest(ByteView bytes);

/// A compressed checkpoint ready to be written: the unit staged in memory.
struct EncodedCheckpoint {
  CheckpointManifest manifest;
  Bytes tensors;
};

Bytes serialize_encoded(const EncodedCheckpoint& e);
EncodedCheckpoint deserialize_encoded(ByteView bytes);
/// Reads only the manifest of a serialized EncodedCheckpoint.
CheckpointManifest peek_manifest(ByteView encoded);

/// Rebuilds a checkpoint from its manifest and tensors.bin bytes. Deltas need
/// the parent's model states. Errors: kMissingLink, kCorruptManifest,
/// kChecksumMismatch, plus codec errors.
Checkpoint decode_checkpoint(const CheckpointManifest& m, ByteView tensors,
                             const std::vector<TensorBlob>* parent_model_states, bool with_optimizer = true);

struct EncodeOptions {
  unsigned clusters = kDefaultClusters;
  bool quantize_optimizer = true;
  bool parallel = false;  // encode tensors concurrently
};

/// Where the most recent checkpoint of a chain sits.
struct ChainState {
  std::uint64_t iteration = 0;
  std::uint64_t base_iteration = 0;
  std::uint32_t position = 0;

  friend bool operator==(const ChainState&, const ChainState&) = default;
};

/// Decides base vs delta for each new checkpoint and encodes it. Remembers the
/// previous model states so consecutive deltas chain.
class CheckpointEncoder {
 public:
  CheckpointEncoder(std::uint32_t max_cached_iteration, EncodeOptions options);

  /// Base when there is no chain, a base was forced, or the chain already
  /// holds max_cached_iteration checkpoints.
  CheckpointKind next_kind() const;

  /// Errors: kStaleIteration, kStructureMismatch, kInvalidArgument.
  EncodedCheckpoint encode(const Checkpoint& ckpt);

  /// Re-seed from a loaded checkpoint (its model states are the delta reference).
  void reset(std::optional<ChainState> state, std::vector<TensorBlob> previous_model_states);
  void force_base() { force_base_ = true; }

  const std::optional<ChainState>& state() const { return state_; }

 private:
  std::uint32_t max_cached_;
  EncodeOptions options_;
  std::optional<ChainState> state_;
  std::vector<TensorBlob> previous_;
  bool force_base_ = false;
};

struct TrackerState {
  std::uint64_t latest_iteration = 0;
  std::uint64_t latest_base_iteration = 0;

  friend bool operator==(const TrackerState&, const TrackerState&) = default;
};

inline constexpr const char* kTrackerFileName = "latest_checkpointed_iteration.txt";
inline constexpr const char* kMaxCachedEnvVar = "MAX_CACHED_ITERATION";

struct StoreConfig {
  std::filesystem::path root;
  std::uint32_t max_cached_iteration = 5;
  std::uint32_t redundancy = 2;
  unsigned clusters = kDefaultClusters;
  bool quantize_optimizer = true;
  FaultInjector* faults = nullptr;  // tests only
};

/// Validates the config; MAX_CACHED_ITERATION, when set, overrides it.
/// Errors: kInvalidArgument, kParseError.
StoreConfig resolve_config(StoreConfig cfg);

std::filesystem::path iteration_dir(const std::filesystem::path& root, std::uint64_t iteration);

/// Temp file then rename. `faults` sees "tracker.temp_written" and "tracker.renamed".
void write_tracker(const std::filesystem::path& root, const TrackerState& state, FaultInjector* faults = nullptr);
/// Errors: kNotFound when absent, kParseError when malformed.
TrackerState read_tracker(const std::filesystem::path& root);
std::optional<TrackerState> try_read_tracker(const std::filesystem::path& root);

struct StoredCheckpointInfo {
  std::uint64_t iteration = 0;
  CheckpointKind kind = CheckpointKind::kBase;
  std::uint64_t base_iteration = 0;
  std::uint64_t parent_iteration = 0;
  std::uint64_t stored_bytes = 0;
  std::uint64_t raw_bytes = 0;
};

class CheckpointStore {
 public:
  enum class Mode { kWriter, kReader };

  /// A writer takes the root's advisory lock (kLocked if held elsewhere) and
  /// clears leftovers of interrupted saves.
  explicit CheckpointStore(StoreConfig cfg, Mode mode = Mode::kWriter);
  ~CheckpointStore();
  CheckpointStore(const CheckpointStore&) = delete;
  CheckpointStore& operator=(const CheckpointStore&) = delete;

  const StoreConfig& config() const { return cfg_; }

  /// Encodes (base or delta per the refresh rule) and commits. `prev` is the
  /// reconstructed latest checkpoint; when null the store uses its own cache
  /// or loads the latest from disk.
  CheckpointManifest save(const Checkpoint& ckpt, const Checkpoint* prev = nullptr);

  /// Writes an already-encoded checkpoint. Errors: kStaleIteration when not
  /// newer than the tracker, kMissingLink when a delta does not extend the
  /// committed chain, kIo (partial directory removed).
  void commit(const EncodedCheckpoint& encoded);

  /// Requested (or latest) iteration, reconstructed from its base and deltas.
  /// Errors: kNotFound, kMissingLink, kCorruptManifest, kTrackerMismatch.
  Checkpoint load(std::optional<std::uint64_t> iteration = std::nullopt) const;

  std::optional<TrackerState> tracker() const { return try_read_tracker(cfg_.root); }
  CheckpointManifest read_manifest(std::uint64_t iteration) const;

  /// Committed iterations (<= tracker latest) with a directory on disk, ascending.
  std::vector<std::uint64_t> committed_iterations() const;
  /// True when `iteration` is committed and its whole chain is present and readable.
  bool loadable(std::uint64_t iteration) const;
  std::vector<StoredCheckpointInfo> inspect() const;

  /// Makes `iteration` the latest committed checkpoint and deletes everything
  /// newer; std::nullopt empties the store. Tracker first, then directories.
  void rollback_to(std::optional<std::uint64_t> iteration);

  /// Next save will be a base (set after a failed save; survives restarts).
  bool base_forced() const;
  /// What the next save() would write.
  CheckpointKind planned_kind() const;

 private:
  void cleanup_uncommitted();
  void seed_encoder_from_disk();
  void set_force_base(bool on);

  StoreConfig cfg_;
  Mode mode_;
  int lock_fd_ = -1;
  CheckpointEncoder encoder_;
  bool encoder_synced_ = false;
};

// Free-function forms of the store lifecycle.
CheckpointManifest save_checkpoint(const StoreConfig& cfg, const Checkpoint& ckpt, const Checkpoint* prev);
Checkpoint load_checkpoint(const StoreConfig& cfg, std::optional<std::uint64_t> iteration = std::nullopt);

}  // namespace bitsnap
