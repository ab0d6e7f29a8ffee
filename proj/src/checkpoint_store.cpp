// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0

#include "bitsnap/checkpoint_store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <future>
#include <tuple>

#include "bitsnap/bitmask_codec.hpp"
#include "bitsnap/checksum.hpp"
#include "bitsnap/file_io.hpp"

namespace bitsnap {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kManifestMagic = "BSMF";
constexpr std::string_view kEncodedMagic = "BSEC";
constexpr std::uint16_t kManifestVersion = 1;
constexpr std::uint16_t kEncodedVersion = 1;
constexpr const char* kTypeFile = "type.txt";
constexpr const char* kManifestFile = "manifest.bin";
constexpr const char* kTensorsFile = "tensors.bin";
constexpr const char* kForceBaseFile = "force_base";
constexpr const char* kLockFile = ".lock";
constexpr std::string_view kTmpDirPrefix = ".tmp_iter_";
constexpr std::string_view kDirPrefix = "iter_";

[[noreturn]] void corrupt(std::uint64_t iteration, const std::string& what) {
  throw Error(ErrorCode::kCorruptManifest, "iteration " + std::to_string(iteration) + ": " + what);
}

std::optional<std::uint64_t> parse_u64(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<std::uint64_t> parse_iteration_dir(const std::string& name) {
  if (name.rfind(kDirPrefix, 0) != 0) return std::nullopt;
  return parse_u64(std::string_view(name).substr(kDirPrefix.size()));
}

// Wraps std::filesystem failures into the library error type.
template <typename F>
auto fs_call(const char* what, F&& f) {
  try {
    return f();
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorCode::kIo, std::string(what) + ": " + e.what());
  }
}

ByteView entry_blob(ByteView tensors, const ManifestEntry& e, std::uint64_t iteration) {
  if (e.offset > tensors.size() || e.length > tensors.size() - e.offset) {
    corrupt(iteration, "entry '" + e.name + "' lies outside tensors.bin");
  }
  ByteView blob(tensors.data() + e.offset, e.length);
  if (checksum(blob) != e.checksum) {
    throw Error(ErrorCode::kChecksumMismatch,
                "iteration " + std::to_string(iteration) + ": tensor '" + e.name + "' fails its checksum");
  }
  return blob;
}

void add_entry(EncodedCheckpoint& out, std::string name, TensorRole role, Codec codec, std::size_t start,
               std::uint64_t raw_bytes) {
  ManifestEntry e;
  e.name = std::move(name);
  e.role = role;
  e.codec = codec;
  e.offset = start;
  e.length = out.tensors.size() - start;
  e.raw_bytes = raw_bytes;
  e.checksum = checksum(ByteView(out.tensors.data() + start, e.length));
  out.manifest.entries.push_back(std::move(e));
}

void check_same_structure(const std::vector<TensorBlob>& prev, const std::vector<TensorBlob>& cur,
                          std::uint64_t iteration) {
  if (prev.size() != cur.size()) {
    throw Error(ErrorCode::kStructureMismatch,
                "iteration " + std::to_string(iteration) + " changes the model-state tensor count");
  }
  for (std::size_t i = 0; i < cur.size(); ++i) {
    if (prev[i].name() != cur[i].name() || prev[i].shape() != cur[i].shape()) {
      throw Error(ErrorCode::kStructureMismatch,
                  "iteration " + std::to_string(iteration) + ": model tensor '" + cur[i].name() +
                      "' does not match the previous checkpoint");
    }
  }
}

}  // namespace

std::string_view to_string(CheckpointKind kind) { return kind == CheckpointKind::kBase ? "base" : "delta"; }

std::string_view to_string(Codec codec) {
  switch (codec) {
    case Codec::kRaw: return "raw";
    case Codec::kDelta: return "delta";
    case Codec::kQuant: return "quant";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Manifest

void validate_manifest(const CheckpointManifest& m) {
  if (m.kind == CheckpointKind::kBase) {
    if (m.base_iteration != m.iteration || m.parent_iteration != m.iteration || m.chain_position != 0) {
      corrupt(m.iteration, "base checkpoint must reference itself");
    }
  } else if (m.kind == CheckpointKind::kDelta) {
    if (m.base_iteration >= m.iteration || m.parent_iteration >= m.iteration ||
        m.parent_iteration < m.base_iteration || m.chain_position == 0) {
      corrupt(m.iteration, "delta checkpoint must follow its base and parent");
    }
  } else {
    corrupt(m.iteration, "unknown checkpoint kind");
  }
  bool seen_optimizer = false;
  for (const auto& e : m.entries) {
    if (e.role == TensorRole::kModel) {
      if (seen_optimizer) corrupt(m.iteration, "model entries must precede optimizer entries");
      const bool ok = e.codec == Codec::kRaw || (e.codec == Codec::kDelta && m.kind == CheckpointKind::kDelta);
      if (!ok) corrupt(m.iteration, "model tensor '" + e.name + "' has codec " + std::string(to_string(e.codec)));
    } else if (e.role == TensorRole::kOptimizer) {
      seen_optimizer = true;
      if (e.codec != Codec::kQuant && e.codec != Codec::kRaw) {
        corrupt(m.iteration, "optimizer tensor '" + e.name + "' has codec " + std::string(to_string(e.codec)));
      }
    } else {
      corrupt(m.iteration, "unknown tensor role");
    }
  }
}

Bytes serialize_manifest(const CheckpointManifest& m) {
  Bytes out;
  ByteWriter w(out);
  w.put_magic(kManifestMagic);
  w.put<std::uint16_t>(kManifestVersion);
  w.put<std::uint64_t>(m.iteration);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(m.kind));
  w.put<std::uint64_t>(m.base_iteration);
  w.put<std::uint64_t>(m.parent_iteration);
  w.put<std::uint32_t>(m.chain_position);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.entries.size()));
  for (const auto& e : m.entries) {
    w.put_name(e.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.role));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.codec));
    w.put<std::uint64_t>(e.offset);
    w.put<std::uint64_t>(e.length);
    w.put<std::uint64_t>(e.raw_bytes);
    w.put<std::uint64_t>(e.checksum);
  }
  w.put<std::uint64_t>(checksum(out));
  return out;
}

CheckpointManifest deserialize_manifest(ByteView bytes) {
  try {
    if (bytes.size() < 8) throw Error(ErrorCode::kTruncatedPayload, "manifest too short");
    const auto body = bytes.first(bytes.size() - 8);
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + body.size(), 8);
    if (checksum(body) != stored) throw Error(ErrorCode::kChecksumMismatch, "manifest checksum");

    ByteReader r(body);
    if (!r.expect_magic(kManifestMagic)) throw Error(ErrorCode::kBadMagic, "expected BSMF manifest");
    if (r.get<std::uint16_t>() != kManifestVersion) throw Error(ErrorCode::kUnsupportedVersion, "BSMF");
    CheckpointManifest m;
    m.iteration = r.get<std::uint64_t>();
    m.kind = static_cast<CheckpointKind>(r.get<std::uint8_t>());
    m.base_iteration = r.get<std::uint64_t>();
    m.parent_iteration = r.get<std::uint64_t>();
    m.chain_position = r.get<std::uint32_t>();
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      ManifestEntry e;
      e.name = r.get_name();
      e.role = static_cast<TensorRole>(r.get<std::uint8_t>());
      e.codec = static_cast<Codec>(r.get<std::uint8_t>());
      e.offset = r.get<std::uint64_t>();
      e.length = r.get<std::uint64_t>();
      e.raw_bytes = r.get<std::uint64_t>();
      e.checksum = r.get<std::uint64_t>();
      m.entries.push_back(std::move(e));
    }
    if (r.remaining() != 0) throw Error(ErrorCode::kTruncatedPayload, "trailing bytes");
    validate_manifest(m);
    return m;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kCorruptManifest) throw;
    throw Error(ErrorCode::kCorruptManifest, e.what());
  }
}

Bytes serialize_encoded(const EncodedCheckpoint& e) {
  const Bytes manifest = serialize_manifest(e.manifest);
  Bytes out;
  out.reserve(4 + 2 + 16 + manifest.size() + e.tensors.size());
  ByteWriter w(out);
  w.put_magic(kEncodedMagic);
  w.put<std::uint16_t>(kEncodedVersion);
  w.put<std::uint64_t>(manifest.size());
  w.put_bytes(manifest);
  w.put<std::uint64_t>(e.tensors.size());
  w.put_bytes(e.tensors);
  return out;
}

EncodedCheckpoint deserialize_encoded(ByteView bytes) {
  ByteReader r(bytes);
  if (!r.expect_magic(kEncodedMagic)) throw Error(ErrorCode::kBadMagic, "expected BSEC staged checkpoint");
  const auto version = r.get<std::uint16_t>();
  if (version != kEncodedVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "BSEC version " + std::to_string(version));
  }
  EncodedCheckpoint e;
  e.manifest = deserialize_manifest(r.get_bytes(r.get<std::uint64_t>()));
  auto tensors = r.get_bytes(r.get<std::uint64_t>());
  e.tensors.assign(tensors.begin(), tensors.end());
  return e;
}

CheckpointManifest peek_manifest(ByteView bytes) {
  ByteReader r(bytes);
  if (!r.expect_magic(kEncodedMagic)) throw Error(ErrorCode::kBadMagic, "expected BSEC staged checkpoint");
  if (r.get<std::uint16_t>() != kEncodedVersion) throw Error(ErrorCode::kUnsupportedVersion, "BSEC");
  return deserialize_manifest(r.get_bytes(r.get<std::uint64_t>()));
}

Checkpoint decode_checkpoint(const CheckpointManifest& m, ByteView tensors,
                             const std::vector<TensorBlob>* parent_model_states, bool with_optimizer) {
  validate_manifest(m);
  if (m.kind == CheckpointKind::kDelta && parent_model_states == nullptr) {
    throw Error(ErrorCode::kMissingLink, "delta " + std::to_string(m.iteration) + " needs the model states of " +
                                             std::to_string(m.parent_iteration));
  }
  Checkpoint out;
  out.iteration = m.iteration;
  for (const auto& e : m.entries) {
    if (e.role == TensorRole::kOptimizer) {
      if (!with_optimizer) continue;
      const auto blob = entry_blob(tensors, e, m.iteration);
      TensorBlob value = e.codec == Codec::kQuant ? dequantize(deserialize_quantized(blob)) : deserialize_tensor(blob);
      if (value.name() != e.name) corrupt(m.iteration, "entry '" + e.name + "' holds '" + value.name() + "'");
      out.optimizer_states.push_back(std::move(value));
      continue;
    }
    const auto blob = entry_blob(tensors, e, m.iteration);
    const std::size_t index = out.model_states.size();
    if (e.codec == Codec::kRaw) {
      out.model_states.push_back(deserialize_tensor(blob));
    } else {
      if (index >= parent_model_states->size()) {
        corrupt(m.iteration, "delta entry '" + e.name + "' has no counterpart in iteration " +
                                 std::to_string(m.parent_iteration));
      }
      out.model_states.push_back(decode_delta((*parent_model_states)[index], deserialize_delta(blob)));
    }
    if (out.model_states.back().name() != e.name) {
      corrupt(m.iteration, "entry '" + e.name + "' holds '" + out.model_states.back().name() + "'");
    }
  }
  if (m.kind == CheckpointKind::kDelta && out.model_states.size() != parent_model_states->size()) {
    corrupt(m.iteration, "delta covers " + std::to_string(out.model_states.size()) + " tensors, parent has " +
                             std::to_string(parent_model_states->size()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encoder

CheckpointEncoder::CheckpointEncoder(std::uint32_t max_cached_iteration, EncodeOptions options)
    : max_cached_(max_cached_iteration), options_(options) {
  if (max_cached_ < 1) throw Error(ErrorCode::kInvalidArgument, "max_cached_iteration must be >= 1");
}

CheckpointKind CheckpointEncoder::next_kind() const {
  if (!state_ || force_base_ || state_->position + 1 >= max_cached_) return CheckpointKind::kBase;
  return CheckpointKind::kDelta;
}

void CheckpointEncoder::reset(std::optional<ChainState> state, std::vector<TensorBlob> previous_model_states) {
  state_ = state;
  previous_ = std::move(previous_model_states);
}

EncodedCheckpoint CheckpointEncoder::encode(const Checkpoint& ckpt) {
  validate_checkpoint(ckpt);
  if (state_ && ckpt.iteration <= state_->iteration) {
    throw Error(ErrorCode::kStaleIteration, "iteration " + std::to_string(ckpt.iteration) +
                                                " is not newer than " + std::to_string(state_->iteration));
  }
  const CheckpointKind kind = next_kind();
  EncodedCheckpoint out;
  auto& m = out.manifest;
  m.iteration = ckpt.iteration;
  m.kind = kind;
  if (kind == CheckpointKind::kBase) {
    m.base_iteration = m.parent_iteration = ckpt.iteration;
    m.chain_position = 0;
  } else {
    check_same_structure(previous_, ckpt.model_states, ckpt.iteration);
    m.base_iteration = state_->base_iteration;
    m.parent_iteration = state_->iteration;
    m.chain_position = state_->position + 1;
  }

  // One job per tensor; each yields its stored blob and codec.
  using Job = std::function<std::pair<Bytes, Codec>()>;
  std::vector<std::tuple<const TensorBlob*, TensorRole, Job>> jobs;
  for (std::size_t i = 0; i < ckpt.model_states.size(); ++i) {
    const TensorBlob* t = &ckpt.model_states[i];
    const TensorBlob* prev = kind == CheckpointKind::kDelta ? &previous_[i] : nullptr;
    jobs.emplace_back(t, TensorRole::kModel, [t, prev]() -> std::pair<Bytes, Codec> {
      if (prev != nullptr) {
        DeltaRecord rec = encode_delta(*prev, *t);
        if (delta_beneficial(rec.total_elements, rec.changed_count)) return {serialize_delta(rec), Codec::kDelta};
      }
      return {serialize_tensor(*t), Codec::kRaw};
    });
  }
  for (const auto& opt : ckpt.optimizer_states) {
    const TensorBlob* t = &opt;
    const EncodeOptions options = options_;
    jobs.emplace_back(t, TensorRole::kOptimizer, [t, options]() -> std::pair<Bytes, Codec> {
      if (options.quantize_optimizer && t->numel() > 0) {
        return {serialize_quantized(quantize(*t, options.clusters)), Codec::kQuant};
      }
      return {serialize_tensor(*t), Codec::kRaw};
    });
  }
  std::vector<std::pair<Bytes, Codec>> blobs;
  blobs.reserve(jobs.size());
  if (options_.parallel) {
    std::vector<std::future<std::pair<Bytes, Codec>>> futures;
    for (auto& job : jobs) futures.push_back(std::async(std::launch::async, std::get<2>(job)));
    for (auto& f : futures) blobs.push_back(f.get());
  } else {
    for (auto& job : jobs) blobs.push_back(std::get<2>(job)());
  }
  std::size_t total = 0;
  for (const auto& b : blobs) total += b.first.size();
  out.tensors.reserve(total);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto start = out.tensors.size();
    out.tensors.insert(out.tensors.end(), blobs[i].first.begin(), blobs[i].first.end());
    Bytes().swap(blobs[i].first);
    const TensorBlob* t = std::get<0>(jobs[i]);
    add_entry(out, t->name(), std::get<1>(jobs[i]), blobs[i].second, start, t->nbytes());
  }
  state_ = ChainState{m.iteration, m.base_iteration, m.chain_position};
  previous_ = ckpt.model_states;
  if (kind == CheckpointKind::kBase) force_base_ = false;
  return out;
}

// ---------------------------------------------------------------------------
// Tracker

StoreConfig resolve_config(StoreConfig cfg) {
  if (const char* env = std::getenv(kMaxCachedEnvVar); env != nullptr && *env != '\0') {
    const auto v = parse_u64(env);
    if (!v || *v == 0 || *v > UINT32_MAX) {
      throw Error(ErrorCode::kParseError, std::string(kMaxCachedEnvVar) + "='" + env + "' is not a positive count");
    }
    cfg.max_cached_iteration = static_cast<std::uint32_t>(*v);
  }
  if (cfg.root.empty()) throw Error(ErrorCode::kInvalidArgument, "store root is empty");
  if (cfg.max_cached_iteration < 1) throw Error(ErrorCode::kInvalidArgument, "max_cached_iteration must be >= 1");
  if (cfg.redundancy < 1) throw Error(ErrorCode::kInvalidArgument, "redundancy must be >= 1");
  if (cfg.clusters < kMinClusters || cfg.clusters > kMaxClusters) {
    throw Error(ErrorCode::kInvalidArgument, "cluster count outside [2, 16]");
  }
  return cfg;
}

fs::path iteration_dir(const fs::path& root, std::uint64_t iteration) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "iter_%07llu", static_cast<unsigned long long>(iteration));
  return root / buf;
}

void write_tracker(const fs::path& root, const TrackerState& state, FaultInjector* faults) {
  if (state.latest_base_iteration > state.latest_iteration) {
    throw Error(ErrorCode::kInvalidArgument, "tracker base is newer than latest");
  }
  const fs::path final_path = root / kTrackerFileName;
  fs::path tmp = final_path;
  tmp += ".tmp";
  write_file(tmp, std::to_string(state.latest_iteration) + "\n" + std::to_string(state.latest_base_iteration) + "\n");
  crash_point(faults, "tracker.temp_written");
  fs_call("rename tracker", [&] { fs::rename(tmp, final_path); });
  sync_directory(root);
  crash_point(faults, "tracker.renamed");
}

std::optional<TrackerState> try_read_tracker(const fs::path& root) {
  Bytes raw;
  try {
    raw = read_file(root / kTrackerFileName);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kNotFound) return std::nullopt;
    throw;
  }
  const std::string text(raw.begin(), raw.end());
  if (text.empty() || text.back() != '\n') throw Error(ErrorCode::kParseError, "tracker is not newline-terminated");
  std::vector<std::string_view> lines;
  std::string_view rest(text);
  while (!rest.empty()) {
    const auto nl = rest.find('\n');
    lines.push_back(rest.substr(0, nl));
    rest = nl == std::string_view::npos ? std::string_view() : rest.substr(nl + 1);
  }
  if (lines.size() != 2) {
    throw Error(ErrorCode::kParseError, "tracker must hold exactly two lines, found " + std::to_string(lines.size()));
  }
  const auto latest = parse_u64(lines[0]);
  const auto base = parse_u64(lines[1]);
  if (!latest || !base) throw Error(ErrorCode::kParseError, "tracker lines must be decimal iterations");
  if (*base > *latest) throw Error(ErrorCode::kParseError, "tracker base is newer than latest");
  return TrackerState{*latest, *base};
}

TrackerState read_tracker(const fs::path& root) {
  auto t = try_read_tracker(root);
  if (!t) throw Error(ErrorCode::kNotFound, (root / kTrackerFileName).string());
  return *t;
}

// ---------------------------------------------------------------------------
// Store

CheckpointStore::CheckpointStore(StoreConfig cfg, Mode mode)
    : cfg_(resolve_config(std::move(cfg))),
      mode_(mode),
      encoder_(cfg_.max_cached_iteration, EncodeOptions{cfg_.clusters, cfg_.quantize_optimizer}) {
  if (mode_ == Mode::kReader) {
    if (!fs::is_directory(cfg_.root)) throw Error(ErrorCode::kNotFound, cfg_.root.string());
    return;
  }
  fs_call("create root", [&] { fs::create_directories(cfg_.root); });
  const fs::path lock_path = cfg_.root / kLockFile;
  lock_fd_ = ::open(lock_path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (lock_fd_ < 0) throw Error(ErrorCode::kIo, "open " + lock_path.string() + ": " + std::strerror(errno));
  if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(lock_fd_);
    lock_fd_ = -1;
    throw Error(ErrorCode::kLocked, "another writer holds " + lock_path.string());
  }
  try {
    cleanup_uncommitted();
  } catch (...) {
    ::close(lock_fd_);
    throw;
  }
}

CheckpointStore::~CheckpointStore() {
  if (lock_fd_ >= 0) ::close(lock_fd_);
}

void CheckpointStore::cleanup_uncommitted() {
  const auto tracker_state = try_read_tracker(cfg_.root);
  std::vector<fs::path> doomed;
  fs_call("scan root", [&] {
    for (const auto& entry : fs::directory_iterator(cfg_.root)) {
      const auto name = entry.path().filename().string();
      if (name.rfind(kTmpDirPrefix, 0) == 0 || name == std::string(kTrackerFileName) + ".tmp") {
        doomed.push_back(entry.path());
      } else if (auto it = parse_iteration_dir(name)) {
        if (!tracker_state || *it > tracker_state->latest_iteration) doomed.push_back(entry.path());
      }
    }
  });
  for (const auto& p : doomed) fs_call("remove leftover", [&] { fs::remove_all(p); });
  if (!doomed.empty()) sync_directory(cfg_.root);
}

bool CheckpointStore::base_forced() const { return fs::exists(cfg_.root / kForceBaseFile); }

void CheckpointStore::set_force_base(bool on) {
  const fs::path marker = cfg_.root / kForceBaseFile;
  if (on) {
    write_file(marker, std::string_view("1\n"));
  } else if (fs::exists(marker)) {
    fs_call("clear force_base", [&] { fs::remove(marker); });
  }
}

CheckpointKind CheckpointStore::planned_kind() const {
  const auto t = tracker();
  if (!t || base_forced()) return CheckpointKind::kBase;
  const auto m = read_manifest(t->latest_iteration);
  return m.chain_position + 1 >= cfg_.max_cached_iteration ? CheckpointKind::kBase : CheckpointKind::kDelta;
}

void CheckpointStore::seed_encoder_from_disk() {
  const auto t = tracker();
  if (!t) {
    encoder_.reset(std::nullopt, {});
  } else {
    const auto m = read_manifest(t->latest_iteration);
    const ChainState state{m.iteration, m.base_iteration, m.chain_position};
    encoder_.reset(state, {});
    if (encoder_.next_kind() == CheckpointKind::kDelta) encoder_.reset(state, load(m.iteration).model_states);
  }
  encoder_synced_ = true;
}

CheckpointManifest CheckpointStore::save(const Checkpoint& ckpt, const Checkpoint* prev) {
  if (mode_ != Mode::kWriter) throw Error(ErrorCode::kInvalidArgument, "store opened read-only");
  const auto t = tracker();
  if (t && ckpt.iteration <= t->latest_iteration) {
    throw Error(ErrorCode::kStaleIteration, "iteration " + std::to_string(ckpt.iteration) +
                                                " is not newer than committed " + std::to_string(t->latest_iteration));
  }
  if (prev != nullptr && t) {
    if (prev->iteration != t->latest_iteration) {
      throw Error(ErrorCode::kStructureMismatch, "prev is iteration " + std::to_string(prev->iteration) +
                                                     ", latest committed is " + std::to_string(t->latest_iteration));
    }
    const auto m = read_manifest(t->latest_iteration);
    encoder_.reset(ChainState{m.iteration, m.base_iteration, m.chain_position}, prev->model_states);
    encoder_synced_ = true;
  } else if (!encoder_synced_ || (encoder_.state().has_value() != t.has_value()) ||
             (t && encoder_.state()->iteration != t->latest_iteration)) {
    seed_encoder_from_disk();
  }
  if (base_forced()) encoder_.force_base();

  EncodedCheckpoint encoded;
  try {
    encoded = encoder_.encode(ckpt);
  } catch (...) {
    encoder_synced_ = false;
    throw;
  }
  try {
    commit(encoded);
  } catch (const Error&) {
    encoder_synced_ = false;
    set_force_base(true);
    throw;
  } catch (...) {
    encoder_synced_ = false;
    throw;
  }
  encoder_synced_ = true;
  return encoded.manifest;
}

void CheckpointStore::commit(const EncodedCheckpoint& encoded) {
  if (mode_ != Mode::kWriter) throw Error(ErrorCode::kInvalidArgument, "store opened read-only");
  const auto& m = encoded.manifest;
  validate_manifest(m);
  const auto t = tracker();
  if (t && m.iteration <= t->latest_iteration) {
    throw Error(ErrorCode::kStaleIteration, "iteration " + std::to_string(m.iteration) +
                                                " is not newer than committed " + std::to_string(t->latest_iteration));
  }
  if (m.kind == CheckpointKind::kDelta) {
    if (!t || m.parent_iteration != t->latest_iteration || m.base_iteration != t->latest_base_iteration) {
      throw Error(ErrorCode::kMissingLink,
                  "delta " + std::to_string(m.iteration) + " extends iteration " + std::to_string(m.parent_iteration) +
                      " but the committed latest is " + (t ? std::to_string(t->latest_iteration) : "none"));
    }
  }

  char tmp_name[48];
  std::snprintf(tmp_name, sizeof(tmp_name), ".tmp_iter_%07llu", static_cast<unsigned long long>(m.iteration));
  const fs::path tmp = cfg_.root / tmp_name;
  const fs::path final_dir = iteration_dir(cfg_.root, m.iteration);
  bool renamed = false;
  try {
    fs_call("prepare temp dir", [&] {
      fs::remove_all(tmp);
      fs::create_directory(tmp);
    });
    crash_point(cfg_.faults, "store.begin");
    write_file(tmp / kTensorsFile, encoded.tensors);
    crash_point(cfg_.faults, "store.tensors_written");
    write_file(tmp / kManifestFile, serialize_manifest(m));
    crash_point(cfg_.faults, "store.manifest_written");
    write_file(tmp / kTypeFile, std::string(to_string(m.kind)) + "\n");
    crash_point(cfg_.faults, "store.type_written");
    sync_directory(tmp);
    fs_call("install dir", [&] {
      fs::remove_all(final_dir);
      fs::rename(tmp, final_dir);
    });
    renamed = true;
    sync_directory(cfg_.root);
    crash_point(cfg_.faults, "store.dir_renamed");
    write_tracker(cfg_.root, TrackerState{m.iteration, m.base_iteration}, cfg_.faults);
  } catch (const SimulatedCrash&) {
    throw;
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    const auto now = try_read_tracker(cfg_.root);
    if (renamed && (!now || now->latest_iteration < m.iteration)) fs::remove_all(final_dir, ec);
    throw;
  }
  if (m.kind == CheckpointKind::kBase) set_force_base(false);
  encoder_synced_ = false;
}

CheckpointManifest CheckpointStore::read_manifest(std::uint64_t iteration) const {
  const fs::path dir = iteration_dir(cfg_.root, iteration);
  Bytes raw;
  try {
    raw = read_file(dir / kManifestFile);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kNotFound) {
      if (!fs::exists(dir)) throw Error(ErrorCode::kMissingLink, "iteration " + std::to_string(iteration) + " is missing");
      corrupt(iteration, "manifest.bin is missing");
    }
    throw;
  }
  auto m = deserialize_manifest(raw);
  if (m.iteration != iteration) corrupt(iteration, "manifest names iteration " + std::to_string(m.iteration));

  Bytes type;
  try {
    type = read_file(dir / kTypeFile);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kNotFound) corrupt(iteration, "type.txt is missing");
    throw;
  }
  const std::string type_text(type.begin(), type.end());
  const std::string expected = std::string(to_string(m.kind)) + "\n";
  if (type_text != expected) {
    throw Error(ErrorCode::kTrackerMismatch, "iteration " + std::to_string(iteration) + ": type.txt says '" +
                                                 type_text.substr(0, type_text.find('\n')) + "', manifest says " +
                                                 std::string(to_string(m.kind)));
  }
  return m;
}

Checkpoint CheckpointStore::load(std::optional<std::uint64_t> iteration) const {
  const auto t = tracker();
  if (!t) throw Error(ErrorCode::kNotFound, "no tracker under " + cfg_.root.string());
  const std::uint64_t target = iteration.value_or(t->latest_iteration);
  if (target > t->latest_iteration) {
    throw Error(ErrorCode::kNotFound, "iteration " + std::to_string(target) + " is newer than the committed latest " +
                                          std::to_string(t->latest_iteration));
  }

  std::vector<CheckpointManifest> chain;  // target first, base last
  for (std::uint64_t it = target;;) {
    if (!fs::exists(iteration_dir(cfg_.root, it))) {
      throw Error(ErrorCode::kMissingLink, "iteration " + std::to_string(it) + " is missing from the chain of " +
                                               std::to_string(target));
    }
    chain.push_back(read_manifest(it));
    const auto& m = chain.back();
    if (m.kind == CheckpointKind::kBase) break;
    it = m.parent_iteration;
  }
  const auto& base_manifest = chain.back();
  if (target == t->latest_iteration && base_manifest.iteration != t->latest_base_iteration) {
    throw Error(ErrorCode::kTrackerMismatch, "tracker names base " + std::to_string(t->latest_base_iteration) +
                                                 " but the chain of " + std::to_string(target) + " starts at " +
                                                 std::to_string(base_manifest.iteration));
  }
  if (fs::exists(iteration_dir(cfg_.root, t->latest_base_iteration)) &&
      read_manifest(t->latest_base_iteration).kind != CheckpointKind::kBase) {
    throw Error(ErrorCode::kTrackerMismatch,
                "tracker base " + std::to_string(t->latest_base_iteration) + " is not a base checkpoint");
  }

  Checkpoint out;
  for (auto m = chain.rbegin(); m != chain.rend(); ++m) {
    const Bytes tensors = read_file(iteration_dir(cfg_.root, m->iteration) / kTensorsFile);
    const bool is_target = m->iteration == target;
    out = decode_checkpoint(*m, tensors, m->kind == CheckpointKind::kDelta ? &out.model_states : nullptr, is_target);
  }
  return out;
}

std::vector<std::uint64_t> CheckpointStore::committed_iterations() const {
  const auto t = tracker();
  std::vector<std::uint64_t> out;
  if (!t) return out;
  fs_call("scan root", [&] {
    for (const auto& entry : fs::directory_iterator(cfg_.root)) {
      if (auto it = parse_iteration_dir(entry.path().filename().string()); it && *it <= t->latest_iteration) {
        out.push_back(*it);
      }
    }
  });
  std::sort(out.begin(), out.end());
  return out;
}

bool CheckpointStore::loadable(std::uint64_t iteration) const {
  try {
    const auto t = tracker();
    if (!t || iteration > t->latest_iteration) return false;
    for (std::uint64_t it = iteration;;) {
      const auto m = read_manifest(it);
      const Bytes tensors = read_file(iteration_dir(cfg_.root, it) / kTensorsFile);
      for (const auto& e : m.entries) entry_blob(tensors, e, it);
      if (m.kind == CheckpointKind::kBase) return true;
      it = m.parent_iteration;
    }
  } catch (const Error&) {
    return false;
  }
}

std::vector<StoredCheckpointInfo> CheckpointStore::inspect() const {
  std::vector<StoredCheckpointInfo> out;
  for (auto it : committed_iterations()) {
    const auto m = read_manifest(it);
    StoredCheckpointInfo info{m.iteration, m.kind, m.base_iteration, m.parent_iteration, 0, 0};
    for (const auto& e : m.entries) {
      info.stored_bytes += e.length;
      info.raw_bytes += e.raw_bytes;
    }
    out.push_back(info);
  }
  return out;
}

void CheckpointStore::rollback_to(std::optional<std::uint64_t> iteration) {
  if (mode_ != Mode::kWriter) throw Error(ErrorCode::kInvalidArgument, "store opened read-only");
  if (iteration) {
    const auto m = read_manifest(*iteration);
    write_tracker(cfg_.root, TrackerState{m.iteration, m.base_iteration}, cfg_.faults);
  } else {
    fs_call("remove tracker", [&] { fs::remove(cfg_.root / kTrackerFileName); });
    sync_directory(cfg_.root);
  }
  cleanup_uncommitted();
  encoder_synced_ = false;
}

CheckpointManifest save_checkpoint(const StoreConfig& cfg, const Checkpoint& ckpt, const Checkpoint* prev) {
  CheckpointStore store(cfg);
  if (prev == nullptr && store.planned_kind() == CheckpointKind::kDelta) {
    throw Error(ErrorCode::kInvalidArgument,
                "iteration " + std::to_string(ckpt.iteration) + " is a delta save and needs the previous checkpoint");
  }
  return store.save(ckpt, prev);
}

Checkpoint load_checkpoint(const StoreConfig& cfg, std::optional<std::uint64_t> iteration) {
  return CheckpointStore(cfg, CheckpointStore::Mode::kReader).load(iteration);
}

}  // namespace bitsnap
