// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0

#include "bitsnap/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <vector>

#include "bitsnap/cluster_quantizer.hpp"

namespace bitsnap {

void QualityWeights::validate() const {
  if (w1 < 0 || w2 < 0 || w3 < 0) throw Error(ErrorCode::kInvalidArgument, "quality weights must be non-negative");
  if (std::fabs(w1 + w2 + w3 - 1.0) > 1e-9) throw Error(ErrorCode::kInvalidArgument, "quality weights must sum to 1");
}

double score_higher_better(double value, const Bounds& b) {
  if (b.max == b.min) return 1.0;
  return std::clamp((value - b.min) / (b.max - b.min), 0.0, 1.0);
}

double score_lower_better(double value, const Bounds& b) {
  if (b.max == b.min) return 1.0;
  return std::clamp((b.max - value) / (b.max - b.min), 0.0, 1.0);
}

double quality(const QualityWeights& w, double cr, double cs, double ps) { return w.w1 * cr + w.w2 * cs + w.w3 * ps; }

QualityReport score(double cr_raw, double cs_raw, double ps_raw, const QualityWeights& w,
                    const NormalizationBounds& bounds) {
  w.validate();
  QualityReport r;
  r.cr_raw = cr_raw;
  r.cs_raw = cs_raw;
  r.ps_raw = ps_raw;
  r.cr = score_higher_better(cr_raw, bounds.cr);
  r.cs = score_lower_better(cs_raw, bounds.cs);
  r.ps = score_lower_better(ps_raw, bounds.ps);
  r.q = quality(w, r.cr, r.cs, r.ps);
  r.weights = w;
  r.bounds = bounds;
  return r;
}

double median_seconds(const std::function<void()>& fn, const TimingOptions& opts) {
  if (opts.repetitions < 1) throw Error(ErrorCode::kInvalidArgument, "need at least one timed repetition");
  for (int i = 0; i < opts.warmup; ++i) fn();
  std::vector<double> samples;
  samples.reserve(opts.repetitions);
  for (int i = 0; i < opts.repetitions; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(samples.begin(), samples.end());
  const auto mid = samples.size() / 2;
  return samples.size() % 2 == 1 ? samples[mid] : 0.5 * (samples[mid - 1] + samples[mid]);
}

namespace {

EncodedCheckpoint compress(const Checkpoint& ckpt, const Checkpoint* base, const EncodeOptions& options) {
  CheckpointEncoder encoder(UINT32_MAX, options);
  if (base != nullptr) encoder.reset(ChainState{base->iteration, base->iteration, 0}, base->model_states);
  return encoder.encode(ckpt);
}

Checkpoint decompress(ByteView bytes, const Checkpoint* base) {
  const EncodedCheckpoint e = deserialize_encoded(bytes);
  return decode_checkpoint(e.manifest, e.tensors, base != nullptr ? &base->model_states : nullptr);
}

}  // namespace

PipelineMeasurement measure_pipeline(const Checkpoint& ckpt, const Checkpoint* base, const MeasureOptions& opts) {
  validate_checkpoint(ckpt);
  PipelineMeasurement m;
  for (const auto* list : {&ckpt.model_states, &ckpt.optimizer_states}) {
    for (const auto& t : *list) m.original_bytes += t.nbytes();
  }
  Bytes compressed = serialize_encoded(compress(ckpt, base, opts.encode));
  m.compressed_bytes = compressed.size();

  m.compress_seconds = median_seconds([&] { compressed = serialize_encoded(compress(ckpt, base, opts.encode)); },
                                      opts.timing);
  Checkpoint restored;
  m.decompress_seconds = median_seconds([&] { restored = decompress(compressed, base); }, opts.timing);
  m.baseline_seconds = median_seconds([&] { (void)deserialize_checkpoint(serialize_checkpoint(ckpt)); }, opts.timing);

  double sq = 0.0, rel = 0.0, opt_sq = 0.0;
  std::uint64_t count = 0, rel_count = 0, opt_count = 0;
  auto accumulate = [&](const TensorBlob& a, const TensorBlob& b, bool optimizer) {
    const auto rep = precision_report(a, b);
    const auto n = a.numel();
    sq += rep.mse * static_cast<double>(n);
    count += n;
    if (optimizer) {
      opt_sq += rep.mse * static_cast<double>(n);
      opt_count += n;
    }
    // mre is already a mean over the elements that have a usable denominator
    std::uint64_t usable = 0;
    for (float v : a.to_float()) usable += std::fabs(static_cast<double>(v)) > kMreEpsilon ? 1 : 0;
    rel += rep.mre * static_cast<double>(usable);
    rel_count += usable;
  };
  for (std::size_t i = 0; i < ckpt.model_states.size(); ++i) {
    accumulate(ckpt.model_states[i], restored.model_states[i], false);
  }
  for (std::size_t i = 0; i < ckpt.optimizer_states.size(); ++i) {
    accumulate(ckpt.optimizer_states[i], restored.optimizer_states[i], true);
  }
  m.mse = count == 0 ? 0.0 : sq / static_cast<double>(count);
  m.mre = rel_count == 0 ? 0.0 : rel / static_cast<double>(rel_count);
  m.optimizer_mse = opt_count == 0 ? 0.0 : opt_sq / static_cast<double>(opt_count);
  return m;
}

QualityReport measure(const Checkpoint& ckpt, const Checkpoint* base, const QualityWeights& w,
                      const NormalizationBounds& bounds, const MeasureOptions& opts, PipelineMeasurement* details) {
  w.validate();
  const auto m = measure_pipeline(ckpt, base, opts);
  if (details != nullptr) *details = m;
  const double cr_raw = m.compressed_bytes == 0 ? 1.0
                                                 : static_cast<double>(m.original_bytes) /
                                                       static_cast<double>(m.compressed_bytes);
  const double cs_raw = m.compress_seconds + m.decompress_seconds - m.baseline_seconds;
  return score(cr_raw, cs_raw, m.mse, w, bounds);
}

nlohmann::json to_json(const QualityReport& r) {
  auto bounds = [](const Bounds& b) { return nlohmann::json{{"min", b.min}, {"max", b.max}}; };
  return nlohmann::json{
      {"raw", {{"compression_ratio", r.cr_raw}, {"speed_overhead_seconds", r.cs_raw}, {"mse", r.ps_raw}}},
      {"normalized", {{"cr", r.cr}, {"cs", r.cs}, {"ps", r.ps}}},
      {"weights", {{"w1", r.weights.w1}, {"w2", r.weights.w2}, {"w3", r.weights.w3}}},
      {"bounds", {{"cr", bounds(r.bounds.cr)}, {"cs", bounds(r.bounds.cs)}, {"ps", bounds(r.bounds.ps)}}},
      {"normalization", "min-max over caller-supplied bounds; cs and ps inverted so higher is better"},
      {"q", r.q},
  };
}

nlohmann::json to_json(const PipelineMeasurement& m) {
  return nlohmann::json{
      {"original_bytes", m.original_bytes},
      {"compressed_bytes", m.compressed_bytes},
      {"compress_seconds", m.compress_seconds},
      {"decompress_seconds", m.decompress_seconds},
      {"baseline_seconds", m.baseline_seconds},
      {"mse", m.mse},
      {"mre", m.mre},
      {"optimizer_mse", m.optimizer_mse},
  };
}

}  // namespace bitsnap
