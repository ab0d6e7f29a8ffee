// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0
//
// Compression quality scoring: q = w1*cr + w2*cs + w3*ps over min-max
// normalized compression ratio, speed overhead and precision scores.

#pragma once

#include <cstdint>
#include <functional>

#include "json.hpp"

#include "bitsnap/checkpoint_store.hpp"

namespace bitsnap {

struct QualityWeights {
  double w1 = 1.0 / 3;  // compression ratio
  double w2 = 1.0 / 3;  // compression/decompression speed
  double w3 = 1.0 / 3;  // precision

  /// Throws kInvalidArgument unless each weight is >= 0 and they sum to 1 (1e-9).
  void validate() const;
};

struct Bounds {
  double min = 0.0;
  double max = 1.0;
};

/// Caller-supplied corpus ranges used to map each raw factor into [0, 1].
struct NormalizationBounds {
  Bounds cr{1.0, 16.0};   // ratio, higher is better
  Bounds cs{0.0, 1.0};    // seconds of overhead, lower is better
  Bounds ps{0.0, 1e-3};   // mse, lower is better
};

struct QualityReport {
  double cr_raw = 0.0;
  double cs_raw = 0.0;
  double ps_raw = 0.0;
  double cr = 0.0;
  double cs = 0.0;
  double ps = 0.0;
  double q = 0.0;
  QualityWeights weights;
  NormalizationBounds bounds;
};

/// (v - min) / (max - min) clamped to [0, 1]; 1 when min == max.
double score_higher_better(double value, const Bounds& b);
/// (max - v) / (max - min) clamped to [0, 1]; 1 when min == max.
double score_lower_better(double value, const Bounds& b);

double quality(const QualityWeights& w, double cr, double cs, double ps);

/// Normalizes the raw factors and combines them.
QualityReport score(double cr_raw, double cs_raw, double ps_raw, const QualityWeights& w,
                    const NormalizationBounds& bounds);

struct TimingOptions {
  int warmup = 5;
  int repetitions = 20;
};

/// Median wall time of `fn` in seconds on a monotonic clock.
double median_seconds(const std::function<void()>& fn, const TimingOptions& opts = {});

struct PipelineMeasurement {
  std::uint64_t original_bytes = 0;    // raw tensor payloads
  std::uint64_t compressed_bytes = 0;  // serialized staged checkpoint
  double compress_seconds = 0.0;
  double decompress_seconds = 0.0;
  double baseline_seconds = 0.0;  // uncompressed serialize + deserialize
  double mse = 0.0;               // over every element of the checkpoint
  double mre = 0.0;
  double optimizer_mse = 0.0;
};

struct MeasureOptions {
  TimingOptions timing;
  EncodeOptions encode;
};

/// Times the full compress/decompress round trip of `ckpt`. With `base`, model
/// states are delta-encoded against it; otherwise they are stored raw.
PipelineMeasurement measure_pipeline(const Checkpoint& ckpt, const Checkpoint* base, const MeasureOptions& opts = {});

/// cr_raw = original/compressed, cs_raw = compress + decompress - baseline,
/// ps_raw = mse; then normalized and weighted.
QualityReport measure(const Checkpoint& ckpt, const Checkpoint* base, const QualityWeights& w,
                      const NormalizationBounds& bounds, const MeasureOptions& opts = {},
                      PipelineMeasurement* details = nullptr);

nlohmann::json to_json(const QualityReport& report);
nlohmann::json to_json(const PipelineMeasurement& m);

}  // namespace bitsnap
