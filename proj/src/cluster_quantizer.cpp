// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0

#include "bitsnap/cluster_quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

namespace bitsnap {

namespace {

constexpr std::string_view kQuantMagic = "BSQT";

void check_m(unsigned m) {
  if (m < kMinClusters || m > kMaxClusters) {
    throw Error(ErrorCode::kInvalidArgument, "cluster count " + std::to_string(m) + " outside [2, 16]");
  }
}

void check_table(const ClusterTable& table) {
  check_m(table.m);
  if (table.boundaries.size() != table.m - 1 || table.scale.size() != table.m ||
      table.offset.size() != table.m) {
    throw Error(ErrorCode::kInvalidArgument, "cluster table arrays do not match m");
  }
  if (!std::is_sorted(table.boundaries.begin(), table.boundaries.end())) {
    throw Error(ErrorCode::kInvalidArgument, "cluster boundaries are not ascending");
  }
}

// Nearest map entry under |qmap[j] - x|, smallest j on ties. The distance is
// unimodal in j because the map is increasing, so a local walk from the
// rounded guess lands on the global minimum.
std::uint8_t nearest_code(const QMap& qmap, float x) {
  int j = static_cast<int>(std::lrint(x * 255.0f));
  j = std::clamp(j, 0, 255);
  auto dist = [&](int k) { return std::fabs(qmap[static_cast<unsigned>(k)] - x); };
  float d = dist(j);
  while (j > 0 && dist(j - 1) <= d) d = dist(--j);
  while (j < 255 && dist(j + 1) < d) d = dist(++j);
  return static_cast<std::uint8_t>(j);
}

}  // namespace

const QMap& QMap::linear() {
  static const QMap map = [] {
    std::array<float, 256> v{};
    for (unsigned j = 0; j < 256; ++j) v[j] = static_cast<float>(j) / 255.0f;
    return QMap(v);
  }();
  return map;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "normal quantile needs p in (0, 1)");
  }
  // Acklam's rational approximation (relative error ~1.15e-9), then one
  // Halley step against erfc.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01, -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

unsigned assign_cluster(const ClusterTable& table, float value) {
  const auto it = std::lower_bound(table.boundaries.begin(), table.boundaries.end(), value);
  return static_cast<unsigned>(it - table.boundaries.begin());
}

ClusterTable build_clusters(const TensorBlob& t, unsigned m) {
  check_m(m);
  if (t.dtype() != ElementType::kF32) {
    throw Error(ErrorCode::kDtypeMismatch, "cluster quantization requires f32 ('" + t.name() + "')");
  }
  const auto values = t.f32_values();
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot cluster empty tensor '" + t.name() + "'");

  double sum = 0.0;
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kInvalidArgument, "tensor '" + t.name() + "' holds non-finite values");
    }
    sum += v;
  }
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (float v : values) sq += (v - mean) * (v - mean);
  const double stddev = std::sqrt(sq / static_cast<double>(values.size()));

  ClusterTable table;
  table.m = m;
  table.mean = static_cast<float>(mean);
  table.stddev = static_cast<float>(stddev);
  table.boundaries.resize(m - 1);
  for (unsigned k = 1; k < m; ++k) {
    table.boundaries[k - 1] =
        stddev == 0.0 ? table.mean
                      : static_cast<float>(mean + stddev * normal_quantile(static_cast<double>(k) / m));
  }
  // float rounding may not reorder, but keep the invariant explicit
  for (unsigned k = 1; k + 1 < m; ++k) {
    table.boundaries[k] = std::max(table.boundaries[k], table.boundaries[k - 1]);
  }

  std::vector<float> lo(m, INFINITY), hi(m, -INFINITY);
  for (float v : values) {
    const auto c = assign_cluster(table, v);
    lo[c] = std::min(lo[c], v);
    hi[c] = std::max(hi[c], v);
  }
  table.scale.assign(m, 0.0f);
  table.offset.assign(m, 0.0f);
  for (unsigned c = 0; c < m; ++c) {
    if (lo[c] <= hi[c]) {
      table.scale[c] = hi[c] - lo[c];
      table.offset[c] = lo[c];
    }
  }
  return table;
}

QuantizedTensor quantize(const TensorBlob& t, const ClusterTable& table, const QMap& qmap) {
  check_table(table);
  if (t.dtype() != ElementType::kF32) {
    throw Error(ErrorCode::kDtypeMismatch, "cluster quantization requires f32 ('" + t.name() + "')");
  }
  const auto values = t.f32_values();
  const std::size_t n = values.size();
  QuantizedTensor q;
  q.name = t.name();
  q.shape = t.shape();
  q.table = table;
  q.labels.assign((n + 1) / 2, 0);
  q.codes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(values[i])) {
      throw Error(ErrorCode::kInvalidArgument, "tensor '" + t.name() + "' holds non-finite values");
    }
    const unsigned c = assign_cluster(table, values[i]);
    if (c >= table.m) throw Error(ErrorCode::kInconsistentRecord, "label overflow");
    q.labels[i / 2] |= static_cast<std::uint8_t>(c << (4 * (i % 2)));
    const float s = table.scale[c];
    if (s > 0.0f) {
      const float normalized = std::clamp((values[i] - table.offset[c]) / s, 0.0f, 1.0f);
      q.codes[i] = nearest_code(qmap, normalized);
    } else {
      q.codes[i] = 0;
    }
  }
  return q;
}

QuantizedTensor quantize(const TensorBlob& t, unsigned m) { return quantize(t, build_clusters(t, m)); }

TensorBlob dequantize(const QuantizedTensor& q, const QMap& qmap) {
  check_table(q.table);
  const std::uint64_t n = element_count(q.shape);
  if (q.codes.size() != n || q.labels.size() != (n + 1) / 2) {
    throw Error(ErrorCode::kInconsistentRecord, "quantized tensor '" + q.name + "' has mismatched sizes");
  }
  std::vector<float> out(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const unsigned c = q.label(i);
    if (c >= q.table.m) {
      throw Error(ErrorCode::kInconsistentRecord, "label " + std::to_string(c) + " >= m at element " +
                                                      std::to_string(i) + " of '" + q.name + "'");
    }
    out[i] = qmap[q.codes[i]] * q.table.scale[c] + q.table.offset[c];
  }
  return TensorBlob::from_f32(q.name, q.shape, out);
}

std::uint64_t quantized_size_bytes(std::uint64_t n, unsigned m) {
  check_m(m);
  return 8ull * m + n + (n * kLabelBits + 7) / 8 + 8;
}

std::int64_t quantized_container_overhead(unsigned m, std::size_t name_len, std::size_t rank) {
  // magic, version, m, mean, std, boundaries, name_len, rank, extents; minus
  // the 8 shape bytes the budget already counts
  return 4 + 2 + 1 + 4 + 4 + 4 * (static_cast<std::int64_t>(m) - 1) + 2 + static_cast<std::int64_t>(name_len) +
         1 + 8 * static_cast<std::int64_t>(rank) - 8;
}

std::size_t serialized_quantized_size(const QuantizedTensor& q) {
  return static_cast<std::size_t>(static_cast<std::int64_t>(quantized_size_bytes(q.codes.size(), q.table.m)) +
                                  quantized_container_overhead(q.table.m, q.name.size(), q.shape.size()));
}

void serialize_quantized(const QuantizedTensor& q, Bytes& out) {
  check_table(q.table);
  out.reserve(out.size() + serialized_quantized_size(q));
  ByteWriter w(out);
  w.put_magic(kQuantMagic);
  w.put<std::uint16_t>(kQuantFormatVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(q.table.m));
  w.put<float>(q.table.mean);
  w.put<float>(q.table.stddev);
  for (float v : q.table.boundaries) w.put<float>(v);
  for (float v : q.table.scale) w.put<float>(v);
  for (float v : q.table.offset) w.put<float>(v);
  w.put_name(q.name);
  if (q.shape.size() > 0xFF) throw Error(ErrorCode::kInvalidArgument, "rank above 255");
  w.put<std::uint8_t>(static_cast<std::uint8_t>(q.shape.size()));
  for (auto e : q.shape) w.put<std::uint64_t>(e);
  w.put_bytes(q.labels);
  w.put_bytes(q.codes);
}

Bytes serialize_quantized(const QuantizedTensor& q) {
  Bytes out;
  serialize_quantized(q, out);
  return out;
}

QuantizedTensor deserialize_quantized(ByteView bytes) {
  ByteReader r(bytes);
  if (!r.expect_magic(kQuantMagic)) throw Error(ErrorCode::kBadMagic, "expected BSQT quantized tensor");
  const auto version = r.get<std::uint16_t>();
  if (version != kQuantFormatVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "BSQT version " + std::to_string(version));
  }
  QuantizedTensor q;
  q.table.m = r.get<std::uint8_t>();
  check_m(q.table.m);
  q.table.mean = r.get<float>();
  q.table.stddev = r.get<float>();
  q.table.boundaries.resize(q.table.m - 1);
  for (auto& v : q.table.boundaries) v = r.get<float>();
  q.table.scale.resize(q.table.m);
  for (auto& v : q.table.scale) v = r.get<float>();
  q.table.offset.resize(q.table.m);
  for (auto& v : q.table.offset) v = r.get<float>();
  q.name = r.get_name();
  q.shape.resize(r.get<std::uint8_t>());
  for (auto& e : q.shape) e = r.get<std::uint64_t>();
  const auto n = element_count(q.shape);
  if (n > r.remaining()) throw Error(ErrorCode::kTruncatedPayload, "quantized tensor '" + q.name + "'");
  auto labels = r.get_bytes((n + 1) / 2);
  q.labels.assign(labels.begin(), labels.end());
  auto codes = r.get_bytes(n);
  q.codes.assign(codes.begin(), codes.end());
  if (r.remaining() != 0) throw Error(ErrorCode::kInconsistentRecord, "trailing bytes after '" + q.name + "'");
  return q;
}

PrecisionReport precision_report(const TensorBlob& original, const TensorBlob& restored) {
  if (original.shape() != restored.shape()) {
    throw Error(ErrorCode::kShapeMismatch, "precision report over '" + original.name() + "'");
  }
  if (original.dtype() != restored.dtype()) {
    throw Error(ErrorCode::kDtypeMismatch, "precision report over '" + original.name() + "'");
  }
  const auto o = original.to_float();
  const auto r = restored.to_float();
  PrecisionReport rep;
  if (o.empty()) return rep;
  double sq = 0.0, rel = 0.0;
  std::size_t rel_count = 0;
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double diff = static_cast<double>(o[i]) - static_cast<double>(r[i]);
    sq += diff * diff;
    const double mag = std::fabs(static_cast<double>(o[i]));
    if (mag > kMreEpsilon) {
      rel += std::fabs(diff) / mag;
      ++rel_count;
    }
  }
  rep.mse = sq / static_cast<double>(o.size());
  rep.mre = rel_count == 0 ? 0.0 : rel / static_cast<double>(rel_count);
  return rep;
}

}  // namespace bitsnap
