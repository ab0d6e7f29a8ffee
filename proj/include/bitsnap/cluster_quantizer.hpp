// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0
//
// Lossy 8-bit compression for F32 optimizer states.
//
// The value range is split into m clusters at the quantiles of a normal
// distribution fitted to the tensor (boundary k = mean + std * probit(k/m)),
// so clusters are narrow where values are dense. Every cluster then gets its
// own asymmetric affine map: scale S = max - min, offset b = min. An element
// x in cluster c is stored as the code j minimizing |qmap(j) - (x - b_c)/S_c|
// together with its 4-bit cluster label.
//
// Label rule: an element equal to a boundary belongs to the lower cluster,
// i.e. cluster k covers (boundary[k-1], boundary[k]].
//
// BSQT layout (little-endian):
//   "BSQT" | version u16 | m u8 | mean f32 | std f32 | boundaries f32[m-1] |
//   S f32[m] | b f32[m] | name_len u16 | name | rank u8 | extents u64[rank] |
//   labels[ceil(n/2)] (low nibble = even index) | codes u8[n]

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bitsnap/tensor.hpp"

namespace bitsnap {

inline constexpr unsigned kMinClusters = 2;
inline constexpr unsigned kMaxClusters = 16;
inline constexpr unsigned kDefaultClusters = 16;
inline constexpr unsigned kLabelBits = 4;

/// Maps an 8-bit code to a point of the normalized domain [0, 1].
class QMap {
 public:
  /// j -> j / 255.
  static const QMap& linear();

  float operator[](unsigned code) const { return values_[code]; }
  const std::array<float, 256>& values() const { return values_; }

 private:
  explicit QMap(const std::array<float, 256>& values) : values_(values) {}
  std::array<float, 256> values_;
};

struct ClusterTable {
  unsigned m = 0;
  float mean = 0.0f;
  float stddev = 0.0f;
  std::vector<float> boundaries;  // m - 1, non-decreasing (all equal when stddev == 0)
  std::vector<float> scale;       // m; 0 for empty or single-valued clusters
  std::vector<float> offset;      // m; 0 for empty clusters

  friend bool operator==(const ClusterTable&, const ClusterTable&) = default;
};

struct QuantizedTensor {
  std::string name;
  Shape shape;
  ClusterTable table;
  Bytes labels;  // packed 4-bit, ceil(n/2) bytes
  Bytes codes;   // one per element

  std::uint64_t numel() const { return codes.size(); }
  unsigned label(std::uint64_t i) const {
    const auto byte = labels[i / 2];
    return (i % 2 == 0) ? (byte & 0x0F) : (byte >> 4);
  }

  friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

/// Inverse of the standard normal CDF. Throws kInvalidArgument outside (0, 1).
double normal_quantile(double p);

/// Errors: kInvalidArgument for m outside [2, 16], an empty tensor or
/// non-finite values; kDtypeMismatch for non-F32 input.
ClusterTable build_clusters(const TensorBlob& t, unsigned m = kDefaultClusters);

/// Index of the cluster holding `value` under the lower-cluster tie rule.
unsigned assign_cluster(const ClusterTable& table, float value);

/// Errors: kDtypeMismatch, kInvalidArgument for a malformed table.
QuantizedTensor quantize(const TensorBlob& t, const ClusterTable& table, const QMap& qmap = QMap::linear());
QuantizedTensor quantize(const TensorBlob& t, unsigned m = kDefaultClusters);

/// Errors: kInconsistentRecord when a label is >= m or sizes disagree.
TensorBlob dequantize(const QuantizedTensor& q, const QMap& qmap = QMap::linear());

/// 8m + (label_bits/8 + 1) n + 8 with 4-bit labels: 8m + n + ceil(n/2) + 8.
std::uint64_t quantized_size_bytes(std::uint64_t n, unsigned m);

inline constexpr std::uint16_t kQuantFormatVersion = 1;

/// Bytes the BSQT container adds on top of quantized_size_bytes (may be
/// negative for tiny tables, since the budget reserves 8 bytes for shape).
std::int64_t quantized_container_overhead(unsigned m, std::size_t name_len, std::size_t rank);
std::size_t serialized_quantized_size(const QuantizedTensor& q);
Bytes serialize_quantized(const QuantizedTensor& q);
void serialize_quantized(const QuantizedTensor& q, Bytes& out);
QuantizedTensor deserialize_quantized(ByteView bytes);

struct PrecisionReport {
  double mre = 0.0;
  double mse = 0.0;
};

/// Denominator floor for the relative error: elements with |original| <= this
/// are left out of the MRE mean.
inline constexpr double kMreEpsilon = 1e-12;

/// Errors: kShapeMismatch, kDtypeMismatch.
PrecisionReport precision_report(const TensorBlob& original, const TensorBlob& restored);

}  // namespace bitsnap
