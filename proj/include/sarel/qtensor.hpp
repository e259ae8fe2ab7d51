#pragma once

/**
 * Fixed-point tensors and the uniform quantization mapping.
 *
 *   S       = (x_max - x_min) / (2^b - 1)
 *   q       = clamp(floor(x / S) + Z, q_min, q_max)
 *   x'      = (q - Z) * S
 *
 * Activations are unsigned (q in [0, 2^b - 1]); weights are signed symmetric
 * (q in [-(2^(b-1) - 1), 2^(b-1) - 1]) and round to nearest instead of
 * flooring. Zero point is 0 in both cases.
 * Values are stored in int32 whatever the logical width.
 */

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace sarel {

inline constexpr int kMinBits = 2;
inline constexpr int kMaxBits = 16;

enum class Signedness { unsigned_, signed_ };

struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;
  int bits = 8;
  std::int32_t q_min = 0;
  std::int32_t q_max = 255;

  static QuantParams unsigned_params(int bits, double scale, std::int32_t zero_point = 0);
  static QuantParams signed_params(int bits, double scale);

  Signedness signedness() const { return q_min < 0 ? Signedness::signed_ : Signedness::unsigned_; }
  bool contains(std::int64_t q) const { return q >= q_min && q <= q_max; }

  // Throws ErrorKind::config when an invariant does not hold.
  void validate() const;

  bool operator==(const QuantParams&) const = default;
};

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);

class QTensor {
public:
  QTensor() = default;
  // Zero-filled tensor (zero point value).
  QTensor(Shape shape, QuantParams params);
  // Throws ErrorKind::input if the data does not fit the shape or the range.
  QTensor(Shape shape, std::vector<std::int32_t> data, QuantParams params);

  const Shape& shape() const { return shape_; }
  const QuantParams& params() const { return params_; }
  std::size_t size() const { return data_.size(); }

  std::span<const std::int32_t> data() const { return data_; }
  std::int32_t operator[](std::size_t i) const { return data_[i]; }

  // Unchecked write access for kernels that clamp before storing.
  std::span<std::int32_t> mutable_data() { return data_; }

  QTensor reshaped(Shape shape) const;

  bool operator==(const QTensor&) const = default;

private:
  Shape shape_;
  std::vector<std::int32_t> data_;
  QuantParams params_;
};

// (x_max - x_min) / (2^bits - 1).
double compute_scale(double x_min, double x_max, int bits);

// clamp(floor(x / S) + Z, q_min, q_max). The floor treats quotients within a
// few ulps below an integer as that integer, so grid points survive the
// division exactly.
std::int32_t quantize(double x, const QuantParams& p);

double dequantize(std::int32_t q, const QuantParams& p);

// Weight quantization: clamp(round_half_away(x / S) + Z, q_min, q_max).
// Rounding instead of floor keeps signed weights free of a systematic
// -0.5 LSB offset, which would otherwise add up across every dot product.
std::int32_t quantize_weight(double x, const QuantParams& p);

// Moves a value from one quantization grid onto another through the real
// domain: quantize(dequantize(q, from), to).
std::int32_t rebase(std::int32_t q, const QuantParams& from, const QuantParams& to);

// XOR of the listed bit positions. Positions must be distinct and < bits,
// and q must be a valid unsigned b-bit word.
std::int32_t flip_bits(std::int32_t q, std::span<const int> bit_positions, int bits);

// floor(r), except that quotients within a few ulps below an integer count
// as that integer. r must be finite and within int64 range.
std::int64_t grid_floor(double r);

// Signed round-half-away-from-zero of a * multiplier, saturated to int64.
std::int64_t scale_round(std::int64_t a, double multiplier);

} // namespace sarel
