#include "sarel/qtensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sarel/error.hpp"

namespace sarel {

const char* to_string(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::config: return "config";
  case ErrorKind::range: return "range";
  case ErrorKind::input: return "input";
  case ErrorKind::format: return "format";
  case ErrorKind::io: return "io";
  case ErrorKind::aggregation: return "aggregation";
  case ErrorKind::internal: return "internal";
  }
  return "unknown";
}

namespace {

void check_bits(int bits) {
  if (bits < kMinBits || bits > kMaxBits) {
    fail(ErrorKind::config, "bit width " + std::to_string(bits) + " outside [" +
                                std::to_string(kMinBits) + ", " + std::to_string(kMaxBits) + "]");
  }
}

} // namespace

QuantParams QuantParams::unsigned_params(int bits, double scale, std::int32_t zero_point) {
  check_bits(bits);
  QuantParams p;
  p.bits = bits;
  p.scale = scale;
  p.zero_point = zero_point;
  p.q_min = 0;
  p.q_max = (std::int32_t{1} << bits) - 1;
  p.validate();
  return p;
}

QuantParams QuantParams::signed_params(int bits, double scale) {
  check_bits(bits);
  QuantParams p;
  p.bits = bits;
  p.scale = scale;
  p.zero_point = 0;
  p.q_max = (std::int32_t{1} << (bits - 1)) - 1;
  p.q_min = -p.q_max;
  p.validate();
  return p;
}

void QuantParams::validate() const {
  check_bits(bits);
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    fail(ErrorKind::config, "scale must be a positive finite number");
  }
  const std::int32_t umax = (std::int32_t{1} << bits) - 1;
  const std::int32_t smax = (std::int32_t{1} << (bits - 1)) - 1;
  const bool is_unsigned = q_min == 0 && q_max == umax;
  const bool is_signed = q_min == -smax && q_max == smax;
  if (!is_unsigned && !is_signed) {
    fail(ErrorKind::config, "q_min/q_max do not describe a " + std::to_string(bits) + "-bit range");
  }
  if (zero_point < q_min || zero_point > q_max) {
    fail(ErrorKind::config, "zero point outside [q_min, q_max]");
  }
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

QTensor::QTensor(Shape shape, QuantParams params)
    : shape_(std::move(shape)), data_(element_count(shape_), params.zero_point), params_(params) {}

QTensor::QTensor(Shape shape, std::vector<std::int32_t> data, QuantParams params)
    : shape_(std::move(shape)), data_(std::move(data)), params_(params) {
  if (data_.size() != element_count(shape_)) {
    fail(ErrorKind::input, "tensor holds " + std::to_string(data_.size()) +
                               " elements but its shape needs " +
                               std::to_string(element_count(shape_)));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!params_.contains(data_[i])) {
      fail(ErrorKind::input, "element " + std::to_string(i) + " = " + std::to_string(data_[i]) +
                                 " outside [" + std::to_string(params_.q_min) + ", " +
                                 std::to_string(params_.q_max) + "]");
    }
  }
}

QTensor QTensor::reshaped(Shape shape) const {
  if (element_count(shape) != data_.size()) {
    fail(ErrorKind::input, "reshape changes the element count");
  }
  QTensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

double compute_scale(double x_min, double x_max, int bits) {
  check_bits(bits);
  if (!std::isfinite(x_min) || !std::isfinite(x_max) || !(x_max > x_min)) {
    fail(ErrorKind::range, "degenerate range [" + std::to_string(x_min) + ", " +
                               std::to_string(x_max) + "]");
  }
  return (x_max - x_min) / static_cast<double>((std::int64_t{1} << bits) - 1);
}

std::int64_t grid_floor(double r) {
  double n = std::floor(r);
  const double slack = 8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::fabs(r));
  if (n + 1.0 - r <= slack) n += 1.0;
  return static_cast<std::int64_t>(n);
}

std::int32_t quantize(double x, const QuantParams& p) {
  if (!std::isfinite(x)) fail(ErrorKind::input, "cannot quantize a non-finite value");
  double r = x / p.scale;
  // Anything beyond the grid saturates; bounding first keeps the integer
  // conversion defined for huge magnitudes.
  const double lo = static_cast<double>(p.q_min) - p.zero_point - 1.0;
  const double hi = static_cast<double>(p.q_max) - p.zero_point + 1.0;
  if (!(r >= lo)) return p.q_min;
  if (!(r <= hi)) return p.q_max;
  const auto q = grid_floor(r) + p.zero_point;
  return static_cast<std::int32_t>(std::clamp<std::int64_t>(q, p.q_min, p.q_max));
}

std::int32_t quantize_weight(double x, const QuantParams& p) {
  if (!std::isfinite(x)) fail(ErrorKind::input, "cannot quantize a non-finite value");
  const double r = x / p.scale;
  const double lo = static_cast<double>(p.q_min) - p.zero_point - 1.0;
  const double hi = static_cast<double>(p.q_max) - p.zero_point + 1.0;
  if (!(r >= lo)) return p.q_min;
  if (!(r <= hi)) return p.q_max;
  const auto q = static_cast<std::int64_t>(std::round(r)) + p.zero_point;
  return static_cast<std::int32_t>(std::clamp<std::int64_t>(q, p.q_min, p.q_max));
}

double dequantize(std::int32_t q, const QuantParams& p) {
  if (!p.contains(q)) {
    fail(ErrorKind::input, "value " + std::to_string(q) + " outside [" + std::to_string(p.q_min) +
                               ", " + std::to_string(p.q_max) + "]");
  }
  return static_cast<double>(q - p.zero_point) * p.scale;
}

std::int32_t rebase(std::int32_t q, const QuantParams& from, const QuantParams& to) {
  if (from == to) return q;
  return quantize(dequantize(q, from), to);
}

std::int32_t flip_bits(std::int32_t q, std::span<const int> bit_positions, int bits) {
  check_bits(bits);
  const std::int32_t word_max = (std::int32_t{1} << bits) - 1;
  if (q < 0 || q > word_max) {
    fail(ErrorKind::input, "word " + std::to_string(q) + " is not a " + std::to_string(bits) +
                               "-bit unsigned value");
  }
  std::int32_t mask = 0;
  for (int pos : bit_positions) {
    if (pos < 0 || pos >= bits) {
      fail(ErrorKind::config, "bit position " + std::to_string(pos) + " outside a " +
                                  std::to_string(bits) + "-bit word");
    }
    const std::int32_t bit = std::int32_t{1} << pos;
    if (mask & bit) fail(ErrorKind::config, "bit position " + std::to_string(pos) + " repeated");
    mask |= bit;
  }
  return q ^ mask;
}

std::int64_t scale_round(std::int64_t a, double multiplier) {
  const double v = std::round(static_cast<double>(a) * multiplier);
  constexpr double lim = 9.0e18;
  if (v >= lim) return static_cast<std::int64_t>(lim);
  if (v <= -lim) return -static_cast<std::int64_t>(lim);
  return static_cast<std::int64_t>(v);
}

} // namespace sarel
