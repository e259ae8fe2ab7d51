#pragma once

/**
 * Range-check mitigation.
 *
 * Every guarded layer stores a (lower, upper) pair learned from fault-free
 * runs. Two comparisons against the layer output decide whether the value
 * passes or gets replaced:
 *
 *   method1: out-of-range -> lower
 *   method2: out-of-range -> upper
 *   method3: below lower -> lower, above upper -> upper
 *
 * Bounds live in each layer's quantized output domain. A guarded layer's
 * words are checked when they are produced and again whenever they are read,
 * so a word corrupted while it sits in the activation buffer is caught on its
 * way into the next layer.
 */

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sarel/netgraph.hpp"

namespace sarel {

enum class GuardMethod { none, method1, method2, method3 };

const char* to_string(GuardMethod m);
// Accepts none, method1..3 and the short forms m1..m3.
GuardMethod guard_method_from_string(const std::string& s);

struct LayerBounds {
  std::size_t layer = 0;
  std::int32_t lower = 0;
  std::int32_t upper = 0;

  bool operator==(const LayerBounds&) const = default;
};

struct GuardSpec {
  GuardMethod method = GuardMethod::none;
  std::vector<LayerBounds> bounds; // one entry per guarded layer, ascending layer

  const LayerBounds* find(std::size_t layer) const;
  // Bounds that cover the words layer `layer` reads: those of the nearest
  // guarded layer before it. Pooling, ReLU and flatten never leave their
  // input's range, so a MAC layer's bounds still hold after them.
  const LayerBounds* source(std::size_t layer) const;
  bool active() const { return method != GuardMethod::none && !bounds.empty(); }
};

// Guard placed on every MAC layer's output, using the matching entries from
// `bounds`. Throws ErrorKind::config if a MAC layer has no bounds or a bound
// falls outside its layer's output range.
GuardSpec make_guard(const Network& net, GuardMethod method, const std::vector<LayerBounds>& bounds);

inline std::int32_t apply_guard(std::int32_t value, const LayerBounds& b, GuardMethod method) {
  if (value >= b.lower && value <= b.upper) return value;
  switch (method) {
  case GuardMethod::none: return value;
  case GuardMethod::method1: return b.lower;
  case GuardMethod::method2: return b.upper;
  case GuardMethod::method3: return value < b.lower ? b.lower : b.upper;
  }
  return value;
}

// Per-layer min/max of fault-free outputs over the set, for every layer.
std::vector<LayerBounds> extract_ranges(const Network& net, const LabeledSet& validation);

struct LayerCoverage {
  std::size_t layer = 0;
  std::size_t total = 0;
  std::size_t out_of_range = 0;

  double fraction() const { return total ? static_cast<double>(out_of_range) / static_cast<double>(total) : 0.0; }
};

struct CoverageReport {
  std::vector<LayerCoverage> layers;
};

// Fraction of fault-free activations of `test` outside the given bounds.
CoverageReport validate_ranges(const std::vector<LayerBounds>& bounds, const Network& net, const LabeledSet& test);

struct LayerGuardCost {
  std::size_t layer = 0;
  std::size_t stored_words = 0;
  std::size_t stored_bits = 0;
  std::size_t subtractors = 0;
  std::size_t subtractor_width = 0; // accumulator width in bits
  std::size_t mux_selects = 0;
  std::size_t mux_inputs = 0;
  // Bit-level logic units: storage bits + subtractor bits + mux data bits.
  std::size_t logic_units = 0;
};

struct CostSummary {
  GuardMethod method = GuardMethod::none;
  std::vector<LayerGuardCost> layers;
  std::size_t stored_words = 0;
  std::size_t subtractors = 0;
  std::size_t mux_selects = 0;
  std::size_t logic_units = 0;
};

// Accumulator width of a MAC layer: the product width plus bit_width(K + 1)
// bits of growth for K terms and the bias.
std::size_t accumulator_bits(const Network& net, std::size_t layer);

// Analytic cost of guarding every MAC layer. Throws ErrorKind::config for
// GuardMethod::none.
CostSummary guard_cost(const Network& net, GuardMethod method);

// Logic units of one MAC processing element (b x b multiplier plus the
// accumulator adder) used as the denominator of relative overhead.
std::size_t pe_logic_units(int bits, std::size_t accumulator_width);

// Fixed reference statements printed next to computed guard costs.
std::vector<std::string> guard_cost_commentary();

std::string bounds_json(const std::vector<LayerBounds>& bounds);
std::vector<LayerBounds> parse_bounds_json(const std::string& text, const std::string& origin);
std::vector<LayerBounds> load_bounds(const std::filesystem::path& path);

} // namespace sarel
