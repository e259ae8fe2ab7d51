#include "sarel/guard.hpp"

#include <algorithm>
#include <bit>
#include <iterator>
#include <limits>

#include <json.hpp>

#include "sarel/error.hpp"
#include "sarel/io.hpp"

namespace sarel {

using nlohmann::json;

const char* to_string(GuardMethod m) {
  switch (m) {
  case GuardMethod::none: return "none";
  case GuardMethod::method1: return "method1";
  case GuardMethod::method2: return "method2";
  case GuardMethod::method3: return "method3";
  }
  return "unknown";
}

GuardMethod guard_method_from_string(const std::string& s) {
  if (s == "none") return GuardMethod::none;
  if (s == "method1" || s == "m1") return GuardMethod::method1;
  if (s == "method2" || s == "m2") return GuardMethod::method2;
  if (s == "method3" || s == "m3") return GuardMethod::method3;
  fail(ErrorKind::config, "unknown guard method '" + s + "'");
}

const LayerBounds* GuardSpec::find(std::size_t layer) const {
  auto it = std::lower_bound(bounds.begin(), bounds.end(), layer,
                             [](const LayerBounds& b, std::size_t l) { return b.layer < l; });
  return it != bounds.end() && it->layer == layer ? &*it : nullptr;
}

const LayerBounds* GuardSpec::source(std::size_t layer) const {
  auto it = std::lower_bound(bounds.begin(), bounds.end(), layer,
                             [](const LayerBounds& b, std::size_t l) { return b.layer < l; });
  return it == bounds.begin() ? nullptr : &*std::prev(it);
}

GuardSpec make_guard(const Network& net, GuardMethod method, const std::vector<LayerBounds>& bounds) {
  GuardSpec spec;
  spec.method = method;
  if (method == GuardMethod::none) return spec;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (!is_mac(net.layers[i].kind)) continue;
    auto it = std::find_if(bounds.begin(), bounds.end(), [i](const LayerBounds& b) { return b.layer == i; });
    if (it == bounds.end()) fail(ErrorKind::config, "no bounds for guarded layer " + std::to_string(i));
    const QuantParams& p = net.layers[i].out_params;
    if (it->lower > it->upper || !p.contains(it->lower) || !p.contains(it->upper)) {
      fail(ErrorKind::config, "bounds of layer " + std::to_string(i) + " do not fit its " +
                                  std::to_string(p.bits) + "-bit output range");
    }
    spec.bounds.push_back(*it);
  }
  return spec;
}

namespace {

// Calls fn(layer_index, output_tensor) for every layer of a fault-free run.
template <typename Fn>
void for_each_layer_output(const Network& net, const Sample& s, Fn&& fn) {
  QTensor x = input_tensor(net, s);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    x = reference_layer(net.layers[i], x);
    fn(i, x);
  }
}

} // namespace

std::vector<LayerBounds> extract_ranges(const Network& net, const LabeledSet& validation) {
  if (validation.empty()) fail(ErrorKind::input, "range extraction needs a non-empty validation set");
  std::vector<LayerBounds> bounds(net.layers.size());
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    bounds[i] = {i, std::numeric_limits<std::int32_t>::max(), std::numeric_limits<std::int32_t>::min()};
  }
  for (const auto& s : validation.samples) {
    for_each_layer_output(net, s, [&](std::size_t i, const QTensor& out) {
      const auto [lo, hi] = std::minmax_element(out.data().begin(), out.data().end());
      bounds[i].lower = std::min(bounds[i].lower, *lo);
      bounds[i].upper = std::max(bounds[i].upper, *hi);
    });
  }
  return bounds;
}

CoverageReport validate_ranges(const std::vector<LayerBounds>& bounds, const Network& net, const LabeledSet& test) {
  if (test.empty()) fail(ErrorKind::input, "range validation needs a non-empty test set");
  std::vector<const LayerBounds*> by_layer(net.layers.size(), nullptr);
  for (const auto& b : bounds) {
    if (b.layer >= net.layers.size()) fail(ErrorKind::input, "bounds name layer " + std::to_string(b.layer) + " which does not exist");
    by_layer[b.layer] = &b;
  }
  for (std::size_t i = 0; i < by_layer.size(); ++i) {
    if (!by_layer[i]) fail(ErrorKind::input, "no bounds for layer " + std::to_string(i));
  }
  CoverageReport report;
  report.layers.resize(net.layers.size());
  for (std::size_t i = 0; i < report.layers.size(); ++i) report.layers[i].layer = i;
  for (const auto& s : test.samples) {
    for_each_layer_output(net, s, [&](std::size_t i, const QTensor& out) {
      auto& cov = report.layers[i];
      cov.total += out.size();
      for (auto v : out.data()) {
        if (v < by_layer[i]->lower || v > by_layer[i]->upper) ++cov.out_of_range;
      }
    });
  }
  return report;
}

std::size_t accumulator_bits(const Network& net, std::size_t layer) {
  const Layer& l = net.layers.at(layer);
  if (!is_mac(l.kind)) fail(ErrorKind::config, "layer " + std::to_string(layer) + " has no accumulator");
  const auto params = net.layer_params();
  const std::size_t k = l.kind == LayerKind::dense
                            ? l.geometry.in_channels
                            : l.geometry.kernel_h * l.geometry.kernel_w * l.geometry.in_channels;
  const std::size_t growth = std::bit_width(k + 1); // ceil(log2(K + 2)) >= ceil(log2(K + 1))
  return static_cast<std::size_t>(params[layer].bits + l.weights.params().bits) + growth;
}

CostSummary guard_cost(const Network& net, GuardMethod method) {
  if (method == GuardMethod::none) fail(ErrorKind::config, "guard cost needs a protection method");
  CostSummary sum;
  sum.method = method;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (!is_mac(net.layers[i].kind)) continue;
    LayerGuardCost c;
    const auto b = static_cast<std::size_t>(net.layers[i].out_params.bits);
    c.layer = i;
    c.stored_words = 2;
    c.stored_bits = 2 * b;
    c.subtractors = 2;
    c.subtractor_width = accumulator_bits(net, i);
    c.mux_selects = 1;
    c.mux_inputs = method == GuardMethod::method3 ? 3 : 2;
    c.logic_units = c.stored_bits + c.subtractors * c.subtractor_width + (c.mux_inputs - 1) * b;
    sum.stored_words += c.stored_words;
    sum.subtractors += c.subtractors;
    sum.mux_selects += c.mux_selects;
    sum.logic_units += c.logic_units;
    sum.layers.push_back(c);
  }
  return sum;
}

std::size_t pe_logic_units(int bits, std::size_t accumulator_width) {
  const auto b = static_cast<std::size_t>(bits);
  return b * b + accumulator_width;
}

std::vector<std::string> guard_cost_commentary() {
  return {
      "reference: range-check protection (Method 3) adds less than 10% overhead compared to the LUTs of the unprotected accelerator",
      "reference: full protection with triple modular redundancy costs >200% (TMR) hardware overhead",
  };
}

std::string bounds_json(const std::vector<LayerBounds>& bounds) {
  json doc = json::array();
  for (const auto& b : bounds) doc.push_back({{"layer", b.layer}, {"lower", b.lower}, {"upper", b.upper}});
  return doc.dump(2) + "\n";
}

std::vector<LayerBounds> parse_bounds_json(const std::string& text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::format, origin + ": " + e.what());
  }
  if (!doc.is_array()) fail(ErrorKind::format, origin + ": bounds must be a JSON list");
  std::vector<LayerBounds> out;
  try {
    for (const auto& e : doc) {
      out.push_back({e.at("layer").get<std::size_t>(), e.at("lower").get<std::int32_t>(), e.at("upper").get<std::int32_t>()});
      if (out.back().lower > out.back().upper) fail(ErrorKind::format, origin + ": lower above upper");
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::format, origin + ": " + e.what());
  }
  std::sort(out.begin(), out.end(), [](const LayerBounds& a, const LayerBounds& b) { return a.layer < b.layer; });
  return out;
}

std::vector<LayerBounds> load_bounds(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_bounds_json(std::string(bytes.begin(), bytes.end()), path.string());
}

} // namespace sarel
