#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sarel/faultlab.hpp"
#include "sarel/guard.hpp"
#include "sarel/netgraph.hpp"

namespace sarel {

struct OutcomeFlags {
  bool sdc1 = false;  // top-ranked class changed
  bool sdc5 = false;  // golden top class fell out of the faulty top-k (k = min(5, classes))
  bool sdc10 = false; // golden top class confidence moved by more than 10% (relative)

  bool operator==(const OutcomeFlags&) const = default;
};

inline constexpr double kSdcConfidenceDeviation = 0.10;

OutcomeFlags classify_outcome(const Prediction& golden, const Prediction& faulty);

// k used for the SDC-5 check.
inline std::size_t sdc5_k(std::size_t class_count) { return class_count < 5 ? class_count : 5; }

/// Campaign metrics. All values are percentages in [0, 100].
struct Metrics {
  double golden_accuracy = 0.0;
  double mean_faulty_accuracy = 0.0;
  double accuracy_loss = 0.0;     // golden - mean faulty
  double relative_accuracy = 0.0; // 100 * mean faulty / golden
  double criticality = 0.0;       // repetitions with faulty accuracy < golden
  double sdc1_rate = 0.0;         // over (repetition, input) pairs
  double sdc5_rate = 0.0;
  double sdc10_rate = 0.0;
  std::size_t repetitions = 0;    // successful
  std::size_t failed_repetitions = 0;
  std::size_t critical_repetitions = 0;
  std::size_t pairs = 0;
};

struct LayerMetrics {
  std::size_t layer = 0;
  std::string name;
  Metrics metrics;
};

struct MetricsReport {
  Metrics model;
  std::vector<LayerMetrics> layers; // grouped by fault layer, ascending
  std::size_t sdc5_k = 5;
};

// Throws ErrorKind::aggregation when no repetition succeeded.
MetricsReport aggregate(const CampaignResult& result);

// ((new - old) / old) * 100; empty when old is not positive.
std::optional<double> improvement(double old_value, double new_value);

struct DSERow {
  int bits = 0;
  GuardMethod method = GuardMethod::none;
  double accuracy = 0.0; // fault-free top-1, %
  Metrics metrics;
  std::size_t guard_stored_words = 0;
  std::size_t guard_subtractors = 0;
  std::size_t guard_mux_selects = 0;
  std::size_t guard_logic_units = 0;
  double guard_overhead = 0.0; // % of the PE array logic units
  CycleReport cycles;
  double giops = 0.0;
  std::optional<double> reliability_improvement; // relative accuracy vs baseline row
  std::optional<double> criticality_improvement; // criticality vs baseline row
  std::string error;
};

struct DSETable {
  std::vector<DSERow> rows;
  std::vector<std::string> commentary;
};

struct Baseline {
  // Empty: compare each row with the unprotected row of the same width.
  std::optional<int> bits;
  GuardMethod method = GuardMethod::none;
};

struct SweepParams {
  std::vector<int> bit_widths;
  std::vector<GuardMethod> methods;
  CampaignConfig campaign;
  double t = 1.96;
  double error_margin = 0.01;
  double p = 0.5;
  std::optional<std::uint64_t> repetitions; // overrides the statistical size
  Baseline baseline;
  std::function<void(const std::string&)> progress;
};

// One campaign per (width, method) cell. `validation` feeds range
// extraction at each width; both sets are in source.data_params. A failing
// cell keeps its row with `error` set.
DSETable sweep(const Network& source, const LabeledSet& validation, const LabeledSet& test, const SweepParams& params);

enum class EmitFormat { csv, json };
EmitFormat emit_format_from_string(const std::string& s);

// Fixed column order, 4-decimal percentages, LF line endings.
std::string render(const DSETable& table, EmitFormat format);
std::string render(const MetricsReport& report, EmitFormat format);
void emit(const DSETable& table, EmitFormat format, const std::filesystem::path& path);
void emit(const MetricsReport& report, EmitFormat format, const std::filesystem::path& path);

nlohmann::json metrics_json(const Metrics& m);
nlohmann::json campaign_json(const CampaignResult& result);
CampaignResult campaign_from_json(const nlohmann::json& doc);

// Value rounded to 4 decimals, as printed in every artifact.
double round4(double v);

} // namespace sarel
