#include "sarel/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "sarel/error.hpp"
#include "sarel/io.hpp"

namespace sarel {

using nlohmann::json;

OutcomeFlags classify_outcome(const Prediction& golden, const Prediction& faulty) {
  if (golden.confidences.size() != faulty.confidences.size() || golden.confidences.empty()) {
    fail(ErrorKind::input, "predictions differ in class count");
  }
  OutcomeFlags f;
  const std::size_t g = golden.top1;
  f.sdc1 = faulty.top1 != g;
  const auto top = faulty.topk(sdc5_k(faulty.confidences.size()));
  f.sdc5 = std::find(top.begin(), top.end(), g) == top.end();
  const double cg = golden.confidences[g];
  const double cf = faulty.confidences[g];
  f.sdc10 = cg > 0.0 ? std::abs(cf - cg) / cg > kSdcConfidenceDeviation : cf > 0.0;
  return f;
}

namespace {

double pct(std::size_t num, std::size_t den) {
  return den ? 100.0 * (static_cast<double>(num) / static_cast<double>(den)) : 0.0;
}

struct Accum {
  std::size_t reps = 0, correct = 0, inputs = 0, critical = 0, sdc1 = 0, sdc5 = 0, sdc10 = 0;

  void add(const RepetitionResult& r, const CampaignResult& c) {
    ++reps;
    correct += r.correct;
    inputs += r.inputs_evaluated;
    sdc1 += r.sdc1;
    sdc5 += r.sdc5;
    sdc10 += r.sdc10;
    // faulty accuracy < golden accuracy, compared as exact fractions
    if (r.correct * c.slice_size < c.golden_correct * r.inputs_evaluated) ++critical;
  }

  Metrics metrics(const CampaignResult& c, std::size_t failed) const {
    Metrics m;
    m.golden_accuracy = pct(c.golden_correct, c.slice_size);
    m.mean_faulty_accuracy = pct(correct, inputs);
    m.accuracy_loss = m.golden_accuracy - m.mean_faulty_accuracy;
    m.relative_accuracy = m.golden_accuracy > 0.0 ? 100.0 * (m.mean_faulty_accuracy / m.golden_accuracy) : 0.0;
    m.criticality = pct(critical, reps);
    m.sdc1_rate = pct(sdc1, inputs);
    m.sdc5_rate = pct(sdc5, inputs);
    m.sdc10_rate = pct(sdc10, inputs);
    m.repetitions = reps;
    m.failed_repetitions = failed;
    m.critical_repetitions = critical;
    m.pairs = inputs;
    return m;
  }
};

} // namespace

MetricsReport aggregate(const CampaignResult& result) {
  Accum all;
  std::size_t failed = 0;
  std::map<std::size_t, Accum> by_layer;
  for (const auto& r : result.repetitions) {
    if (!r.error.empty()) {
      ++failed;
      continue;
    }
    all.add(r, result);
    if (r.site) by_layer[r.site->layer].add(r, result);
  }
  if (all.reps == 0) {
    fail(ErrorKind::aggregation, "no successful repetitions to aggregate (" + std::to_string(failed) + " failed)");
  }
  MetricsReport report;
  report.model = all.metrics(result, failed);
  report.sdc5_k = sdc5_k(result.class_count);
  for (const auto& [layer, acc] : by_layer) {
    LayerMetrics lm;
    lm.layer = layer;
    lm.name = layer < result.layer_names.size() ? result.layer_names[layer] : std::to_string(layer);
    lm.metrics = acc.metrics(result, 0);
    report.layers.push_back(std::move(lm));
  }
  return report;
}

std::optional<double> improvement(double old_value, double new_value) {
  if (!(old_value > 0.0)) return std::nullopt;
  return (new_value - old_value) / old_value * 100.0;
}

DSETable sweep(const Network& source, const LabeledSet& validation, const LabeledSet& test, const SweepParams& params) {
  if (params.bit_widths.empty()) fail(ErrorKind::config, "sweep needs at least one bit width");
  if (params.methods.empty()) fail(ErrorKind::config, "sweep needs at least one guard method");
  auto say = [&](const std::string& msg) {
    if (params.progress) params.progress(msg);
  };

  DSETable table;
  for (int bits : params.bit_widths) {
    Network net;
    LabeledSet val, tst;
    std::vector<LayerBounds> bounds;
    std::string width_error;
    try {
      if (bits < kMinBits || bits > kMaxBits) fail(ErrorKind::config, "bit width " + std::to_string(bits) + " unsupported");
      net = requantize_network(source, bits);
      tst = rebase(test, source.data_params, net.input_params);
      const bool guarded = std::any_of(params.methods.begin(), params.methods.end(),
                                       [](GuardMethod m) { return m != GuardMethod::none; });
      if (guarded) {
        val = rebase(validation, source.data_params, net.input_params);
        bounds = extract_ranges(net, val); // re-extracted at this width
      }
    } catch (const Error& e) {
      width_error = std::string(to_string(e.kind())) + ": " + e.what();
    }

    for (GuardMethod method : params.methods) {
      DSERow row;
      row.bits = bits;
      row.method = method;
      if (!width_error.empty()) {
        row.error = width_error;
        table.rows.push_back(std::move(row));
        continue;
      }
      say("sweep: " + std::to_string(bits) + "-bit, " + to_string(method));
      try {
        CampaignConfig cfg = params.campaign;
        cfg.guard = method;
        SamplingPlan plan = SamplingPlan::make(population_size(net, bits, cfg.mask), params.t, params.error_margin, params.p);
        if (params.repetitions) {
          if (*params.repetitions == 0) fail(ErrorKind::config, "repetition count must be positive");
          plan.n = *params.repetitions;
        }
        const CampaignResult result = run_campaign(net, tst, cfg, plan, method == GuardMethod::none ? nullptr : &bounds);
        row.metrics = aggregate(result).model;
        row.accuracy = row.metrics.golden_accuracy;
        row.cycles = result.cycles;
        row.giops = result.cycles.giops(cfg.array.clock_hz);
        if (method != GuardMethod::none) {
          const CostSummary cost = guard_cost(net, method);
          row.guard_stored_words = cost.stored_words;
          row.guard_subtractors = cost.subtractors;
          row.guard_mux_selects = cost.mux_selects;
          row.guard_logic_units = cost.logic_units;
          std::size_t acc_w = 0;
          for (const auto& l : cost.layers) acc_w = std::max(acc_w, l.subtractor_width);
          const double array_units =
              static_cast<double>(cfg.array.rows * cfg.array.cols * pe_logic_units(bits, acc_w));
          row.guard_overhead = 100.0 * static_cast<double>(cost.logic_units) / array_units;
        }
      } catch (const Error& e) {
        row.error = std::string(to_string(e.kind())) + ": " + e.what();
      }
      table.rows.push_back(std::move(row));
    }
  }

  for (auto& row : table.rows) {
    if (!row.error.empty()) continue;
    const int base_bits = params.baseline.bits.value_or(row.bits);
    const auto base = std::find_if(table.rows.begin(), table.rows.end(), [&](const DSERow& r) {
      return r.bits == base_bits && r.method == params.baseline.method && r.error.empty();
    });
    if (base == table.rows.end()) continue;
    row.reliability_improvement = improvement(base->metrics.relative_accuracy, row.metrics.relative_accuracy);
    row.criticality_improvement = improvement(base->metrics.criticality, row.metrics.criticality);
  }
  if (std::any_of(params.methods.begin(), params.methods.end(), [](GuardMethod m) { return m != GuardMethod::none; })) {
    table.commentary = guard_cost_commentary();
  }
  return table;
}

EmitFormat emit_format_from_string(const std::string& s) {
  if (s == "csv") return EmitFormat::csv;
  if (s == "json") return EmitFormat::json;
  fail(ErrorKind::config, "unknown output format '" + s + "' (expected csv or json)");
}

double round4(double v) {
  const double r = std::round(v * 10000.0) / 10000.0;
  return r == 0.0 ? 0.0 : r; // no negative zero in artifacts
}

namespace {

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", round4(v));
  return buf;
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string opt4(const std::optional<double>& v) { return v ? fixed4(*v) : "undefined"; }

json opt_json(const std::optional<double>& v) { return v ? json(round4(*v)) : json(nullptr); }

void join(std::string& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += cells[i];
  }
  out += '\n';
}

const std::vector<std::string> kTableColumns = {
    "bits", "method", "accuracy_pct", "mean_faulty_accuracy_pct", "accuracy_loss_pct", "relative_accuracy_pct",
    "criticality_pct", "sdc1_pct", "sdc5_pct", "sdc10_pct", "repetitions", "failed_repetitions",
    "guard_stored_words", "guard_subtractors", "guard_mux_selects", "guard_logic_units", "guard_overhead_pct",
    "mac_ops", "cycles", "giops_estimate", "reliability_improvement_pct", "criticality_improvement_pct", "error",
    "note"};

const std::vector<std::string> kMetricsColumns = {
    "scope", "layer", "name", "repetitions", "failed_repetitions", "golden_accuracy_pct", "mean_faulty_accuracy_pct",
    "accuracy_loss_pct", "relative_accuracy_pct", "criticality_pct", "sdc1_pct", "sdc5_pct", "sdc10_pct", "sdc5_k"};

std::vector<std::string> metric_cells(const Metrics& m) {
  return {fixed4(m.golden_accuracy), fixed4(m.mean_faulty_accuracy), fixed4(m.accuracy_loss),
          fixed4(m.relative_accuracy), fixed4(m.criticality), fixed4(m.sdc1_rate), fixed4(m.sdc5_rate),
          fixed4(m.sdc10_rate)};
}

json row_json(const DSERow& r) {
  json j;
  j["bits"] = r.bits;
  j["method"] = to_string(r.method);
  if (!r.error.empty()) {
    j["error"] = r.error;
    return j;
  }
  j["accuracy_pct"] = round4(r.accuracy);
  j["metrics"] = metrics_json(r.metrics);
  j["guard_cost"] = {{"stored_words", r.guard_stored_words},
                     {"subtractors", r.guard_subtractors},
                     {"mux_selects", r.guard_mux_selects},
                     {"logic_units", r.guard_logic_units},
                     {"overhead_pct", round4(r.guard_overhead)}};
  j["mac_ops"] = r.cycles.mac_ops;
  j["cycles"] = r.cycles.cycles;
  j["giops_estimate"] = round4(r.giops);
  j["reliability_improvement_pct"] = opt_json(r.reliability_improvement);
  j["criticality_improvement_pct"] = opt_json(r.criticality_improvement);
  return j;
}

} // namespace

json metrics_json(const Metrics& m) {
  return {{"golden_accuracy_pct", round4(m.golden_accuracy)},
          {"mean_faulty_accuracy_pct", round4(m.mean_faulty_accuracy)},
          {"accuracy_loss_pct", round4(m.accuracy_loss)},
          {"relative_accuracy_pct", round4(m.relative_accuracy)},
          {"criticality_pct", round4(m.criticality)},
          {"sdc1_pct", round4(m.sdc1_rate)},
          {"sdc5_pct", round4(m.sdc5_rate)},
          {"sdc10_pct", round4(m.sdc10_rate)},
          {"repetitions", m.repetitions},
          {"failed_repetitions", m.failed_repetitions},
          {"critical_repetitions", m.critical_repetitions},
          {"pairs", m.pairs}};
}

std::string render(const DSETable& table, EmitFormat format) {
  if (format == EmitFormat::json) {
    json doc;
    doc["columns"] = kTableColumns;
    doc["rows"] = json::array();
    for (const auto& r : table.rows) doc["rows"].push_back(row_json(r));
    doc["commentary"] = table.commentary;
    return doc.dump(2) + "\n";
  }
  std::string out;
  join(out, kTableColumns);
  for (const auto& r : table.rows) {
    std::vector<std::string> cells{std::to_string(r.bits), to_string(r.method)};
    if (!r.error.empty()) {
      cells.resize(kTableColumns.size());
      cells[kTableColumns.size() - 2] = csv_cell(r.error);
      join(out, cells);
      continue;
    }
    cells.push_back(fixed4(r.accuracy));
    const auto mc = metric_cells(r.metrics);
    cells.insert(cells.end(), mc.begin() + 1, mc.end());
    cells.push_back(std::to_string(r.metrics.repetitions));
    cells.push_back(std::to_string(r.metrics.failed_repetitions));
    cells.push_back(std::to_string(r.guard_stored_words));
    cells.push_back(std::to_string(r.guard_subtractors));
    cells.push_back(std::to_string(r.guard_mux_selects));
    cells.push_back(std::to_string(r.guard_logic_units));
    cells.push_back(fixed4(r.guard_overhead));
    cells.push_back(std::to_string(r.cycles.mac_ops));
    cells.push_back(std::to_string(r.cycles.cycles));
    cells.push_back(fixed4(r.giops));
    cells.push_back(opt4(r.reliability_improvement));
    cells.push_back(opt4(r.criticality_improvement));
    cells.emplace_back();
    cells.emplace_back();
    join(out, cells);
  }
  for (const auto& note : table.commentary) {
    std::vector<std::string> cells(kTableColumns.size());
    cells[1] = "reference";
    cells.back() = csv_cell(note);
    join(out, cells);
  }
  return out;
}

std::string render(const MetricsReport& report, EmitFormat format) {
  if (format == EmitFormat::json) {
    json doc;
    doc["model"] = metrics_json(report.model);
    doc["sdc5_k"] = report.sdc5_k;
    doc["layers"] = json::array();
    for (const auto& l : report.layers) {
      json lj = metrics_json(l.metrics);
      lj["layer"] = l.layer;
      lj["name"] = l.name;
      doc["layers"].push_back(std::move(lj));
    }
    return doc.dump(2) + "\n";
  }
  std::string out;
  join(out, kMetricsColumns);
  auto line = [&](const std::string& scope, const std::string& layer, const std::string& name, const Metrics& m) {
    std::vector<std::string> cells{scope, layer, csv_cell(name), std::to_string(m.repetitions),
                                   std::to_string(m.failed_repetitions)};
    const auto mc = metric_cells(m);
    cells.insert(cells.end(), mc.begin(), mc.end());
    cells.push_back(std::to_string(report.sdc5_k));
    join(out, cells);
  };
  line("model", "", "", report.model);
  for (const auto& l : report.layers) line("layer", std::to_string(l.layer), l.name, l.metrics);
  return out;
}

void emit(const DSETable& table, EmitFormat format, const std::filesystem::path& path) {
  write_file_atomic(path, render(table, format));
}

void emit(const MetricsReport& report, EmitFormat format, const std::filesystem::path& path) {
  write_file_atomic(path, render(report, format));
}

namespace {

const char* to_string(FaultMode m) { return m == FaultMode::persistent ? "persistent" : "per_input"; }

FaultMode fault_mode_from_string(const std::string& s) {
  if (s == "persistent") return FaultMode::persistent;
  if (s == "per_input") return FaultMode::per_input;
  fail(ErrorKind::format, "unknown fault mode '" + s + "'");
}

json site_json(const std::optional<FaultSite>& site) {
  if (!site) return nullptr;
  return {{"layer", site->layer}, {"activation_index", site->activation_index}, {"bit_positions", site->bit_positions}};
}

} // namespace

json campaign_json(const CampaignResult& r) {
  const CampaignConfig& c = r.config;
  json doc;
  doc["network"] = r.network;
  doc["bits"] = r.bits;
  doc["class_count"] = r.class_count;
  doc["config"] = {{"guard", sarel::to_string(c.guard)},
                   {"seed", c.seed},
                   {"k_bits", c.k_bits},
                   {"faults_enabled", c.faults_enabled},
                   {"mode", to_string(c.mode)},
                   {"array",
                    {{"rows", c.array.rows},
                     {"cols", c.array.cols},
                     {"clock_hz", c.array.clock_hz},
                     {"vector_width", c.array.vector_width}}},
                   {"mask",
                    {{"conv2d", c.mask.conv2d},
                     {"dense", c.mask.dense},
                     {"maxpool2x2", c.mask.maxpool2x2},
                     {"relu", c.mask.relu},
                     {"flatten", c.mask.flatten}}}};
  doc["plan"] = {{"population", r.plan.population},
                 {"t", r.plan.t},
                 {"error_margin", r.plan.error_margin},
                 {"p", r.plan.p},
                 {"n", r.plan.n}};
  doc["slice_size"] = r.slice_size;
  doc["golden_correct"] = r.golden_correct;
  doc["golden_accuracy"] = round4(100.0 * r.golden_accuracy());
  doc["cycles"] = {{"mac_ops", r.cycles.mac_ops},
                   {"cycles", r.cycles.cycles},
                   {"giops_estimate", round4(r.cycles.giops(c.array.clock_hz))}};
  doc["layer_names"] = r.layer_names;
  json reps = json::array();
  for (const auto& rep : r.repetitions) {
    json j{{"fault_site", site_json(rep.site)}};
    if (!rep.error.empty()) {
      j["error"] = rep.error;
    } else {
      j["correct"] = rep.correct;
      j["faulty_accuracy"] = round4(100.0 * rep.accuracy());
      j["sdc1_count"] = rep.sdc1;
      j["sdc5_count"] = rep.sdc5;
      j["sdc10_count"] = rep.sdc10;
      j["inputs_evaluated"] = rep.inputs_evaluated;
    }
    reps.push_back(std::move(j));
  }
  doc["repetitions"] = std::move(reps);
  try {
    const MetricsReport m = aggregate(r);
    json agg = metrics_json(m.model);
    agg["sdc5_k"] = m.sdc5_k;
    agg["layers"] = json::array();
    for (const auto& l : m.layers) {
      json lj = metrics_json(l.metrics);
      lj["layer"] = l.layer;
      lj["name"] = l.name;
      agg["layers"].push_back(std::move(lj));
    }
    doc["aggregates"] = std::move(agg);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::aggregation) throw;
    doc["aggregates"] = nullptr;
    doc["aggregation_error"] = e.what();
  }
  return doc;
}

CampaignResult campaign_from_json(const json& doc) {
  try {
    CampaignResult r;
    r.network = doc.at("network").get<std::string>();
    r.bits = doc.at("bits").get<int>();
    r.class_count = doc.at("class_count").get<std::size_t>();
    const json& c = doc.at("config");
    r.config.guard = guard_method_from_string(c.at("guard").get<std::string>());
    r.guard = r.config.guard;
    r.config.seed = c.at("seed").get<std::uint64_t>();
    r.config.k_bits = c.at("k_bits").get<int>();
    r.config.faults_enabled = c.at("faults_enabled").get<bool>();
    r.config.mode = fault_mode_from_string(c.at("mode").get<std::string>());
    const json& a = c.at("array");
    r.config.array.rows = a.at("rows").get<std::size_t>();
    r.config.array.cols = a.at("cols").get<std::size_t>();
    r.config.array.clock_hz = a.at("clock_hz").get<double>();
    r.config.array.vector_width = a.at("vector_width").get<std::size_t>();
    const json& m = c.at("mask");
    r.config.mask = {m.at("conv2d").get<bool>(), m.at("dense").get<bool>(), m.at("maxpool2x2").get<bool>(),
                     m.at("relu").get<bool>(), m.at("flatten").get<bool>()};
    const json& p = doc.at("plan");
    r.plan = {p.at("population").get<std::uint64_t>(), p.at("t").get<double>(), p.at("error_margin").get<double>(),
              p.at("p").get<double>(), p.at("n").get<std::uint64_t>()};
    r.slice_size = doc.at("slice_size").get<std::size_t>();
    r.golden_correct = doc.at("golden_correct").get<std::size_t>();
    r.cycles.mac_ops = doc.at("cycles").at("mac_ops").get<std::uint64_t>();
    r.cycles.cycles = doc.at("cycles").at("cycles").get<std::uint64_t>();
    r.layer_names = doc.at("layer_names").get<std::vector<std::string>>();
    for (const auto& j : doc.at("repetitions")) {
      RepetitionResult rep;
      if (!j.at("fault_site").is_null()) {
        const json& s = j["fault_site"];
        rep.site = FaultSite{s.at("layer").get<std::size_t>(), s.at("activation_index").get<std::size_t>(),
                             s.at("bit_positions").get<std::vector<int>>()};
      }
      if (j.contains("error")) {
        rep.error = j["error"].get<std::string>();
      } else {
        rep.correct = j.at("correct").get<std::size_t>();
        rep.sdc1 = j.at("sdc1_count").get<std::size_t>();
        rep.sdc5 = j.at("sdc5_count").get<std::size_t>();
        rep.sdc10 = j.at("sdc10_count").get<std::size_t>();
        rep.inputs_evaluated = j.at("inputs_evaluated").get<std::size_t>();
      }
      r.repetitions.push_back(std::move(rep));
    }
    return r;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("campaign result: ") + e.what());
  }
}

} // namespace sarel
