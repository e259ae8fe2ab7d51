// sarel: command-line front end.
//
// Exit codes: 0 ok, 2 invalid input or configuration, 3 I/O failure,
// 4 internal error. Results go to stdout or --out; progress goes to stderr.

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sarel/error.hpp"
#include "sarel/faultlab.hpp"
#include "sarel/guard.hpp"
#include "sarel/io.hpp"
#include "sarel/netgraph.hpp"
#include "sarel/report.hpp"
#include "sarel/systolic.hpp"
#include "sarel/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sarel;

namespace {

int exit_code(ErrorKind k) {
  switch (k) {
  case ErrorKind::io: return 3;
  case ErrorKind::internal: return 4;
  default: return 2;
  }
}

std::size_t default_threads() {
  if (const char* env = std::getenv("SAREL_THREADS")) {
    std::size_t v = 0;
    const std::string s(env);
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || v == 0) {
      fail(ErrorKind::config, "SAREL_THREADS must be a positive integer, got '" + s + "'");
    }
    return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

fs::path manifest_path(const fs::path& model) { return fs::is_directory(model) ? model / "manifest.json" : model; }

// Flag echo, input digests and tool version. --threads and --out are left
// out: neither changes the content of an artifact.
class RunManifest {
public:
  explicit RunManifest(std::string command) : command_(std::move(command)) {}

  void flag(const std::string& name, const std::string& value) {
    flags_[name] = value;
    argv_.push_back("--" + name);
    argv_.push_back(value);
  }
  void flag(const std::string& name, const std::vector<std::string>& values) {
    flags_[name] = values;
    for (const auto& v : values) {
      argv_.push_back("--" + name);
      argv_.push_back(v);
    }
  }
  void input(const fs::path& path) { digests_[path.string()] = sha256_hex(read_file(path)); }
  void model(const fs::path& model) {
    const fs::path m = manifest_path(model);
    input(m);
    // Tensor files referenced by the manifest.
    const auto bytes = read_file(m);
    const json man = json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (man.is_object() && man.contains("layers") && man["layers"].is_array()) {
      for (const auto& l : man["layers"]) {
        for (const char* key : {"weight_file", "bias_file"}) {
          if (l.contains(key) && l[key].is_string()) input(m.parent_path() / l[key].get<std::string>());
        }
      }
    }
  }
  void seed(std::uint64_t s) { seed_ = s; }

  json to_json() const {
    json j{{"tool", "sarel"}, {"version", kVersion}, {"command", command_}, {"flags", flags_}, {"inputs", digests_}};
    j["argv"] = json::array({command_});
    for (const auto& a : argv_) j["argv"].push_back(a);
    if (seed_) j["seed"] = *seed_;
    return j;
  }

private:
  std::string command_;
  json flags_ = json::object();
  std::vector<std::string> argv_;
  std::map<std::string, std::string> digests_;
  std::optional<std::uint64_t> seed_;
};

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void write_sidecar(const fs::path& out, const RunManifest& m) {
  write_file_atomic(out.string() + ".manifest.json", dump(m.to_json()));
}

// "L:I:B(,B)*"
FaultSite parse_fault(const std::string& text) {
  auto bad = [&]() -> FaultSite { fail(ErrorKind::config, "fault '" + text + "' is not LAYER:INDEX:BIT[,BIT...]"); };
  const auto c1 = text.find(':');
  const auto c2 = c1 == std::string::npos ? c1 : text.find(':', c1 + 1);
  if (c2 == std::string::npos) return bad();
  auto number = [&](std::string_view s) -> std::size_t {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || p != s.data() + s.size()) bad();
    return v;
  };
  const std::string_view all(text);
  FaultSite site;
  site.layer = number(all.substr(0, c1));
  site.activation_index = number(all.substr(c1 + 1, c2 - c1 - 1));
  std::string_view bits = all.substr(c2 + 1);
  while (true) {
    const auto comma = bits.find(',');
    site.bit_positions.push_back(static_cast<int>(number(bits.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    bits = bits.substr(comma + 1);
  }
  std::sort(site.bit_positions.begin(), site.bit_positions.end());
  if (std::adjacent_find(site.bit_positions.begin(), site.bit_positions.end()) != site.bit_positions.end()) {
    fail(ErrorKind::config, "fault '" + text + "' repeats a bit");
  }
  return site;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_bits_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split(s, ',')) {
    int v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || p != item.data() + item.size()) fail(ErrorKind::config, "bad bit width '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) fail(ErrorKind::config, "empty bit-width list");
  return out;
}

void check_cli_bits(int bits) {
  if (bits < 4 || bits > 16) fail(ErrorKind::config, "bit width must lie in [4, 16], got " + std::to_string(bits));
}

KindMask parse_mask(const std::string& s) {
  KindMask m{false, false, false, false, false};
  for (const auto& item : split(s, ',')) {
    switch (layer_kind_from_string(item)) {
    case LayerKind::conv2d: m.conv2d = true; break;
    case LayerKind::dense: m.dense = true; break;
    case LayerKind::maxpool2x2: m.maxpool2x2 = true; break;
    case LayerKind::relu: m.relu = true; break;
    case LayerKind::flatten: m.flatten = true; break;
    }
  }
  return m;
}

// Model at the requested width plus a dataset on that model's input grid.
struct Loaded {
  Network net;
  LabeledSet data;
};

Network model_at(const fs::path& model, std::optional<int> bits) {
  Network net = load_model(manifest_path(model));
  if (bits) net = requantize_network(net, *bits);
  return net;
}

LabeledSet data_for(const Network& net, const fs::path& path) {
  return rebase(load_dataset(path), net.data_params, net.input_params);
}

struct Common {
  std::string model, data, out;
  std::size_t rows = 8, cols = 8;
  double clock_hz = 100e6;
  std::size_t threads = 0;
};

ArrayConfig array_of(const Common& c) {
  ArrayConfig a;
  a.rows = c.rows;
  a.cols = c.cols;
  a.clock_hz = c.clock_hz;
  a.validate();
  return a;
}

void progress(const std::string& msg) { std::cerr << msg << std::endl; }

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fault-injection and range-check laboratory for quantized networks on a systolic-array model"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // quantize
  Common q;
  int q_bits = 0;
  auto* quantize = app.add_subcommand("quantize", "Requantize a model to another bit width");
  quantize->add_option("--model", q.model, "Model directory or manifest")->required();
  quantize->add_option("--bits", q_bits, "Target width, 4..16")->required();
  quantize->add_option("--out", q.out, "Output directory")->required();
  quantize->add_option("--data", q.data, "Dataset to report accuracy on");

  // ranges
  Common r;
  std::string r_test;
  std::optional<int> r_bits;
  auto* ranges = app.add_subcommand("ranges", "Extract per-layer activation bounds from a validation set");
  ranges->add_option("--model", r.model)->required();
  ranges->add_option("--data", r.data, "Validation set (QDS1)")->required();
  ranges->add_option("--bits", r_bits, "Requantize first");
  ranges->add_option("--test", r_test, "Report out-of-bound fractions on this set");
  ranges->add_option("--out", r.out, "Bounds file")->required();

  // infer
  Common inf;
  std::string inf_input, inf_guard = "none", inf_bounds;
  std::size_t inf_sample = 0;
  std::optional<int> inf_bits;
  std::vector<std::string> inf_faults;
  auto* infer = app.add_subcommand("infer", "Run one inference on the systolic-array model");
  infer->add_option("--model", inf.model)->required();
  infer->add_option("--input", inf_input, "QDS1 dataset or raw little-endian int32 tensor")->required();
  infer->add_option("--sample", inf_sample, "Sample index for dataset inputs");
  infer->add_option("--bits", inf_bits, "Requantize first");
  infer->add_option("--rows", inf.rows, "Array rows");
  infer->add_option("--cols", inf.cols, "Array columns");
  infer->add_option("--clock", inf.clock_hz, "Clock in Hz");
  infer->add_option("--fault", inf_faults, "LAYER:INDEX:BIT[,BIT...], repeatable");
  infer->add_option("--guard", inf_guard, "none, m1, m2 or m3");
  infer->add_option("--bounds", inf_bounds, "Bounds file for --guard");

  // campaign
  Common c;
  std::optional<int> c_bits;
  std::string c_guard = "none", c_bounds, c_mode = "persistent", c_mask = "conv2d,dense,maxpool2x2,relu";
  double c_conf = 0.95, c_err = 0.01, c_p = 0.5;
  std::uint64_t c_seed = 1;
  int c_k = 1;
  std::optional<std::uint64_t> c_reps;
  bool c_no_faults = false;
  auto* campaign = app.add_subcommand("campaign", "Statistical fault-injection campaign");
  campaign->add_option("--model", c.model)->required();
  campaign->add_option("--data", c.data, "Evaluation slice (QDS1)")->required();
  campaign->add_option("--bits", c_bits, "Requantize first");
  campaign->add_option("--guard", c_guard, "none, m1, m2 or m3");
  campaign->add_option("--bounds", c_bounds, "Bounds file, required with --guard");
  campaign->add_option("--confidence", c_conf, "Confidence level");
  campaign->add_option("--error", c_err, "Error margin");
  campaign->add_option("--p", c_p, "Assumed failure probability");
  campaign->add_option("--repetitions", c_reps, "Fixed repetition count instead of the statistical size");
  campaign->add_option("--seed", c_seed, "Campaign seed");
  campaign->add_option("--k-bits", c_k, "Bits flipped per fault");
  campaign->add_option("--mode", c_mode, "persistent or per_input");
  campaign->add_option("--mask", c_mask, "Layer kinds whose inputs are injectable");
  campaign->add_flag("--no-faults", c_no_faults, "Golden-only campaign");
  campaign->add_option("--rows", c.rows);
  campaign->add_option("--cols", c.cols);
  campaign->add_option("--clock", c.clock_hz);
  campaign->add_option("--threads", c.threads, "Worker threads (default: SAREL_THREADS or all cores)");
  campaign->add_option("--out", c.out, "Result file")->required();

  // sweep
  Common s;
  std::string s_val, s_bits = "8,7,6,5,4", s_methods = "none,m1,m2,m3", s_format = "csv", s_baseline = "none";
  std::string s_mask = "conv2d,dense,maxpool2x2,relu";
  double s_conf = 0.95, s_err = 0.01, s_p = 0.5;
  std::uint64_t s_seed = 1;
  int s_k = 1;
  std::optional<std::uint64_t> s_reps;
  auto* sweep_cmd = app.add_subcommand("sweep", "Design-space sweep over bit widths and guard methods");
  sweep_cmd->add_option("--model", s.model)->required();
  sweep_cmd->add_option("--data", s.data, "Evaluation slice (QDS1)")->required();
  sweep_cmd->add_option("--val", s_val, "Range-extraction set (default: --data)");
  sweep_cmd->add_option("--bits", s_bits, "Comma-separated widths");
  sweep_cmd->add_option("--methods", s_methods, "Comma-separated guard methods");
  sweep_cmd->add_option("--baseline", s_baseline, "METHOD or BITS:METHOD row used for improvement columns");
  sweep_cmd->add_option("--confidence", s_conf);
  sweep_cmd->add_option("--error", s_err);
  sweep_cmd->add_option("--p", s_p);
  sweep_cmd->add_option("--repetitions", s_reps);
  sweep_cmd->add_option("--seed", s_seed);
  sweep_cmd->add_option("--k-bits", s_k);
  sweep_cmd->add_option("--mask", s_mask);
  sweep_cmd->add_option("--rows", s.rows);
  sweep_cmd->add_option("--cols", s.cols);
  sweep_cmd->add_option("--clock", s.clock_hz);
  sweep_cmd->add_option("--threads", s.threads);
  sweep_cmd->add_option("--format", s_format, "csv or json");
  sweep_cmd->add_option("--out", s.out)->required();

  // report
  std::string rp_in, rp_format = "csv", rp_out;
  auto* report_cmd = app.add_subcommand("report", "Aggregate a campaign result file");
  report_cmd->add_option("--in", rp_in)->required();
  report_cmd->add_option("--format", rp_format, "csv or json");
  report_cmd->add_option("--out", rp_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*quantize) {
      check_cli_bits(q_bits);
      const Network src = load_model(manifest_path(q.model));
      const Network net = requantize_network(src, q_bits);
      std::optional<double> acc;
      if (!q.data.empty()) acc = evaluate(net, data_for(net, q.data));
      RunManifest m("quantize");
      m.flag("model", q.model);
      m.flag("bits", std::to_string(q_bits));
      m.model(q.model);
      if (!q.data.empty()) {
        m.flag("data", q.data);
        m.input(q.data);
      }
      save_model(net, q.out);
      write_file_atomic(fs::path(q.out) / "run_manifest.json", dump(m.to_json()));
      json outj{{"bits", q_bits}, {"model", (fs::path(q.out) / "manifest.json").string()}};
      if (acc) {
        outj["accuracy_pct"] = round4(100.0 * *acc);
        outj["source_bits"] = src.input_params.bits;
        outj["source_accuracy_pct"] = round4(100.0 * evaluate(src, data_for(src, q.data)));
      }
      std::cout << outj.dump() << "\n";
      return 0;
    }

    if (*ranges) {
      if (r_bits) check_cli_bits(*r_bits);
      const Network net = model_at(r.model, r_bits);
      const auto bounds = extract_ranges(net, data_for(net, r.data));
      json outj{{"layers", bounds.size()}};
      RunManifest m("ranges");
      m.flag("model", r.model);
      m.flag("data", r.data);
      if (r_bits) m.flag("bits", std::to_string(*r_bits));
      m.model(r.model);
      m.input(r.data);
      if (!r_test.empty()) {
        m.flag("test", r_test);
        m.input(r_test);
        const auto cov = validate_ranges(bounds, net, data_for(net, r_test));
        outj["coverage"] = json::array();
        for (const auto& l : cov.layers) {
          outj["coverage"].push_back({{"layer", l.layer},
                                      {"name", net.layers[l.layer].name},
                                      {"out_of_range_pct", round4(100.0 * l.fraction())}});
        }
      }
      write_file_atomic(r.out, bounds_json(bounds));
      write_sidecar(r.out, m);
      std::cout << outj.dump() << "\n";
      return 0;
    }

    if (*infer) {
      if (inf_bits) check_cli_bits(*inf_bits);
      const Network net = model_at(inf.model, inf_bits);
      const ArrayConfig cfg = array_of(inf);
      std::vector<FaultSite> faults;
      for (const auto& f : inf_faults) {
        faults.push_back(parse_fault(f));
        check_fault_site(net, faults.back());
      }
      GuardSpec guard;
      const GuardMethod method = guard_method_from_string(inf_guard);
      if (method != GuardMethod::none) {
        if (inf_bounds.empty()) fail(ErrorKind::config, "--guard needs --bounds");
        guard = make_guard(net, method, load_bounds(inf_bounds));
      }
      const auto bytes = read_file(inf_input);
      QTensor input;
      std::optional<int> label;
      if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "QDS1")) {
        const LabeledSet set = rebase(decode_dataset(bytes, inf_input), net.data_params, net.input_params);
        if (inf_sample >= set.size()) {
          fail(ErrorKind::input, "sample " + std::to_string(inf_sample) + " outside dataset of " +
                                     std::to_string(set.size()));
        }
        input = input_tensor(net, set.samples[inf_sample]);
        label = set.samples[inf_sample].label;
      } else {
        if (bytes.size() != element_count(net.input_shape) * 4) {
          fail(ErrorKind::input, "raw input holds " + std::to_string(bytes.size()) + " bytes, model expects " +
                                     std::to_string(element_count(net.input_shape) * 4));
        }
        std::vector<std::int32_t> words(bytes.size() / 4);
        for (std::size_t i = 0; i < words.size(); ++i) {
          std::uint32_t v = 0;
          for (int b = 3; b >= 0; --b) v = (v << 8) | bytes[4 * i + static_cast<std::size_t>(b)];
          words[i] = static_cast<std::int32_t>(v);
        }
        input = QTensor(net.input_shape, std::move(words), net.input_params);
      }
      const NetworkRun run = run_network(net, input, cfg, faults, &guard);
      json outj{{"top1", run.prediction.top1},
                {"logits", run.prediction.logits},
                {"confidences", run.prediction.confidences},
                {"output_words", std::vector<std::int32_t>(run.layer_outputs.back().data().begin(),
                                                           run.layer_outputs.back().data().end())},
                {"mac_ops", run.cycles.mac_ops},
                {"cycles", run.cycles.cycles},
                {"giops_estimate", round4(run.cycles.giops(cfg.clock_hz))}};
      if (label) outj["label"] = *label;
      std::cout << outj.dump() << "\n";
      return 0;
    }

    if (*campaign) {
      if (c_bits) check_cli_bits(*c_bits);
      const Network net = model_at(c.model, c_bits);
      const LabeledSet data = data_for(net, c.data);
      CampaignConfig cfg;
      cfg.guard = guard_method_from_string(c_guard);
      cfg.array = array_of(c);
      cfg.seed = c_seed;
      cfg.k_bits = c_k;
      cfg.threads = c.threads ? c.threads : default_threads();
      cfg.faults_enabled = !c_no_faults;
      if (c_mode == "persistent") cfg.mode = FaultMode::persistent;
      else if (c_mode == "per_input") cfg.mode = FaultMode::per_input;
      else fail(ErrorKind::config, "--mode must be persistent or per_input");
      cfg.mask = parse_mask(c_mask);
      std::optional<std::vector<LayerBounds>> bounds;
      if (cfg.guard != GuardMethod::none) {
        if (c_bounds.empty()) fail(ErrorKind::config, "--guard needs --bounds");
        bounds = load_bounds(c_bounds);
      }
      SamplingPlan plan = SamplingPlan::make(population_size(net, net.input_params.bits, cfg.mask),
                                             normal_quantile(c_conf), c_err, c_p);
      if (c_reps) {
        if (*c_reps == 0) fail(ErrorKind::config, "--repetitions must be positive");
        plan.n = *c_reps;
      }
      if (c_no_faults && !c_reps) plan.n = 1;

      RunManifest m("campaign");
      m.flag("model", c.model);
      m.flag("data", c.data);
      if (c_bits) m.flag("bits", std::to_string(*c_bits));
      m.flag("guard", c_guard);
      if (!c_bounds.empty()) {
        m.flag("bounds", c_bounds);
        m.input(c_bounds);
      }
      m.flag("confidence", fmt_double(c_conf));
      m.flag("error", fmt_double(c_err));
      m.flag("p", fmt_double(c_p));
      if (c_reps) m.flag("repetitions", std::to_string(*c_reps));
      m.flag("seed", std::to_string(c_seed));
      m.flag("k-bits", std::to_string(c_k));
      m.flag("mode", c_mode);
      m.flag("mask", c_mask);
      if (c_no_faults) m.flag("no-faults", std::vector<std::string>{});
      m.flag("rows", std::to_string(c.rows));
      m.flag("cols", std::to_string(c.cols));
      m.flag("clock", fmt_double(c.clock_hz));
      m.seed(c_seed);
      m.model(c.model);
      m.input(c.data);

      progress("campaign: " + std::to_string(plan.n) + " repetitions over " + std::to_string(data.size()) +
               " inputs, population " + std::to_string(plan.population) + ", " + std::to_string(cfg.threads) +
               " threads");
      const CampaignResult result = run_campaign(net, data, cfg, plan, bounds ? &*bounds : nullptr);
      json doc = campaign_json(result);
      doc["run_manifest"] = m.to_json();
      write_file_atomic(c.out, dump(doc));
      std::cout << json{{"out", c.out}, {"aggregates", doc["aggregates"]}}.dump() << "\n";
      return 0;
    }

    if (*sweep_cmd) {
      SweepParams params;
      params.bit_widths = parse_bits_list(s_bits);
      for (int b : params.bit_widths) check_cli_bits(b);
      for (const auto& mth : split(s_methods, ',')) params.methods.push_back(guard_method_from_string(mth));
      if (params.methods.empty()) fail(ErrorKind::config, "empty method list");
      const auto colon = s_baseline.find(':');
      if (colon != std::string::npos) {
        params.baseline.bits = parse_bits_list(s_baseline.substr(0, colon)).front();
        params.baseline.method = guard_method_from_string(s_baseline.substr(colon + 1));
      } else {
        params.baseline.method = guard_method_from_string(s_baseline);
      }
      const EmitFormat format = emit_format_from_string(s_format);
      params.campaign.array = array_of(s);
      params.campaign.seed = s_seed;
      params.campaign.k_bits = s_k;
      params.campaign.threads = s.threads ? s.threads : default_threads();
      params.campaign.mask = parse_mask(s_mask);
      params.t = normal_quantile(s_conf);
      params.error_margin = s_err;
      params.p = s_p;
      params.repetitions = s_reps;
      params.progress = progress;

      const Network src = load_model(manifest_path(s.model));
      const LabeledSet test = load_dataset(s.data);
      const LabeledSet val = s_val.empty() ? test : load_dataset(s_val);

      RunManifest m("sweep");
      m.flag("model", s.model);
      m.flag("data", s.data);
      if (!s_val.empty()) m.flag("val", s_val);
      m.flag("bits", s_bits);
      m.flag("methods", s_methods);
      m.flag("baseline", s_baseline);
      m.flag("confidence", fmt_double(s_conf));
      m.flag("error", fmt_double(s_err));
      m.flag("p", fmt_double(s_p));
      if (s_reps) m.flag("repetitions", std::to_string(*s_reps));
      m.flag("seed", std::to_string(s_seed));
      m.flag("k-bits", std::to_string(s_k));
      m.flag("mask", s_mask);
      m.flag("rows", std::to_string(s.rows));
      m.flag("cols", std::to_string(s.cols));
      m.flag("clock", fmt_double(s.clock_hz));
      m.flag("format", s_format);
      m.seed(s_seed);
      m.model(s.model);
      m.input(s.data);
      if (!s_val.empty()) m.input(s_val);

      const DSETable table = sweep(src, val, test, params);
      if (format == EmitFormat::json) {
        json doc = json::parse(render(table, format));
        doc["run_manifest"] = m.to_json();
        write_file_atomic(s.out, dump(doc));
      } else {
        emit(table, format, s.out);
        write_sidecar(s.out, m);
      }
      std::size_t failed = 0;
      for (const auto& row : table.rows) failed += !row.error.empty();
      std::cout << json{{"out", s.out}, {"rows", table.rows.size()}, {"failed_cells", failed}}.dump() << "\n";
      return 0;
    }

    if (*report_cmd) {
      const EmitFormat format = emit_format_from_string(rp_format);
      const auto bytes = read_file(rp_in);
      json doc;
      try {
        doc = json::parse(bytes.begin(), bytes.end());
      } catch (const json::exception& e) {
        fail(ErrorKind::format, rp_in + ": " + e.what());
      }
      const MetricsReport metrics = aggregate(campaign_from_json(doc));
      RunManifest m("report");
      m.flag("in", rp_in);
      m.flag("format", rp_format);
      m.input(rp_in);
      if (format == EmitFormat::json) {
        json out = json::parse(render(metrics, format));
        out["run_manifest"] = m.to_json();
        write_file_atomic(rp_out, dump(out));
      } else {
        emit(metrics, format, rp_out);
        write_sidecar(rp_out, m);
      }
      std::cout << json{{"out", rp_out}}.dump() << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << std::endl;
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << std::endl;
    return 4;
  }
  return 4;
}
