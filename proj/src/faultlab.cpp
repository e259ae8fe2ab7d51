#include "sarel/faultlab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include "sarel/error.hpp"
#include "sarel/propagate.hpp"
#include "sarel/report.hpp"

namespace sarel {

bool KindMask::includes(LayerKind k) const {
  switch (k) {
  case LayerKind::conv2d: return conv2d;
  case LayerKind::dense: return dense;
  case LayerKind::maxpool2x2: return maxpool2x2;
  case LayerKind::relu: return relu;
  case LayerKind::flatten: return flatten;
  }
  return false;
}

namespace {

// Injectable words per layer input (0 for masked layers).
std::vector<std::size_t> injectable_words(const Network& net, const KindMask& mask) {
  const auto shapes = net.layer_shapes();
  std::vector<std::size_t> words(net.layers.size(), 0);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (mask.includes(net.layers[i].kind)) words[i] = element_count(shapes[i]);
  }
  return words;
}

} // namespace

std::size_t population_size(const Network& net, int bits, const KindMask& mask) {
  std::size_t total = 0;
  for (auto w : injectable_words(net, mask)) total += w;
  return total * static_cast<std::size_t>(bits);
}

double normal_quantile(double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0)) fail(ErrorKind::config, "confidence must lie in (0, 1)");
  // Solve erf(z / sqrt(2)) = confidence by bisection.
  double lo = 0.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (std::erf(mid / std::sqrt(2.0)) < confidence) lo = mid; else hi = mid;
  }
  return std::round(0.5 * (lo + hi) * 100.0) / 100.0;
}

SamplingPlan SamplingPlan::make(std::uint64_t population, double t, double error_margin, double p) {
  SamplingPlan plan{population, t, error_margin, p, 0};
  plan.n = sample_size(plan);
  return plan;
}

std::uint64_t sample_size(const SamplingPlan& plan) {
  if (plan.population == 0) fail(ErrorKind::config, "fault population is empty");
  if (!(plan.error_margin > 0.0 && plan.error_margin < 1.0)) fail(ErrorKind::config, "error margin must lie in (0, 1)");
  if (!(plan.p > 0.0 && plan.p < 1.0)) fail(ErrorKind::config, "p must lie in (0, 1)");
  if (!(plan.t > 0.0)) fail(ErrorKind::config, "t must be positive");
  const long double N = static_cast<long double>(plan.population);
  const long double e = plan.error_margin, t = plan.t, p = plan.p;
  const long double n = N / (1.0L + e * e * (N - 1.0L) / (t * t * p * (1.0L - p)));
  const auto rounded = static_cast<std::uint64_t>(std::ceil(n));
  return std::clamp<std::uint64_t>(rounded, 1, plan.population);
}

std::mt19937_64 repetition_stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  if (bound == 0) fail(ErrorKind::config, "empty range");
  const std::uint64_t threshold = (0 - bound) % bound; // 2^64 mod bound
  for (;;) {
    const std::uint64_t x = rng();
    if (x >= threshold) return x % bound;
  }
}

FaultSite sample_fault(std::mt19937_64& rng, const Network& net, int bits, int k, const KindMask& mask) {
  if (k < 1 || k > bits) fail(ErrorKind::config, "bits per fault must lie in [1, " + std::to_string(bits) + "]");
  const auto words = injectable_words(net, mask);
  std::uint64_t total = 0;
  for (auto w : words) total += w;
  if (total == 0) fail(ErrorKind::config, "no injectable activations under the layer mask");

  std::uint64_t pick = uniform_below(rng, total);
  FaultSite site;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (pick < words[i]) {
      site.layer = i;
      site.activation_index = pick;
      break;
    }
    pick -= words[i];
  }
  // k distinct bits: partial Fisher-Yates over [0, bits).
  std::vector<int> pool(static_cast<std::size_t>(bits));
  for (int b = 0; b < bits; ++b) pool[static_cast<std::size_t>(b)] = b;
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(i) + uniform_below(rng, static_cast<std::uint64_t>(bits - i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  site.bit_positions.assign(pool.begin(), pool.begin() + k);
  std::sort(site.bit_positions.begin(), site.bit_positions.end());
  return site;
}

namespace {

template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(0, i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < count; i = next++) fn(w, i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct Tally {
  std::size_t correct = 0, sdc1 = 0, sdc5 = 0, sdc10 = 0;
};

void score(const Network& net, const std::vector<std::int32_t>& final_words, bool changed, const GoldenTrace& golden,
           std::uint8_t label, Tally& tally) {
  if (!changed) {
    if (golden.prediction.top1 == label) ++tally.correct;
    return;
  }
  QTensor out({final_words.size()}, final_words, net.layers.back().out_params);
  const Prediction faulty = make_prediction(out);
  if (faulty.top1 == label) ++tally.correct;
  const OutcomeFlags f = classify_outcome(golden.prediction, faulty);
  tally.sdc1 += f.sdc1;
  tally.sdc5 += f.sdc5;
  tally.sdc10 += f.sdc10;
}

} // namespace

CampaignResult run_campaign(const Network& net, const LabeledSet& slice, const CampaignConfig& cfg,
                            const SamplingPlan& plan, const std::vector<LayerBounds>* bounds) {
  if (slice.empty()) fail(ErrorKind::input, "campaign needs a non-empty dataset slice");
  cfg.array.validate();
  for (const auto& s : slice.samples) {
    if (s.label >= net.class_count) fail(ErrorKind::input, "label " + std::to_string(s.label) + " >= class count");
  }
  GuardSpec guard;
  if (cfg.guard != GuardMethod::none) {
    if (!bounds) fail(ErrorKind::config, "guarded campaign needs layer bounds");
    guard = make_guard(net, cfg.guard, *bounds);
  }
  const int bits = net.input_params.bits;
  if (cfg.k_bits < 1 || cfg.k_bits > bits) fail(ErrorKind::config, "bits per fault outside [1, word width]");

  CampaignResult result;
  result.network = net.name;
  result.bits = bits;
  result.guard = cfg.guard;
  result.class_count = net.class_count;
  result.slice_size = slice.size();
  result.plan = plan;
  result.config = cfg;
  for (const auto& l : net.layers) result.layer_names.push_back(l.name);

  // Golden traces, one per input.
  std::vector<QTensor> inputs;
  inputs.reserve(slice.size());
  for (const auto& s : slice.samples) inputs.push_back(input_tensor(net, s));
  FaultPropagator tracer(net, guard);
  std::vector<GoldenTrace> golden(slice.size());
  parallel_for(slice.size(), cfg.threads, [&](std::size_t, std::size_t i) { golden[i] = tracer.trace(inputs[i]); });
  for (std::size_t i = 0; i < slice.size(); ++i) {
    if (golden[i].prediction.top1 == slice.samples[i].label) ++result.golden_correct;
  }

  // Cycle accounting is input-independent; one systolic run also
  // cross-checks the cached traces.
  const NetworkRun array_run = run_network(net, inputs.front(), cfg.array, {}, &guard);
  if (array_run.prediction != golden.front().prediction) {
    fail(ErrorKind::internal, "systolic execution disagrees with the golden trace");
  }
  result.cycles = array_run.cycles;

  result.repetitions.resize(plan.n);
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(cfg.threads, plan.n));
  std::vector<FaultPropagator> engines;
  engines.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) engines.emplace_back(net, guard);

  parallel_for(plan.n, workers, [&](std::size_t w, std::size_t rep) {
    RepetitionResult& r = result.repetitions[rep];
    try {
      auto rng = repetition_stream(cfg.seed, rep);
      Tally tally;
      std::optional<FaultSite> site;
      if (cfg.faults_enabled && cfg.mode == FaultMode::persistent) {
        site = sample_fault(rng, net, bits, cfg.k_bits, cfg.mask);
        check_fault_site(net, *site);
      }
      for (std::size_t i = 0; i < slice.size(); ++i) {
        if (!cfg.faults_enabled) {
          score(net, golden[i].layer_inputs.back(), false, golden[i], slice.samples[i].label, tally);
          continue;
        }
        const FaultSite here = site ? *site : sample_fault(rng, net, bits, cfg.k_bits, cfg.mask);
        bool changed = false;
        const auto& words = engines[w].run(golden[i], here, changed);
        score(net, words, changed, golden[i], slice.samples[i].label, tally);
      }
      r.site = cfg.mode == FaultMode::persistent ? site : std::nullopt;
      r.correct = tally.correct;
      r.sdc1 = tally.sdc1;
      r.sdc5 = tally.sdc5;
      r.sdc10 = tally.sdc10;
      r.inputs_evaluated = slice.size();
    } catch (const Error& e) {
      r = RepetitionResult{};
      r.error = std::string(to_string(e.kind())) + ": " + e.what();
    }
  });
  return result;
}

} // namespace sarel
