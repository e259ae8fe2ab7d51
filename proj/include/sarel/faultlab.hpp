#pragma once

/**
 * Statistical fault-injection campaigns.
 *
 * The fault population is every (stored activation word, bit) pair of the
 * layer inputs selected by the kind mask: N = words * b. The number of
 * repetitions follows the finite-population sample size
 *
 *   n = ceil( N / (1 + e^2 (N - 1) / (t^2 p (1 - p))) )
 *
 * Each repetition draws one site uniformly over the population, keeps it
 * for the whole dataset slice and compares every faulty prediction against
 * the fault-free one.
 */

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sarel/fault.hpp"
#include "sarel/guard.hpp"
#include "sarel/netgraph.hpp"
#include "sarel/systolic.hpp"

namespace sarel {

// Which layer inputs count as injectable buffers.
struct KindMask {
  bool conv2d = true;
  bool dense = true;
  bool maxpool2x2 = true;
  bool relu = true;
  bool flatten = false; // a flatten input is the same buffer as its output

  bool includes(LayerKind k) const;
};

std::size_t population_size(const Network& net, int bits, const KindMask& mask = {});

// Two-sided standard-normal quantile for a confidence level, rounded to two
// decimals as in the usual fault-injection sizing tables (0.95 -> 1.96).
double normal_quantile(double confidence);

struct SamplingPlan {
  std::uint64_t population = 0;
  double t = 1.96;
  double error_margin = 0.01;
  double p = 0.5;
  std::uint64_t n = 0;

  // Fills n from the other fields.
  static SamplingPlan make(std::uint64_t population, double t = 1.96, double error_margin = 0.01, double p = 0.5);
};

std::uint64_t sample_size(const SamplingPlan& plan);

// Deterministic random stream for repetition `index` of a campaign seeded
// with `seed`; independent of thread scheduling.
std::mt19937_64 repetition_stream(std::uint64_t seed, std::uint64_t index);

// Uniform integer in [0, bound) by rejection; portable across standard
// library implementations.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound);

FaultSite sample_fault(std::mt19937_64& rng, const Network& net, int bits, int k, const KindMask& mask = {});

enum class FaultMode {
  persistent, // one site for the whole slice
  per_input,  // a fresh site for every input
};

struct CampaignConfig {
  GuardMethod guard = GuardMethod::none;
  ArrayConfig array;
  std::uint64_t seed = 1;
  int k_bits = 1;
  std::size_t threads = 1;
  bool faults_enabled = true;
  FaultMode mode = FaultMode::persistent;
  KindMask mask;
};

struct RepetitionResult {
  std::optional<FaultSite> site; // empty when faults are disabled or per-input
  std::size_t correct = 0;
  std::size_t inputs_evaluated = 0;
  std::size_t sdc1 = 0;
  std::size_t sdc5 = 0;
  std::size_t sdc10 = 0;
  std::string error; // non-empty: infrastructure failure, excluded from metrics

  double accuracy() const {
    return inputs_evaluated ? static_cast<double>(correct) / static_cast<double>(inputs_evaluated) : 0.0;
  }
};

struct CampaignResult {
  std::string network;
  int bits = 0;
  GuardMethod guard = GuardMethod::none;
  std::size_t class_count = 0;
  std::size_t slice_size = 0;
  std::size_t golden_correct = 0;
  CycleReport cycles; // per inference
  SamplingPlan plan;
  CampaignConfig config;
  std::vector<std::string> layer_names;
  std::vector<RepetitionResult> repetitions;

  double golden_accuracy() const {
    return slice_size ? static_cast<double>(golden_correct) / static_cast<double>(slice_size) : 0.0;
  }
};

// bounds are required when cfg.guard != none. The network must already be
// at the campaign width; the slice must be in the network's input domain.
CampaignResult run_campaign(const Network& net, const LabeledSet& slice, const CampaignConfig& cfg,
                            const SamplingPlan& plan, const std::vector<LayerBounds>* bounds = nullptr);

} // namespace sarel
