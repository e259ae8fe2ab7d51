#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sarel/fault.hpp"
#include "sarel/guard.hpp"
#include "sarel/netgraph.hpp"

namespace sarel {

/// Fault-free activations of one input, kept so faulty runs only recompute
/// what a fault actually disturbs.
struct GoldenTrace {
  std::vector<std::vector<std::int32_t>> layer_inputs; // size layers + 1 (last: final output)
  std::vector<std::vector<std::int64_t>> accumulators; // MAC layers: bias + dot product
  Prediction prediction;
};

/// Exact incremental re-execution of a network under one activation fault.
///
/// A flipped word only perturbs the outputs whose receptive field contains
/// it. The propagator applies weight * delta to the cached accumulators of
/// those outputs, re-requantizes and re-guards them, and carries only the
/// words that actually changed into the next layer. Integer arithmetic makes
/// this identical to a full re-run.
class FaultPropagator {
public:
  FaultPropagator(const Network& net, const GuardSpec& guard);

  GoldenTrace trace(const QTensor& input) const;

  // Final-layer output words under the fault. `changed` is set to false
  // when the fault was masked before reaching the output.
  const std::vector<std::int32_t>& run(const GoldenTrace& golden, const FaultSite& site, bool& changed);

private:
  struct Delta {
    std::size_t index;
    std::int32_t value;
  };

  void step(std::size_t layer, const GoldenTrace& golden);

  const Network& net_;
  GuardSpec guard_;
  std::vector<Shape> shapes_;
  std::vector<double> multipliers_;

  // Scratch, reused across calls.
  std::vector<Delta> current_, next_;
  std::vector<std::int64_t> acc_delta_;
  std::vector<std::uint32_t> touched_stamp_;
  std::vector<std::size_t> touched_;
  std::vector<std::vector<std::int32_t>> overlay_;
  std::vector<std::vector<std::uint32_t>> overlay_stamp_;
  std::uint32_t epoch_ = 0; // per run(): overlay validity
  std::uint32_t mark_ = 0;  // per step(): touched-output dedup
  std::vector<std::int32_t> final_;
};

} // namespace sarel
