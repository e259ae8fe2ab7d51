#include <random>

#include "oracle.hpp"
#include "sarel/faultlab.hpp"
#include "sarel/propagate.hpp"
#include "testing.hpp"

using namespace sarel;

namespace {

std::vector<std::int32_t> words(const QTensor& t) { return {t.data().begin(), t.data().end()}; }

// Bounds over a handful of random inputs, then narrowed so the guard
// actually fires on some fault-free values too.
std::vector<LayerBounds> random_bounds(std::mt19937_64& rng, const Network& net) {
  LabeledSet set;
  for (int i = 0; i < 4; ++i) {
    const QTensor x = oracle::random_input(rng, net);
    set.samples.push_back({0, words(x)});
  }
  auto b = extract_ranges(net, set);
  for (auto& lb : b) {
    if (rng() % 2 && lb.upper > lb.lower) lb.upper -= (lb.upper - lb.lower) / 4;
  }
  return b;
}

void check_equivalence(const Network& net, const GuardSpec& guard, const QTensor& x, std::mt19937_64& rng,
                       int faults) {
  FaultPropagator prop(net, guard);
  const GoldenTrace golden = prop.trace(x);
  ArrayConfig cfg;
  cfg.rows = 4;
  cfg.cols = 4;
  const NetworkRun plain = run_network(net, x, cfg, {}, &guard);
  ASSERT_EQ(golden.prediction, plain.prediction);
  ASSERT_EQ(golden.layer_inputs.back(), words(plain.layer_outputs.back()));
  const int bits = net.input_params.bits;
  for (int f = 0; f < faults; ++f) {
    const FaultSite site = sample_fault(rng, net, bits, 1 + static_cast<int>(rng() % 3), KindMask{true, true, true, true, true});
    bool changed = true;
    const auto& out = prop.run(golden, site, changed);
    const NetworkRun ref = run_network(net, x, cfg, std::vector<FaultSite>{site}, &guard);
    ASSERT_EQ(out, words(ref.layer_outputs.back()))
        << "layer " << site.layer << " index " << site.activation_index;
    if (!changed) {
      ASSERT_EQ(out, golden.layer_inputs.back());
    }
  }
}

} // namespace

TEST(FaultPropagator, MatchesFullRerunUnguarded) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const Network net = oracle::random_network(rng);
    check_equivalence(net, GuardSpec{}, oracle::random_input(rng, net), rng, 25);
  }
}

TEST(FaultPropagator, MatchesFullRerunGuarded) {
  std::mt19937_64 rng(32);
  const GuardMethod methods[] = {GuardMethod::method1, GuardMethod::method2, GuardMethod::method3};
  for (int trial = 0; trial < 40; ++trial) {
    const Network net = oracle::random_network(rng);
    const GuardSpec guard = make_guard(net, methods[trial % 3], random_bounds(rng, net));
    check_equivalence(net, guard, oracle::random_input(rng, net), rng, 25);
  }
}

TEST(FaultPropagator, MatchesFullRerunOnLenet) {
  const Network net = requantize_network(testing_support::lenet(), 6);
  const LabeledSet val = rebase(testing_support::validation_set(), net.data_params, net.input_params);
  LabeledSet few;
  few.samples.assign(val.samples.begin(), val.samples.begin() + 50);
  const auto bounds = extract_ranges(net, few);
  std::mt19937_64 rng(33);
  for (auto m : {GuardMethod::none, GuardMethod::method1, GuardMethod::method3}) {
    const GuardSpec guard = m == GuardMethod::none ? GuardSpec{} : make_guard(net, m, bounds);
    for (int i = 0; i < 3; ++i) check_equivalence(net, guard, input_tensor(net, few.samples[static_cast<std::size_t>(i)]), rng, 30);
  }
}

TEST(FaultPropagator, TraceMatchesReferencePath) {
  const Network& net = testing_support::lenet();
  FaultPropagator prop(net, GuardSpec{});
  const auto& s = testing_support::test_set().samples[3];
  const QTensor x = input_tensor(net, s);
  const GoldenTrace g = prop.trace(x);
  EXPECT_EQ(g.prediction, reference_infer(net, x));
  EXPECT_EQ(g.layer_inputs.size(), net.layers.size() + 1);
  EXPECT_ERROR_KIND(([&] { bool c; prop.run(g, FaultSite{0, 784, {0}}, c); })(), ErrorKind::config);
}
