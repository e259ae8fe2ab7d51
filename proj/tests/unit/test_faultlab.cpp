#include <map>
#include <random>

#include <boost/multiprecision/cpp_int.hpp>

#include "sarel/faultlab.hpp"
#include "sarel/report.hpp"
#include "testing.hpp"

using namespace sarel;

namespace {

Layer dense(const std::string& name, std::size_t in, std::size_t out) {
  Layer l;
  l.name = name;
  l.kind = LayerKind::dense;
  l.geometry.in_channels = in;
  l.geometry.out_channels = out;
  l.weights = QTensor({in, out}, std::vector<std::int32_t>(in * out, 1), QuantParams::signed_params(8, 0.01));
  l.biases.assign(out, 0);
  l.out_params = QuantParams::unsigned_params(8, 0.1);
  return l;
}

Network two_layer(std::size_t a, std::size_t b) {
  Network net;
  net.name = "two";
  net.input_shape = {a};
  net.input_params = QuantParams::unsigned_params(8, 0.1);
  net.data_params = net.input_params;
  net.class_count = 2;
  net.layers = {dense("a", a, b), dense("b", b, 2)};
  validate(net);
  return net;
}

const Network& lenet8() {
  static const Network net = requantize_network(testing_support::lenet(), 8);
  return net;
}

LabeledSet slice8(std::size_t n) {
  const LabeledSet& test = testing_support::test_set();
  LabeledSet out;
  out.samples.assign(test.samples.begin(), test.samples.begin() + static_cast<std::ptrdiff_t>(n));
  return rebase(out, lenet8().data_params, lenet8().input_params);
}

// Arbitrary-precision ceil of the finite-population sample size.
std::uint64_t exact_sample_size(std::uint64_t N, boost::multiprecision::cpp_rational e,
                                boost::multiprecision::cpp_rational t, boost::multiprecision::cpp_rational p) {
  using boost::multiprecision::cpp_rational;
  const cpp_rational n = cpp_rational(N) / (1 + e * e * cpp_rational(N - 1) / (t * t * p * (1 - p)));
  boost::multiprecision::cpp_int q = boost::multiprecision::numerator(n) / boost::multiprecision::denominator(n);
  if (cpp_rational(q) < n) ++q;
  return q.convert_to<std::uint64_t>();
}

} // namespace

TEST(Population, Examples) {
  const Network net = two_layer(1000, 1);
  EXPECT_EQ(population_size(net, 8), 8000u + 8u);
  Network single;
  single.name = "one";
  single.input_shape = {1000};
  single.input_params = QuantParams::unsigned_params(8, 0.1);
  single.data_params = single.input_params;
  single.class_count = 2;
  single.layers = {dense("fc", 1000, 2)};
  EXPECT_EQ(population_size(single, 8), 8000u);
  EXPECT_EQ(population_size(single, 4), 4000u);
  KindMask none{false, false, false, false, false};
  EXPECT_EQ(population_size(single, 8, none), 0u);
}

TEST(Population, LenetShapeWalk) {
  // Inputs of conv1, pool1, conv2, pool2, fc1, fc2; the flatten buffer is
  // the same storage as pool2's output.
  const std::size_t words = 28 * 28 * 1 + 24 * 24 * 6 + 12 * 12 * 6 + 8 * 8 * 16 + 256 + 120;
  EXPECT_EQ(words, 6504u);
  EXPECT_EQ(population_size(lenet8(), 8), words * 8);
  KindMask with_flatten;
  with_flatten.flatten = true;
  EXPECT_EQ(population_size(lenet8(), 8, with_flatten), (words + 256) * 8);
}

TEST(SampleSize, ReferenceValue) {
  using boost::multiprecision::cpp_rational;
  const std::uint64_t exact = exact_sample_size(1000000, cpp_rational(1, 100), cpp_rational(196, 100), cpp_rational(1, 2));
  EXPECT_EQ(exact, 9513u);
  EXPECT_EQ(sample_size(SamplingPlan{1000000, 1.96, 0.01, 0.5, 0}), 9513u);
  EXPECT_EQ(SamplingPlan::make(1000000).n, 9513u);
}

TEST(SampleSize, AgreesWithExactOracle) {
  using boost::multiprecision::cpp_rational;
  std::mt19937_64 rng(12);
  for (int i = 0; i < 300; ++i) {
    const std::uint64_t N = 1 + rng() % 5000000;
    const int e_pct = 1 + static_cast<int>(rng() % 10);
    const int p_pct = 5 + static_cast<int>(rng() % 90);
    const std::uint64_t got = sample_size(SamplingPlan{N, 1.96, e_pct / 100.0, p_pct / 100.0, 0});
    const std::uint64_t want = exact_sample_size(N, cpp_rational(e_pct, 100), cpp_rational(196, 100), cpp_rational(p_pct, 100));
    ASSERT_EQ(got, want) << N << " " << e_pct << " " << p_pct;
  }
}

TEST(SampleSize, Limits) {
  EXPECT_EQ(sample_size(SamplingPlan{100, 1.96, 1e-9, 0.5, 0}), 100u);
  EXPECT_EQ(sample_size(SamplingPlan{1, 1.96, 0.01, 0.5, 0}), 1u);
  std::uint64_t prev = 0;
  for (std::uint64_t N = 1; N < 200000; N = N * 3 + 1) {
    const auto n = sample_size(SamplingPlan{N, 1.96, 0.01, 0.5, 0});
    EXPECT_GE(n, prev);
    EXPECT_LE(n, N);
    prev = n;
  }
  // Wider margins never need more samples.
  EXPECT_LT(sample_size(SamplingPlan{50000, 1.96, 0.05, 0.5, 0}), sample_size(SamplingPlan{50000, 1.96, 0.01, 0.5, 0}));
}

TEST(SampleSize, Errors) {
  EXPECT_ERROR_KIND(sample_size(SamplingPlan{0, 1.96, 0.01, 0.5, 0}), ErrorKind::config);
  EXPECT_ERROR_KIND(sample_size(SamplingPlan{10, 1.96, 0.0, 0.5, 0}), ErrorKind::config);
  EXPECT_ERROR_KIND(sample_size(SamplingPlan{10, 1.96, 0.01, 1.0, 0}), ErrorKind::config);
  EXPECT_ERROR_KIND(sample_size(SamplingPlan{10, 0.0, 0.01, 0.5, 0}), ErrorKind::config);
}

TEST(NormalQuantile, TableValues) {
  EXPECT_EQ(normal_quantile(0.95), 1.96);
  EXPECT_EQ(normal_quantile(0.99), 2.58);
  EXPECT_EQ(normal_quantile(0.90), 1.64);
  EXPECT_ERROR_KIND(normal_quantile(1.0), ErrorKind::config);
}

TEST(SampleFault, LayerChoiceFollowsWordCounts) {
  const Network net = two_layer(10, 90);
  auto rng = repetition_stream(99, 0);
  const int draws = 100000;
  std::size_t second = 0;
  std::vector<std::size_t> bit_hist(8, 0);
  for (int i = 0; i < draws; ++i) {
    const FaultSite s = sample_fault(rng, net, 8, 1);
    ASSERT_EQ(s.bit_positions.size(), 1u);
    second += s.layer == 1;
    ++bit_hist[static_cast<std::size_t>(s.bit_positions[0])];
  }
  // Pearson chi-square against (0.1, 0.9), one degree of freedom; 10.83 is
  // the 0.999 quantile.
  const double e1 = draws * 0.1, e2 = draws * 0.9;
  const double o1 = static_cast<double>(draws - static_cast<int>(second)), o2 = static_cast<double>(second);
  const double chi = (o1 - e1) * (o1 - e1) / e1 + (o2 - e2) * (o2 - e2) / e2;
  EXPECT_LT(chi, 10.83);
  // Bits uniform over 8 positions; 24.32 is the 0.999 quantile at 7 d.o.f.
  double chi_bits = 0;
  for (auto c : bit_hist) chi_bits += (c - draws / 8.0) * (c - draws / 8.0) / (draws / 8.0);
  EXPECT_LT(chi_bits, 24.32);
}

TEST(SampleFault, KEqualsWidthFlipsWholeWord) {
  auto rng = repetition_stream(1, 2);
  const FaultSite s = sample_fault(rng, lenet8(), 8, 8);
  EXPECT_EQ(s.bit_positions, (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_ERROR_KIND(sample_fault(rng, lenet8(), 8, 9), ErrorKind::config);
  EXPECT_ERROR_KIND(sample_fault(rng, lenet8(), 8, 0), ErrorKind::config);
}

TEST(SampleFault, DistinctSortedBitsAndValidSites) {
  auto rng = repetition_stream(5, 5);
  for (int i = 0; i < 2000; ++i) {
    const FaultSite s = sample_fault(rng, lenet8(), 8, 3);
    ASSERT_EQ(s.bit_positions.size(), 3u);
    ASSERT_TRUE(std::is_sorted(s.bit_positions.begin(), s.bit_positions.end()));
    ASSERT_TRUE(std::adjacent_find(s.bit_positions.begin(), s.bit_positions.end()) == s.bit_positions.end());
    ASSERT_NE(s.layer, 4u); // flatten excluded by default
    check_fault_site(lenet8(), s);
  }
}

TEST(SampleFault, StreamsAreDeterministic) {
  for (std::uint64_t rep = 0; rep < 50; ++rep) {
    auto a = repetition_stream(42, rep), b = repetition_stream(42, rep);
    EXPECT_EQ(sample_fault(a, lenet8(), 8, 1), sample_fault(b, lenet8(), 8, 1));
  }
  auto a = repetition_stream(42, 0), b = repetition_stream(43, 0);
  EXPECT_NE(a(), b());
}

TEST(UniformBelow, RangeAndErrors) {
  auto rng = repetition_stream(3, 3);
  for (std::uint64_t bound : {1ull, 2ull, 3ull, 1000ull, (1ull << 63) + 5}) {
    for (int i = 0; i < 100; ++i) ASSERT_LT(uniform_below(rng, bound), bound);
  }
  EXPECT_ERROR_KIND(uniform_below(rng, 0), ErrorKind::config);
}

TEST(Campaign, NullCampaignIsExactlyGolden) {
  const LabeledSet slice = slice8(40);
  CampaignConfig cfg;
  cfg.faults_enabled = false;
  const CampaignResult r = run_campaign(lenet8(), slice, cfg, SamplingPlan{1, 1.96, 0.01, 0.5, 5});
  ASSERT_EQ(r.repetitions.size(), 5u);
  for (const auto& rep : r.repetitions) {
    EXPECT_EQ(rep.correct, r.golden_correct);
    EXPECT_FALSE(rep.site.has_value());
  }
  const MetricsReport m = aggregate(r);
  EXPECT_EQ(m.model.accuracy_loss, 0.0);
  EXPECT_EQ(m.model.relative_accuracy, 100.0);
  EXPECT_EQ(m.model.criticality, 0.0);
  EXPECT_EQ(m.model.sdc1_rate, 0.0);
  EXPECT_EQ(m.model.sdc5_rate, 0.0);
  EXPECT_EQ(m.model.sdc10_rate, 0.0);
}

TEST(Campaign, ManualReplayOfOneRepetition) {
  const LabeledSet slice = slice8(30);
  CampaignConfig cfg;
  cfg.seed = 17;
  for (std::uint64_t reps : {1u, 6u}) {
    const CampaignResult r = run_campaign(lenet8(), slice, cfg, SamplingPlan{1, 1.96, 0.01, 0.5, reps});
    for (const auto& rep : r.repetitions) {
      ASSERT_TRUE(rep.site.has_value());
      const std::vector<FaultSite> faults{*rep.site};
      std::size_t correct = 0, sdc1 = 0;
      for (const auto& s : slice.samples) {
        const QTensor x = input_tensor(lenet8(), s);
        const Prediction golden = run_network(lenet8(), x, cfg.array).prediction;
        const Prediction faulty = run_network(lenet8(), x, cfg.array, faults).prediction;
        correct += faulty.top1 == s.label;
        sdc1 += faulty.top1 != golden.top1;
      }
      EXPECT_EQ(rep.correct, correct);
      EXPECT_EQ(rep.sdc1, sdc1);
      EXPECT_EQ(rep.inputs_evaluated, slice.size());
    }
  }
}

TEST(Campaign, ThreadCountDoesNotChangeResults) {
  const LabeledSet slice = slice8(25);
  const auto bounds = extract_ranges(lenet8(), slice);
  CampaignConfig cfg;
  cfg.seed = 7;
  cfg.guard = GuardMethod::method3;
  const SamplingPlan plan{1, 1.96, 0.01, 0.5, 40};
  cfg.threads = 1;
  const auto one = campaign_json(run_campaign(lenet8(), slice, cfg, plan, &bounds)).dump();
  for (std::size_t t : {2u, 4u, 8u}) {
    cfg.threads = t;
    EXPECT_EQ(campaign_json(run_campaign(lenet8(), slice, cfg, plan, &bounds)).dump(), one) << t;
  }
}

TEST(Campaign, GuardMethodsShareFaultSites) {
  const LabeledSet slice = slice8(10);
  const auto bounds = extract_ranges(lenet8(), slice);
  CampaignConfig cfg;
  const SamplingPlan plan{1, 1.96, 0.01, 0.5, 20};
  const CampaignResult none = run_campaign(lenet8(), slice, cfg, plan);
  cfg.guard = GuardMethod::method1;
  const CampaignResult m1 = run_campaign(lenet8(), slice, cfg, plan, &bounds);
  for (std::size_t i = 0; i < plan.n; ++i) EXPECT_EQ(none.repetitions[i].site, m1.repetitions[i].site);
}

TEST(Campaign, PerInputMode) {
  const LabeledSet slice = slice8(10);
  CampaignConfig cfg;
  cfg.mode = FaultMode::per_input;
  const CampaignResult r = run_campaign(lenet8(), slice, cfg, SamplingPlan{1, 1.96, 0.01, 0.5, 4});
  for (const auto& rep : r.repetitions) {
    EXPECT_FALSE(rep.site.has_value());
    EXPECT_EQ(rep.inputs_evaluated, 10u);
    EXPECT_TRUE(rep.error.empty());
  }
}

TEST(Campaign, Errors) {
  const LabeledSet slice = slice8(5);
  const SamplingPlan plan{1, 1.96, 0.01, 0.5, 1};
  CampaignConfig cfg;
  EXPECT_ERROR_KIND(run_campaign(lenet8(), LabeledSet{}, cfg, plan), ErrorKind::input);
  cfg.guard = GuardMethod::method3;
  EXPECT_ERROR_KIND(run_campaign(lenet8(), slice, cfg, plan), ErrorKind::config);
  cfg.guard = GuardMethod::none;
  cfg.k_bits = 9;
  EXPECT_ERROR_KIND(run_campaign(lenet8(), slice, cfg, plan), ErrorKind::config);
  cfg.k_bits = 1;
  cfg.array.rows = 0;
  EXPECT_ERROR_KIND(run_campaign(lenet8(), slice, cfg, plan), ErrorKind::config);
  LabeledSet bad = slice;
  bad.samples[0].label = 10;
  EXPECT_ERROR_KIND(run_campaign(lenet8(), bad, CampaignConfig{}, plan), ErrorKind::input);
}
