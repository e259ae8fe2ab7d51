// Drives the sarel executable end to end.

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "sarel/io.hpp"
#include "sarel/netgraph.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kFixture = SAREL_FIXTURE_DIR;

struct Result {
  int code = -1;
  std::string out;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

Result run(const std::vector<std::string>& args) {
  std::string cmd = quote(SAREL_CLI);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " 2>/dev/null";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  for (std::size_t n; (n = fread(buf, 1, sizeof buf, pipe)) > 0;) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  const auto b = sarel::read_file(p);
  return {b.begin(), b.end()};
}

class Cli : public ::testing::Test {
protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir = fs::temp_directory_path() / "sarel-cli-tests" / info->name();
    fs::remove_all(dir);
    fs::create_directories(dir);
  }

  // First n samples of the fixture test set.
  fs::path slice(std::size_t n) {
    const sarel::LabeledSet all = sarel::load_dataset(kFixture / "test.qds");
    sarel::LabeledSet s;
    s.samples.assign(all.samples.begin(), all.samples.begin() + static_cast<std::ptrdiff_t>(n));
    const fs::path p = dir / ("slice" + std::to_string(n) + ".qds");
    sarel::save_dataset(s, p);
    return p;
  }

  fs::path dir;
};

} // namespace

TEST_F(Cli, QuantizeRejectsThreeBits) {
  const Result r = run({"quantize", "--model", kFixture.string(), "--bits", "3", "--out", (dir / "m3").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir / "m3"));
}

TEST_F(Cli, QuantizeAtNativeWidthKeepsPayloads) {
  const Result r = run({"quantize", "--model", kFixture.string(), "--bits", "16", "--out", (dir / "m16").string()});
  ASSERT_EQ(r.code, 0);
  for (const char* f : {"conv1.w.bin", "conv1.b.bin", "conv2.w.bin", "fc1.w.bin", "fc2.b.bin"}) {
    EXPECT_EQ(sarel::read_file(dir / "m16" / f), sarel::read_file(kFixture / f)) << f;
  }
  EXPECT_TRUE(fs::exists(dir / "m16" / "run_manifest.json"));
}

TEST_F(Cli, QuantizeToFourBitsLosesAccuracy) {
  const fs::path data = slice(300);
  const Result r = run({"quantize", "--model", kFixture.string(), "--bits", "4", "--out", (dir / "m4").string(),
                        "--data", data.string()});
  ASSERT_EQ(r.code, 0);
  const json j = json::parse(r.out);
  EXPECT_LE(j["accuracy_pct"].get<double>(), j["source_accuracy_pct"].get<double>());
  EXPECT_GT(j["accuracy_pct"].get<double>(), 50.0);
}

TEST_F(Cli, FullPipeline) {
  const fs::path data = slice(40);
  const fs::path m8 = dir / "m8";
  ASSERT_EQ(run({"quantize", "--model", kFixture.string(), "--bits", "8", "--out", m8.string()}).code, 0);

  const Result rr = run({"ranges", "--model", m8.string(), "--data", (kFixture / "val.qds").string(), "--test",
                         data.string(), "--out", (dir / "bounds.json").string()});
  ASSERT_EQ(rr.code, 0);
  const json cov = json::parse(rr.out);
  EXPECT_EQ(cov["layers"], 7);
  EXPECT_TRUE(fs::exists(dir / "bounds.json.manifest.json"));

  const Result inf = run({"infer", "--model", m8.string(), "--input", data.string(), "--sample", "2", "--guard", "m3",
                          "--bounds", (dir / "bounds.json").string()});
  ASSERT_EQ(inf.code, 0);
  const json ij = json::parse(inf.out);
  EXPECT_EQ(ij["top1"], ij["label"]);
  EXPECT_GT(ij["cycles"].get<std::uint64_t>(), 0u);

  const fs::path rjson = dir / "R.json";
  ASSERT_EQ(run({"campaign", "--model", m8.string(), "--data", data.string(), "--guard", "m3", "--bounds",
                 (dir / "bounds.json").string(), "--repetitions", "25", "--seed", "9", "--threads", "2", "--out",
                 rjson.string()})
                .code,
            0);
  const json doc = json::parse(slurp(rjson));
  EXPECT_EQ(doc["repetitions"].size(), 25u);
  EXPECT_EQ(doc["config"]["guard"], "method3");
  EXPECT_EQ(doc["run_manifest"]["seed"], 9);

  ASSERT_EQ(run({"report", "--in", rjson.string(), "--format", "csv", "--out", (dir / "m.csv").string()}).code, 0);
  const std::string csv = slurp(dir / "m.csv");
  EXPECT_EQ(csv.rfind("scope,layer,name,", 0), 0u);
  EXPECT_NE(csv.find("\nmodel,,,25,0,"), std::string::npos);
  ASSERT_EQ(run({"report", "--in", rjson.string(), "--format", "json", "--out", (dir / "m.json").string()}).code, 0);
  EXPECT_EQ(json::parse(slurp(dir / "m.json"))["model"]["repetitions"], 25);

  ASSERT_EQ(run({"sweep", "--model", kFixture.string(), "--data", data.string(), "--val",
                 (kFixture / "val.qds").string(), "--bits", "8,4", "--methods", "none,m3", "--repetitions", "5",
                 "--out", (dir / "dse.csv").string()})
                .code,
            0);
  const std::string dse = slurp(dir / "dse.csv");
  EXPECT_NE(dse.find("\n8,none,"), std::string::npos);
  EXPECT_NE(dse.find("\n4,method3,"), std::string::npos);
  EXPECT_NE(dse.find("less than 10%"), std::string::npos);
  EXPECT_NE(dse.find(">200% (TMR)"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "dse.csv.manifest.json"));
}

TEST_F(Cli, DoubleFaultOnOneBitIsGolden) {
  const std::vector<std::string> base{"infer", "--model", kFixture.string(), "--input",
                                      (kFixture / "test.qds").string(), "--bits", "8", "--sample", "5"};
  const Result golden = run(base);
  ASSERT_EQ(golden.code, 0);
  auto twice = base;
  for (int i = 0; i < 2; ++i) {
    twice.push_back("--fault");
    twice.push_back("2:100:7");
  }
  const Result back = run(twice);
  ASSERT_EQ(back.code, 0);
  EXPECT_EQ(back.out, golden.out);

  auto once = base;
  once.push_back("--fault");
  once.push_back("0:300:7");
  const Result hit = run(once);
  ASSERT_EQ(hit.code, 0);
  EXPECT_NE(json::parse(hit.out)["output_words"], json::parse(golden.out)["output_words"]);
}

TEST_F(Cli, RawTensorInput) {
  const sarel::LabeledSet set = sarel::load_dataset(kFixture / "test.qds");
  std::vector<std::uint8_t> raw;
  for (std::int32_t v : set.samples[4].pixels) {
    const auto u = static_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) raw.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
  }
  sarel::write_file_atomic(dir / "x.bin", raw);
  const Result r = run({"infer", "--model", kFixture.string(), "--input", (dir / "x.bin").string()});
  ASSERT_EQ(r.code, 0);
  const Result viaset = run({"infer", "--model", kFixture.string(), "--input", (kFixture / "test.qds").string(),
                             "--sample", "4"});
  EXPECT_EQ(json::parse(r.out)["output_words"], json::parse(viaset.out)["output_words"]);
  raw.pop_back();
  sarel::write_file_atomic(dir / "short.bin", raw);
  EXPECT_EQ(run({"infer", "--model", kFixture.string(), "--input", (dir / "short.bin").string()}).code, 2);
}

TEST_F(Cli, CampaignIsThreadCountInvariant) {
  const fs::path data = slice(30);
  std::vector<std::string> outs;
  for (const char* t : {"1", "4", "8"}) {
    const fs::path out = dir / (std::string("R") + t + ".json");
    ASSERT_EQ(run({"campaign", "--model", kFixture.string(), "--bits", "8", "--data", data.string(), "--repetitions",
                   "30", "--seed", "4", "--threads", t, "--out", out.string()})
                  .code,
              0);
    outs.push_back(slurp(out));
  }
  EXPECT_EQ(outs[0], outs[1]);
  EXPECT_EQ(outs[0], outs[2]);
}

TEST_F(Cli, ManifestReplayReproducesArtifact) {
  const fs::path data = slice(20);
  const fs::path first = dir / "first.json";
  ASSERT_EQ(run({"campaign", "--model", kFixture.string(), "--bits", "6", "--data", data.string(), "--repetitions",
                 "12", "--seed", "21", "--k-bits", "2", "--out", first.string()})
                .code,
            0);
  const json doc = json::parse(slurp(first));
  std::vector<std::string> argv = doc["run_manifest"]["argv"].get<std::vector<std::string>>();
  const fs::path second = dir / "second.json";
  argv.push_back("--out");
  argv.push_back(second.string());
  ASSERT_EQ(run(argv).code, 0);
  EXPECT_EQ(slurp(first), slurp(second));
  EXPECT_FALSE(doc["run_manifest"]["inputs"].empty());
}

TEST_F(Cli, NullCampaignHasNoLoss) {
  const fs::path data = slice(25);
  const fs::path out = dir / "null.json";
  ASSERT_EQ(run({"campaign", "--model", kFixture.string(), "--bits", "8", "--data", data.string(), "--no-faults",
                 "--repetitions", "3", "--out", out.string()})
                .code,
            0);
  const json agg = json::parse(slurp(out))["aggregates"];
  EXPECT_EQ(agg["accuracy_loss_pct"], 0.0);
  EXPECT_EQ(agg["criticality_pct"], 0.0);
  EXPECT_EQ(agg["sdc1_pct"], 0.0);
  EXPECT_EQ(agg["sdc5_pct"], 0.0);
  EXPECT_EQ(agg["sdc10_pct"], 0.0);
}

TEST_F(Cli, ErrorExitCodes) {
  const fs::path data = slice(5);
  const fs::path out = dir / "R.json";
  // Guard without bounds: configuration error, nothing written.
  EXPECT_EQ(run({"campaign", "--model", kFixture.string(), "--data", data.string(), "--guard", "m3", "--out",
                 out.string()})
                .code,
            2);
  EXPECT_FALSE(fs::exists(out));
  // Missing input file.
  EXPECT_EQ(run({"campaign", "--model", kFixture.string(), "--data", (dir / "nope.qds").string(), "--out",
                 out.string()})
                .code,
            3);
  EXPECT_EQ(run({"infer", "--model", (dir / "nowhere").string(), "--input", data.string()}).code, 3);
  // Malformed flags.
  EXPECT_EQ(run({"campaign", "--bogus"}).code, 2);
  EXPECT_EQ(run({"infer", "--model", kFixture.string(), "--input", data.string(), "--fault", "1:2"}).code, 2);
  EXPECT_EQ(run({"infer", "--model", kFixture.string(), "--input", data.string(), "--fault", "0:0:16"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  // Corrupt campaign file.
  sarel::write_file_atomic(dir / "bad.json", std::string("{\"bits\": 8"));
  EXPECT_EQ(run({"report", "--in", (dir / "bad.json").string(), "--format", "csv", "--out", (dir / "x.csv").string()})
                .code,
            2);
}
