#include <srr/io.hpp>

#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <sys/wait.h>

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Result {
  int code = -1;
  std::string out;
};

/// Runs the CLI with `args`; stdout is captured, stderr discarded.
Result srr(const std::string& args) {
  const std::string cmd = std::string("\"") + SRR_CLI_PATH + "\" " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("srr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

TEST_F(Cli, GenSynthRoundTripsThroughDecompose) {
  ASSERT_EQ(srr("gen-synth --rows 40 --cols 32 --ratio 0.8 --seed 3 -o " + path("w.srrm")).code, 0);
  const auto w = srr::io::read_matrix(path("w.srrm"));
  srr::harness::SynthSpec spec{40, 32, srr::harness::Geometric{0.8}, 1.0, 0.0, 3};
  EXPECT_TRUE(w == srr::harness::synth_weight(spec));

  const auto r = srr("decompose -w " + path("w.srrm") + " --rank 8 --k 2 --factors-prefix " +
                     path("f"));
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["rows"], 40);
  EXPECT_EQ(j["k"], 2);
  const auto q = srr::io::read_matrix(path("f.Q.srrm"));
  const auto l = srr::io::read_matrix(path("f.L.srrm"));
  const auto rr = srr::io::read_matrix(path("f.R.srrm"));
  EXPECT_EQ(l.cols(), 8);
  EXPECT_DOUBLE_EQ((w - q - l * rr).norm(), j["scaled_error"].get<double>());
}

TEST_F(Cli, AutoSplitInRangeOn512) {
  ASSERT_EQ(srr("gen-synth --rows 512 --cols 512 --spectrum power_law --exponent 0.8 -o " +
                path("w.srrm"))
                .code,
            0);
  const auto r = srr("decompose -w " + path("w.srrm") + " --rank 64 --auto --seed 1");
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  const int k = j["selection"]["k_star"];
  EXPECT_GE(k, 0);
  EXPECT_LE(k, 64);
  EXPECT_EQ(j["k"], k);
  EXPECT_EQ(j["selection"]["objective_curve"].size(), 65u);
}

TEST_F(Cli, KZeroMatchesQerPath) {
  ASSERT_EQ(srr("gen-synth --rows 48 --cols 40 -o " + path("w.srrm")).code, 0);
  ASSERT_EQ(srr("calibrate --dim 48 --samples 200 --seed 4 -o " + path("c.srrc")).code, 0);
  const std::string common = "decompose -w " + path("w.srrm") + " --scaling dense --calibration " +
                             path("c.srrc") + " --family uniform --rank 8 ";
  const auto a = srr(common + "--k 0 --factors-prefix " + path("a"));
  const auto b = srr(common + "--qer --factors-prefix " + path("b"));
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  for (const char* part : {".Q.srrm", ".L.srrm", ".R.srrm"})
    EXPECT_EQ(srr::io::read_file(path(std::string("a") + part)),
              srr::io::read_file(path(std::string("b") + part)));
  EXPECT_EQ(json::parse(a.out)["scaled_error"], json::parse(b.out)["scaled_error"]);
}

TEST_F(Cli, SweepHasRankPlusOneRows) {
  const auto r = srr("sweep --synth-rows 40 --synth-cols 30 --rank 10 --format csv");
  ASSERT_EQ(r.code, 0);
  std::size_t lines = 0;
  for (char c : r.out) lines += c == '\n';
  EXPECT_EQ(lines, 1u + 11u);
}

TEST_F(Cli, ErrorExitCodes) {
  EXPECT_EQ(srr("decompose --no-such-flag").code, 2);
  EXPECT_EQ(srr("").code, 2);
  EXPECT_EQ(srr("decompose -w " + path("missing.srrm") + " --k 0").code, 4);
  ASSERT_EQ(srr("gen-synth --rows 8 --cols 6 -o " + path("w.srrm")).code, 0);
  // rank budget beyond min(m, n) is a numeric domain error
  EXPECT_EQ(srr("decompose -w " + path("w.srrm") + " --rank 7 --k 0").code, 3);
  // several bad flags are reported together as one input error
  EXPECT_EQ(srr("decompose -w " + path("w.srrm") + " --bits 12 --block 7").code, 2);
  EXPECT_EQ(srr("gen-synth --ratio 1.5 -o " + path("x.srrm")).code, 2);
  std::FILE* f = std::fopen(path("junk.srrm").c_str(), "wb");
  std::fputs("not a matrix", f);
  std::fclose(f);
  EXPECT_EQ(srr("decompose -w " + path("junk.srrm") + " --k 0").code, 2);
}

TEST_F(Cli, HelpListsFlags) {
  const auto r = srr("decompose --help");
  EXPECT_EQ(r.code, 0);
  for (const char* flag : {"--weight", "--scaling", "--calibration", "--eps", "--family", "--bits",
                           "--block", "--rank", "--k", "--auto", "--seed", "--qer", "--global",
                           "--out", "--factors-prefix", "--format", "--timing"})
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
  const auto top = srr("--help");
  for (const char* cmd : {"gen-synth", "calibrate", "decompose", "sweep", "compare", "stability",
                          "finetune-toy"})
    EXPECT_NE(top.out.find(cmd), std::string::npos) << cmd;
}

TEST_F(Cli, ConfigFileWithFlagPrecedence) {
  ASSERT_EQ(srr("gen-synth --rows 32 --cols 24 -o " + path("w.srrm")).code, 0);
  std::FILE* f = std::fopen(path("run.toml").c_str(), "w");
  std::fputs("[decompose]\nrank = 6\nk = 2\nfamily = \"uniform\"\n", f);
  std::fclose(f);
  const auto from_file = json::parse(srr("--config " + path("run.toml") + " decompose -w " +
                                         path("w.srrm")).out);
  EXPECT_EQ(from_file["rank"], 6);
  EXPECT_EQ(from_file["quantizer"]["family"], "uniform");
  const auto overridden = json::parse(srr("--config " + path("run.toml") + " decompose -w " +
                                          path("w.srrm") + " --rank 5").out);
  EXPECT_EQ(overridden["rank"], 5);
  EXPECT_EQ(overridden["k"], 2);
}

// Every command, run twice with equal flags, produces identical bytes.
TEST_F(Cli, CommandsAreDeterministic) {
  const std::vector<std::pair<std::string, std::string>> runs = {
      {"gen-synth --rows 32 --cols 24 --spectrum spiked --noise 0.01 --seed 5 -o ", "g.srrm"},
      {"calibrate --dim 32 --samples 100 --seed 2 -o ", "c.srrc"},
      {"sweep --synth-rows 32 --synth-cols 24 --rank 6 --scaling diagonal -o ", "s.json"},
      {"compare --instances 1 --shapes 32x24 --rank 4 --format csv -o ", "cmp.csv"},
      {"stability --synth-rows 48 --synth-cols 48 --rank 8 --seeds 3 -o ", "st.json"},
      {"finetune-toy --synth-rows 24 --synth-cols 20 --rank 4 --steps 5 --rule sgp -o ", "ft.json"},
  };
  for (const auto& [cmd, file] : runs) {
    ASSERT_EQ(srr(cmd + path("1_" + file)).code, 0) << cmd;
    ASSERT_EQ(srr(cmd + path("2_" + file)).code, 0) << cmd;
    EXPECT_EQ(srr::io::read_file(path("1_" + file)), srr::io::read_file(path("2_" + file))) << cmd;
  }
  ASSERT_EQ(srr("gen-synth --rows 32 --cols 24 -o " + path("w.srrm")).code, 0);
  const std::string dec = "decompose -w " + path("w.srrm") + " --rank 6 --auto --seed 3 --scaling dense";
  EXPECT_EQ(srr(dec + " --factors-prefix " + path("d1")).out,
            srr(dec + " --factors-prefix " + path("d2")).out);
  EXPECT_EQ(srr::io::read_file(path("d1.L.srrm")), srr::io::read_file(path("d2.L.srrm")));
}

}  // namespace
