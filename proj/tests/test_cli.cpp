// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cigmae/core/binary_io.hpp"
#include "cigmae/eval/gradient_suite.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out, err;
};

class Cli : public ::testing::Test {
 protected:
  fs::path dir = fs::temp_directory_path() / "cigmae_cli_test";
  void SetUp() override {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  CliRun run(const std::string& args, const std::string& env = "") const {
    const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = "cd '" + dir.string() + "' && " + env + " '" CIGMAE_CLI_PATH "' " + args + " > '" + out.string() +
                            "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = cigmae::io::read_file(out);
    r.err = cigmae::io::read_file(err);
    return r;
  }

  // A small synthetic set and model, so that full commands finish quickly.
  static std::string tiny_data() {
    return "--classes 2 --per-class 8 --antennas 1 --subcarriers 6 --timesteps 40 --band 3 --burst 10";
  }
  void write_tiny_config() const {
    std::ofstream(dir / "tiny.cfg") << "# small model\npreset = desk\nmask_ratio = 0.5\nepochs = 2\nbatch_size = 8\n"
                                       "channels = 4,4,4\nd_latent = 8\nd_policy = 8\npolicy_heads = 2\nbt_width = 8\n";
  }
};

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("sweep").code, 1);  // --param is required
  EXPECT_EQ(run("pretrain --epochs-typo 3").code, 1);
}

TEST_F(Cli, HelpListsEverySubcommand) {
  const auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"synth", "pretrain", "probe", "ablate", "sweep", "viz", "grad-check"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST_F(Cli, GradCheckPassesWithinBudget) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run("grad-check");
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 60.0);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST_F(Cli, MissingConfigIsARuntimeFailure) {
  const auto r = run("pretrain --config missing.cfg");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("missing.cfg"), std::string::npos) << r.err;
}

TEST_F(Cli, BadConfigValueIsAUsageError) {
  std::ofstream(dir / "bad.cfg") << "mask_ratio = 1.5\n";
  EXPECT_EQ(run("pretrain --config bad.cfg").code, 1);
  EXPECT_EQ(run("pretrain --set no_such_key=1").code, 1);
}

TEST_F(Cli, SynthThenInspect) {
  auto r = run("synth --out data/set.csi " + tiny_data());
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_TRUE(fs::exists(dir / "data/set.csi"));
  r = run("inspect --data data/set.csi");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("samples: 16"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("shape: 1 x 6 x 40"), std::string::npos) << r.out;
}

TEST_F(Cli, OutputDirectoryFromEnvironment) {
  const auto r = run("synth --out set.csi " + tiny_data(), "CIGMAE_OUT_DIR='" + (dir / "elsewhere").string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "elsewhere/set.csi"));
  EXPECT_FALSE(fs::exists(dir / "set.csi"));
}

TEST_F(Cli, PretrainProbeAndVisualise) {
  write_tiny_config();
  auto r = run("pretrain --config tiny.cfg --checkpoint m.ckpt --metrics m.csv " + tiny_data());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = cigmae::io::read_file(dir / "m.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 2);  // header + 2 epochs of 2 steps
  r = run("inspect --checkpoint m.ckpt");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("channels = 4,4,4"), std::string::npos);

  r = run("probe --checkpoint m.ckpt --k 2 --probe-epochs 5 " + tiny_data());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("accuracy"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "probe.txt"));

  for (const char* kind : {"error-heatmap", "mask-overlay", "corr-matrix"}) {
    r = run(std::string("viz --kind ") + kind + " --checkpoint m.ckpt --out viz/" + kind + " " + tiny_data());
    EXPECT_EQ(r.code, 0) << kind << r.err;
    EXPECT_TRUE(fs::exists(dir / "viz" / (std::string(kind) + ".csv"))) << kind;
  }
  EXPECT_EQ(run("viz --kind tsne --checkpoint m.ckpt " + tiny_data()).code, 1);

  // Resuming with a longer schedule continues from the stored step.
  std::ofstream(dir / "tiny.cfg", std::ios::app) << "epochs = 3\n";
  r = run("pretrain --config tiny.cfg --resume m.ckpt --checkpoint m2.ckpt --metrics m2.csv " + tiny_data());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv2 = cigmae::io::read_file(dir / "m2.csv");
  EXPECT_EQ(std::count(csv2.begin(), csv2.end(), '\n'), 1 + 2);
  EXPECT_NE(csv2.find("\n4,2,0,"), std::string::npos) << csv2;

  // A checkpoint from another configuration is refused.
  std::ofstream(dir / "other.cfg") << "preset = desk\nchannels = 4,4,4\nd_latent = 8\nd_policy = 8\npolicy_heads = 2\nbt_width = 16\n";
  r = run("pretrain --config other.cfg --resume m.ckpt " + tiny_data());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("config"), std::string::npos);
}

TEST_F(Cli, SweepEmitsOneReportPerValue) {
  write_tiny_config();
  const auto r = run("sweep --config tiny.cfg --param mask-ratio --values 0.5,0.75,0.9,0.95 --k 2 --probe-epochs 5 " + tiny_data());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = cigmae::io::read_file(dir / "sweep.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_NE(csv.find("mask_ratio=0.95"), std::string::npos);
  EXPECT_EQ(run("sweep --config tiny.cfg --param dropout " + tiny_data()).code, 1);
}

TEST_F(Cli, AblateSubset) {
  write_tiny_config();
  const auto r = run("ablate --config tiny.cfg --variants full,no-aim --k 2 --probe-epochs 5 " + tiny_data());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = cigmae::io::read_file(dir / "ablation.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_EQ(run("ablate --variants no-decoder " + tiny_data()).code, 1);
}

TEST(GradientSuite, EveryCasePassesInDoublePrecision) {
  const auto r = cigmae::eval::run_gradient_suite(3);
  EXPECT_TRUE(r.passed());
  EXPECT_GE(r.cases.size(), 20u);
  for (const auto& c : r.cases) {
    EXPECT_LT(c.worst, 1e-4) << c.name;
    EXPECT_GE(c.instances, 3u);
  }
}

}  // namespace
