#include <gtest/gtest.h>

#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "bvae/io/digest.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRuns = fs::path(BVAE_CLI_RUNS);
const std::string kSmall = "--strides 1,3,8,8,8";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BVAE_CLI_BINARY) + " --runs " + kRuns.string() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream is(p);
  std::size_t n = 0;
  for (std::string line; std::getline(is, line);) ++n;
  return n;
}

}  // namespace

TEST(Cli, GenShapesWritesAHashedManifest) {
  ASSERT_EQ(run_cli("--name gen gen-shapes " + kSmall), 0);
  const auto dir = kRuns / "gen";
  const std::string manifest = slurp(dir / "manifest.txt");
  EXPECT_NE(manifest.find("command: gen-shapes\nstatus: complete\n"), std::string::npos);
  const std::string tensor_line = bvae::io::sha256_file(dir / "images.tnsr") + "  " +
                                  std::to_string(fs::file_size(dir / "images.tnsr")) + "  images.tnsr\n";
  EXPECT_NE(manifest.find(tensor_line), std::string::npos);
  EXPECT_NE(manifest.find("  config.resolved\n"), std::string::npos);
  EXPECT_EQ(line_count(dir / "factors.csv"), 480u + 1u);
}

TEST(Cli, RerunFromResolvedConfigIsIdentical) {
  ASSERT_EQ(run_cli("--name cfg-a gen-shapes " + kSmall + " --shapes novel"), 0);
  ASSERT_EQ(run_cli("--name cfg-b --config " + (kRuns / "cfg-a" / "config.resolved").string() + " gen-shapes"), 0);
  EXPECT_EQ(slurp(kRuns / "cfg-a" / "manifest.txt"), slurp(kRuns / "cfg-b" / "manifest.txt"));
  // a flag overrides the file
  ASSERT_EQ(run_cli("--name cfg-c --config " + (kRuns / "cfg-a" / "config.resolved").string() +
                    " gen-shapes --strides 1,3,8,8,4"),
            0);
  EXPECT_EQ(line_count(kRuns / "cfg-c" / "factors.csv"), 960u + 1u);
}

TEST(Cli, TrainThenAnalyse) {
  ASSERT_EQ(run_cli("--name tr train " + kSmall + " --steps 4 --log-interval 2 --seed 3"), 0);
  const auto model = (kRuns / "tr" / "model.bvae").string();
  EXPECT_TRUE(fs::exists(model));
  EXPECT_EQ(line_count(kRuns / "tr" / "trace.csv"), 3u);
  ASSERT_EQ(run_cli("--name tv traverse --model " + model + " " + kSmall + " --steps 3"), 0);
  EXPECT_TRUE(fs::exists(kRuns / "tv" / "traversal.pgm"));
  ASSERT_EQ(run_cli("--name rm response-map --model " + model + " " + kSmall + " --factor position"), 0);
  EXPECT_TRUE(fs::exists(kRuns / "rm" / "response.csv"));
  ASSERT_EQ(run_cli("--name mt metric --representation vae --model " + model + " " + kSmall +
                    " --train-samples 200 --test-samples 100 --classifier-max-steps 300 --classifier-window 100"),
            0);
  EXPECT_TRUE(fs::exists(kRuns / "mt" / "metric.csv"));
}

TEST(Cli, BaselineAndCorrupt) {
  ASSERT_EQ(run_cli("--name pca baseline pca " + kSmall + " --components 3"), 0);
  EXPECT_TRUE(fs::exists(kRuns / "pca" / "projection.proj"));
  EXPECT_EQ(line_count(kRuns / "pca" / "explained.csv"), 4u);
  ASSERT_EQ(run_cli("--name src gen-shapes " + kSmall), 0);
  ASSERT_EQ(run_cli("--name noisy corrupt --dataset " + (kRuns / "src").string() + " --p 0.1 --seed 2"), 0);
  EXPECT_NE(slurp(kRuns / "noisy" / "images.tnsr"), slurp(kRuns / "src" / "images.tnsr"));
  EXPECT_EQ(slurp(kRuns / "noisy" / "factors.csv"), slurp(kRuns / "src" / "factors.csv"));
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("gen-shapes --no-such-flag"), 1);
  EXPECT_EQ(run_cli("train --beta -1"), 1);
  EXPECT_EQ(run_cli("--name bad-strides gen-shapes --strides 1,2,3"), 1);
  EXPECT_EQ(run_cli("--name ../escape gen-shapes"), 1);
  EXPECT_EQ(run_cli("--name missing traverse --model /nonexistent/model.bvae"), 2);
  const std::string manifest = slurp(kRuns / "missing" / "manifest.txt");
  EXPECT_NE(manifest.find("status: incomplete\nerror: "), std::string::npos);
  ASSERT_EQ(run_cli("--name tiny train " + kSmall + " --steps 0"), 0);
  EXPECT_EQ(run_cli("--name far traverse --model " + (kRuns / "tiny" / "model.bvae").string() + " " + kSmall +
                    " --image 100000"),
            1);
}
