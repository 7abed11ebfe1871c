// Drives the installed CLI binary end to end and checks the exit-code
// contract: 0 ok, 2 config error, 3 missing input, 4 incompatible artifact.

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace introd;
using namespace introd::testing;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig =
    "seeds = 0,1\n"
    "bias.n_train = 400\n"
    "bias.n_id_test = 200\n"
    "bias.n_ood_test = 200\n"
    "teacher.hidden = 8\n"
    "sgd_teacher.epochs = 2\n"
    "sgd_student.epochs = 2\n";

struct Result {
  int code = -1;
  std::string output;
};

/// Runs the CLI from `cwd` with INTROD_OUTPUT_DIR cleared unless `env_out`
/// is given; stdout and stderr are captured together.
Result cli(const fs::path& cwd, const std::string& args, const std::string& env_out = "") {
  const fs::path log = cwd / "cli.log";
  std::string cmd = "cd '" + cwd.string() + "' && ";
  cmd += env_out.empty() ? "env -u INTROD_OUTPUT_DIR " : "env INTROD_OUTPUT_DIR='" + env_out + "' ";
  cmd += std::string("'") + INTROD_CLI_PATH + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

fs::path with_config(const std::string& tag, const std::string& text = kTinyConfig) {
  const fs::path dir = scratch_dir("cli_" + tag);
  std::ofstream(dir / "run.conf") << text;
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Cli, UsageErrorsExitWithTwo) {
  const auto dir = with_config("usage");
  EXPECT_EQ(cli(dir, "").code, 2);
  EXPECT_EQ(cli(dir, "frobnicate").code, 2);
  EXPECT_EQ(cli(dir, "gen --bogus").code, 2);
  EXPECT_EQ(cli(dir, "gen --seed 1 --seeds 2").code, 2);
  EXPECT_EQ(cli(dir, "gen --preset sideways").code, 2);
  EXPECT_EQ(cli(dir, "gen --split holdout --config run.conf").code, 2);
  EXPECT_EQ(cli(dir, "--help").code, 0);
}

TEST(Cli, ConfigErrorsAreReportedBeforeAnyFileIsWritten) {
  const auto dir = with_config("bad_config", "bias.bias_strength = 0.05\n");
  const auto r = cli(dir, "gen --config run.conf --out out");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("bias.bias_strength"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(dir / "out"));

  std::ofstream(dir / "unknown.conf") << "seeds = 0\nteacher.depth = 3\n";
  const auto u = cli(dir, "gen --config unknown.conf --out out");
  EXPECT_EQ(u.code, 2);
  EXPECT_NE(u.output.find("line 2"), std::string::npos) << u.output;
}

TEST(Cli, MissingInputsExitWithThree) {
  const auto dir = with_config("missing");
  EXPECT_EQ(cli(dir, "gen --config nope.conf").code, 3);
  EXPECT_EQ(cli(dir, "train-teacher --config run.conf --out out").code, 3);
  EXPECT_EQ(cli(dir, "hist --config run.conf --out out").code, 3);
  ASSERT_EQ(cli(dir, "gen --config run.conf --out out").code, 0);
  EXPECT_EQ(cli(dir, "distill --config run.conf --out out").code, 3);
  EXPECT_EQ(cli(dir, "ablate --suite q1 --config run.conf --out out --seed 7").code, 3);
}

TEST(Cli, GenIsDeterministicAndCountsSamples) {
  const auto dir = with_config("gen");
  ASSERT_EQ(cli(dir, "gen --seed 0 --out a").code, 0);
  ASSERT_EQ(cli(dir, "gen --seed 0 --out b").code, 0);
  std::size_t total = 0;
  for (Split s : {Split::train, Split::id_test, Split::ood_test}) {
    const auto pa = dataset_path(dir / "a", Preset::answer_prior, 0, s);
    const auto pb = dataset_path(dir / "b", Preset::answer_prior, 0, s);
    EXPECT_EQ(slurp(pa), slurp(pb));
    total += load_dataset(pa).size();
  }
  EXPECT_EQ(total, 30000u);

  ASSERT_EQ(cli(dir, "gen --config run.conf --split ood_test --out c").code, 0);
  EXPECT_TRUE(fs::exists(dataset_path(dir / "c", Preset::answer_prior, 1, Split::ood_test)));
  EXPECT_FALSE(fs::exists(dataset_path(dir / "c", Preset::answer_prior, 1, Split::train)));
}

TEST(Cli, OutputDirectoryPrecedence) {
  const auto dir = with_config("outdir", std::string(kTinyConfig) + "output_dir = from_config\n");
  ASSERT_EQ(cli(dir, "gen --config run.conf --seed 0").code, 0);
  EXPECT_TRUE(fs::exists(dir / "from_config" / "data"));
  ASSERT_EQ(cli(dir, "gen --config run.conf --seed 0", "from_env").code, 0);
  EXPECT_TRUE(fs::exists(dir / "from_env" / "data"));
  ASSERT_EQ(cli(dir, "gen --config run.conf --seed 0 --out from_flag", "from_env_too").code, 0);
  EXPECT_TRUE(fs::exists(dir / "from_flag" / "data"));
  EXPECT_FALSE(fs::exists(dir / "from_env_too"));
}

TEST(Cli, StepwiseAndOneShotRunsWriteIdenticalManifests) {
  const auto dir = with_config("pipeline");
  ASSERT_EQ(cli(dir, "gen --config run.conf --out out").code, 0);
  const auto t = cli(dir, "train-teacher --config run.conf --out out");
  ASSERT_EQ(t.code, 0) << t.output;
  const auto d = cli(dir, "distill --config run.conf --out out");
  ASSERT_EQ(d.code, 0) << d.output;
  EXPECT_NE(d.output.find("teacher unchanged"), std::string::npos);
  ASSERT_EQ(cli(dir, "hist --config run.conf --out out").code, 0);
  const auto r = cli(dir, "run --config run.conf --out out");
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string first = slurp(dir / "out" / "manifest.json");
  ASSERT_EQ(cli(dir, "run --config run.conf --out out").code, 0);
  EXPECT_EQ(slurp(dir / "out" / "manifest.json"), first);

  for (const char* rel : {"teachers/answer_prior_0.ckpt", "students/answer_prior_1.student",
                          "metrics/teacher_answer_prior_0.json", "metrics/student_answer_prior_1.csv",
                          "hist/answer_prior_0.json", "hist/answer_prior_1.csv", "timing.json"}) {
    EXPECT_TRUE(fs::exists(dir / "out" / rel)) << rel;
  }
  const Json hist = Json::parse(slurp(dir / "out" / "hist" / "answer_prior_0.json"));
  std::size_t total = 0;
  for (const auto& c : hist["counts"]) total += c.get<std::size_t>();
  EXPECT_EQ(total, 400u);
  const Json teacher = Json::parse(slurp(dir / "out" / "metrics" / "teacher_answer_prior_0.json"));
  EXPECT_EQ(teacher["epoch_loss"].size(), 2u);
  const Json report = teacher["id_readout"];
  EXPECT_DOUBLE_EQ(report["hm"].get<double>(),
                   harmonic_mean(report["id_accuracy"].get<double>(), report["ood_accuracy"].get<double>()));
}

TEST(Cli, AblationSuites) {
  const auto dir = with_config("ablate");
  ASSERT_EQ(cli(dir, "gen --config run.conf --out out").code, 0);
  EXPECT_EQ(cli(dir, "ablate --suite q9 --config run.conf --out out").code, 2);
  EXPECT_EQ(cli(dir, "ablate --config run.conf --out out").code, 2);
  const auto r = cli(dir, "ablate --suite q4 --config run.conf --out out");
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string csv = slurp(dir / "out" / "ablations" / "q4.csv");
  EXPECT_NE(csv.find("q4,CFD,0,"), std::string::npos) << csv;
  EXPECT_NE(csv.find("q4,IntroD,mean,"), std::string::npos) << csv;
  const Json j = Json::parse(slurp(dir / "out" / "ablations" / "q4.json"));
  EXPECT_EQ(j["rows"].size(), 8u);  // 2 seeds x (2 readouts + 2 students)
  EXPECT_EQ(j["seeds"], Json::parse("[0,1]"));
}

TEST(Cli, IncompatibleArtifactsExitWithFour) {
  const auto dir = with_config("artifacts");
  ASSERT_EQ(cli(dir, "gen --config run.conf --out out").code, 0);
  ASSERT_EQ(cli(dir, "train-teacher --config run.conf --out out").code, 0);

  // A checkpoint from a newer format version.
  const fs::path ckpt = dir / "out" / "teachers" / "answer_prior_0.ckpt";
  std::string bytes = slurp(ckpt);
  std::string bumped = bytes;
  bumped[4] = 42;
  std::ofstream(ckpt, std::ios::binary | std::ios::trunc) << bumped;
  const auto v = cli(dir, "distill --config run.conf --out out --seed 0");
  EXPECT_EQ(v.code, 4) << v.output;
  std::ofstream(ckpt, std::ios::binary | std::ios::trunc) << bytes;
  EXPECT_EQ(cli(dir, "distill --config run.conf --out out --seed 0").code, 0);

  // A teacher trained under a different teacher config.
  std::ofstream(dir / "gate.conf") << kTinyConfig << "teacher.fusion = SUM\n";
  EXPECT_EQ(cli(dir, "distill --config gate.conf --out out --seed 0").code, 4);

  // Datasets generated from another bias config.
  std::ofstream(dir / "sigma.conf") << kTinyConfig << "bias.noise_sigma = 0.3\n";
  EXPECT_EQ(cli(dir, "train-teacher --config sigma.conf --out out --seed 0").code, 4);

  // A truncated dataset.
  const fs::path data = dataset_path(dir / "out", Preset::answer_prior, 1, Split::train);
  const std::string d = slurp(data);
  std::ofstream(data, std::ios::binary | std::ios::trunc) << d.substr(0, d.size() / 2);
  EXPECT_EQ(cli(dir, "train-teacher --config run.conf --out out --seed 1").code, 4);
}

TEST(Cli, PositionPresetFromFlag) {
  const auto dir = with_config("position",
                               "seeds = 0\nbias.n_train = 300\nbias.n_id_test = 100\nbias.n_ood_test = 100\n"
                               "teacher.hidden = 8\nsgd_teacher.epochs = 1\nsgd_student.epochs = 1\n");
  const auto r = cli(dir, "run --config run.conf --preset position --out out");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir / "out" / "teachers" / "position_0.ckpt"));
  const Json m = Json::parse(slurp(dir / "out" / "manifest.json"));
  EXPECT_EQ(m["config"]["preset"], "position");
  EXPECT_EQ(m["config"]["teacher.fusion"], "SUM");
}
