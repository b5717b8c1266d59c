#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"

using namespace ittr;
using namespace ittr::app;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("ittr_cli_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int cli(std::vector<std::string> args, std::string* captured = nullptr) {
  args.insert(args.begin(), "ittr");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  testing::internal::CaptureStdout();
  const int code = run_cli(static_cast<int>(argv.size()), argv.data());
  const std::string out = testing::internal::GetCapturedStdout();
  if (captured) *captured = out;
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

// Small enough that a run takes a few seconds.
std::vector<std::string> tiny_train(const fs::path& out, const std::string& iters = "4") {
  return {"train", "--synthetic", "--iters", iters, "--out", out.string(),
          "--set", "generator.channels=16", "--set", "generator.heads=2", "--set", "generator.hpb_count=2",
          "--set", "generator.feature_taps=[0,1,2]", "--set", "train.image_size=32", "--set", "train.disc_channels=8",
          "--set", "train.head_width=16", "--set", "nce.num_patches=16", "--set", "train.test_size=4",
          "--set", "train.train_size=8", "--set", "train.sample_every=0"};
}

}  // namespace

TEST(Config, ResolvedFileRoundTrips) {
  TempDir dir("roundtrip");
  Json overrides{{"generator.channels", 32}, {"nce.tau", 0.1}, {"train.precision", "double"}};
  const Settings s = resolve_settings(Json::object(), overrides);
  write_resolved(dir.path / "config.resolved", s);
  const Settings again = resolve_settings(read_config_file(dir.path / "config.resolved"), Json::object());
  EXPECT_EQ(again.values, s.values);
  EXPECT_EQ(generator_spec(again), generator_spec(s));
}

TEST(Config, Precedence) {
  EXPECT_EQ(resolve_settings({}, {}).integer("generator.channels"), 64);
  EXPECT_EQ(resolve_settings({{"profile", "full"}}, {}).integer("generator.channels"), 256);
  EXPECT_EQ(resolve_settings({{"profile", "full"}, {"generator.channels", 32}}, {}).integer("generator.channels"), 32);
  EXPECT_EQ(resolve_settings({{"generator.channels", 32}}, {{"generator.channels", 16}}).integer("generator.channels"),
            16);
  EXPECT_EQ(resolve_settings({{"profile", "full"}}, {{"profile", "desk"}}).integer("generator.heads"), 4);
}

TEST(Config, RejectsUnknownKeysAndBadTypes) {
  TempDir dir("reject");
  std::ofstream(dir.path / "bad.json") << R"({"generator.chanels": 3})";
  EXPECT_THROW(read_config_file(dir.path / "bad.json"), ConfigError);
  std::ofstream(dir.path / "nested.json") << R"({"generator": {"channels": 3}})";
  EXPECT_THROW(read_config_file(dir.path / "nested.json"), ConfigError);
  std::ofstream(dir.path / "broken.json") << "{";
  EXPECT_THROW(read_config_file(dir.path / "broken.json"), ConfigError);
  EXPECT_THROW(resolve_settings({{"generator.channels", "wide"}}, {}), ConfigError);
  EXPECT_THROW(resolve_settings({{"generator.channels", 1.5}}, {}), ConfigError);
  EXPECT_THROW(resolve_settings({}, {{"profile", "huge"}}), ConfigError);
  EXPECT_THROW(parse_override("nope=1"), ConfigError);
  EXPECT_THROW(parse_override("generator.channels"), ConfigError);
  EXPECT_EQ(parse_override("train.precision=double").second, "double");
  EXPECT_EQ(parse_override("generator.feature_taps=[0,2]").second, Json::parse("[0,2]"));
  EXPECT_EQ(cli({"verify", "--set", "no.such.key=1"}), kExitUsage);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}), kExitUsage);
  EXPECT_EQ(cli({"fly"}), kExitUsage);
  EXPECT_EQ(cli({"train", "--bogus"}), kExitUsage);
  EXPECT_EQ(cli({"train"}), kExitUsage);  // neither --synthetic nor --data
  TempDir dir("usage");
  EXPECT_EQ(cli({"train", "--data", (dir.path / "missing").string(), "--out", (dir.path / "run").string()}),
            kExitUsage);
  EXPECT_EQ(cli({"translate", "--checkpoint", (dir.path / "none").string(), "--input", dir.path.string(), "--out",
                 (dir.path / "o").string()}),
            kExitUsage);
}

TEST(Cli, ThreadLimitIsValidated) {
  ::setenv("ITTR_THREADS", "zero", 1);
  EXPECT_THROW(thread_limit_from_env(), ConfigError);
  EXPECT_EQ(cli({"verify", "--set", "seed=1"}), kExitUsage);
  ::setenv("ITTR_THREADS", "0", 1);
  EXPECT_THROW(thread_limit_from_env(), ConfigError);
  ::setenv("ITTR_THREADS", "2", 1);
  EXPECT_EQ(thread_limit_from_env(), 2);
  ::unsetenv("ITTR_THREADS");
  EXPECT_EQ(thread_limit_from_env(), 0);
}

TEST(Cli, TrainSmokeWithDefaults) {
  TempDir dir("smoke");
  const fs::path run = dir.path / "run";
  ASSERT_EQ(cli({"train", "--synthetic", "--iters", "10", "--out", run.string(), "--set", "train.test_size=8"}),
            kExitOk);
  EXPECT_EQ(count_lines(run / kHistoryFile), 11u);
  EXPECT_TRUE(fs::exists(run / kManifestFile));
  EXPECT_TRUE(fs::exists(run / "eval.json"));
  const Settings s = resolve_settings(read_config_file(run / "config.resolved"), {});
  EXPECT_EQ(s.integer("train.iterations"), 10);
  EXPECT_TRUE(s.flag("data.synthetic"));
  EXPECT_EQ(s.integer("generator.channels"), 64);
}

TEST(Cli, SameSeedGivesIdenticalHistoryInDouble) {
  TempDir dir("seed");
  std::string first;
  for (const char* name : {"a", "b"}) {
    auto args = tiny_train(dir.path / name);
    args.insert(args.end(), {"--seed", "7", "--set", "train.precision=double"});
    ASSERT_EQ(cli(args), kExitOk);
    const std::string csv = slurp(dir.path / name / kHistoryFile);
    EXPECT_EQ(count_lines(dir.path / name / kHistoryFile), 5u);
    if (first.empty()) first = csv;
    else EXPECT_EQ(csv, first);
  }
  auto other = tiny_train(dir.path / "c");
  other.insert(other.end(), {"--seed", "8", "--set", "train.precision=double"});
  ASSERT_EQ(cli(other), kExitOk);
  EXPECT_NE(slurp(dir.path / "c" / kHistoryFile), first);
}

TEST(Cli, ResumeContinuesHistory) {
  TempDir dir("resume");
  const fs::path run = dir.path / "run";
  ASSERT_EQ(cli(tiny_train(run, "3")), kExitOk);
  auto more = tiny_train(run, "5");
  more.push_back("--resume");
  std::string out;
  ASSERT_EQ(cli(more, &out), kExitOk);
  EXPECT_NE(out.find("resumed at iteration 3"), std::string::npos);
  EXPECT_EQ(count_lines(run / kHistoryFile), 6u);
}

TEST(Cli, TranslateFolder) {
  TempDir dir("translate");
  const fs::path run = dir.path / "run", in = dir.path / "in";
  ASSERT_EQ(cli(tiny_train(run, "2")), kExitOk);
  fs::create_directories(in);
  Rng rng(3);
  const std::vector<std::pair<std::string, Index>> inputs{{"a.png", 32}, {"b.png", 30}, {"c.png", 17}};
  for (const auto& [name, side] : inputs) {
    Image im(side, side + 4);
    for (auto& p : im.pixels) p = static_cast<float>(uniform(rng, -1, 1));
    save_image(im, in / name);
  }
  std::ofstream(in / "notes.txt") << "ignored";
  for (const char* out : {"o1", "o2"})
    ASSERT_EQ(cli({"translate", "--checkpoint", run.string(), "--input", in.string(), "--output",
                   (dir.path / out).string()}),
              kExitOk);
  for (const auto& [name, side] : inputs) {
    ASSERT_TRUE(fs::exists(dir.path / "o1" / name)) << name;
    const Image y = load_image(dir.path / "o1" / name);
    EXPECT_EQ(y.height, side);
    EXPECT_EQ(y.width, side + 4);
    EXPECT_EQ(slurp(dir.path / "o1" / name), slurp(dir.path / "o2" / name));
  }
  size_t pngs = 0;
  for (const auto& e : fs::directory_iterator(dir.path / "o1")) pngs += e.path().extension() == ".png";
  EXPECT_EQ(pngs, inputs.size());
  EXPECT_TRUE(fs::exists(dir.path / "o1" / "config.resolved"));
}

TEST(Cli, TranslateRandomInitCheckpoint) {
  TempDir dir("init");
  GeneratorSpec spec;
  spec.channels = 16;
  spec.heads = 2;
  spec.hpb_count = 1;
  spec.feature_taps = {0, 1};
  spec.finalize();
  TrainConfig cfg;
  cfg.disc_channels = 8;
  cfg.head_width = 8;
  const TrainState<float> state(spec, cfg);
  save_checkpoint(dir.path / "ckpt", state, {});
  fs::create_directories(dir.path / "in");
  save_image(Image(16, 16, 0.3f), dir.path / "in" / "x.png");
  ASSERT_EQ(cli({"translate", "--checkpoint", (dir.path / "ckpt").string(), "--input", (dir.path / "in").string(),
                 "--out", (dir.path / "out").string()}),
            kExitOk);
  const Image y = load_image(dir.path / "out" / "x.png");
  for (float v : y.pixels) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Cli, TranslateRejectsMismatchedManifest) {
  TempDir dir("mismatch");
  const fs::path run = dir.path / "run";
  ASSERT_EQ(cli(tiny_train(run, "1")), kExitOk);
  fs::create_directories(dir.path / "in");
  save_image(Image(32, 32, 0.0f), dir.path / "in" / "x.png");
  auto kv = read_manifest(run / kManifestFile);
  kv["format.version"] = "99";
  write_manifest(run / kManifestFile, kv);
  EXPECT_EQ(cli({"translate", "--checkpoint", run.string(), "--input", (dir.path / "in").string(), "--out",
                 (dir.path / "out").string()}),
            kExitUsage);
  kv["format.version"] = kFormatVersion;
  kv["generator.channels"] = "24";
  write_manifest(run / kManifestFile, kv);
  EXPECT_EQ(cli({"translate", "--checkpoint", run.string(), "--input", (dir.path / "in").string(), "--out",
                 (dir.path / "out").string()}),
            kExitUsage);
}

TEST(Cli, BenchReportMatchesCounter) {
  TempDir dir("bench");
  std::string out;
  ASSERT_EQ(cli({"bench", "--no-timing", "--sizes", "64", "--out", dir.path.string()}, &out), kExitOk);
  const std::string csv = slurp(dir.path / "bench.csv");
  EXPECT_NE(csv.find("published,256,8500000,45800000000"), std::string::npos);
  EXPECT_NE(slurp(dir.path / "bench.md").find("45.8"), std::string::npos);
  EXPECT_NE(out.find("1/16"), std::string::npos);  // 16x16 body, N_s = 4: 256 / 16

  const Settings s = resolve_settings({{"profile", "full"}}, {});
  for (auto variant : {AttentionVariant::dense, AttentionVariant::dpsa}) {
    GeneratorSpec spec = generator_spec(s);
    spec.attention = variant;
    spec.finalize();
    Rng rng = derive_rng(0, {0xBE7C});
    const Cost c = Generator<float>(spec, rng).cost(64, 64);
    const std::string row = to_string(variant) + ",64," + std::to_string(c.params) + "," + std::to_string(c.macs) + ",";
    EXPECT_NE(csv.find(row), std::string::npos) << row;
  }
}

TEST(Cli, BenchTimesForwardPasses) {
  TempDir dir("bench_time");
  ASSERT_EQ(cli({"bench", "--sizes", "32", "--runs", "2", "--set", "profile=desk", "--set", "generator.hpb_count=1",
                 "--set", "generator.feature_taps=[0,1]", "--out", dir.path.string()}),
            kExitOk);
  std::ifstream in(dir.path / "bench.csv");
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  EXPECT_EQ(line.rfind("dense,32,", 0), 0u);
  const auto ms_field = line.substr(0, line.rfind(','));
  EXPECT_GT(std::stod(ms_field.substr(ms_field.rfind(',') + 1)), 0.0);
}

TEST(Cli, VerifyPassesAndNegativeControlFails) {
  TempDir dir("verify");
  std::string out;
  EXPECT_EQ(cli({"verify", "--out", dir.path.string()}, &out), kExitOk) << out;
  EXPECT_NE(out.find("tolerance"), std::string::npos);
  EXPECT_EQ(out.find("FAIL"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir.path / "verify.txt"));
  EXPECT_TRUE(fs::exists(dir.path / "config.resolved"));

  std::string broken;
  EXPECT_EQ(cli({"verify", "--break-l2norm"}, &broken), kExitFailure);
  const auto fail = broken.find("FAIL  factorization");
  EXPECT_NE(fail, std::string::npos) << broken;
  EXPECT_EQ(broken.find("FAIL", fail + 4), std::string::npos) << "only the factorization check should fail";
}
