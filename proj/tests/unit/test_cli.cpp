#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "metarefine/cli/commands.hpp"

using namespace metarefine;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "metarefine");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("metarefine_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }
  std::string dir(const std::string& name) const { return (root_ / name).string(); }

  // small benchmark so the training commands stay fast
  std::string make_data(double rho, const std::string& name = "data") {
    auto r = invoke({"generate", "--seed", "5", "--dim", "3", "--rho", std::to_string(rho), "--n-train", "96", "--n-val",
                  "32", "--n-test-nominal", "40", "--n-test-anomalous", "40", "--out", dir(name)});
    EXPECT_EQ(r.code, 0) << r.err;
    return dir(name);
  }

  fs::path root_;
};

const std::vector<std::string> kSmallFlow{"--blocks", "2", "--hidden", "16"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_F(Cli, GenerateWritesLoadableDataset) {
  auto r = invoke({"generate", "--dim", "8", "--rho", "0.1", "--seed", "7", "--out", dir("gen")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto ds = data::load_features(fs::path(dir("gen")) / "dataset.csv");
  EXPECT_NO_THROW(ds.validate());
  EXPECT_EQ(ds.dim(), 8u);
  EXPECT_EQ(ds.where(data::Split::train).count(data::Label::anomalous), data::injection_count(0.1, 256));
  auto m = nlohmann::json::parse(slurp(fs::path(dir("gen")) / "manifest.json"));
  EXPECT_EQ(m["seed"], 7);
  EXPECT_EQ(m["command"], "generate");
}

TEST_F(Cli, RhoAboveHalfRejected) {
  auto r = invoke({"generate", "--rho", "0.6", "--seed", "1", "--out", dir("x")});
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_NE(r.err.find("rho"), std::string::npos);
}

TEST_F(Cli, SeedIsMandatory) {
  auto r = invoke({"generate", "--out", dir("x")});
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_NE(r.err.find("seed"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir("x")));
}

TEST_F(Cli, UnknownSubcommandOrFlag) {
  EXPECT_EQ(invoke({"bogus"}).code, cli::kUsage);
  EXPECT_EQ(invoke({"generate", "--seed", "1", "--frobnicate", "3"}).code, cli::kUsage);
  EXPECT_EQ(invoke({}).code, cli::kUsage);
  EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST_F(Cli, TrainZeroEpochsSavesInit) {
  auto data = make_data(0.0);
  auto r = invoke(with({"train", "--seed", "9", "--data", data, "--epochs", "0", "--out", dir("m")}, kSmallFlow));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(flow::load_model(fs::path(dir("m")) / "model.bin"), flow::init_flow(3, 2, 16, 9));
}

TEST_F(Cli, TrainReducesNllAndIsReproducible) {
  auto data = make_data(0.0);
  auto args = with({"train", "--seed", "9", "--data", data, "--epochs", "10", "--lr", "5e-3"}, kSmallFlow);
  ASSERT_EQ(invoke(with(args, {"--out", dir("a")})).code, 0);
  ASSERT_EQ(invoke(with(args, {"--out", dir("b")})).code, 0);
  EXPECT_EQ(slurp(fs::path(dir("a")) / "model.bin"), slurp(fs::path(dir("b")) / "model.bin"));

  std::istringstream log(slurp(fs::path(dir("a")) / "train_log.csv"));
  std::string line, first, last;
  std::getline(log, line);
  EXPECT_EQ(line, "epoch,train_nll");
  std::getline(log, first);
  while (std::getline(log, line)) last = line;
  const double before = std::stod(first.substr(first.find(',') + 1));
  const double after = std::stod(last.substr(last.find(',') + 1));
  EXPECT_LT(after, before);
  EXPECT_EQ(last.substr(0, last.find(',')), "10");
}

TEST_F(Cli, TrainMissingDataIsIoError) {
  auto r = invoke({"train", "--seed", "1", "--data", dir("nowhere.csv"), "--out", dir("m")});
  EXPECT_EQ(r.code, cli::kIo);
}

TEST_F(Cli, TrainMalformedDataIsDataError) {
  std::ofstream(dir("bad.csv")) << "id,label,split,f0\na,nominal,train,oops\n";
  auto r = invoke({"train", "--seed", "1", "--data", dir("bad.csv"), "--out", dir("m")});
  EXPECT_EQ(r.code, cli::kData);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
}

TEST_F(Cli, RefineOnCleanDataDeletesNoAnomalies) {
  auto data = make_data(0.0);
  auto r = invoke(with({"refine", "--seed", "3", "--data", data, "--max-epochs", "4", "--out", dir("r")}, kSmallFlow));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"model.bin", "meta_log.csv", "refine_log.csv", "rejection_report.csv", "manifest.json"})
    EXPECT_TRUE(fs::exists(fs::path(dir("r")) / f)) << f;
  auto report = slurp(fs::path(dir("r")) / "rejection_report.csv");
  std::istringstream is(report);
  std::string line;
  std::getline(is, line);
  std::size_t good = 0, bad = 0;
  while (std::getline(is, line)) {
    auto c1 = line.find(','), c2 = line.rfind(',');
    const auto g = std::stoul(line.substr(c1 + 1, c2 - c1 - 1)), b = std::stoul(line.substr(c2 + 1));
    if (line.rfind("total", 0) == 0) {
      EXPECT_EQ(g, good);
      EXPECT_EQ(b, bad);
      EXPECT_EQ(b, 0u);
    } else {
      good += g;
      bad += b;
    }
  }
  auto m = nlohmann::json::parse(slurp(fs::path(dir("r")) / "manifest.json"));
  EXPECT_EQ(m["deleted_bad"], 0);
  EXPECT_EQ(m["run_config"]["meta"]["first_order"], true);
}

TEST_F(Cli, EvalWritesResultAndInfersVariant) {
  auto data = make_data(0.1);
  ASSERT_EQ(invoke(with({"refine", "--seed", "3", "--data", data, "--max-epochs", "3", "--out", dir("r")}, kSmallFlow)).code,
            0);
  auto r = invoke({"eval", "--seed", "3", "--model", dir("r"), "--data", data, "--out", dir("e")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto e = nlohmann::json::parse(slurp(fs::path(dir("e")) / "eval.json"));
  EXPECT_EQ(e["variant"], "refined");
  EXPECT_EQ(e["n_nominal"], 40);
  EXPECT_EQ(e["n_anomalous"], 40);
  EXPECT_GE(e["auroc_exact"].get<double>(), 0.0);
  EXPECT_LE(e["auroc_exact"].get<double>(), 1.0);
  EXPECT_NEAR(e["rho"].get<double>(), 0.1, 0.01);
  EXPECT_EQ(invoke({"eval", "--seed", "3", "--model", dir("r"), "--data", data, "--variant", "sideways"}).code,
            cli::kUsage);
}

TEST_F(Cli, EvalCorruptModelIsDataError) {
  auto data = make_data(0.0);
  std::ofstream(dir("broken.bin")) << "MRNFLOW";
  EXPECT_EQ(invoke({"eval", "--seed", "1", "--model", dir("broken.bin"), "--data", data, "--out", dir("e")}).code,
            cli::kData);
}

TEST_F(Cli, SweepCardinalityAndReproducibility) {
  std::vector<std::string> args{"sweep", "--levels", "0,0.1,0.2", "--seeds", "1,2,3", "--dim", "2", "--n-train", "64",
                                "--n-val", "32", "--n-test-nominal", "20", "--n-test-anomalous", "20", "--blocks", "2",
                                "--hidden", "8", "--outer-steps", "3", "--max-epochs", "2", "--batch-size", "16"};
  auto a = invoke(with(args, {"--out", dir("s1")}));
  ASSERT_EQ(a.code, 0) << a.err;
  auto b = invoke(with(args, {"--out", dir("s2"), "--jobs", "2"}));
  ASSERT_EQ(b.code, 0) << b.err;
  for (const char* f : {"auroc_table.csv", "deletions.csv", "per_seed.csv", "manifest.json", "series_refined.csv",
                        "series_unrefined.csv"})
    EXPECT_EQ(slurp(fs::path(dir("s1")) / f), slurp(fs::path(dir("s2")) / f)) << f;

  std::istringstream per_seed(slurp(fs::path(dir("s1")) / "per_seed.csv"));
  std::string line;
  std::size_t rows = 0;
  std::getline(per_seed, line);
  while (std::getline(per_seed, line)) ++rows;
  EXPECT_EQ(rows, 9u);
  auto table = slurp(fs::path(dir("s1")) / "auroc_table.csv");
  EXPECT_NE(table.find("\nrefined,"), std::string::npos);
  EXPECT_NE(table.find("\nunrefined,"), std::string::npos);
  auto m = nlohmann::json::parse(slurp(fs::path(dir("s1")) / "manifest.json"));
  EXPECT_EQ(m["seeds"], nlohmann::json({1, 2, 3}));

  // the manifest alone reproduces the run
  auto c = invoke({"sweep", "--config", (fs::path(dir("s1")) / "manifest.json").string(), "--out", dir("s3")});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(slurp(fs::path(dir("s1")) / "per_seed.csv"), slurp(fs::path(dir("s3")) / "per_seed.csv"));
}

TEST_F(Cli, SweepCellFailuresExitNonZero) {
  auto r = invoke({"sweep", "--levels", "0.1", "--seeds", "1", "--dim", "2", "--n-train", "40", "--support", "500",
                "--out", dir("s")});
  EXPECT_EQ(r.code, cli::kCellFailures);
  EXPECT_TRUE(fs::exists(fs::path(dir("s")) / "manifest.json"));
}

TEST_F(Cli, ConfigFileAndValidation) {
  std::ofstream(dir("cfg.json")) << R"({"seed": 11, "rho": 0.2, "data": {"dim": 4, "n_train": 50}})";
  auto r = invoke({"generate", "--config", dir("cfg.json"), "--out", dir("g")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto ds = data::load_features(fs::path(dir("g")) / "dataset.csv");
  EXPECT_EQ(ds.dim(), 4u);
  EXPECT_EQ(ds.where(data::Split::train).count(data::Label::anomalous), data::injection_count(0.2, 50));

  std::ofstream(dir("typo.json")) << R"({"seed": 1, "data": {"dimm": 4}})";
  auto t = invoke({"generate", "--config", dir("typo.json"), "--out", dir("g2")});
  EXPECT_EQ(t.code, cli::kUsage);
  EXPECT_NE(t.err.find("data.dimm"), std::string::npos) << t.err;

  std::ofstream(dir("garbage.json")) << "{not json";
  EXPECT_EQ(invoke({"generate", "--config", dir("garbage.json")}).code, cli::kUsage);
  EXPECT_EQ(invoke({"generate", "--seed", "1", "--config", dir("absent.json")}).code, cli::kIo);
}

TEST_F(Cli, PaperProfile) {
  cli::Overrides o;
  o.profile = "paper";
  o.seed = 1;
  auto c = cli::resolve(o);
  EXPECT_EQ(c.epochs, 240u);
  EXPECT_EQ(c.refine.max_epochs, 240u);
  EXPECT_EQ(c.batch_size, 96u);
  EXPECT_EQ(c.n_blocks, 8u);
  EXPECT_EQ(c.hidden, 2048u);
  EXPECT_DOUBLE_EQ(c.lr, 2e-4);
  o.profile = "desk";
  auto d = cli::resolve(o);
  EXPECT_EQ(d.epochs, 40u);
  EXPECT_EQ(d.n_blocks, 4u);
  o.profile = "huge";
  EXPECT_THROW(cli::resolve(o), ConfigError);
}

TEST(ExitCodes, DistinctPerErrorFamily) {
  EXPECT_EQ(cli::exit_code(ErrorKind::usage), 2);
  EXPECT_EQ(cli::exit_code(ErrorKind::config), 2);
  EXPECT_EQ(cli::exit_code(ErrorKind::data), 3);
  EXPECT_EQ(cli::exit_code(ErrorKind::parse), 3);
  EXPECT_EQ(cli::exit_code(ErrorKind::numeric), 4);
  EXPECT_EQ(cli::exit_code(ErrorKind::divergence), 4);
  EXPECT_EQ(cli::exit_code(ErrorKind::io), 5);
}
