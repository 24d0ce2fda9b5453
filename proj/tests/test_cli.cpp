#include <cstdlib>
#include <filesystem>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>

#include "fwsvd/checkpoint.hpp"
#include "fwsvd/factorizer.hpp"
#include "test_support.hpp"

using namespace fwsvd;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string("\"") + FWSVD_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// A small model, data set and Fisher sidecar written once per test process.
class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = fs::temp_directory_path() / ("fwsvd_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(dir_);
        Rng rng(3);
        const NetModel m = make_mlp(std::vector<std::size_t>{8, 8, 1},
                                    std::vector<Activation>{Activation::Tanh, Activation::Identity},
                                    LossHead::MeanSquaredError, true, rng);
        const Dataset d = fwsvd::testing::random_regression(40, 8, 1, rng);
        save_model(m, dir_ / "model.fwsv");
        save_dataset(d, dir_ / "data.fwsv");
        save_fisher(accumulate_fisher(m, d), dir_ / "fisher.fwsv");
    }
    static void TearDownTestSuite() { fs::remove_all(dir_); }
    static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, MissingSubcommandOrFlagIsUsageError) {
    EXPECT_EQ(run(""), 2);
    EXPECT_EQ(run("compress --model " + q(dir_ / "model.fwsv")), 2);
    EXPECT_EQ(run("frobnicate"), 2);
}

TEST_F(Cli, FwsvdWithoutFisherIsUsageErrorAndWritesNothing) {
    EXPECT_EQ(run("compress --model " + q(dir_ / "model.fwsv") + " --out " + q(dir_ / "x.fwsv")), 2);
    EXPECT_FALSE(fs::exists(dir_ / "x.fwsv"));
    EXPECT_EQ(run("compress --model " + q(dir_ / "model.fwsv") + " --method pca --out " + q(dir_ / "x.fwsv")), 2);
    EXPECT_EQ(run("compress --model " + q(dir_ / "model.fwsv") +
                  " --method svd --finetune-epochs 1 --out " + q(dir_ / "x.fwsv")),
              2);
}

TEST_F(Cli, SvdNeedsNoFisher) {
    EXPECT_EQ(run("compress --model " + q(dir_ / "model.fwsv") + " --method svd --ratio 0.5 --out " +
                  q(dir_ / "svd.fwsv")),
              0);
    EXPECT_TRUE(fs::exists(dir_ / "svd.fwsv.csv"));
}

TEST_F(Cli, FullRatioKeepsTheModel) {
    ASSERT_EQ(run("compress --model " + q(dir_ / "model.fwsv") + " --fisher " + q(dir_ / "fisher.fwsv") +
                  " --ratio 1.0 --out " + q(dir_ / "full.fwsv")),
              0);
    const Dataset d = load_dataset(dir_ / "data.fwsv");
    EXPECT_NEAR(evaluate(load_model(dir_ / "full.fwsv"), d, Metric::Loss),
                evaluate(load_model(dir_ / "model.fwsv"), d, Metric::Loss), 1e-8);
}

TEST_F(Cli, FisherSidecarKeysMatchModel) {
    ASSERT_EQ(run("fisher --model " + q(dir_ / "model.fwsv") + " --data " + q(dir_ / "data.fwsv") + " --out " +
                  q(dir_ / "f2.fwsv")),
              0);
    const FisherMap f = load_fisher(dir_ / "f2.fwsv");
    std::vector<std::string> keys;
    for (const auto& [k, v] : f.weights) keys.push_back(k);
    EXPECT_EQ(keys, load_model(dir_ / "model.fwsv").linear_layer_names());
}

TEST_F(Cli, BadRatioIsValidationError) {
    EXPECT_EQ(run("compress --model " + q(dir_ / "model.fwsv") + " --method svd --ratio 1.5 --out " +
                  q(dir_ / "bad.fwsv")),
              3);
    EXPECT_EQ(run("rank-sweep --model " + q(dir_ / "model.fwsv") + " --fisher " + q(dir_ / "fisher.fwsv") +
                  " --data " + q(dir_ / "data.fwsv") + " --ratios 0.5,0.2 --out " + q(dir_ / "s.csv")),
              3);
    EXPECT_EQ(run("rank-sweep --model " + q(dir_ / "model.fwsv") + " --fisher " + q(dir_ / "fisher.fwsv") +
                  " --data " + q(dir_ / "data.fwsv") + " --ratios 0.5,abc --out " + q(dir_ / "s.csv")),
              2);
}

TEST_F(Cli, MissingInputIsIoError) {
    EXPECT_EQ(run("compress --model " + q(dir_ / "absent.fwsv") + " --method svd --out " + q(dir_ / "o.fwsv")), 5);
}

TEST_F(Cli, NonFiniteGradientIsNumericalError) {
    const NetModel huge({{LinearLayer{"w", Matrix(1, 1, 1e200), std::nullopt}, Activation::Identity}},
                        LossHead::MeanSquaredError);
    Dataset d;
    d.inputs = Matrix::from_rows({{1e200}});
    d.targets = Matrix(1, 1);
    save_model(huge, dir_ / "huge.fwsv");
    save_dataset(d, dir_ / "huge_data.fwsv");
    EXPECT_EQ(run("fisher --model " + q(dir_ / "huge.fwsv") + " --data " + q(dir_ / "huge_data.fwsv") + " --out " +
                  q(dir_ / "hf.fwsv")),
              4);
}

TEST_F(Cli, SweepEmitsTenRowsPerMethod) {
    ASSERT_EQ(run("rank-sweep --model " + q(dir_ / "model.fwsv") + " --fisher " + q(dir_ / "fisher.fwsv") + " --data " +
                  q(dir_ / "data.fwsv") + " --out " + q(dir_ / "sweep.csv")),
              0);
    const auto bytes = read_file(dir_ / "sweep.csv");
    const std::string text(bytes.begin(), bytes.end());
    std::size_t svd_rows = 0, fw_rows = 0, pos = 0;
    while ((pos = text.find('\n', pos)) != std::string::npos) {
        ++pos;
        if (text.compare(pos, 4, "svd,") == 0) ++svd_rows;
        if (text.compare(pos, 6, "fwsvd,") == 0) ++fw_rows;
    }
    EXPECT_EQ(svd_rows, 10u);
    EXPECT_EQ(fw_rows, 10u);
}

TEST_F(Cli, TrainDemoCreatesMissingDirectory) {
    const fs::path out = dir_ / "deep" / "er";
    ASSERT_EQ(run("train-demo --seed 2 --epochs 1 --out " + q(out)), 0);
    for (const char* f : {"model.fwsv", "teacher.fwsv", "train.fwsv", "eval.fwsv"}) {
        EXPECT_TRUE(fs::exists(out / f)) << f;
        EXPECT_TRUE(fs::exists(manifest_path(out / f))) << f;
    }
}
