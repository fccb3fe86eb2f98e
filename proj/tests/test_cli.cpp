#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "riskbf/channel.hpp"
#include "riskbf/eval.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / ("riskbf_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        std::ofstream(d / "cell.txt") << "K=3\nM=2\nuser_distances=30,45,60\nsigma2=-65\ncell_seed=3\n"
                                         "hidden_width=8\nmessage_width=4\nd_u=2\nd_w=2\nL=2\nepochs=2\n"
                                         "batch_size=8\nmicro_batch=3\nrate_scaling=physical\noptimizer=adam\n"
                                         "eta_t=1e-2\nalpha=0.7\n";
        std::ofstream(d / "other.txt") << "K=3\nM=2\nuser_distances=30,45,70\nsigma2=-65\n";
        return d;
    }();
    return dir;
}

std::string path(const std::string& name) { return (work_dir() / name).string(); }

int run(const std::string& args) {
    const std::string cmd = std::string(RISKBF_CLI_PATH) + " " + args + " > " + path("last.log") + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string cfg() { return "--config " + path("cell.txt") + " "; }

void ensure_datasets() {
    if (!fs::exists(path("train.bin"))) {
        ASSERT_EQ(run(cfg() + "generate --n 40 --out " + path("train.bin")), 0);
        ASSERT_EQ(run(cfg() + "generate --n 25 --first-index 100000 --out " + path("test.bin")), 0);
    }
}

class CleanupWorkDir : public ::testing::Environment {
public:
    void TearDown() override { fs::remove_all(work_dir()); }
};

const auto* const cleanup = ::testing::AddGlobalTestEnvironment(new CleanupWorkDir);

}  // namespace

TEST(Cli, GenerateWritesDatasetAndManifest) {
    ensure_datasets();
    const riskbf::Dataset ds = riskbf::read_dataset(path("train.bin"));
    EXPECT_EQ(ds.samples.size(), 40u);
    EXPECT_EQ(ds.cell_seed, 3u);
    EXPECT_EQ(ds.config.K, 3);
    EXPECT_NE(slurp(path("train.bin.manifest.txt")).find("dataset_hash="), std::string::npos);
    ASSERT_EQ(run(cfg() + "generate --n 40 --out " + path("train2.bin")), 0);
    EXPECT_EQ(slurp(path("train.bin")), slurp(path("train2.bin")));
}

TEST(Cli, TrainIsReproducibleAcrossThreadCounts) {
    ensure_datasets();
    ASSERT_EQ(run(cfg() + "--threads 1 train --dataset " + path("train.bin") + " --out-dir " + path("run1")), 0);
    ASSERT_EQ(run(cfg() + "--threads 3 train --dataset " + path("train.bin") + " --out-dir " + path("run2")), 0);
    const std::string a = slurp(path("run1/checkpoint.ckpt"));
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, slurp(path("run2/checkpoint.ckpt")));
    EXPECT_TRUE(fs::exists(path("run1/train_log.csv")));
    EXPECT_TRUE(fs::exists(path("run1/manifest.txt")));
    ASSERT_EQ(run(cfg() + "--seed 9 train --dataset " + path("train.bin") + " --out-dir " + path("run3")), 0);
    EXPECT_NE(a, slurp(path("run3/checkpoint.ckpt")));
}

TEST(Cli, EvalIsBitReproducibleAndReparses) {
    ensure_datasets();
    if (!fs::exists(path("run1/checkpoint.ckpt")))
        ASSERT_EQ(run(cfg() + "train --dataset " + path("train.bin") + " --out-dir " + path("run1")), 0);
    const std::string base = cfg() + "eval --dataset " + path("test.bin") + " --checkpoint " +
                             path("run1/checkpoint.ckpt") + " --out ";
    ASSERT_EQ(run(base + path("e1.csv")), 0);
    ASSERT_EQ(run(base + path("e2.csv")), 0);
    EXPECT_EQ(slurp(path("e1.csv")), slurp(path("e2.csv")));
    EXPECT_EQ(slurp(path("e1_summary.csv")), slurp(path("e2_summary.csv")));
    const riskbf::EvalReport r = riskbf::read_report(path("e1.csv"));
    EXPECT_EQ(r.samples.rows(), 25);
    EXPECT_EQ(r.K(), 3);
    EXPECT_EQ(r.label, "argnn");
    EXPECT_TRUE(fs::exists(path("e1_histogram.csv")));
    EXPECT_TRUE(fs::exists(path("e1_manifest.txt")));
}

TEST(Cli, BaselineAndCompare) {
    ensure_datasets();
    ASSERT_EQ(run(cfg() + "baseline --dataset " + path("test.bin") + " --iters 20 --out " + path("w.csv")), 0);
    ASSERT_EQ(run(cfg() + "eval --initial --dataset " + path("test.bin") + " --out " + path("u.csv")), 0);
    const riskbf::EvalReport w = riskbf::read_report(path("w.csv"));
    const riskbf::EvalReport u = riskbf::read_report(path("u.csv"));
    EXPECT_EQ(w.samples.rows(), 25);
    EXPECT_GT(w.avg_sum_rate, u.avg_sum_rate);
    ASSERT_EQ(run(cfg() + "compare --reports " + path("w.csv") + " " + path("u.csv") + " --out " + path("c.csv")), 0);
    EXPECT_NE(slurp(path("c.csv")).find("diff_initial"), std::string::npos);
}

TEST(Cli, SweepEmitsOneRowPerLevelAndUser) {
    ensure_datasets();
    ASSERT_EQ(run(cfg() + "sweep --dataset " + path("train.bin") + " --test " + path("test.bin") +
                  " --grid 0.5,1.0 --out-dir " + path("sweep")),
              0);
    std::ifstream in(path("sweep/sweep.csv"));
    std::string line;
    int rows = 0;
    std::getline(in, line);
    while (std::getline(in, line)) rows += !line.empty();
    EXPECT_EQ(rows, 2 * 3);
    EXPECT_NE(run(cfg() + "sweep --dataset " + path("train.bin") + " --test " + path("test.bin") +
                  " --grid 1.5 --out-dir " + path("sweep_bad")),
              0);
}

TEST(Cli, ErrorsExitNonZero) {
    ensure_datasets();
    EXPECT_NE(run("--config " + path("other.txt") + " baseline --dataset " + path("test.bin") + " --out " +
                  path("x.csv")),
              0);
    EXPECT_NE(slurp(path("last.log")).find("error"), std::string::npos);
    EXPECT_NE(run(cfg() + "eval --dataset " + path("test.bin") + " --out " + path("x.csv")), 0);
    EXPECT_NE(run(cfg() + "generate --n 5"), 0);
    EXPECT_NE(run("--config " + path("missing.txt") + " generate --n 5 --out " + path("y.bin")), 0);
    ASSERT_EQ(run("--config " + path("other.txt") + " generate --n 5 --out " + path("other.bin")), 0);
    ASSERT_EQ(run("--config " + path("other.txt") + " baseline --dataset " + path("other.bin") + " --out " +
                  path("o.csv")),
              0);
    EXPECT_NE(run(cfg() + "compare --reports " + path("w.csv") + " " + path("o.csv") + " --out " + path("z.csv")), 0);
}
