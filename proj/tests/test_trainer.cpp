#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "riskbf/numerics/hash.hpp"
#include "riskbf/trainer.hpp"
#include "test_util.hpp"

using namespace riskbf;

namespace {

struct Fixture {
    NetworkConfig net;
    ArchConfig arch;
    TrainConfig tc;
    Dataset data;
};

Fixture small_setup() {
    Fixture s;
    s.net = NetworkConfig::uniform_layout(3, 2, 30.0, 60.0);
    s.net.sigma2.assign(3, -65.0);
    s.net.alpha = {1.0, 0.7, 0.5};
    s.arch.M = 2;
    s.arch.d_u = 2;
    s.arch.d_w = 2;
    s.arch.message = 4;
    s.arch.hidden = 8;
    s.arch.L = 2;
    s.tc.epochs = 3;
    s.tc.batch_size = 8;
    s.tc.micro_batch = 3;
    s.tc.warmup_epochs = 1;
    s.tc.eta_theta = 1e-2;
    s.tc.eta_t = 1e-2;
    s.tc.rate_scaling = RateScaling::physical;
    s.data = make_dataset(s.net, 3, 40);
    return s;
}

std::string temp_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("riskbf_test_" + name);
    std::filesystem::remove_all(p);
    return p.string();
}

}  // namespace

TEST(Schedule, ConstantThenGeometricDecay) {
    TrainConfig c;
    for (int e = 0; e < 5; ++e) {
        EXPECT_EQ(lr_schedule(e, c).theta, 1e-3);
        EXPECT_EQ(lr_schedule(e, c).t, 1e-5);
    }
    EXPECT_DOUBLE_EQ(lr_schedule(5, c).theta, 1e-3 * 0.794);
    EXPECT_DOUBLE_EQ(lr_schedule(5, c).t, 1e-5 * 0.912);
    EXPECT_DOUBLE_EQ(lr_schedule(9, c).theta, 1e-3 * std::pow(0.794, 5));
    EXPECT_THROW(lr_schedule(-1, c), std::invalid_argument);
}

TEST(TStep, Arithmetic) {
    Eigen::MatrixXd r(4, 2);
    r << 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0;
    const std::vector<double> t{1.5, 10.0}, gamma{2.0, 1.0}, alpha{0.5, 1.0};
    const auto next = t_step(t, r, 0.1, gamma, alpha);
    // user 1: 2 of 4 below t -> 1.5 + 0.1 * 4 * (0.5 - 0.5)
    EXPECT_DOUBLE_EQ(next[0], 1.5);
    // user 2: all below -> 10 + 0.1 * (1 - 1)
    EXPECT_DOUBLE_EQ(next[1], 10.0);
    const auto up = t_step(std::vector<double>{-1.0, 0.0}, r, 0.1, gamma, alpha);
    EXPECT_DOUBLE_EQ(up[0], -1.0 + 0.1 * 4.0 * 0.5);
    EXPECT_DOUBLE_EQ(up[1], 0.0 + 0.1 * 1.0);
}

// With a frozen rate distribution the threshold settles at the alpha-quantile.
TEST(TStep, TracksQuantileOfFixedDistribution) {
    SeededRng rng(1, StreamPurpose::test, 0);
    const std::vector<double> gamma{1.0, 1.0}, alpha{0.3, 0.8};
    std::vector<double> t{0.0, 0.0};
    for (int step = 0; step < 20000; ++step) {
        Eigen::MatrixXd r(16, 2);
        for (int s = 0; s < 16; ++s) {
            r(s, 0) = -std::log(rng.uniform());       // Exp(1)
            r(s, 1) = 2.0 * rng.uniform();            // U(0, 2)
        }
        t = t_step(t, r, 0.05 / (1.0 + step / 500.0), gamma, alpha);
    }
    EXPECT_NEAR(t[0], -std::log(1.0 - 0.3), 0.03);
    EXPECT_NEAR(t[1], 1.6, 0.03);
}

TEST(ThetaStep, GradientDescentOnQuadratic) {
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(3);
    const Eigen::VectorXd c = (Eigen::VectorXd(3) << 1.0, -2.0, 0.5).finished();
    for (int k = 0; k < 200; ++k) theta = theta_step(theta, theta - c, 0.1);
    EXPECT_LT((theta - c).norm(), 1e-8);
    Eigen::VectorXd bad = theta;
    bad[1] = std::nan("");
    EXPECT_THROW(theta_step(theta, bad, 0.1), std::runtime_error);
}

TEST(AdamStep, ConvergesOnQuadraticAndFirstStepIsSignLike) {
    TrainConfig c;
    AdamMoments mom;
    const Eigen::VectorXd c0 = (Eigen::VectorXd(2) << 3.0, -1.0).finished();
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(2);
    const Eigen::VectorXd first = adam_step(theta, theta - c0, 0.01, 1, mom, c);
    EXPECT_NEAR(first[0], 0.01, 1e-9);
    EXPECT_NEAR(first[1], -0.01, 1e-9);
    mom = {};
    for (long k = 1; k <= 3000; ++k) theta = adam_step(theta, theta - c0, 0.01, k, mom, c);
    EXPECT_LT((theta - c0).norm(), 1e-2);
}

TEST(HingeLoss, TapeMatchesSampleLoss) {
    SeededRng rng(2, StreamPurpose::test, 0);
    const ProblemInstance p{testutil::random_cx(rng, 2, 3), Eigen::VectorXd::Constant(3, 0.3), 1.0};
    const CxMatrix V = testutil::random_cx(rng, 2, 3, 0.3);
    const std::vector<double> t{0.5, 1.0, 0.1}, gamma{1.0, 2.0, 0.5}, alpha{0.3, 0.7, 1.0};
    Tape tape;
    const NodeId r = record_rates(tape, tape.constant(realify_columns(V)), std::span(&p, 1));
    const double tape_loss = tape.value(record_hinge_loss(tape, r, t, gamma, alpha))(0, 0);
    const SampleLoss direct = sample_loss(V, p, t, gamma, alpha);
    EXPECT_NEAR(tape_loss, direct.loss, 1e-12);
    double manual = 0.0;
    for (int i = 0; i < 3; ++i) manual += gamma[i] / alpha[i] * std::max(t[i] - direct.rates[i], 0.0);
    EXPECT_NEAR(direct.loss, manual, 1e-15);
}

TEST(BatchGradient, IndependentOfThreadCount) {
    const Fixture s = small_setup();
    const PolicyParams params = PolicyParams::init(s.arch, 1);
    std::vector<GraphSample> graphs;
    std::vector<ProblemInstance> inst;
    for (std::size_t k = 0; k < 11; ++k) {
        graphs.push_back(build_graph(s.data.samples[k], s.net, s.arch));
        inst.push_back(make_instance(s.data.samples[k], s.net, RateScaling::physical));
    }
    const std::vector<double> t{2.0, 2.0, 2.0};
    const BatchResult a = batch_gradient(params, graphs, inst, t, s.net.gamma, s.net.alpha, 4, 1);
    const BatchResult b = batch_gradient(params, graphs, inst, t, s.net.gamma, s.net.alpha, 4, 3);
    EXPECT_EQ(a.grad, b.grad);
    EXPECT_EQ(a.rates, b.rates);
    EXPECT_EQ(a.loss, b.loss);
    const BatchResult c = batch_gradient(params, graphs, inst, t, s.net.gamma, s.net.alpha, 11, 1);
    EXPECT_LT((a.grad - c.grad).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, c.grad.cwiseAbs().maxCoeff()));
}

TEST(EpochOrder, SeededPermutation) {
    const auto a = epoch_order(50, 3, 0), b = epoch_order(50, 3, 0), c = epoch_order(50, 3, 1);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> id(50);
    std::iota(id.begin(), id.end(), std::size_t{0});
    EXPECT_EQ(sorted, id);
}

TEST(TrainConfig, TextRoundTrip) {
    TrainConfig c;
    c.optimizer = Optimizer::adam;
    c.eta_t = 2e-3;
    c.rate_scaling = RateScaling::physical;
    const TrainConfig back = TrainConfig::from_kv(KeyValues::parse(c.to_text()));
    EXPECT_EQ(back.to_text(), c.to_text());
    EXPECT_THROW(TrainConfig::from_kv(KeyValues::parse("batch_size=0\n")), std::invalid_argument);
    EXPECT_THROW(TrainConfig::from_kv(KeyValues::parse("optimizer=lbfgs\n")), std::invalid_argument);
}

TEST(Train, DeterministicAcrossRunsAndThreads) {
    Fixture s = small_setup();
    const std::string d1 = temp_dir("train1"), d2 = temp_dir("train2");
    const TrainResult a = train(s.data, s.net, s.arch, s.tc, {d1, {}, {}});
    s.tc.threads = 2;
    const TrainResult b = train(s.data, s.net, s.arch, s.tc, {d2, {}, {}});
    EXPECT_EQ(a.state.hash(), b.state.hash());
    EXPECT_EQ(hash_file(d1 + "/checkpoint.ckpt"), hash_file(d2 + "/checkpoint.ckpt"));
    EXPECT_TRUE(std::filesystem::exists(d1 + "/checkpoint_epoch_002.ckpt"));
    EXPECT_TRUE(std::filesystem::exists(d1 + "/train_log.csv"));
    ASSERT_EQ(a.log.size(), 3u);
    EXPECT_EQ(a.log[0].steps, 5);
    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);
}

TEST(Train, ResumeReproducesUninterruptedRun) {
    for (Optimizer opt : {Optimizer::sgd, Optimizer::adam}) {
        Fixture s = small_setup();
        s.tc.optimizer = opt;
        const std::string dir = temp_dir("resume");
        const TrainResult full = train(s.data, s.net, s.arch, s.tc);
        TrainConfig first = s.tc;
        first.epochs = 2;
        train(s.data, s.net, s.arch, first, {dir, {}, {}});
        TrainHooks hooks;
        hooks.resume = read_train_checkpoint(dir + "/checkpoint.ckpt");
        EXPECT_EQ(hooks.resume->next_epoch, 2);
        const TrainResult resumed = train(s.data, s.net, s.arch, s.tc, hooks);
        EXPECT_EQ(resumed.state.hash(), full.state.hash()) << to_string(opt);
        std::filesystem::remove_all(dir);
    }
}

TEST(Train, ThresholdsMoveAndObjectiveIsLogged) {
    const Fixture s = small_setup();
    std::vector<EpochLog> seen;
    const TrainResult r = train(s.data, s.net, s.arch, s.tc, {{}, [&](const EpochLog& e) { seen.push_back(e); }, {}});
    ASSERT_EQ(seen.size(), 3u);
    for (const auto& e : seen) {
        EXPECT_TRUE(std::isfinite(e.objective));
        EXPECT_EQ(e.t.size(), 3u);
    }
    EXPECT_NE(r.state.t, std::vector<double>(3, 0.0));
    EXPECT_DOUBLE_EQ(seen[1].eta_theta, s.tc.eta_theta * s.tc.decay_theta);
}

TEST(Train, RejectsMismatchedInputs) {
    Fixture s = small_setup();
    NetworkConfig other = s.net;
    other.user_distances[1] = 44.0;
    EXPECT_THROW(train(s.data, other, s.arch, s.tc), std::invalid_argument);
    ArchConfig wrong = s.arch;
    wrong.M = 3;
    EXPECT_THROW(train(s.data, s.net, wrong, s.tc), std::invalid_argument);
}
