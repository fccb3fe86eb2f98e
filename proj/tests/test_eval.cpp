#include <cmath>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "riskbf/eval.hpp"
#include "test_util.hpp"

using namespace riskbf;

namespace {

NetworkConfig cell() {
    NetworkConfig c = NetworkConfig::uniform_layout(3, 2, 30.0, 60.0);
    c.sigma2.assign(3, -65.0);
    return c;
}

Eigen::MatrixXd random_rates(SeededRng& rng, int n, int K) {
    Eigen::MatrixXd r(n, K);
    for (Eigen::Index k = 0; k < r.size(); ++k) r.data()[k] = rng.uniform() < 0.1 ? 0.0 : 3.0 * rng.uniform();
    return r;
}

}  // namespace

TEST(Histogram, CountsAndDensity) {
    SeededRng rng(1, StreamPurpose::test, 0);
    std::vector<double> x(1000);
    for (auto& v : x) v = rng.normal();
    const Histogram h = histogram(x, 37, true);
    EXPECT_EQ(h.total(), 1000);
    ASSERT_EQ(h.edges.size(), 38u);
    double area = 0.0;
    for (double y : h.heights()) area += y * h.width();
    EXPECT_NEAR(area, 1.0, 1e-12);
    const Histogram raw = histogram(x, 37, false);
    EXPECT_EQ(raw.counts, h.counts);
    EXPECT_EQ(raw.heights()[5], static_cast<double>(raw.counts[5]));
}

TEST(Histogram, EdgesAndClamping) {
    const std::vector<double> x{0.0, 0.5, 1.0, 2.0, -3.0};
    const Histogram h = histogram(x, 2, 0.0, 1.0);
    EXPECT_EQ(h.counts, (std::vector<long long>{2, 3}));
    const Histogram flat = histogram(std::vector<double>{2.0, 2.0}, 4);
    EXPECT_EQ(flat.total(), 2);
    EXPECT_DOUBLE_EQ(flat.edges.front(), 1.5);
    EXPECT_THROW(histogram(x, 0), std::invalid_argument);
}

TEST(Report, SummariesMatchMetricFunctions) {
    SeededRng rng(2, StreamPurpose::test, 0);
    const Eigen::MatrixXd r = random_rates(rng, 200, 3);
    const EvalReport rep = make_report("x", 1, 2, r);
    EXPECT_NEAR(rep.avg_sum_rate, r.sum() / 200.0, 1e-12);
    for (int i = 0; i < 3; ++i) {
        const auto xi = rep.user_samples(i);
        EXPECT_DOUBLE_EQ(rep.users[i].mean, sample_stats(xi).mean);
        EXPECT_DOUBLE_EQ(rep.users[i].stddev, sample_stats(xi).stddev);
        EXPECT_DOUBLE_EQ(rep.users[i].sharpe.value, sharpe_ratio(xi).value);
        EXPECT_DOUBLE_EQ(rep.users[i].zero_rate_fraction, zero_rate_fraction(xi, 0.01));
        EXPECT_EQ(rep.histograms[i].total(), 200);
        EXPECT_EQ(rep.histograms[i].edges, rep.histograms[0].edges);
    }
}

TEST(Report, CsvRoundTripIsExact) {
    SeededRng rng(3, StreamPurpose::test, 0);
    ReportOptions opts;
    opts.bins = 17;
    opts.density = true;
    const EvalReport rep = make_report("risk-aware", 0xabcdef, 0x123, random_rates(rng, 50, 3), opts);
    std::stringstream ss;
    write_report_samples_csv(rep, ss);
    const EvalReport back = read_report_samples_csv(ss);
    EXPECT_EQ(back.label, "risk-aware");
    EXPECT_EQ(back.dataset_hash, 0xabcdefu);
    EXPECT_EQ(back.config_hash, 0x123u);
    EXPECT_EQ(back.samples, rep.samples);
    EXPECT_EQ(back.histograms, rep.histograms);
    EXPECT_EQ(back.bins, 17);
    EXPECT_TRUE(back.density);
}

TEST(Report, SummaryCsvHasOneRowPerUser) {
    SeededRng rng(4, StreamPurpose::test, 0);
    const EvalReport rep = make_report("m", 1, 1, random_rates(rng, 20, 4));
    std::stringstream ss;
    write_report_summary_csv(rep, ss);
    std::string line;
    int data_rows = 0;
    while (std::getline(ss, line))
        if (!line.empty() && line[0] != '#' && line.rfind("user,", 0) != 0) ++data_rows;
    EXPECT_EQ(data_rows, 4);
}

TEST(Evaluate, WmmseAndPolicyMatchDirectComputation) {
    const NetworkConfig c = cell();
    const Dataset test = make_dataset(c, 2, 6);
    EvalSetup setup;
    setup.net = c;
    setup.rate_scaling = RateScaling::physical;
    const EvalReport w = evaluate_wmmse(test, setup, 20);
    ArchConfig arch;
    arch.M = 2;
    arch.hidden = 8;
    arch.message = 4;
    arch.d_u = arch.d_w = 2;
    arch.L = 2;
    const PolicyParams params = PolicyParams::init(arch, 1);
    const EvalReport g = evaluate_policy(params, test, setup, "gnn");
    for (std::size_t s = 0; s < test.samples.size(); ++s) {
        const ProblemInstance p = make_instance(test.samples[s], c, RateScaling::physical);
        const Eigen::VectorXd rw = wmmse_solve(p, c.gamma, 20).rates / kLn2;
        const CxMatrix V = unfold_forward(build_graph(test.samples[s], c, arch), params, c.power_mw()).V;
        const Eigen::VectorXd rg = user_rates(V, p.H, p.sigma2) / kLn2;
        for (int i = 0; i < 3; ++i) {
            EXPECT_NEAR(w.samples(static_cast<Eigen::Index>(s), i), rw[i], 1e-12);
            EXPECT_NEAR(g.samples(static_cast<Eigen::Index>(s), i), rg[i], 1e-12);
        }
    }
    EXPECT_EQ(w.dataset_hash, test.fingerprint());
    const EvalReport again = evaluate_policy(params, test, setup, "gnn");
    EXPECT_EQ(again.samples, g.samples);
}

TEST(Evaluate, RejectsForeignTestSet) {
    NetworkConfig other = cell();
    other.user_distances[2] = 70.0;
    EvalSetup setup;
    setup.net = other;
    EXPECT_THROW(evaluate_wmmse(make_dataset(cell(), 1, 2), setup), std::invalid_argument);
}

TEST(Compare, DifferencesAgainstFirstReport) {
    SeededRng rng(5, StreamPurpose::test, 0);
    const EvalReport a = make_report("a", 7, 0, random_rates(rng, 30, 2));
    const EvalReport b = make_report("b", 7, 0, random_rates(rng, 30, 2));
    const std::vector<EvalReport> reps{a, b};
    const Comparison c = compare(reps);
    EXPECT_EQ(c.labels, (std::vector<std::string>{"a", "b"}));
    ASSERT_EQ(c.rows.size(), 2u);
    EXPECT_EQ(c.rows[1].stddev[1], b.users[1].stddev);
    std::stringstream ss;
    write_comparison_csv(c, ss);
    EXPECT_NE(ss.str().find("diff_b"), std::string::npos);
    const std::vector<EvalReport> mixed{a, make_report("c", 8, 0, random_rates(rng, 30, 2))};
    EXPECT_THROW(compare(mixed), std::invalid_argument);
}

TEST(Sweep, RowsPerLevelAndUser) {
    SeededRng rng(6, StreamPurpose::test, 0);
    const std::vector<double> grid{0.3, 1.0};
    const auto rows = alpha_sweep([&](double) { return make_report("s", 1, 1, random_rates(rng, 10, 3)); }, grid);
    ASSERT_EQ(rows.size(), 6u);
    EXPECT_EQ(rows[4].alpha, 1.0);
    EXPECT_EQ(rows[4].user, 2);
    const std::vector<double> bad{0.0};
    EXPECT_THROW(alpha_sweep([&](double) { return make_report("s", 1, 1, random_rates(rng, 10, 3)); }, bad),
                 std::invalid_argument);
}

TEST(Histogram, ConstantAndGridInputs) {
    const Histogram one = histogram(std::vector<double>(50, 1.25), 200);
    int nonzero = 0;
    for (long long c : one.counts) nonzero += c > 0;
    EXPECT_EQ(nonzero, 1);
    std::vector<double> grid(1000);
    for (int k = 0; k < 1000; ++k) grid[static_cast<std::size_t>(k)] = k / 999.0;
    const Histogram flat = histogram(grid, 20);
    for (long long c : flat.counts) EXPECT_NEAR(static_cast<double>(c), 50.0, 1.0);
    EXPECT_THROW(histogram(std::vector<double>{}, 10), std::invalid_argument);
}

TEST(Report, HistogramMeanWithinOneBinOfExactMean) {
    SeededRng rng(8, StreamPurpose::test, 0);
    const EvalReport rep = make_report("m", 1, 1, random_rates(rng, 500, 3));
    for (int i = 0; i < 3; ++i) {
        const Histogram& h = rep.histograms[static_cast<std::size_t>(i)];
        double m = 0.0;
        for (std::size_t b = 0; b < h.counts.size(); ++b)
            m += 0.5 * (h.edges[b] + h.edges[b + 1]) * static_cast<double>(h.counts[b]);
        EXPECT_LE(std::abs(m / static_cast<double>(h.total()) - rep.users[i].mean), h.width());
    }
}

TEST(Evaluate, ZeroPowerPolicyHasOnlyZeroRates) {
    const NetworkConfig c = cell();
    const Dataset test = make_dataset(c, 3, 10);
    EvalSetup setup;
    setup.net = c;
    const EvalReport r = evaluate(
        [](const ChannelRealization&, const ProblemInstance& p) { return CxMatrix(p.H.rows(), p.H.cols()); }, test,
        setup, "off");
    EXPECT_TRUE(r.samples.isZero(0.0));
    for (const auto& u : r.users) EXPECT_EQ(u.zero_rate_fraction, 1.0);
}

TEST(Evaluate, WmmseBeatsItsInitializer) {
    NetworkConfig c = NetworkConfig::uniform_layout(4, 4, 30.0, 60.0);
    c.sigma2.assign(4, -65.0);
    const Dataset test = make_dataset(c, 7, 200);
    EvalSetup setup;
    setup.net = c;
    setup.rate_scaling = RateScaling::physical;
    EXPECT_GT(evaluate_wmmse(test, setup).avg_sum_rate, evaluate_initial(test, setup).avg_sum_rate);
}

TEST(Compare, ReportAgainstItselfHasZeroDifferences) {
    SeededRng rng(9, StreamPurpose::test, 0);
    const EvalReport a = make_report("a", 7, 0, random_rates(rng, 40, 3));
    EvalReport b = a;
    b.label = "b";
    const std::vector<EvalReport> reps{a, b};
    std::stringstream ss;
    write_comparison_csv(compare(reps), ss);
    std::string line;
    std::getline(ss, line);
    std::getline(ss, line);
    int rows = 0;
    while (std::getline(ss, line)) {
        EXPECT_EQ(line.substr(line.rfind(',') + 1), "0") << line;
        ++rows;
    }
    EXPECT_EQ(rows, 1 + 3 * 4);
}
