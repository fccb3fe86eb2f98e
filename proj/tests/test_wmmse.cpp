#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "riskbf/wmmse.hpp"
#include "test_util.hpp"

using namespace riskbf;

namespace {

struct Instance {
    CxMatrix H;
    Eigen::VectorXd sigma2;
    std::vector<double> gamma;
    double P;
};

Instance random_instance(SeededRng& rng, int M, int K) {
    Instance in{testutil::random_cx(rng, M, K), Eigen::VectorXd(K), std::vector<double>(K), 0.5 + 4.0 * rng.uniform()};
    for (int i = 0; i < K; ++i) {
        in.sigma2[i] = 0.01 + rng.uniform();
        in.gamma[static_cast<std::size_t>(i)] = 0.2 + rng.uniform();
    }
    return in;
}

}  // namespace

TEST(Wmmse, WeightedSumRateNonDecreasing) {
    SeededRng rng(1, StreamPurpose::test, 0);
    for (int trial = 0; trial < 100; ++trial) {
        const int M = 1 + trial % 4, K = 1 + (trial / 4) % 5;
        const Instance in = random_instance(rng, M, K);
        const WmmseResult res = wmmse_solve(in.H, in.sigma2, in.gamma, in.P, 20);
        ASSERT_EQ(res.wsr_history.size(), 21u);
        for (std::size_t k = 1; k < res.wsr_history.size(); ++k)
            EXPECT_GE(res.wsr_history[k], res.wsr_history[k - 1] - 1e-9) << "trial " << trial << " iter " << k;
    }
}

// Instances at 0-20 dB so the budget binds well within the iteration count.
TEST(Wmmse, SingleUserReachesCapacity) {
    SeededRng rng(2, StreamPurpose::test, 0);
    for (int trial = 0; trial < 20; ++trial) {
        Instance in = random_instance(rng, 1 + trial % 6, 1);
        const double snr = std::pow(10.0, 2.0 * rng.uniform());
        in.sigma2[0] = in.P * in.H.squared_frobenius() / snr;
        const WmmseResult res = wmmse_solve(in.H, in.sigma2, in.gamma, in.P, 100);
        EXPECT_NEAR(res.rates[0], std::log(1.0 + snr), 1e-6);
    }
}

// With one user each exact block step maps the SNR s = |h^H v|^2 / sigma2 to
// s + 2 + 1/s until the budget binds, after which it stays at capacity.
TEST(Wmmse, SingleUserSnrRecurrence) {
    SeededRng rng(10, StreamPurpose::test, 0);
    for (int trial = 0; trial < 20; ++trial) {
        const Instance in = random_instance(rng, 2 + trial % 4, 1);
        const double cap = in.P * in.H.squared_frobenius() / in.sigma2[0];
        const WmmseResult res = wmmse_solve(in.H, in.sigma2, in.gamma, in.P, 30);
        const double g = in.gamma[0];
        for (std::size_t k = 1; k < res.wsr_history.size(); ++k) {
            const double s = std::expm1(res.wsr_history[k - 1] / g);
            const double expect = std::min(s + 2.0 + 1.0 / s, cap);
            EXPECT_NEAR(std::expm1(res.wsr_history[k] / g), expect, 1e-7 * expect) << "trial " << trial << " k " << k;
        }
    }
}

TEST(Wmmse, EveryIterateMeetsPowerBudget) {
    SeededRng rng(3, StreamPurpose::test, 0);
    for (int trial = 0; trial < 100; ++trial) {
        const Instance in = random_instance(rng, 1 + trial % 5, 1 + trial % 6);
        const WmmseResult res = wmmse_solve(in.H, in.sigma2, in.gamma, in.P, 20, nullptr, true);
        for (const auto& V : res.iterates) EXPECT_LE(V.squared_frobenius(), in.P * (1.0 + 1e-9));
    }
}

// Fix-point property of the v-update: for fixed (u, w) the returned V
// maximizes sum_i gamma_i (log w_i - w_i e_i) over the power ball, so random
// feasible perturbations never do better.
TEST(Wmmse, VUpdateMaximizesSurrogate) {
    SeededRng rng(4, StreamPurpose::test, 0);
    for (int trial = 0; trial < 30; ++trial) {
        const int M = 3, K = 3;
        const Instance in = random_instance(rng, M, K);
        WmmseState st;
        st.V = uniform_precoder(M, K, in.P);
        st.u = update_u(st, in.H, in.sigma2);
        st.w = update_w(st, in.H, in.sigma2);
        st.V = update_v(st, in.H, in.gamma, in.P);
        auto surrogate = [&](const CxMatrix& V) {
            double s = 0.0;
            for (int i = 0; i < K; ++i)
                s += in.gamma[static_cast<std::size_t>(i)] * surrogate_rate(st.u[i], st.w[i], V, in.H, i, in.sigma2[i]);
            return s;
        };
        const double best = surrogate(st.V);
        for (int p = 0; p < 50; ++p) {
            CxMatrix W = st.V;
            const CxMatrix d = testutil::random_cx(rng, M, K, 0.05);
            W.re += d.re;
            W.im += d.im;
            const double n = W.squared_frobenius();
            if (n > in.P) {
                W.re *= std::sqrt(in.P / n);
                W.im *= std::sqrt(in.P / n);
            }
            EXPECT_LE(surrogate(W), best + 1e-9);
        }
    }
}

TEST(Wmmse, ReceiverAndWeightClosedForms) {
    SeededRng rng(5, StreamPurpose::test, 0);
    const Instance in = random_instance(rng, 3, 2);
    WmmseState st;
    st.V = testutil::random_cx(rng, 3, 2, 0.5);
    st.u = update_u(st, in.H, in.sigma2);
    st.w = update_w(st, in.H, in.sigma2);
    const Eigen::VectorXd r = user_rates(st.V, in.H, in.sigma2);
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(std::log(st.w[i]), r[i], 1e-12);
}

TEST(Wmmse, BisectionPowerIsMonotoneInMu) {
    SeededRng rng(6, StreamPurpose::test, 0);
    const Instance in = random_instance(rng, 4, 3);
    Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(4, 4), B(4, 3);
    const Eigen::MatrixXcd H = in.H.to_eigen();
    for (int j = 0; j < 3; ++j) {
        A += H.col(j) * H.col(j).adjoint();
        B.col(j) = H.col(j);
    }
    double prev = std::numeric_limits<double>::infinity();
    for (double mu = 1e-3; mu < 1e3; mu *= 2.0) {
        Eigen::MatrixXcd V;
        ASSERT_TRUE(precoder_for_mu(A, B, mu, V));
        EXPECT_LT(V.squaredNorm(), prev);
        prev = V.squaredNorm();
    }
}

// With at least as many users as antennas the system is invertible, and a
// binding budget is met with equality.
TEST(Wmmse, BindingBudgetIsMetWithEquality) {
    SeededRng rng(7, StreamPurpose::test, 0);
    for (int trial = 0; trial < 20; ++trial) {
        Instance in = random_instance(rng, 3, 4);
        in.sigma2 *= 1e-3;
        WmmseState st;
        st.V = uniform_precoder(3, 4, in.P);
        st.u = update_u(st, in.H, in.sigma2);
        st.w = update_w(st, in.H, in.sigma2);
        const CxMatrix V = update_v(st, in.H, in.gamma, in.P);
        EXPECT_LE(V.squared_frobenius(), in.P * (1.0 + 1e-12));
        EXPECT_GE(V.squared_frobenius(), in.P * (1.0 - 1e-9));
    }
}

TEST(Wmmse, DeterministicAndValidated) {
    SeededRng rng(8, StreamPurpose::test, 0);
    const Instance in = random_instance(rng, 3, 3);
    const WmmseResult a = wmmse_solve(in.H, in.sigma2, in.gamma, in.P, 10);
    const WmmseResult b = wmmse_solve(in.H, in.sigma2, in.gamma, in.P, 10);
    EXPECT_EQ(a.V, b.V);
    EXPECT_THROW(wmmse_solve(in.H, in.sigma2, in.gamma, in.P, 0), std::invalid_argument);
    EXPECT_THROW(wmmse_solve(in.H, in.sigma2, std::vector<double>{1.0}, in.P, 5), std::invalid_argument);
}

TEST(Wmmse, BeatsUniformOnAverage) {
    SeededRng rng(9, StreamPurpose::test, 0);
    double gain = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const Instance in = random_instance(rng, 4, 4);
        const WmmseResult res = wmmse_solve(in.H, in.sigma2, in.gamma, in.P, 20);
        gain += res.wsr_history.back() - res.wsr_history.front();
    }
    EXPECT_GT(gain, 0.0);
}
