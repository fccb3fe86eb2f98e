#pragma once

// Block-coordinate WMMSE for MISO weighted sum rate under a total power budget.

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "riskbf/metrics.hpp"
#include "riskbf/numerics/complex.hpp"
#include "riskbf/precoding.hpp"

namespace riskbf {

struct WmmseState {
    CxMatrix V;
    Eigen::VectorXcd u;
    Eigen::VectorXd w;
    int iteration = 0;
};

struct BisectionOptions {
    double rel_tol = 1e-12;
    int max_iters = 200;
};

namespace detail {

inline double received_power(const CxMatrix& H, const CxMatrix& V, Eigen::Index i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < V.cols(); ++j) s += std::norm(cx_col_inner(H, i, V, j));
    return s;
}

}  // namespace detail

/// u_i = h_i^H v_i / (sum_j |h_i^H v_j|^2 + sigma2_i), the MMSE receiver.
inline Eigen::VectorXcd update_u(const WmmseState& state, const CxMatrix& H, const Eigen::VectorXd& sigma2) {
    Eigen::VectorXcd u(H.cols());
    for (Eigen::Index i = 0; i < H.cols(); ++i)
        u[i] = cx_col_inner(H, i, state.V, i) / (detail::received_power(H, state.V, i) + sigma2[i]);
    return u;
}

/// w_i = 1 / e_i at the current u.
inline Eigen::VectorXd update_w(const WmmseState& state, const CxMatrix& H, const Eigen::VectorXd& sigma2) {
    Eigen::VectorXd w(H.cols());
    for (Eigen::Index i = 0; i < H.cols(); ++i) {
        const double e = mse(state.u[i], state.V, H, i, sigma2[i]);
        if (!(e > 0.0)) throw std::runtime_error("update_w: non-positive MSE");
        w[i] = 1.0 / e;
    }
    return w;
}

/// Solves (A + mu I) V = B; false when A + mu I is not positive definite.
inline bool precoder_for_mu(const Eigen::MatrixXcd& A, const Eigen::MatrixXcd& B, double mu, Eigen::MatrixXcd& out) {
    Eigen::MatrixXcd S = A;
    S.diagonal().array() += mu;
    Eigen::LLT<Eigen::MatrixXcd> llt(S);
    if (llt.info() != Eigen::Success) return false;
    out = llt.solve(B);
    return out.allFinite();
}

/// v_i = gamma_i w_i u_i (sum_j gamma_j w_j |u_j|^2 h_j h_j^H + mu I)^{-1} h_i
/// with the smallest mu >= 0 meeting the power budget.
inline CxMatrix update_v(const WmmseState& state, const CxMatrix& H, std::span<const double> gamma, double power_mw,
                         const BisectionOptions& opts = {}) {
    const Eigen::Index M = H.rows(), K = H.cols();
    const Eigen::MatrixXcd Hc = H.to_eigen();
    Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(M, M);
    Eigen::MatrixXcd B(M, K);
    for (Eigen::Index j = 0; j < K; ++j) {
        const double g = gamma[static_cast<std::size_t>(j)];
        A.noalias() += (g * state.w[j] * std::norm(state.u[j])) * Hc.col(j) * Hc.col(j).adjoint();
        B.col(j) = (g * state.w[j] * state.u[j]) * Hc.col(j);
    }
    A = 0.5 * (A + A.adjoint()).eval();

    Eigen::MatrixXcd V;
    if (precoder_for_mu(A, B, 0.0, V) && V.squaredNorm() <= power_mw) return CxMatrix::from_eigen(V);

    auto power_at = [&](double mu, Eigen::MatrixXcd& out) {
        return precoder_for_mu(A, B, mu, out) ? out.squaredNorm() : std::numeric_limits<double>::infinity();
    };
    const double scale = A.trace().real() / static_cast<double>(M);
    double hi = scale > 0.0 ? scale : 1.0;
    Eigen::MatrixXcd Vhi;
    double p_hi = power_at(hi, Vhi);
    for (int k = 0; p_hi > power_mw; ++k) {
        if (k > 2000) throw std::runtime_error("update_v: could not bracket the power multiplier");
        hi *= 2.0;
        p_hi = power_at(hi, Vhi);
    }
    double lo = 0.0;
    for (int it = 0; it < opts.max_iters && power_mw - p_hi > opts.rel_tol * power_mw; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        Eigen::MatrixXcd Vmid;
        const double p_mid = power_at(mid, Vmid);
        if (p_mid > power_mw) {
            lo = mid;
        } else {
            hi = mid;
            p_hi = p_mid;
            Vhi = std::move(Vmid);
        }
    }
    return CxMatrix::from_eigen(Vhi);
}

struct WmmseResult {
    CxMatrix V;
    Eigen::VectorXd rates;             // nats
    std::vector<double> wsr_history;   // weighted sum rate after init and each round
    std::vector<CxMatrix> iterates;    // V after each round (only when requested)
};

inline WmmseResult wmmse_solve(const CxMatrix& H, const Eigen::VectorXd& sigma2, std::span<const double> gamma,
                               double power_mw, int iters = 20, const CxMatrix* V0 = nullptr,
                               bool keep_iterates = false) {
    if (iters < 1) throw std::invalid_argument("wmmse_solve: iters must be >= 1");
    if (static_cast<Eigen::Index>(gamma.size()) != H.cols() || sigma2.size() != H.cols())
        throw std::invalid_argument("wmmse_solve: per-user vector length mismatch");
    WmmseState st;
    st.V = V0 ? *V0 : uniform_precoder(H.rows(), H.cols(), power_mw);
    WmmseResult res;
    res.wsr_history.push_back(weighted_sum_rate(user_rates(st.V, H, sigma2), gamma));
    for (int it = 0; it < iters; ++it) {
        st.u = update_u(st, H, sigma2);
        st.w = update_w(st, H, sigma2);
        st.V = update_v(st, H, gamma, power_mw);
        st.iteration = it + 1;
        res.wsr_history.push_back(weighted_sum_rate(user_rates(st.V, H, sigma2), gamma));
        if (keep_iterates) res.iterates.push_back(st.V);
    }
    res.rates = user_rates(st.V, H, sigma2);
    res.V = std::move(st.V);
    return res;
}

inline WmmseResult wmmse_solve(const ProblemInstance& p, std::span<const double> gamma, int iters = 20) {
    return wmmse_solve(p.H, p.sigma2, gamma, p.power_mw, iters);
}

}  // namespace riskbf
