#pragma once

// Rates, MSE, the WMMSE surrogate, empirical CVaR and reporting statistics.
// Rates are natural-log (nats) internally; reporting uses bits.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "riskbf/numerics/complex.hpp"

namespace riskbf {

inline constexpr double kLn2 = std::numbers::ln2;
inline constexpr double kDefaultZeroRateBits = 0.01;

inline double nats_to_bits(double nats) { return nats / kLn2; }

/// r_i = log(1 + |h_i^H v_i|^2 / (sum_{j != i} |h_i^H v_j|^2 + sigma2_i)).
inline double user_rate(const CxMatrix& V, const CxMatrix& H, Eigen::Index i, double sigma2_i) {
    if (!(sigma2_i > 0.0)) throw std::invalid_argument("user_rate: noise variance must be positive");
    if (V.rows() != H.rows() || V.cols() != H.cols()) throw std::invalid_argument("user_rate: V/H shape mismatch");
    double signal = 0.0;
    double interference = 0.0;
    for (Eigen::Index j = 0; j < V.cols(); ++j) {
        const double g = std::norm(cx_col_inner(H, i, V, j));
        (j == i ? signal : interference) += g;
    }
    return std::log1p(signal / (interference + sigma2_i));
}

inline Eigen::VectorXd user_rates(const CxMatrix& V, const CxMatrix& H, const Eigen::VectorXd& sigma2) {
    Eigen::VectorXd r(H.cols());
    for (Eigen::Index i = 0; i < H.cols(); ++i) r[i] = user_rate(V, H, i, sigma2[i]);
    return r;
}

inline double weighted_sum_rate(const Eigen::VectorXd& rates, std::span<const double> gamma) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < rates.size(); ++i) s += gamma[static_cast<std::size_t>(i)] * rates[i];
    return s;
}

/// e_i = |1 - u* h_i^H v_i|^2 + sum_{j != i} |u* h_i^H v_j|^2 + sigma2_i |u|^2.
inline double mse(cdouble u, const CxMatrix& V, const CxMatrix& H, Eigen::Index i, double sigma2_i) {
    double e = sigma2_i * std::norm(u);
    for (Eigen::Index j = 0; j < V.cols(); ++j) {
        const cdouble a = std::conj(u) * cx_col_inner(H, i, V, j);
        e += (j == i) ? std::norm(1.0 - a) : std::norm(a);
    }
    return e;
}

/// log w - w e_i.
inline double surrogate_rate(cdouble u, double w, const CxMatrix& V, const CxMatrix& H, Eigen::Index i,
                             double sigma2_i) {
    if (!(w > 0.0)) throw std::invalid_argument("surrogate_rate: w must be positive");
    return std::log(w) - w * mse(u, V, H, i, sigma2_i);
}

namespace detail {
inline void check_level(double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("CVaR level must lie in (0,1]");
}
// alpha * n, snapped to the nearest integer when within rounding noise.
inline double tail_mass(double alpha, std::size_t n) {
    const double an = alpha * static_cast<double>(n);
    const double r = std::round(an);
    return std::abs(an - r) <= 1e-9 * std::max(1.0, an) ? r : an;
}
}  // namespace detail

/// Mean of the worst (smallest) alpha fraction, with the fractional atom at
/// the boundary weighted so that it agrees with the variational form.
inline double cvar_lower_tail(std::span<const double> samples, double alpha) {
    if (samples.empty()) throw std::invalid_argument("cvar_lower_tail: empty sample set");
    detail::check_level(alpha);
    std::vector<double> z(samples.begin(), samples.end());
    std::sort(z.begin(), z.end());
    const double an = detail::tail_mass(alpha, z.size());
    const auto whole = static_cast<std::size_t>(std::floor(an));
    double s = 0.0;
    for (std::size_t k = 0; k < whole; ++k) s += z[k];
    const double frac = an - static_cast<double>(whole);
    if (frac > 0.0) s += frac * z[whole];
    return s / an;
}

/// t - (alpha n)^{-1} sum_k (t - z_k)_+; maximal in t at the alpha-quantile.
inline double cvar_variational(std::span<const double> samples, double alpha, double t) {
    if (samples.empty()) throw std::invalid_argument("cvar_variational: empty sample set");
    detail::check_level(alpha);
    double hinge = 0.0;
    for (double z : samples) hinge += std::max(t - z, 0.0);
    return t - hinge / (alpha * static_cast<double>(samples.size()));
}

/// Lower empirical alpha-quantile z_(ceil(alpha n)), the maximizer of cvar_variational.
inline double empirical_quantile(std::span<const double> samples, double alpha) {
    if (samples.empty()) throw std::invalid_argument("empirical_quantile: empty sample set");
    detail::check_level(alpha);
    std::vector<double> z(samples.begin(), samples.end());
    std::sort(z.begin(), z.end());
    const double an = detail::tail_mass(alpha, z.size());
    const auto k = static_cast<std::size_t>(std::ceil(an));
    return z[std::clamp<std::size_t>(k, 1, z.size()) - 1];
}

/// (1/n) sum_samples sum_i gamma_i [t_i - (t_i - r_i)_+ / alpha_i];
/// `rates` is n x K.
inline double risk_objective(const Eigen::MatrixXd& rates, std::span<const double> t, std::span<const double> gamma,
                             std::span<const double> alpha) {
    const auto K = static_cast<std::size_t>(rates.cols());
    if (t.size() != K || gamma.size() != K || alpha.size() != K)
        throw std::invalid_argument("risk_objective: per-user vector length mismatch");
    if (rates.rows() == 0) throw std::invalid_argument("risk_objective: no samples");
    double total = 0.0;
    for (Eigen::Index s = 0; s < rates.rows(); ++s)
        for (std::size_t i = 0; i < K; ++i)
            total += gamma[i] * (t[i] - std::max(t[i] - rates(s, static_cast<Eigen::Index>(i)), 0.0) / alpha[i]);
    return total / static_cast<double>(rates.rows());
}

struct SampleStats {
    double mean = 0.0;
    double stddev = 0.0;  // unbiased
};

inline SampleStats sample_stats(std::span<const double> samples) {
    SampleStats st;
    if (samples.empty()) return st;
    for (double x : samples) st.mean += x;
    st.mean /= static_cast<double>(samples.size());
    if (samples.size() < 2) return st;
    double ss = 0.0;
    for (double x : samples) ss += (x - st.mean) * (x - st.mean);
    st.stddev = std::sqrt(ss / static_cast<double>(samples.size() - 1));
    return st;
}

struct Sharpe {
    double value = std::numeric_limits<double>::infinity();
    bool defined = false;
};

/// mean / unbiased std; zero variance yields {+inf, defined = false}.
inline Sharpe sharpe_ratio(std::span<const double> samples) {
    if (samples.size() < 2) throw std::invalid_argument("sharpe_ratio: need at least two samples");
    const SampleStats st = sample_stats(samples);
    if (!(st.stddev > 0.0)) return {};
    return {st.mean / st.stddev, true};
}

/// Fraction of samples strictly below `threshold` (same unit as samples).
inline double zero_rate_fraction(std::span<const double> samples, double threshold = kDefaultZeroRateBits) {
    if (threshold < 0.0) throw std::invalid_argument("zero_rate_fraction: negative threshold");
    if (samples.empty()) return 0.0;
    const auto below = std::count_if(samples.begin(), samples.end(), [&](double x) { return x < threshold; });
    return static_cast<double>(below) / static_cast<double>(samples.size());
}

}  // namespace riskbf
