#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "riskbf/channel.hpp"
#include "riskbf/numerics/complex.hpp"

namespace riskbf {

/// Equal power P/K per user along (1, ..., 1)/sqrt(M).
inline CxMatrix uniform_precoder(Eigen::Index M, Eigen::Index K, double power_mw) {
    CxMatrix V(M, K);
    V.re.setConstant(std::sqrt(power_mw / static_cast<double>(K) / static_cast<double>(M)));
    return V;
}

/// Equal power per user along each user's own channel direction.
inline CxMatrix matched_filter_precoder(const CxMatrix& H, double power_mw) {
    CxMatrix V(H.rows(), H.cols());
    const double per_user = power_mw / static_cast<double>(H.cols());
    for (Eigen::Index i = 0; i < H.cols(); ++i) {
        const double n = std::sqrt(H.re.col(i).squaredNorm() + H.im.col(i).squaredNorm());
        if (n == 0.0) continue;
        V.re.col(i) = H.re.col(i) * (std::sqrt(per_user) / n);
        V.im.col(i) = H.im.col(i) * (std::sqrt(per_user) / n);
    }
    return V;
}

enum class InitPolicy { uniform, matched_filter };

inline InitPolicy parse_init_policy(const std::string& s) {
    if (s == "uniform") return InitPolicy::uniform;
    if (s == "matched_filter") return InitPolicy::matched_filter;
    throw std::invalid_argument("unknown init policy: " + s);
}

inline const char* to_string(InitPolicy p) { return p == InitPolicy::uniform ? "uniform" : "matched_filter"; }

inline CxMatrix initial_precoder(InitPolicy policy, const CxMatrix& H, double power_mw) {
    return policy == InitPolicy::uniform ? uniform_precoder(H.rows(), H.cols(), power_mw)
                                         : matched_filter_precoder(H, power_mw);
}

/// How rates are scored for a realization. Policies always see H / norm_scale.
///  normalized: rates on H / norm_scale with the physical noise variance.
///  physical:   rates on the physical H; evaluated equivalently as
///              H / norm_scale with noise sigma2 / norm_scale^2.
enum class RateScaling { normalized, physical };

inline RateScaling parse_rate_scaling(const std::string& s) {
    if (s == "normalized") return RateScaling::normalized;
    if (s == "physical") return RateScaling::physical;
    throw std::invalid_argument("unknown rate scaling: " + s);
}

inline const char* to_string(RateScaling s) { return s == RateScaling::normalized ? "normalized" : "physical"; }

/// The channel and noise a precoder is scored against.
struct ProblemInstance {
    CxMatrix H;               // normalized channel
    Eigen::VectorXd sigma2;   // linear mW, per user
    double power_mw = 0.0;
};

inline ProblemInstance make_instance(const ChannelRealization& real, const NetworkConfig& config, RateScaling scaling) {
    ProblemInstance p;
    p.H = real.normalized();
    p.sigma2 = config.noise_mw();
    if (scaling == RateScaling::physical) p.sigma2 /= real.norm_scale * real.norm_scale;
    p.power_mw = config.power_mw();
    return p;
}

}  // namespace riskbf
