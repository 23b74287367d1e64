#pragma once
// Unconstrained reparameterization of (alpha, beta) onto the open simplex
// {alpha >= 0, beta >= 0, alpha + beta < cap}, cap = 1 - 1e-6, via a scaled
// softmax.  Shared by the GARCH and DCC estimators.

#include <algorithm>
#include <cmath>
#include <utility>

namespace covarcast::detail {

constexpr double kSimplexCap = 1.0 - 1e-6;

inline std::pair<double, double> alpha_beta_from_uv(double u, double v) {
    const double m = std::max({u, v, 0.0});
    const double eu = std::exp(u - m);
    const double ev = std::exp(v - m);
    const double e0 = std::exp(-m);
    const double den = e0 + eu + ev;
    return {kSimplexCap * eu / den, kSimplexCap * ev / den};
}

inline std::pair<double, double> uv_from_alpha_beta(double alpha, double beta) {
    const double rest = std::max(1.0 - (alpha + beta) / kSimplexCap, 1e-12);
    const double u = std::log(std::max(alpha, 1e-12) / kSimplexCap) - std::log(rest);
    const double v = std::log(std::max(beta, 1e-12) / kSimplexCap) - std::log(rest);
    return {u, v};
}

// Chain rule factors: d(alpha,beta)/d(u,v).
struct SimplexJacobian {
    double da_du, da_dv, db_du, db_dv;
};

inline SimplexJacobian simplex_jacobian(double alpha, double beta) {
    return {alpha * (1.0 - alpha / kSimplexCap), -alpha * beta / kSimplexCap,
            -alpha * beta / kSimplexCap, beta * (1.0 - beta / kSimplexCap)};
}

}  // namespace covarcast::detail
