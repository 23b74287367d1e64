#pragma once
// Scalar DCC with correlation targeting: pseudo-correlation filter, bivariate
// pair likelihoods with analytic gradients, mean-of-pairs composite
// likelihood, small-N full MLE reference, fitting, and one-step forecasting.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "covarcast/linalg.hpp"
#include "covarcast/optim.hpp"
#include "covarcast/parallel.hpp"
#include "covarcast/reparam.hpp"
#include "covarcast/rng.hpp"

namespace covarcast {

struct DccParams {
    double alpha = 0.0;
    double beta = 0.0;

    bool valid() const {
        return alpha >= 0.0 && beta >= 0.0 && alpha + beta < 1.0 &&
               std::isfinite(alpha) && std::isfinite(beta);
    }
    void validate() const {
        if (!valid())
            throw std::invalid_argument(
                "DccParams: require alpha >= 0, beta >= 0, alpha + beta < 1");
    }
};

inline void validate_rbar(const Eigen::MatrixXd& rbar, const char* who) {
    require_symmetric(rbar, who);
    for (Eigen::Index i = 0; i < rbar.rows(); ++i)
        if (std::abs(rbar(i, i) - 1.0) > 1e-10)
            throw std::invalid_argument(std::string(who) +
                                        ": rbar must have unit diagonal");
}

struct DccFilterResult {
    Eigen::MatrixXd q_last;
    Eigen::MatrixXd r_last;
    std::vector<Eigen::MatrixXd> q_path;  // filled only when paths requested
    std::vector<Eigen::MatrixXd> r_path;
};

// Q_t = (1-a-b) Rbar + a s_{t-1} s_{t-1}' + b Q_{t-1}, Q_0 = Rbar;
// R_t = Diag(Q_t)^{-1/2} Q_t Diag(Q_t)^{-1/2}.
inline DccFilterResult dcc_filter(const Eigen::MatrixXd& s, const DccParams& params,
                                  const Eigen::MatrixXd& rbar,
                                  bool record_paths = false) {
    params.validate();
    validate_rbar(rbar, "dcc_filter");
    const Eigen::Index t_len = s.rows();
    const Eigen::Index n = s.cols();
    if (rbar.rows() != n)
        throw std::invalid_argument("dcc_filter: rbar dimension mismatch");
    if (t_len < 1) throw std::invalid_argument("dcc_filter: empty residual panel");

    DccFilterResult out;
    Eigen::MatrixXd q = rbar;
    if (record_paths) {
        out.q_path.reserve(static_cast<std::size_t>(t_len));
        out.r_path.reserve(static_cast<std::size_t>(t_len));
    }
    const double keep = 1.0 - params.alpha - params.beta;
    for (Eigen::Index t = 0; t < t_len; ++t) {
        if (t > 0) {
            const auto prev = s.row(t - 1).transpose();
            q = (keep * rbar + params.alpha * (prev * prev.transpose()) +
                 params.beta * q)
                    .eval();
        }
        if (record_paths) {
            out.q_path.push_back(q);
            out.r_path.push_back(correlation_from_q(q));
        }
    }
    out.q_last = q;
    out.r_last = correlation_from_q(q);
    return out;
}

namespace detail {

constexpr double kRhoCap = 1.0 - 1e-10;

// One bivariate DCC likelihood pass.  The 2x2 recursion is the exact
// restriction of the full filter to the pair's coordinates, so only the
// three distinct entries of Q are tracked.  Gradients (optional) follow the
// same recursion differentiated in (alpha, beta).
struct PairEval {
    double loglik = 0.0;
    double d_alpha = 0.0;
    double d_beta = 0.0;
    bool clamped = false;
};

inline PairEval pair_loglik_eval(const Eigen::Ref<const Eigen::VectorXd>& s1,
                                 const Eigen::Ref<const Eigen::VectorXd>& s2,
                                 const DccParams& params, double r11, double r12,
                                 double r22, bool want_grad) {
    const Eigen::Index t_len = s1.size();
    const double a = params.alpha, b = params.beta;
    const double keep = 1.0 - a - b;
    double q11 = r11, q12 = r12, q22 = r22;
    // d q / d alpha and d q / d beta, advanced alongside q
    double a11 = 0.0, a12 = 0.0, a22 = 0.0;
    double b11 = 0.0, b12 = 0.0, b22 = 0.0;
    PairEval out;
    for (Eigen::Index t = 0; t < t_len; ++t) {
        if (t > 0) {
            const double p1 = s1(t - 1), p2 = s2(t - 1);
            if (want_grad) {
                // d/d alpha: -Rbar + ss' + b * prev;  d/d beta: -Rbar + q_prev + b * prev
                const double na11 = -r11 + p1 * p1 + b * a11;
                const double na12 = -r12 + p1 * p2 + b * a12;
                const double na22 = -r22 + p2 * p2 + b * a22;
                const double nb11 = -r11 + q11 + b * b11;
                const double nb12 = -r12 + q12 + b * b12;
                const double nb22 = -r22 + q22 + b * b22;
                a11 = na11; a12 = na12; a22 = na22;
                b11 = nb11; b12 = nb12; b22 = nb22;
            }
            const double n11 = keep * r11 + a * p1 * p1 + b * q11;
            const double n12 = keep * r12 + a * p1 * p2 + b * q12;
            const double n22 = keep * r22 + a * p2 * p2 + b * q22;
            q11 = n11; q12 = n12; q22 = n22;
        }
        const double g = std::sqrt(q11 * q22);
        double rho = q12 / g;
        bool clamped_here = false;
        if (rho > kRhoCap) { rho = kRhoCap; clamped_here = true; }
        if (rho < -kRhoCap) { rho = -kRhoCap; clamped_here = true; }
        out.clamped = out.clamped || clamped_here;
        const double omr2 = 1.0 - rho * rho;
        const double x1 = s1(t), x2 = s2(t);
        const double quad = x1 * x1 - 2.0 * rho * x1 * x2 + x2 * x2;
        out.loglik -= 0.5 * (std::log(omr2) + quad / omr2);
        if (want_grad && !clamped_here) {
            // d loglik / d rho, then chain through rho = q12 / sqrt(q11 q22)
            const double dlog = -2.0 * rho / omr2;
            const double dquad =
                (-2.0 * x1 * x2 * omr2 + 2.0 * rho * quad) / (omr2 * omr2);
            const double dl_drho = -0.5 * (dlog + dquad);
            const double inv_g = 1.0 / g;
            const double common = q12 * 0.5 * inv_g * inv_g * inv_g;
            const double drho_a = a12 * inv_g - common * (a11 * q22 + q11 * a22);
            const double drho_b = b12 * inv_g - common * (b11 * q22 + q11 * b22);
            out.d_alpha += dl_drho * drho_a;
            out.d_beta += dl_drho * drho_b;
        }
    }
    return out;
}

}  // namespace detail

inline double pair_loglik(const Eigen::MatrixXd& s_pair, const DccParams& params,
                          const Eigen::MatrixXd& rbar_pair) {
    params.validate();
    if (s_pair.cols() != 2 || rbar_pair.rows() != 2 || rbar_pair.cols() != 2)
        throw std::invalid_argument("pair_loglik: expected a column pair");
    if (std::abs(rbar_pair(0, 1)) >= 1.0)
        throw std::invalid_argument("pair_loglik: |rbar off-diagonal| must be < 1");
    return detail::pair_loglik_eval(s_pair.col(0), s_pair.col(1), params,
                                    rbar_pair(0, 0), rbar_pair(0, 1),
                                    rbar_pair(1, 1), false)
        .loglik;
}

using PairScheme = std::vector<std::pair<int, int>>;

inline PairScheme contiguous_pairs(Eigen::Index n) {
    if (n < 2) throw std::invalid_argument("contiguous_pairs: need N >= 2");
    PairScheme pairs;
    pairs.reserve(static_cast<std::size_t>(n - 1));
    for (int i = 0; i + 1 < n; ++i) pairs.emplace_back(i, i + 1);
    return pairs;
}

// Contiguous pairs over a seeded permutation of the asset order — asset
// ordering is arbitrary, so this removes any dependence on it.
inline PairScheme shuffled_contiguous_pairs(Eigen::Index n, std::uint64_t seed) {
    if (n < 2) throw std::invalid_argument("shuffled_contiguous_pairs: need N >= 2");
    std::vector<int> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = int(i);
    Rng rng(seed);
    shuffle(order, rng);
    PairScheme pairs;
    pairs.reserve(static_cast<std::size_t>(n - 1));
    for (std::size_t i = 0; i + 1 < order.size(); ++i)
        pairs.emplace_back(order[i], order[i + 1]);
    return pairs;
}

inline PairScheme all_pairs(Eigen::Index n) {
    if (n < 2) throw std::invalid_argument("all_pairs: need N >= 2");
    if (n > 60)
        throw std::invalid_argument(
            "all_pairs: quadratic scheme capped at N <= 60; use the contiguous scheme");
    PairScheme pairs;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    return pairs;
}

namespace detail {

inline Eigen::Vector3d composite_eval(const Eigen::MatrixXd& s,
                                      const DccParams& params,
                                      const Eigen::MatrixXd& rbar,
                                      const PairScheme& pairs, bool want_grad,
                                      int threads) {
    if (pairs.empty())
        throw std::invalid_argument("composite_loglik: empty pair list");
    for (const auto& [i, j] : pairs)
        if (i < 0 || j < 0 || i >= s.cols() || j >= s.cols() || i == j)
            throw std::invalid_argument("composite_loglik: invalid pair index");
    std::vector<Eigen::Vector3d> slots(pairs.size());
    parallel_for(pairs.size(), threads, [&](std::size_t k) {
        const auto [i, j] = pairs[k];
        const PairEval e =
            pair_loglik_eval(s.col(i), s.col(j), params, rbar(i, i), rbar(i, j),
                             rbar(j, j), want_grad);
        slots[k] = Eigen::Vector3d(e.loglik, e.d_alpha, e.d_beta);
    });
    Eigen::Vector3d total = Eigen::Vector3d::Zero();
    for (const auto& v : slots) total += v;  // fixed order: thread-count invariant
    return total / static_cast<double>(pairs.size());
}

}  // namespace detail

inline double composite_loglik(const Eigen::MatrixXd& s, const DccParams& params,
                               const Eigen::MatrixXd& rbar, const PairScheme& pairs,
                               int threads = 1) {
    params.validate();
    validate_rbar(rbar, "composite_loglik");
    return detail::composite_eval(s, params, rbar, pairs, false, threads)(0);
}

inline double composite_loglik(const Eigen::MatrixXd& s, const DccParams& params,
                               const Eigen::MatrixXd& rbar, int threads = 1) {
    return composite_loglik(s, params, rbar, contiguous_pairs(s.cols()), threads);
}

// Exact full-dimensional Gaussian log-likelihood; reference for small N only
// (per-day N x N factorization).
inline double full_mle_loglik(const Eigen::MatrixXd& s, const DccParams& params,
                              const Eigen::MatrixXd& rbar) {
    params.validate();
    validate_rbar(rbar, "full_mle_loglik");
    const Eigen::Index n = s.cols();
    if (n > 25)
        throw std::invalid_argument(
            "full_mle_loglik: N > 25; use composite_loglik for large panels");
    const Eigen::Index t_len = s.rows();
    Eigen::MatrixXd q = rbar;
    const double keep = 1.0 - params.alpha - params.beta;
    double loglik = 0.0;
    for (Eigen::Index t = 0; t < t_len; ++t) {
        if (t > 0) {
            const auto prev = s.row(t - 1).transpose();
            q = (keep * rbar + params.alpha * (prev * prev.transpose()) +
                 params.beta * q)
                    .eval();
        }
        const Eigen::MatrixXd r = correlation_from_q(q);
        Eigen::LLT<Eigen::MatrixXd> llt(r);
        if (llt.info() != Eigen::Success)
            throw std::domain_error("full_mle_loglik: R_t not positive definite");
        const Eigen::VectorXd x = s.row(t).transpose();
        const Eigen::VectorXd sol = llt.solve(x);
        double logdet = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            logdet += 2.0 * std::log(llt.matrixL()(i, i));
        loglik -= 0.5 * (logdet + x.dot(sol));
    }
    return loglik;
}

struct DccFit {
    DccParams params;
    Eigen::MatrixXd rbar;
    Eigen::MatrixXd q_last;
    double composite_loglik = 0.0;
    PairScheme pair_scheme;
    bool converged = false;
    bool used_fallback = false;
    int iterations = 0;
};

struct DccFitOptions {
    int max_iters = 500;
    double grad_tol = 1e-6;
    PairScheme pairs;  // empty -> contiguous over all columns
    int threads = 1;
};

// Maximum composite likelihood over (alpha, beta), reparameterized onto the
// open simplex exactly as in fit_garch.  Non-convergence is reported via the
// flag with best-so-far parameters rather than thrown.
inline DccFit fit_dcc(const Eigen::MatrixXd& s, const Eigen::MatrixXd& rbar,
                      const DccFitOptions& opts = {}) {
    if (s.rows() <= 10)
        throw std::invalid_argument("fit_dcc: need T > 10 observations");
    validate_rbar(rbar, "fit_dcc");
    const PairScheme pairs =
        opts.pairs.empty() ? contiguous_pairs(s.cols()) : opts.pairs;

    auto unpack = [&](const Eigen::VectorXd& x) {
        const auto [alpha, beta] = detail::alpha_beta_from_uv(x(0), x(1));
        return DccParams{alpha, beta};
    };
    auto in_box = [](const Eigen::VectorXd& x) {
        return x.allFinite() && x.cwiseAbs().maxCoeff() <= 60.0;
    };
    ObjectiveFn objective = [&](const Eigen::VectorXd& x) {
        if (!in_box(x)) return std::numeric_limits<double>::infinity();
        return -detail::composite_eval(s, unpack(x), rbar, pairs, false,
                                       opts.threads)(0);
    };
    GradientFn gradient = [&](const Eigen::VectorXd& x) {
        const DccParams p = unpack(x);
        const Eigen::Vector3d e =
            detail::composite_eval(s, p, rbar, pairs, true, opts.threads);
        const auto jac = detail::simplex_jacobian(p.alpha, p.beta);
        Eigen::VectorXd out(2);
        out(0) = -(e(1) * jac.da_du + e(2) * jac.db_du);
        out(1) = -(e(1) * jac.da_dv + e(2) * jac.db_dv);
        return out;
    };

    Eigen::VectorXd x0(2);
    const auto [u0, v0] = detail::uv_from_alpha_beta(0.02, 0.95);
    x0(0) = u0;
    x0(1) = v0;
    OptimOptions oopts;
    oopts.max_iters = opts.max_iters;
    oopts.grad_tol = opts.grad_tol;
    const OptimResult opt = minimize(objective, gradient, x0, oopts);

    DccFit fit;
    fit.params = unpack(opt.x);
    fit.rbar = rbar;
    fit.pair_scheme = pairs;
    fit.composite_loglik = -opt.fval;
    fit.converged = opt.converged;
    fit.used_fallback = opt.used_fallback;
    fit.iterations = opt.iterations;
    fit.q_last = dcc_filter(s, fit.params, rbar).q_last;
    return fit;
}

inline Eigen::MatrixXd forecast_correlation_one_step(const DccFit& fit,
                                                     const Eigen::VectorXd& s_last) {
    fit.params.validate();
    if (s_last.size() != fit.rbar.rows())
        throw std::invalid_argument(
            "forecast_correlation_one_step: residual dimension mismatch");
    const double keep = 1.0 - fit.params.alpha - fit.params.beta;
    const Eigen::MatrixXd q_next = keep * fit.rbar +
                                   fit.params.alpha * (s_last * s_last.transpose()) +
                                   fit.params.beta * fit.q_last;
    return correlation_from_q(q_next);
}

// ---- serialization ---------------------------------------------------------

inline nlohmann::json dcc_fit_to_json(const DccFit& fit) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& [i, j] : fit.pair_scheme)
        pairs.push_back(nlohmann::json::array({i, j}));
    return nlohmann::json{{"format", "covarcast-dcc-fit"},
                          {"version", 1},
                          {"alpha", fit.params.alpha},
                          {"beta", fit.params.beta},
                          {"composite_loglik", fit.composite_loglik},
                          {"pair_scheme", pairs},
                          {"converged", fit.converged}};
}

// Restores the scalar fields; rbar/q_last travel separately as CSV.
inline DccFit dcc_fit_from_json(const nlohmann::json& doc) {
    if (!doc.contains("format") || doc.at("format") != "covarcast-dcc-fit")
        throw std::runtime_error("dcc_fit_from_json: unrecognized document format");
    DccFit fit;
    fit.params.alpha = doc.at("alpha").get<double>();
    fit.params.beta = doc.at("beta").get<double>();
    fit.composite_loglik = doc.at("composite_loglik").get<double>();
    fit.converged = doc.at("converged").get<bool>();
    for (const auto& p : doc.at("pair_scheme"))
        fit.pair_scheme.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    return fit;
}

}  // namespace covarcast
