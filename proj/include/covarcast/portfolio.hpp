#pragma once
// Minimum-variance portfolio weights (unconstrained and long-only), equal
// weights, realized portfolio returns, and CSV export of weight vectors.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "covarcast/hybrid.hpp"
#include "covarcast/linalg.hpp"

namespace covarcast {

struct PortfolioWeights {
    Eigen::VectorXd weights;
    std::string as_of_date;
    std::string label;

    void validate(bool long_only = false) const {
        if (weights.size() < 1)
            throw std::invalid_argument("PortfolioWeights: empty weight vector");
        if (std::abs(weights.sum() - 1.0) > 1e-10)
            throw std::invalid_argument("PortfolioWeights: weights do not sum to 1");
        if (long_only && weights.minCoeff() < -1e-12)
            throw std::invalid_argument("PortfolioWeights: negative weight in long-only vector");
    }
};

namespace detail {

// Symmetric-PD solve of H x = 1 with a condition guard; the factorization is
// reused for the long-only subproblems as well.
inline Eigen::VectorXd solve_ones(const Eigen::MatrixXd& h, const std::string& who) {
    Eigen::LLT<Eigen::MatrixXd> llt(h);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error(
            who + ": covariance is not positive definite; repair it upstream");
    if (llt.rcond() < 1e-12)
        throw std::runtime_error(
            who +
            ": covariance condition estimate exceeds 1e12; apply eigenvalue "
            "repair upstream");
    return llt.solve(Eigen::VectorXd::Ones(h.rows()));
}

// Euclidean projection onto the probability simplex (sort-based).
inline Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
    const Eigen::Index n = v.size();
    std::vector<double> u(v.data(), v.data() + n);
    std::sort(u.begin(), u.end(), std::greater<double>());
    double cumsum = 0.0, tau = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        cumsum += u[std::size_t(j)];
        const double candidate = (cumsum - 1.0) / double(j + 1);
        if (u[std::size_t(j)] - candidate > 0.0) tau = candidate;
    }
    return (v.array() - tau).cwiseMax(0.0);
}

// Fallback solver for the long-only problem: fixed-step projected gradient on
// w'Hw over the simplex, run until the objective stops moving.
inline Eigen::VectorXd projected_gradient_min_variance(const Eigen::MatrixXd& h,
                                                       Eigen::VectorXd w,
                                                       double tol = 1e-10,
                                                       int max_iters = 200000) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("projected_gradient_min_variance: eigensolver failed");
    const double step = 1.0 / (2.0 * es.eigenvalues().maxCoeff());
    double f = w.dot(h * w);
    for (int it = 0; it < max_iters; ++it) {
        w = project_simplex(w - step * 2.0 * (h * w));
        const double f_new = w.dot(h * w);
        if (std::abs(f - f_new) <= tol) {
            f = f_new;
            break;
        }
        f = f_new;
    }
    return w;
}

}  // namespace detail

// w* = H^{-1} 1 / (1' H^{-1} 1); shorting allowed.
inline PortfolioWeights min_variance_weights(const Eigen::MatrixXd& h,
                                             std::string as_of_date = "",
                                             std::string label = "mvp") {
    if (h.rows() != h.cols() || h.rows() < 1)
        throw std::invalid_argument("min_variance_weights: covariance must be square");
    require_symmetric(h, "min_variance_weights");
    const Eigen::VectorXd x = detail::solve_ones(h, "min_variance_weights");
    PortfolioWeights out;
    out.weights = x / x.sum();
    out.as_of_date = std::move(as_of_date);
    out.label = std::move(label);
    out.validate();
    return out;
}

inline PortfolioWeights min_variance_weights(const CovarianceForecast& h,
                                             std::string label = "mvp") {
    return min_variance_weights(h.matrix, h.as_of_date, std::move(label));
}

// Long-only: iterative elimination — drop assets the unconstrained subproblem
// wants to short, re-solve on the survivors.  The KKT margin check on the
// eliminated assets certifies the answer; if it ever fails, projected
// gradient descent finishes the job.
inline PortfolioWeights min_variance_weights_long_only(const Eigen::MatrixXd& h,
                                                       std::string as_of_date = "",
                                                       std::string label = "mvp-long") {
    if (h.rows() != h.cols() || h.rows() < 1)
        throw std::invalid_argument(
            "min_variance_weights_long_only: covariance must be square");
    require_symmetric(h, "min_variance_weights_long_only");
    const Eigen::Index n = h.rows();

    std::vector<Eigen::Index> active(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) active[std::size_t(i)] = i;

    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    while (true) {
        const Eigen::Index m = static_cast<Eigen::Index>(active.size());
        Eigen::MatrixXd sub(m, m);
        for (Eigen::Index r = 0; r < m; ++r)
            for (Eigen::Index c = 0; c < m; ++c)
                sub(r, c) = h(active[std::size_t(r)], active[std::size_t(c)]);
        const Eigen::VectorXd x = detail::solve_ones(sub, "min_variance_weights_long_only");
        const Eigen::VectorXd sub_w = x / x.sum();

        std::vector<Eigen::Index> keep;
        for (Eigen::Index r = 0; r < m; ++r)
            if (sub_w(r) >= 0.0) keep.push_back(active[std::size_t(r)]);
        if (static_cast<Eigen::Index>(keep.size()) == m) {
            w.setZero();
            for (Eigen::Index r = 0; r < m; ++r) w(active[std::size_t(r)]) = sub_w(r);
            break;
        }
        if (keep.empty()) {
            // Cannot happen for PD h (a single remaining asset gets weight 1),
            // but guard against a degenerate loop anyway.
            throw std::runtime_error(
                "min_variance_weights_long_only: elimination removed every asset");
        }
        active = std::move(keep);
    }

    // KKT margin: including an eliminated asset must not lower the variance.
    const Eigen::VectorXd grad = 2.0 * (h * w);
    const double two_var = 2.0 * w.dot(h * w);
    bool kkt_ok = true;
    for (Eigen::Index j = 0; j < n && kkt_ok; ++j)
        if (w(j) == 0.0 && grad(j) < two_var - 1e-8) kkt_ok = false;
    if (!kkt_ok) w = detail::projected_gradient_min_variance(h, w);

    PortfolioWeights out;
    out.weights = std::move(w);
    out.as_of_date = std::move(as_of_date);
    out.label = std::move(label);
    out.validate(true);
    return out;
}

inline PortfolioWeights min_variance_weights_long_only(const CovarianceForecast& h,
                                                       std::string label = "mvp-long") {
    return min_variance_weights_long_only(h.matrix, h.as_of_date, std::move(label));
}

inline PortfolioWeights equal_weights(Eigen::Index n, std::string as_of_date = "",
                                      std::string label = "equal") {
    if (n < 1) throw std::invalid_argument("equal_weights: need at least one asset");
    PortfolioWeights out;
    out.weights = Eigen::VectorXd::Constant(n, 1.0 / double(n));
    out.as_of_date = std::move(as_of_date);
    out.label = std::move(label);
    return out;
}

inline double portfolio_return(const PortfolioWeights& weights,
                               const Eigen::VectorXd& daily_returns) {
    if (weights.weights.size() != daily_returns.size())
        throw std::invalid_argument("portfolio_return: weight/return length mismatch");
    return weights.weights.dot(daily_returns);
}

// One CSV row per asset: date,asset,weight,label.
inline std::vector<std::string> weights_csv_rows(
    const PortfolioWeights& weights, const std::vector<std::string>& asset_names) {
    if (static_cast<Eigen::Index>(asset_names.size()) != weights.weights.size())
        throw std::invalid_argument("weights_csv_rows: asset-name count mismatch");
    std::vector<std::string> rows;
    rows.reserve(asset_names.size());
    char buf[64];
    for (Eigen::Index i = 0; i < weights.weights.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", weights.weights(i));
        rows.push_back(weights.as_of_date + "," + asset_names[std::size_t(i)] + "," +
                       buf + "," + weights.label);
    }
    return rows;
}

}  // namespace covarcast
