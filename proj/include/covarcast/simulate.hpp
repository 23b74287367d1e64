#pragma once
// Forward simulation of the DCC-GARCH generative process with known
// parameters: Y_t = D_t R_t^{1/2} Z_t, H_t = D_t R_t D_t.  The ground truth
// (sigma^2, standardized residuals, R_t, H_t paths) is recorded so tests can
// use the simulator as an oracle.

#include <Eigen/Dense>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "covarcast/garch.hpp"
#include "covarcast/linalg.hpp"
#include "covarcast/panel.hpp"
#include "covarcast/rng.hpp"

namespace covarcast {

struct SimulationSpec {
    std::vector<GarchParams> garch;  // per asset
    double dcc_alpha = 0.0;
    double dcc_beta = 0.0;
    Eigen::MatrixXd rbar;            // N x N correlation target, unit diagonal, PD
    Eigen::Index n_days = 0;
    std::uint64_t seed = 0;

    Eigen::Index n_assets() const { return static_cast<Eigen::Index>(garch.size()); }

    void validate() const {
        if (garch.empty() || n_days <= 0)
            throw std::invalid_argument("SimulationSpec: need assets and a positive horizon");
        for (const auto& p : garch) p.validate();
        if (dcc_alpha < 0.0 || dcc_beta < 0.0 || dcc_alpha + dcc_beta >= 1.0)
            throw std::invalid_argument(
                "SimulationSpec: require dcc alpha, beta >= 0 and alpha + beta < 1");
        if (rbar.rows() != n_assets() || rbar.cols() != n_assets())
            throw std::invalid_argument("SimulationSpec: rbar dimension mismatch");
        require_symmetric(rbar, "SimulationSpec rbar");
        for (Eigen::Index i = 0; i < rbar.rows(); ++i)
            if (std::abs(rbar(i, i) - 1.0) > 1e-12)
                throw std::invalid_argument("SimulationSpec: rbar diagonal must be 1");
    }
};

struct SimulationResult {
    ReturnPanel panel;
    Eigen::MatrixXd sigma2;              // T x N true conditional variances
    Eigen::MatrixXd std_residuals;       // T x N true s_t = D_t^{-1} Y_t
    std::vector<Eigen::MatrixXd> r_path; // recorded when record_paths
    std::vector<Eigen::MatrixXd> h_path; // recorded when record_paths
};

inline SimulationResult simulate_dcc_garch(const SimulationSpec& spec,
                                           bool record_paths = true) {
    spec.validate();
    const Eigen::Index n = spec.n_assets();
    const Eigen::Index t_len = spec.n_days;
    // Fail fast if rbar is not PD (also needed for the first day's factor).
    chol_lower(spec.rbar, "simulate_dcc_garch rbar");

    Rng rng(spec.seed);
    SimulationResult out;
    out.panel.assets.reserve(static_cast<std::size_t>(n));
    char buf[24];
    for (Eigen::Index j = 0; j < n; ++j) {
        std::snprintf(buf, sizeof(buf), "a%03lld", static_cast<long long>(j));
        out.panel.assets.emplace_back(buf);
    }
    out.panel.dates.reserve(static_cast<std::size_t>(t_len));
    for (Eigen::Index t = 0; t < t_len; ++t) {
        std::snprintf(buf, sizeof(buf), "d%06lld", static_cast<long long>(t + 1));
        out.panel.dates.emplace_back(buf);
    }
    out.panel.returns.resize(t_len, n);
    out.sigma2.resize(t_len, n);
    out.std_residuals.resize(t_len, n);
    if (record_paths) {
        out.r_path.reserve(static_cast<std::size_t>(t_len));
        out.h_path.reserve(static_cast<std::size_t>(t_len));
    }

    Eigen::VectorXd sigma2(n);
    for (Eigen::Index j = 0; j < n; ++j) sigma2(j) = unconditional_variance(spec.garch[j]);
    Eigen::MatrixXd q = spec.rbar;
    Eigen::VectorXd z(n), s(n), y(n);
    const double a = spec.dcc_alpha, b = spec.dcc_beta;

    for (Eigen::Index t = 0; t < t_len; ++t) {
        if (t > 0) {
            for (Eigen::Index j = 0; j < n; ++j) {
                const double eps = out.panel.returns(t - 1, j);
                sigma2(j) = spec.garch[j].omega + spec.garch[j].alpha * eps * eps +
                            spec.garch[j].beta * sigma2(j);
            }
            const Eigen::VectorXd s_prev = out.std_residuals.row(t - 1).transpose();
            q = (1.0 - a - b) * spec.rbar + a * (s_prev * s_prev.transpose()) + b * q;
        }
        const Eigen::MatrixXd r = correlation_from_q(q);
        const Eigen::MatrixXd l = chol_lower(r, "simulate_dcc_garch R_t");
        for (Eigen::Index j = 0; j < n; ++j) z(j) = rng.normal();  // fixed draw order
        s = l * z;
        y = sigma2.array().sqrt() * s.array();
        out.panel.returns.row(t) = y.transpose();
        out.sigma2.row(t) = sigma2.transpose();
        out.std_residuals.row(t) = s.transpose();
        if (record_paths) {
            out.r_path.push_back(r);
            Eigen::MatrixXd h = r;
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j2 = 0; j2 < n; ++j2)
                    h(i, j2) *= std::sqrt(sigma2(i)) * std::sqrt(sigma2(j2));
            out.h_path.push_back(h);
        }
    }
    return out;
}

// Convenience builders used by tests and the CLI.
inline Eigen::MatrixXd equicorrelation_matrix(Eigen::Index n, double rho) {
    if (n < 1) throw std::invalid_argument("equicorrelation_matrix: n must be >= 1");
    if (rho < 0.0 || rho >= 1.0)
        throw std::invalid_argument("equicorrelation_matrix: need 0 <= rho < 1");
    Eigen::MatrixXd r = Eigen::MatrixXd::Constant(n, n, rho);
    r.diagonal().setOnes();
    return r;
}

inline Eigen::MatrixXd ar1_correlation_matrix(Eigen::Index n, double rho) {
    if (n < 1) throw std::invalid_argument("ar1_correlation_matrix: n must be >= 1");
    if (std::abs(rho) >= 1.0)
        throw std::invalid_argument("ar1_correlation_matrix: need |rho| < 1");
    Eigen::MatrixXd r(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            r(i, j) = std::pow(rho, std::abs(static_cast<double>(i - j)));
    return r;
}

}  // namespace covarcast
