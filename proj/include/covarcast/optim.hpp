#pragma once
// Unconstrained minimization for the small (2-3 parameter) likelihood
// problems: BFGS with Armijo backtracking, falling back to a Nelder-Mead
// simplex search when the line search stalls.  Fully deterministic.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace covarcast {

struct OptimOptions {
    int max_iters = 500;
    double grad_tol = 1e-6;  // infinity norm of the gradient
    double f_tol = 1e-12;    // Nelder-Mead relative function spread
    double x_tol = 1e-10;    // Nelder-Mead simplex diameter
};

struct OptimResult {
    Eigen::VectorXd x;
    double fval = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
    bool used_fallback = false;
};

using ObjectiveFn = std::function<double(const Eigen::VectorXd&)>;
using GradientFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

inline Eigen::VectorXd central_difference_gradient(const ObjectiveFn& f,
                                                   const Eigen::VectorXd& x,
                                                   double rel_step = 1e-6) {
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = rel_step * std::max(1.0, std::abs(x(i)));
        xp(i) = x(i) + h;
        const double fp = f(xp);
        xp(i) = x(i) - h;
        const double fm = f(xp);
        xp(i) = x(i);
        g(i) = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline OptimResult minimize_nelder_mead(const ObjectiveFn& f, const Eigen::VectorXd& x0,
                                        const OptimOptions& opts = {}) {
    const Eigen::Index n = x0.size();
    const Eigen::Index m = n + 1;
    std::vector<Eigen::VectorXd> xs(m, x0);
    for (Eigen::Index i = 0; i < n; ++i) xs[i + 1](i) += 0.25;
    std::vector<double> fs(m);
    for (Eigen::Index i = 0; i < m; ++i) fs[i] = f(xs[i]);

    auto order = [&] {
        std::vector<Eigen::Index> idx(m);
        std::iota(idx.begin(), idx.end(), Eigen::Index(0));
        std::stable_sort(idx.begin(), idx.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return fs[a] < fs[b]; });
        std::vector<Eigen::VectorXd> xs2(m);
        std::vector<double> fs2(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            xs2[i] = xs[idx[i]];
            fs2[i] = fs[idx[i]];
        }
        xs.swap(xs2);
        fs.swap(fs2);
    };

    OptimResult res;
    int iter = 0;
    for (; iter < opts.max_iters; ++iter) {
        order();
        double diam = 0.0;
        for (Eigen::Index i = 1; i < m; ++i)
            diam = std::max(diam, (xs[i] - xs[0]).cwiseAbs().maxCoeff());
        const double spread = std::abs(fs[m - 1] - fs[0]);
        if (spread <= opts.f_tol * (1.0 + std::abs(fs[0])) && diam <= opts.x_tol) {
            res.converged = true;
            break;
        }
        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (Eigen::Index i = 0; i < m - 1; ++i) centroid += xs[i];
        centroid /= static_cast<double>(m - 1);

        const Eigen::VectorXd xr = centroid + (centroid - xs[m - 1]);
        const double fr = f(xr);
        if (fr < fs[0]) {
            const Eigen::VectorXd xe = centroid + 2.0 * (centroid - xs[m - 1]);
            const double fe = f(xe);
            if (fe < fr) { xs[m - 1] = xe; fs[m - 1] = fe; }
            else         { xs[m - 1] = xr; fs[m - 1] = fr; }
        } else if (fr < fs[m - 2]) {
            xs[m - 1] = xr;
            fs[m - 1] = fr;
        } else {
            const bool outside = fr < fs[m - 1];
            const Eigen::VectorXd base = outside ? xr : xs[m - 1];
            const Eigen::VectorXd xc = centroid + 0.5 * (base - centroid);
            const double fc = f(xc);
            if (fc < std::min(fr, fs[m - 1])) {
                xs[m - 1] = xc;
                fs[m - 1] = fc;
            } else {
                for (Eigen::Index i = 1; i < m; ++i) {
                    xs[i] = xs[0] + 0.5 * (xs[i] - xs[0]);
                    fs[i] = f(xs[i]);
                }
            }
        }
    }
    order();
    res.x = xs[0];
    res.fval = fs[0];
    res.iterations = iter;
    return res;
}

// BFGS on an explicitly provided gradient.  Proposed steps are capped (the
// likelihood surfaces this serves are well inside a +/-10 box, so a huge
// quasi-Newton step only ever signals a bad curvature estimate).  When the
// backtracking line search stalls, a bounded Nelder-Mead polish runs from the
// current point and BFGS restarts from wherever it lands; the loop ends when
// the gradient tolerance is met, the polish converges on its own criteria, or
// neither can improve the point further.
inline OptimResult minimize(const ObjectiveFn& f, const GradientFn& grad,
                            const Eigen::VectorXd& x0, const OptimOptions& opts = {}) {
    constexpr double kMaxStep = 2.0;  // infinity norm cap on one BFGS step
    const Eigen::Index n = x0.size();
    OptimResult res;
    Eigen::VectorXd x = x0;
    double fx = f(x);
    if (!std::isfinite(fx)) {
        res = minimize_nelder_mead(f, x0, opts);
        res.used_fallback = true;
        return res;
    }
    int total_iters = 0;
    bool used_fallback = false;
    while (total_iters < opts.max_iters) {
        Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
        Eigen::VectorXd g = grad(x);
        bool line_search_failed = false;
        bool converged = false;
        for (; total_iters < opts.max_iters; ++total_iters) {
            if (!g.allFinite()) { line_search_failed = true; break; }
            if (g.cwiseAbs().maxCoeff() < opts.grad_tol) {
                converged = true;
                break;
            }
            Eigen::VectorXd d = -(hinv * g);
            double dmax = d.cwiseAbs().maxCoeff();
            if (!(dmax > 0.0) || !d.allFinite()) {
                hinv.setIdentity();
                d = -g;
                dmax = d.cwiseAbs().maxCoeff();
            }
            if (dmax > kMaxStep) d *= kMaxStep / dmax;
            double slope = g.dot(d);
            if (!(slope < 0.0)) {  // curvature corruption: steepest descent
                hinv.setIdentity();
                d = -g;
                dmax = d.cwiseAbs().maxCoeff();
                if (dmax > kMaxStep) d *= kMaxStep / dmax;
                slope = g.dot(d);
            }
            double step = 1.0;
            double f_new = std::numeric_limits<double>::infinity();
            Eigen::VectorXd x_new;
            bool accepted = false;
            // Near the optimum the true decrease drops below the rounding
            // noise of f itself; the allowance keeps the line search from
            // stalling there so the gradient norm can keep contracting.
            const double noise =
                4.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(fx));
            for (int ls = 0; ls < 60; ++ls) {
                x_new = x + step * d;
                f_new = f(x_new);
                if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope + noise) {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) { line_search_failed = true; break; }
            const Eigen::VectorXd g_new = grad(x_new);
            const Eigen::VectorXd s = x_new - x;
            const Eigen::VectorXd y = g_new - g;
            const double sy = s.dot(y);
            if (sy > 1e-12 * s.norm() * y.norm()) {
                const double rho = 1.0 / sy;
                const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
                hinv = (eye - rho * s * y.transpose()) * hinv *
                           (eye - rho * y * s.transpose()) +
                       rho * s * s.transpose();
            }
            x = x_new;
            fx = f_new;
            g = g_new;
        }
        if (converged) {
            res.converged = true;
            break;
        }
        if (!line_search_failed) break;  // iteration budget exhausted
        OptimOptions nm_opts = opts;
        nm_opts.max_iters = std::min(200, opts.max_iters - total_iters);
        if (nm_opts.max_iters <= 0) break;
        const OptimResult nm = minimize_nelder_mead(f, x, nm_opts);
        total_iters += nm.iterations;
        used_fallback = true;
        const bool improved = nm.fval < fx;
        if (improved) {
            x = nm.x;
            fx = nm.fval;
        }
        if (nm.converged) {
            res.converged = true;
            break;
        }
        if (!improved) break;  // neither method can improve: stuck
    }
    res.x = x;
    res.fval = fx;
    res.iterations = total_iters;
    res.used_fallback = used_fallback;
    return res;
}

}  // namespace covarcast
