#pragma once
// Unconditional correlation estimation from standardized residuals, with
// eigenvalue de-biasing: linear shrinkage toward the mean eigenvalue, or
// nonlinear shrinkage driven by a kernel estimate of the sample spectrum's
// Stieltjes transform.

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "covarcast/linalg.hpp"

namespace covarcast {

struct SpectralDecomposition {
    Eigen::VectorXd eigenvalues;   // ascending
    Eigen::MatrixXd eigenvectors;  // columns match eigenvalue order
};

inline SpectralDecomposition eigendecompose(const Eigen::MatrixXd& a) {
    require_symmetric(a, "eigendecompose");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a);
    if (solver.info() != Eigen::Success)
        throw std::runtime_error("eigendecompose: solver failed");
    return {solver.eigenvalues(), solver.eigenvectors()};
}

// Rbar-hat = (1/T) S'S.  On standardized residuals this is simultaneously the
// sample covariance and (approximately unit-diagonal) sample correlation; no
// renormalization happens at this stage.
inline Eigen::MatrixXd sample_correlation(const Eigen::MatrixXd& s) {
    if (s.rows() < 2)
        throw std::invalid_argument("sample_correlation: need T >= 2 rows");
    Eigen::MatrixXd r = (s.transpose() * s) / static_cast<double>(s.rows());
    r = ((r + r.transpose()) * 0.5).eval();  // kill rounding asymmetry
    return r;
}

enum class ShrinkageMethod { sample, linear, nonlinear };

inline const char* to_string(ShrinkageMethod m) {
    switch (m) {
        case ShrinkageMethod::sample: return "sample";
        case ShrinkageMethod::linear: return "linear";
        case ShrinkageMethod::nonlinear: return "nonlinear";
    }
    return "?";
}

struct ShrinkageResult {
    Eigen::MatrixXd matrix;             // final estimate
    Eigen::VectorXd shrunk_eigenvalues; // same order as decomposition
    Eigen::VectorXd stieltjes_real;     // Re m(lambda_i); zero for linear
    Eigen::VectorXd stieltjes_imag;     // Im m(lambda_i); zero for linear
    ShrinkageMethod method = ShrinkageMethod::sample;
    SpectralDecomposition decomposition;  // of the input matrix
};

inline ShrinkageResult linear_shrink(const Eigen::MatrixXd& a, double intensity = 0.5) {
    if (!(intensity >= 0.0 && intensity <= 1.0))
        throw std::invalid_argument("linear_shrink: intensity must lie in [0, 1]");
    ShrinkageResult out;
    out.method = ShrinkageMethod::linear;
    out.decomposition = eigendecompose(a);
    const Eigen::VectorXd& lam = out.decomposition.eigenvalues;
    const double mean = lam.mean();
    out.shrunk_eigenvalues =
        (1.0 - intensity) * lam.array() + intensity * mean;
    const Eigen::MatrixXd& u = out.decomposition.eigenvectors;
    Eigen::MatrixXd m = u * out.shrunk_eigenvalues.asDiagonal() * u.transpose();
    out.matrix = (m + m.transpose()) * 0.5;
    out.stieltjes_real = Eigen::VectorXd::Zero(lam.size());
    out.stieltjes_imag = Eigen::VectorXd::Zero(lam.size());
    return out;
}

namespace detail {

// Epanechnikov kernel on [-sqrt(5), sqrt(5)], unit mass, unit variance.
inline double epanechnikov(double x) {
    const double r5 = std::sqrt(5.0);
    if (std::abs(x) >= r5) return 0.0;
    return 3.0 / (4.0 * r5) * (1.0 - x * x / 5.0);
}

// Principal value of integral k(u) / (u - s) du over the kernel support.
// Antiderivative worked out by splitting (1 - u^2/5)/(u - s) after the shift
// w = u - s; the log coefficient vanishes linearly at s = +/-sqrt(5), so the
// endpoint singularity of the log is removable.
inline double epanechnikov_pv(double s) {
    const double r5 = std::sqrt(5.0);
    const double a = 3.0 / (4.0 * r5);
    const double coeff = 1.0 - s * s / 5.0;
    double log_term = 0.0;
    const double num = std::abs(r5 - s);
    const double den = std::abs(r5 + s);
    if (num > 0.0 && den > 0.0 && std::abs(coeff) > 0.0)
        log_term = coeff * std::log(num / den);
    return a * (log_term - 2.0 * s / r5);
}

}  // namespace detail

// Kernel-based nonlinear shrinkage of the sample correlation of standardized
// residuals.  The Stieltjes transform of the sample spectrum is estimated at
// each sample eigenvalue with an Epanechnikov kernel of per-center bandwidth
// h_j = lambda_j * T^(-1/3); eigenvalues are de-biased as
//   lambda_i / |1 - N/T - (N/T) lambda_i m(lambda_i)|^2,
// floored at 1e-8 of the largest, rebuilt in the original eigenbasis, and the
// result renormalized to unit diagonal so it can serve as a correlation
// target.
inline ShrinkageResult nonlinear_shrink(const Eigen::MatrixXd& s_residuals) {
    const Eigen::Index t_len = s_residuals.rows();
    const Eigen::Index n = s_residuals.cols();
    if (t_len < 12)
        throw std::invalid_argument("nonlinear_shrink: need T >= 12 observations");
    if (n > t_len - 2)
        throw std::runtime_error(
            "insufficient observations for nonlinear shrinkage");

    ShrinkageResult out;
    out.method = ShrinkageMethod::nonlinear;
    const Eigen::MatrixXd sample = sample_correlation(s_residuals);
    out.decomposition = eigendecompose(sample);
    const Eigen::VectorXd& lam = out.decomposition.eigenvalues;
    const double c = static_cast<double>(n) / static_cast<double>(t_len);
    const double t_pow = std::pow(static_cast<double>(t_len), -1.0 / 3.0);

    Eigen::VectorXd h = lam * t_pow;
    const double h_floor = 1e-12 * std::max(h.maxCoeff(), 1e-300);
    h = h.cwiseMax(h_floor);

    out.stieltjes_real.resize(n);
    out.stieltjes_imag.resize(n);
    out.shrunk_eigenvalues.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double re = 0.0, im = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double s = (lam(i) - lam(j)) / h(j);
            re += detail::epanechnikov_pv(s) / h(j);
            im += detail::epanechnikov(s) / h(j);
        }
        re /= static_cast<double>(n);
        im *= std::numbers::pi / static_cast<double>(n);
        out.stieltjes_real(i) = re;
        out.stieltjes_imag(i) = im;
        const double d_re = 1.0 - c - c * lam(i) * re;
        const double d_im = c * lam(i) * im;
        out.shrunk_eigenvalues(i) = lam(i) / (d_re * d_re + d_im * d_im);
    }
    const double floor = 1e-8 * out.shrunk_eigenvalues.maxCoeff();
    out.shrunk_eigenvalues = out.shrunk_eigenvalues.cwiseMax(floor);

    const Eigen::MatrixXd& u = out.decomposition.eigenvectors;
    const Eigen::MatrixXd rebuilt =
        u * out.shrunk_eigenvalues.asDiagonal() * u.transpose();
    out.matrix = correlation_from_q((rebuilt + rebuilt.transpose()) * 0.5);
    return out;
}

}  // namespace covarcast
