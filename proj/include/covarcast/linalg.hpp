#pragma once
// Small shared matrix helpers used across the DCC / shrinkage / hybrid code.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>
#include <string>

namespace covarcast {

inline bool is_symmetric(const Eigen::MatrixXd& a, double tol = 1e-10) {
    if (a.rows() != a.cols()) return false;
    return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol;
}

inline void require_symmetric(const Eigen::MatrixXd& a, const std::string& what,
                              double tol = 1e-10) {
    if (!is_symmetric(a, tol))
        throw std::invalid_argument(what + ": matrix is not symmetric within tolerance");
}

// Diag(Q)^{-1/2} Q Diag(Q)^{-1/2} with the diagonal set to exactly 1 and
// symmetry enforced by construction (upper triangle mirrored).
inline Eigen::MatrixXd correlation_from_q(const Eigen::MatrixXd& q) {
    const Eigen::Index n = q.rows();
    Eigen::VectorXd inv_sd(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = q(i, i);
        if (!(d > 0.0))
            throw std::domain_error("correlation_from_q: nonpositive diagonal entry");
        inv_sd(i) = 1.0 / std::sqrt(d);
    }
    Eigen::MatrixXd r(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        r(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = q(i, j) * inv_sd(i) * inv_sd(j);
            r(i, j) = v;
            r(j, i) = v;
        }
    }
    return r;
}

// Lower-triangular Cholesky factor; throws if the matrix is not PD.
inline Eigen::MatrixXd chol_lower(const Eigen::MatrixXd& a, const std::string& what) {
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success)
        throw std::domain_error(what + ": matrix is not positive definite");
    return llt.matrixL();
}

// Eigenvalue-clip PD repair: eigenvalues below rel_floor * max eigenvalue are
// raised to that floor and the matrix rebuilt in the same eigenbasis.
inline Eigen::MatrixXd clip_eigenvalues_spd(const Eigen::MatrixXd& a,
                                            double rel_floor = 1e-10) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("clip_eigenvalues_spd: eigendecomposition failed");
    Eigen::VectorXd lam = es.eigenvalues();
    const double floor = rel_floor * lam.maxCoeff();
    if (!(floor > 0.0))
        throw std::domain_error("clip_eigenvalues_spd: matrix has no positive eigenvalue");
    bool clipped = false;
    for (Eigen::Index i = 0; i < lam.size(); ++i)
        if (lam(i) < floor) { lam(i) = floor; clipped = true; }
    if (!clipped) return a;
    Eigen::MatrixXd out =
        es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    return (out + out.transpose()) / 2.0;
}

}  // namespace covarcast
