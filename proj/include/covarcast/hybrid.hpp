#pragma once
// Hybrid volatility forecasting: per-asset feature sequences (volatility
// proxy plus the asset's own GARCH terms), pooled min-max-scaled training
// sets, per-asset volatility prediction with a shared network, and assembly
// of the covariance forecast from predicted volatilities and a correlation
// matrix.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "covarcast/garch.hpp"
#include "covarcast/linalg.hpp"
#include "covarcast/neural.hpp"
#include "covarcast/panel.hpp"
#include "covarcast/parallel.hpp"

namespace covarcast {

// Floor on predicted daily volatilities; keeps D_t invertible.
constexpr double kVolFloor = 1e-5;

struct ModelVariant {
    bool use_garch_features = true;
    bool use_one_hot = false;

    Eigen::Index feature_width() const { return use_garch_features ? 3 : 1; }

    std::string label() const {
        std::string s = use_garch_features ? "G-LSTM-DCC" : "LSTM-DCC";
        if (use_one_hot) s += "-OH";
        return s;
    }
};

inline ModelVariant variant_from_label(const std::string& label) {
    for (const bool garch : {false, true})
        for (const bool hot : {false, true}) {
            const ModelVariant v{garch, hot};
            if (v.label() == label) return v;
        }
    throw std::invalid_argument("variant_from_label: unknown label '" + label + "'");
}

// Per asset, per day: (d, alpha eps^2, beta sigma^2) or just (d).  The sigma^2
// path is re-filtered from the proxies with the fit's own initialization, so
// it extends past the fit window by the same closed-form recursion
// (|y|^2 == y^2 makes the proxy series sufficient).
inline std::vector<Eigen::MatrixXd> build_hybrid_features(
    const ProxyPanel& proxies, const std::vector<GarchFit>& fits,
    const ModelVariant& variant, int threads = 1) {
    const Eigen::Index n = proxies.proxies.cols();
    const Eigen::Index t_len = proxies.proxies.rows();
    if (t_len < 1) throw std::invalid_argument("build_hybrid_features: empty panel");
    if (static_cast<Eigen::Index>(fits.size()) != n)
        throw std::invalid_argument(
            "build_hybrid_features: fits misaligned with panel assets");

    std::vector<Eigen::MatrixXd> features(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
        const Eigen::VectorXd d = proxies.proxies.col(Eigen::Index(i));
        Eigen::MatrixXd f(t_len, variant.feature_width());
        f.col(0) = d;
        if (variant.use_garch_features) {
            const GarchFit& fit = fits[i];
            const Eigen::VectorXd sigma2 =
                garch_filter(d, fit.params, fit.sigma2_init);
            f.col(1) = fit.params.alpha * d.array().square().matrix();
            f.col(2) = fit.params.beta * sigma2;
        }
        features[i] = std::move(f);
    });
    return features;
}

// ---- scaling ----------------------------------------------------------------

// Pooled per-channel min-max onto [0.05, 0.95]; the margin keeps targets away
// from the sigmoid head's saturation.
struct ScalerState {
    Eigen::VectorXd feature_min, feature_max;
    double target_min = 0.0, target_max = 0.0;

    static constexpr double kLo = 0.05;
    static constexpr double kHi = 0.95;
};

inline ScalerState fit_scaler(const std::vector<Eigen::MatrixXd>& feature_blocks,
                              const Eigen::VectorXd& targets) {
    if (feature_blocks.empty() || targets.size() < 1)
        throw std::invalid_argument("fit_scaler: empty inputs");
    const Eigen::Index width = feature_blocks.front().cols();
    ScalerState st;
    st.feature_min = Eigen::VectorXd::Constant(width,
                                               std::numeric_limits<double>::infinity());
    st.feature_max = Eigen::VectorXd::Constant(
        width, -std::numeric_limits<double>::infinity());
    for (const auto& block : feature_blocks) {
        if (block.cols() != width)
            throw std::invalid_argument("fit_scaler: inconsistent feature widths");
        st.feature_min = st.feature_min.cwiseMin(block.colwise().minCoeff().transpose());
        st.feature_max = st.feature_max.cwiseMax(block.colwise().maxCoeff().transpose());
    }
    for (Eigen::Index c = 0; c < width; ++c)
        if (!(st.feature_max(c) > st.feature_min(c)))
            throw std::invalid_argument("fit_scaler: constant feature channel " +
                                        std::to_string(c));
    st.target_min = targets.minCoeff();
    st.target_max = targets.maxCoeff();
    if (!(st.target_max > st.target_min))
        throw std::invalid_argument("fit_scaler: constant target channel");
    return st;
}

namespace detail {

inline double scale_value(double x, double lo, double hi) {
    return ScalerState::kLo +
           (ScalerState::kHi - ScalerState::kLo) * (x - lo) / (hi - lo);
}

inline double invert_value(double s, double lo, double hi) {
    return lo + (s - ScalerState::kLo) / (ScalerState::kHi - ScalerState::kLo) *
                    (hi - lo);
}

}  // namespace detail

// Linear map; out-of-range inputs land outside [0.05, 0.95] by design.
inline Eigen::MatrixXd scale_features(const ScalerState& st,
                                      const Eigen::MatrixXd& rows) {
    if (rows.cols() != st.feature_min.size())
        throw std::invalid_argument("scale_features: channel count mismatch");
    Eigen::MatrixXd out(rows.rows(), rows.cols());
    for (Eigen::Index c = 0; c < rows.cols(); ++c)
        for (Eigen::Index r = 0; r < rows.rows(); ++r)
            out(r, c) =
                detail::scale_value(rows(r, c), st.feature_min(c), st.feature_max(c));
    return out;
}

inline double scale_target(const ScalerState& st, double y) {
    return detail::scale_value(y, st.target_min, st.target_max);
}

inline double invert_target(const ScalerState& st, double s) {
    return detail::invert_value(s, st.target_min, st.target_max);
}

inline nlohmann::json scaler_to_json(const ScalerState& st) {
    nlohmann::json fmin = nlohmann::json::array(), fmax = nlohmann::json::array();
    for (Eigen::Index c = 0; c < st.feature_min.size(); ++c) {
        fmin.push_back(st.feature_min(c));
        fmax.push_back(st.feature_max(c));
    }
    return nlohmann::json{{"format", "covarcast-scaler"},
                          {"version", 1},
                          {"feature_min", fmin},
                          {"feature_max", fmax},
                          {"target_min", st.target_min},
                          {"target_max", st.target_max}};
}

inline ScalerState scaler_from_json(const nlohmann::json& doc) {
    if (!doc.contains("format") || doc.at("format") != "covarcast-scaler")
        throw std::runtime_error("scaler_from_json: unrecognized document format");
    ScalerState st;
    const auto& fmin = doc.at("feature_min");
    const auto& fmax = doc.at("feature_max");
    st.feature_min.resize(static_cast<Eigen::Index>(fmin.size()));
    st.feature_max.resize(static_cast<Eigen::Index>(fmax.size()));
    for (Eigen::Index c = 0; c < st.feature_min.size(); ++c) {
        st.feature_min(c) = fmin[std::size_t(c)];
        st.feature_max(c) = fmax[std::size_t(c)];
    }
    st.target_min = doc.at("target_min").get<double>();
    st.target_max = doc.at("target_max").get<double>();
    return st;
}

// ---- training set -----------------------------------------------------------

struct HybridTrainingSet {
    TrainingSet data;
    ScalerState scaler;
    ModelVariant variant;
    Eigen::Index n_assets = 0;
    Eigen::Index window = 0;  // tau
};

// Pooled example set in (asset, time) order: example (i, k) covers feature
// rows [k, k+tau) of asset i and targets the scaled proxy at day k+tau, so a
// window never contains its own target day.
inline HybridTrainingSet build_training_set(
    const std::vector<Eigen::MatrixXd>& features, const ProxyPanel& proxies,
    Eigen::Index tau, const ModelVariant& variant) {
    const Eigen::Index n = static_cast<Eigen::Index>(features.size());
    const Eigen::Index t_len = proxies.proxies.rows();
    if (n < 1 || proxies.proxies.cols() != n)
        throw std::invalid_argument("build_training_set: features/panel mismatch");
    if (tau < 1 || t_len <= tau)
        throw std::invalid_argument("build_training_set: need T > tau >= 1");
    for (const auto& f : features)
        if (f.rows() != t_len || f.cols() != variant.feature_width())
            throw std::invalid_argument("build_training_set: feature block shape");

    const Eigen::Index per_asset = t_len - tau;
    const Eigen::Index k_total = n * per_asset;

    // The target channel is scaled against every proxy observation, not just
    // the days that end up as targets, so the scaler does not depend on the
    // window length.
    const Eigen::Map<const Eigen::VectorXd> target_pool(proxies.proxies.data(),
                                                        proxies.proxies.size());
    HybridTrainingSet out;
    out.scaler = fit_scaler(features, target_pool);
    out.variant = variant;
    out.n_assets = n;
    out.window = tau;
    out.data.tau = tau;
    out.data.features.resize(k_total * tau, variant.feature_width());
    out.data.targets.resize(k_total);
    if (variant.use_one_hot)
        out.data.one_hot = Eigen::MatrixXd::Zero(k_total, n);

    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::MatrixXd scaled = scale_features(out.scaler, features[std::size_t(i)]);
        for (Eigen::Index k = 0; k < per_asset; ++k) {
            const Eigen::Index ex = i * per_asset + k;
            out.data.features.middleRows(ex * tau, tau) = scaled.middleRows(k, tau);
            out.data.targets(ex) = scale_target(out.scaler, proxies.proxies(k + tau, i));
            if (variant.use_one_hot) out.data.one_hot(ex, i) = 1.0;
        }
    }
    return out;
}

// ---- prediction and assembly --------------------------------------------------

// One forward pass per asset with the shared parameters; dropout off.
inline Eigen::VectorXd predict_volatility_vector(
    const Network& net, const std::vector<Eigen::MatrixXd>& features,
    const ScalerState& scaler, const ModelVariant& variant, Eigen::Index tau,
    int threads = 1) {
    const Eigen::Index n = static_cast<Eigen::Index>(features.size());
    if (n < 1) throw std::invalid_argument("predict_volatility_vector: no assets");
    for (const auto& f : features)
        if (f.rows() < tau || f.cols() != variant.feature_width())
            throw std::invalid_argument(
                "predict_volatility_vector: insufficient history for an asset");
    if (variant.use_one_hot && net.one_hot_width != n)
        throw std::invalid_argument(
            "predict_volatility_vector: network one-hot width mismatch");

    Eigen::VectorXd vols(n);
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
        const Eigen::MatrixXd& f = features[i];
        const Eigen::MatrixXd window =
            scale_features(scaler, f.bottomRows(tau));
        Eigen::VectorXd one_hot;
        if (variant.use_one_hot) {
            one_hot = Eigen::VectorXd::Zero(n);
            one_hot(Eigen::Index(i)) = 1.0;
        }
        double p = predict(net, window, one_hot);
        p = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
        vols[Eigen::Index(i)] = std::max(kVolFloor, invert_target(scaler, p));
    });
    return vols;
}

struct CovarianceForecast {
    Eigen::MatrixXd matrix;
    std::string as_of_date;
    bool repaired = false;
};

// H[i][j] = vol_i vol_j corr[i][j]; if the correlation input was defective
// enough to break positive definiteness, eigenvalues are clipped at
// 1e-10 * max and the matrix rebuilt.
inline CovarianceForecast assemble_covariance(const Eigen::VectorXd& vols,
                                              const Eigen::MatrixXd& corr,
                                              std::string as_of_date = "") {
    const Eigen::Index n = vols.size();
    if (corr.rows() != n || corr.cols() != n)
        throw std::invalid_argument("assemble_covariance: dimension mismatch");
    if (!(vols.array() > 0.0).all())
        throw std::invalid_argument("assemble_covariance: volatilities must be > 0");
    require_symmetric(corr, "assemble_covariance corr");
    for (Eigen::Index i = 0; i < n; ++i)
        if (std::abs(corr(i, i) - 1.0) > 1e-10)
            throw std::invalid_argument(
                "assemble_covariance: corr must have unit diagonal");

    CovarianceForecast out;
    out.as_of_date = std::move(as_of_date);
    out.matrix = corr;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) out.matrix(i, j) *= vols(i) * vols(j);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.matrix);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("assemble_covariance: eigendecomposition failed");
    const double min_eig = es.eigenvalues().minCoeff();
    if (min_eig <= 0.0) {
        const double floor = 1e-10 * es.eigenvalues().maxCoeff();
        const Eigen::VectorXd clipped = es.eigenvalues().cwiseMax(floor);
        out.matrix = es.eigenvectors() * clipped.asDiagonal() *
                     es.eigenvectors().transpose();
        out.matrix = 0.5 * (out.matrix + out.matrix.transpose()).eval();
        out.repaired = true;
    }
    return out;
}

}  // namespace covarcast
