#pragma once
// Price / return / proxy panels.  Conditional means are taken as zero for
// daily returns, so returns double as residuals downstream.

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace covarcast {

struct PricePanel {
    std::vector<std::string> dates;   // strictly increasing (string order)
    std::vector<std::string> assets;  // unique, nonempty
    Eigen::MatrixXd prices;           // T x N, all > 0

    Eigen::Index days() const { return prices.rows(); }
    Eigen::Index n_assets() const { return prices.cols(); }

    void validate() const {
        if (prices.rows() != static_cast<Eigen::Index>(dates.size()))
            throw std::invalid_argument("PricePanel: date/row count mismatch");
        if (prices.cols() != static_cast<Eigen::Index>(assets.size()))
            throw std::invalid_argument("PricePanel: asset/column count mismatch");
        for (std::size_t t = 1; t < dates.size(); ++t)
            if (!(dates[t - 1] < dates[t]))
                throw std::invalid_argument("PricePanel: dates not strictly increasing");
        std::set<std::string> uniq(assets.begin(), assets.end());
        if (uniq.size() != assets.size())
            throw std::invalid_argument("PricePanel: duplicate asset names");
        if ((prices.array() <= 0.0).any() || !prices.allFinite())
            throw std::invalid_argument("PricePanel: prices must be finite and positive");
    }
};

struct ReturnPanel {
    std::vector<std::string> dates;   // dates[t] = date the return realizes on
    std::vector<std::string> assets;
    Eigen::MatrixXd returns;          // T x N daily log returns

    Eigen::Index days() const { return returns.rows(); }
    Eigen::Index n_assets() const { return returns.cols(); }
};

struct ProxyPanel {
    std::vector<std::string> dates;
    std::vector<std::string> assets;
    Eigen::MatrixXd proxies;          // T x N, >= 0
};

inline ReturnPanel to_log_returns(const PricePanel& panel) {
    if (panel.days() < 2)
        throw std::invalid_argument("to_log_returns: need at least 2 price rows");
    ReturnPanel out;
    out.assets = panel.assets;
    out.dates.assign(panel.dates.begin() + 1, panel.dates.end());
    out.returns = (panel.prices.bottomRows(panel.days() - 1).array().log() -
                   panel.prices.topRows(panel.days() - 1).array().log())
                      .matrix();
    if (!out.returns.allFinite())
        throw std::domain_error("to_log_returns: non-finite return produced");
    return out;
}

// Default daily volatility proxy d_{i,t} = |y_{i,t}|.  Kept as a seam so
// range- or realized-volatility proxies can slot in later.
inline ProxyPanel volatility_proxy(const ReturnPanel& panel) {
    ProxyPanel out;
    out.dates = panel.dates;
    out.assets = panel.assets;
    out.proxies = panel.returns.cwiseAbs();
    return out;
}

// Synthetic price path: P_0 = base, P_{t+1} = P_t * exp(y_t).  Inverse of
// to_log_returns up to floating rounding.
inline PricePanel prices_from_returns(const ReturnPanel& panel, double base = 100.0) {
    PricePanel out;
    out.assets = panel.assets;
    const Eigen::Index t = panel.days();
    const Eigen::Index n = panel.n_assets();
    out.prices.resize(t + 1, n);
    out.prices.row(0).setConstant(base);
    for (Eigen::Index k = 0; k < t; ++k)
        out.prices.row(k + 1) =
            out.prices.row(k).array() * panel.returns.row(k).array().exp();
    out.dates.reserve(t + 1);
    if (panel.dates.size() == static_cast<std::size_t>(t)) {
        // A proper prefix sorts strictly before the string it prefixes, so
        // this label stays below the first return date.
        const std::string& first = panel.dates.front();
        out.dates.push_back(first.size() > 1 ? first.substr(0, first.size() - 1) : "0");
        out.dates.insert(out.dates.end(), panel.dates.begin(), panel.dates.end());
    } else {
        char buf[32];
        for (Eigen::Index k = 0; k <= t; ++k) {
            std::snprintf(buf, sizeof(buf), "d%06lld", static_cast<long long>(k));
            out.dates.emplace_back(buf);
        }
    }
    return out;
}

}  // namespace covarcast
