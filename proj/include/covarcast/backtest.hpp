#pragma once
// Rolling out-of-sample protocol: fit on an initial window, rebalance at
// fixed-length month boundaries with scheduled refits, hold weights within
// the month, and report annualized SD / AV / IR per model.

#include <Eigen/Dense>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "covarcast/csv.hpp"
#include "covarcast/dcc.hpp"
#include "covarcast/garch.hpp"
#include "covarcast/hybrid.hpp"
#include "covarcast/neural.hpp"
#include "covarcast/panel.hpp"
#include "covarcast/portfolio.hpp"
#include "covarcast/sha1.hpp"
#include "covarcast/shrinkage.hpp"

namespace covarcast {

// ---- metrics ----------------------------------------------------------------

struct PerformanceMetrics {
    double av = 0.0;  // 252 * mean daily return
    double sd = 0.0;  // sqrt(252) * daily standard deviation (divisor T-1)
    double ir = 0.0;
    bool ir_defined = false;
};

inline PerformanceMetrics compute_metrics(const Eigen::VectorXd& daily_returns) {
    const Eigen::Index t_len = daily_returns.size();
    if (t_len < 2)
        throw std::invalid_argument("compute_metrics: need at least two returns");
    const double mean = daily_returns.mean();
    PerformanceMetrics m;
    m.av = 252.0 * mean;
    if (daily_returns.minCoeff() == daily_returns.maxCoeff()) {
        // A constant series has zero variance by definition; the subtracted
        // mean would otherwise leave rounding dust here.
        m.sd = 0.0;
    } else {
        const double ss = (daily_returns.array() - mean).square().sum();
        m.sd = std::sqrt(252.0) * std::sqrt(ss / double(t_len - 1));
    }
    if (m.sd > 0.0) {
        m.ir = m.av / m.sd;
        m.ir_defined = true;
    }
    return m;
}

// ---- configuration ----------------------------------------------------------

struct BacktestConfig {
    Eigen::Index train_days = 1250;
    Eigen::Index month_len = 21;
    int nn_refit_every = 12;  // months between network (and GARCH) refits
    int dcc_refit_every = 1;  // months between DCC refits
    std::vector<ModelVariant> variants;
    bool include_dcc = true;    // pure GARCH-DCC benchmark
    bool include_equal = true;  // 1/N benchmark
    bool allow_short = true;
    std::uint64_t rng_seed = 0;
    Eigen::Index tau = 21;

    // Shared network shape for the neural variants (input width follows the
    // variant).  Defaults mirror the production configuration; tests and
    // small runs override them.
    Eigen::Index lstm_width = 100;
    std::vector<Eigen::Index> dense_widths = {350, 300, 250, 200, 1};
    double lstm_dropout = 0.4;
    double dense_dropout = 0.5;
    TrainingConfig training;  // rng_seed and threads are overridden per refit
    int threads = 1;

    void validate() const {
        if (train_days <= tau)
            throw std::invalid_argument("BacktestConfig: train_days must exceed tau");
        if (month_len < 1 || tau < 1)
            throw std::invalid_argument("BacktestConfig: month_len and tau must be >= 1");
        if (nn_refit_every < 1 || dcc_refit_every < 1)
            throw std::invalid_argument("BacktestConfig: refit cadences must be >= 1");
        if (threads < 1)
            throw std::invalid_argument("BacktestConfig: threads must be >= 1");
        if (!include_dcc && !include_equal && variants.empty())
            throw std::invalid_argument("BacktestConfig: empty model roster");
        training.validate();
    }
};

inline nlohmann::json backtest_config_to_json(const BacktestConfig& cfg) {
    nlohmann::json variants = nlohmann::json::array();
    for (const auto& v : cfg.variants) variants.push_back(v.label());
    nlohmann::json dense = nlohmann::json::array();
    for (const auto w : cfg.dense_widths) dense.push_back(w);
    return nlohmann::json{{"format", "covarcast-backtest-config"},
                          {"version", 1},
                          {"train_days", cfg.train_days},
                          {"month_len", cfg.month_len},
                          {"nn_refit_every", cfg.nn_refit_every},
                          {"dcc_refit_every", cfg.dcc_refit_every},
                          {"variants", variants},
                          {"include_dcc", cfg.include_dcc},
                          {"include_equal", cfg.include_equal},
                          {"allow_short", cfg.allow_short},
                          {"rng_seed", cfg.rng_seed},
                          {"tau", cfg.tau},
                          {"lstm_width", cfg.lstm_width},
                          {"dense_widths", dense},
                          {"lstm_dropout", cfg.lstm_dropout},
                          {"dense_dropout", cfg.dense_dropout},
                          {"epochs", cfg.training.epochs},
                          {"batch_size", cfg.training.batch_size},
                          {"learning_rate", cfg.training.learning_rate},
                          {"dropout_enabled", cfg.training.dropout_enabled},
                          {"patience", cfg.training.patience},
                          {"val_fraction", cfg.training.val_fraction}};
}

inline BacktestConfig backtest_config_from_json(const nlohmann::json& doc) {
    if (!doc.contains("format") || doc.at("format") != "covarcast-backtest-config")
        throw std::runtime_error("backtest_config_from_json: unrecognized document format");
    BacktestConfig cfg;
    cfg.train_days = doc.at("train_days").get<Eigen::Index>();
    cfg.month_len = doc.at("month_len").get<Eigen::Index>();
    cfg.nn_refit_every = doc.at("nn_refit_every").get<int>();
    cfg.dcc_refit_every = doc.at("dcc_refit_every").get<int>();
    cfg.variants.clear();
    for (const auto& label : doc.at("variants"))
        cfg.variants.push_back(variant_from_label(label.get<std::string>()));
    cfg.include_dcc = doc.at("include_dcc").get<bool>();
    cfg.include_equal = doc.at("include_equal").get<bool>();
    cfg.allow_short = doc.at("allow_short").get<bool>();
    cfg.rng_seed = doc.at("rng_seed").get<std::uint64_t>();
    cfg.tau = doc.at("tau").get<Eigen::Index>();
    cfg.lstm_width = doc.at("lstm_width").get<Eigen::Index>();
    cfg.dense_widths.clear();
    for (const auto& w : doc.at("dense_widths"))
        cfg.dense_widths.push_back(w.get<Eigen::Index>());
    cfg.lstm_dropout = doc.at("lstm_dropout").get<double>();
    cfg.dense_dropout = doc.at("dense_dropout").get<double>();
    cfg.training.epochs = doc.at("epochs").get<int>();
    cfg.training.batch_size = doc.at("batch_size").get<int>();
    cfg.training.learning_rate = doc.at("learning_rate").get<double>();
    cfg.training.dropout_enabled = doc.at("dropout_enabled").get<bool>();
    cfg.training.patience = doc.at("patience").get<int>();
    cfg.training.val_fraction = doc.at("val_fraction").get<double>();
    return cfg;
}

inline std::string backtest_config_digest(const BacktestConfig& cfg) {
    return sha1_hex(backtest_config_to_json(cfg).dump());
}

// ---- report -----------------------------------------------------------------

struct ModelRun {
    std::string label;
    Eigen::VectorXd daily_returns;          // out-of-sample, day by day
    std::vector<PortfolioWeights> weights;  // one record per month
    PerformanceMetrics metrics;
};

struct BacktestReport {
    std::vector<ModelRun> models;
    std::vector<std::string> dates;  // out-of-sample dates
    std::vector<std::string> assets;
    std::string config_digest;
    std::string data_digest;  // git-style blob hash of the input returns CSV
    std::uint64_t rng_seed = 0;
    Eigen::Index train_days = 0;
    Eigen::Index month_len = 0;
};

// ---- engine -----------------------------------------------------------------

namespace detail {

// Seeds must not depend on roster order, so they key on the variant's
// canonical identity rather than its position.
inline int canonical_variant_index(const ModelVariant& v) {
    return (v.use_garch_features ? 1 : 0) + (v.use_one_hot ? 2 : 0);
}

struct VariantState {
    ModelVariant variant;
    Network net;
    ScalerState scaler;
    std::vector<Eigen::MatrixXd> features;  // full-length causal paths
};

}  // namespace detail

inline BacktestReport run_backtest(const ReturnPanel& panel, const BacktestConfig& cfg) {
    cfg.validate();
    const Eigen::Index t_len = panel.returns.rows();
    const Eigen::Index n = panel.returns.cols();
    if (t_len < cfg.train_days + cfg.month_len)
        throw std::invalid_argument(
            "run_backtest: panel shorter than train_days plus one month");
    const bool need_garch = cfg.include_dcc || !cfg.variants.empty();
    if (need_garch && n < 2)
        throw std::invalid_argument(
            "run_backtest: covariance models need at least two assets");

    const Eigen::Index months = (t_len - cfg.train_days) / cfg.month_len;
    const Eigen::Index out_days = months * cfg.month_len;

    const ProxyPanel proxies = volatility_proxy(panel);

    BacktestReport report;
    report.assets = panel.assets;
    report.dates.assign(panel.dates.begin() + cfg.train_days,
                        panel.dates.begin() + cfg.train_days + out_days);
    report.config_digest = backtest_config_digest(cfg);
    report.data_digest = git_blob_sha1(returns_csv_string(panel));
    report.rng_seed = cfg.rng_seed;
    report.train_days = cfg.train_days;
    report.month_len = cfg.month_len;

    if (cfg.include_dcc) report.models.push_back({"DCC", {}, {}, {}});
    for (const auto& v : cfg.variants) report.models.push_back({v.label(), {}, {}, {}});
    if (cfg.include_equal) report.models.push_back({"1/N", {}, {}, {}});
    for (auto& run : report.models)
        run.daily_returns = Eigen::VectorXd::Zero(out_days);

    // Shared state refreshed on the refit schedules.
    std::vector<GarchFit> garch_fits;
    Eigen::MatrixXd sigma2(t_len, n);         // causal paths under current fits
    Eigen::MatrixXd std_residuals(t_len, n);  // returns / sqrt(sigma2)
    DccFit dcc_fit;
    std::vector<detail::VariantState> nets;
    for (const auto& v : cfg.variants) {
        detail::VariantState vs;
        vs.variant = v;
        nets.push_back(std::move(vs));
    }

    std::string stage = "shared fits";
    for (Eigen::Index m = 0; m < months; ++m) {
        try {
            const Eigen::Index b = cfg.train_days + m * cfg.month_len;
            const std::string as_of = panel.dates[std::size_t(b)];

            if (need_garch && m % cfg.nn_refit_every == 0) {
                stage = "shared fits";
                const DegarchResult dg = degarch(panel.returns.topRows(b).eval(),
                                                 panel.assets, {}, cfg.threads);
                garch_fits = dg.fits;
                for (Eigen::Index i = 0; i < n; ++i)
                    sigma2.col(i) = garch_filter(panel.returns.col(i),
                                                 garch_fits[std::size_t(i)].params,
                                                 garch_fits[std::size_t(i)].sigma2_init);
                std_residuals = panel.returns.cwiseQuotient(sigma2.cwiseSqrt());

                for (auto& vs : nets) {
                    stage = vs.variant.label();
                    vs.features = build_hybrid_features(proxies, garch_fits,
                                                        vs.variant, cfg.threads);
                    // Train strictly on the data before the boundary.
                    ProxyPanel window;
                    window.assets = proxies.assets;
                    window.dates.assign(proxies.dates.begin(), proxies.dates.begin() + b);
                    window.proxies = proxies.proxies.topRows(b);
                    std::vector<Eigen::MatrixXd> window_features;
                    for (const auto& f : vs.features)
                        window_features.push_back(f.topRows(b));
                    const HybridTrainingSet set =
                        build_training_set(window_features, window, cfg.tau, vs.variant);
                    vs.scaler = set.scaler;

                    NetworkArch arch;
                    arch.input_width = vs.variant.feature_width();
                    arch.lstm_width = cfg.lstm_width;
                    arch.dense_widths = cfg.dense_widths;
                    arch.concat_one_hot = vs.variant.use_one_hot;
                    arch.one_hot_width = vs.variant.use_one_hot ? n : 0;
                    arch.lstm_dropout = cfg.lstm_dropout;
                    arch.dense_dropout = cfg.dense_dropout;
                    const int idx = detail::canonical_variant_index(vs.variant);
                    arch.seed = detail::mix_seed(cfg.rng_seed, 0x5EED0000ull +
                                                 std::uint64_t(m) * 16 +
                                                 std::uint64_t(idx));
                    vs.net = make_network(arch);

                    TrainingConfig train_cfg = cfg.training;
                    train_cfg.rng_seed = detail::mix_seed(
                        cfg.rng_seed,
                        0x7EA10000ull + std::uint64_t(m) * 16 + std::uint64_t(idx));
                    train_cfg.threads = cfg.threads;
                    train(vs.net, set.data, train_cfg);
                }
            }

            if (need_garch && m % cfg.dcc_refit_every == 0) {
                stage = "shared fits";
                const Eigen::MatrixXd s_window = std_residuals.topRows(b);
                const ShrinkageResult shrunk = nonlinear_shrink(s_window);
                DccFitOptions opts;
                opts.threads = cfg.threads;
                dcc_fit = fit_dcc(s_window, shrunk.matrix, opts);
            }

            // One-step correlation forecast shared by every covariance model.
            Eigen::MatrixXd r_hat;
            Eigen::VectorXd garch_vols;
            if (need_garch) {
                stage = "shared fits";
                DccFit rolled = dcc_fit;
                rolled.q_last = dcc_filter(std_residuals.topRows(b), dcc_fit.params,
                                           dcc_fit.rbar)
                                    .q_last;
                r_hat = forecast_correlation_one_step(
                    rolled, std_residuals.row(b - 1).transpose());

                garch_vols.resize(n);
                for (Eigen::Index i = 0; i < n; ++i) {
                    const GarchParams& p = garch_fits[std::size_t(i)].params;
                    const double y_prev = panel.returns(b - 1, i);
                    garch_vols(i) = std::sqrt(p.omega + p.alpha * y_prev * y_prev +
                                              p.beta * sigma2(b - 1, i));
                }
            }

            std::size_t slot = 0;
            auto hold_month = [&](const PortfolioWeights& w) {
                ModelRun& run = report.models[slot];
                run.weights.push_back(w);
                for (Eigen::Index d = 0; d < cfg.month_len; ++d)
                    run.daily_returns(m * cfg.month_len + d) =
                        w.weights.dot(panel.returns.row(b + d));
                ++slot;
            };
            auto mvp_weights = [&](const CovarianceForecast& h, const std::string& label) {
                return cfg.allow_short
                           ? min_variance_weights(h, label)
                           : min_variance_weights_long_only(h, label);
            };

            if (cfg.include_dcc) {
                stage = "DCC";
                hold_month(mvp_weights(assemble_covariance(garch_vols, r_hat, as_of),
                                       "DCC"));
            }
            for (auto& vs : nets) {
                stage = vs.variant.label();
                std::vector<Eigen::MatrixXd> latest;
                for (const auto& f : vs.features)
                    latest.push_back(f.middleRows(b - cfg.tau, cfg.tau));
                const Eigen::VectorXd vols = predict_volatility_vector(
                    vs.net, latest, vs.scaler, vs.variant, cfg.tau, cfg.threads);
                hold_month(mvp_weights(assemble_covariance(vols, r_hat, as_of),
                                       vs.variant.label()));
            }
            if (cfg.include_equal) {
                stage = "1/N";
                hold_month(equal_weights(n, as_of, "1/N"));
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("run_backtest: month " + std::to_string(m) +
                                     ", model " + stage + ": " + e.what());
        }
    }

    for (auto& run : report.models) run.metrics = compute_metrics(run.daily_returns);
    return report;
}

// ---- report files -------------------------------------------------------------

namespace detail {

inline std::string sanitize_label(const std::string& label) {
    std::string out;
    for (const char c : label)
        out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' ||
                              c == '_' || c == '.'
                          ? c
                          : '-');
    return out;
}

inline std::string metrics_csv_row(const std::string& label,
                                   const PerformanceMetrics& m) {
    char buf[96];
    if (m.ir_defined)
        std::snprintf(buf, sizeof buf, "%s,%.2f,%.2f,%.2f", label.c_str(),
                      100.0 * m.sd, 100.0 * m.av, m.ir);
    else
        std::snprintf(buf, sizeof buf, "%s,%.2f,%.2f,NA", label.c_str(),
                      100.0 * m.sd, 100.0 * m.av);
    return buf;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("write_report: cannot open " + path.string());
    return out;
}

}  // namespace detail

inline void write_report(const BacktestReport& report, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw std::runtime_error("write_report: cannot create directory " + dir);

    {
        auto out = detail::open_out(fs::path(dir) / "metrics.csv");
        out << "model,SD,AV,IR\n";
        for (const auto& run : report.models)
            out << detail::metrics_csv_row(run.label, run.metrics) << '\n';
    }

    for (const auto& run : report.models) {
        const std::string stem = detail::sanitize_label(run.label);
        {
            auto out = detail::open_out(fs::path(dir) / ("returns_" + stem + ".csv"));
            out << "date,return\n";
            for (Eigen::Index t = 0; t < run.daily_returns.size(); ++t)
                out << report.dates[std::size_t(t)] << ','
                    << covarcast::detail::format_double(run.daily_returns(t)) << '\n';
        }
        {
            auto out = detail::open_out(fs::path(dir) / ("weights_" + stem + ".csv"));
            out << "date,asset,weight,label\n";
            for (const auto& w : run.weights)
                for (const auto& row : weights_csv_rows(w, report.assets))
                    out << row << '\n';
        }
    }

    {
        auto out = detail::open_out(fs::path(dir) / "cumulative.csv");
        out << "date";
        for (const auto& run : report.models) out << ',' << run.label;
        out << '\n';
        std::vector<double> growth(report.models.size(), 1.0);
        for (std::size_t t = 0; t < report.dates.size(); ++t) {
            out << report.dates[t];
            for (std::size_t k = 0; k < report.models.size(); ++k) {
                growth[k] *= 1.0 + report.models[k].daily_returns(Eigen::Index(t));
                out << ',' << covarcast::detail::format_double(growth[k] - 1.0);
            }
            out << '\n';
        }
    }

    {
        nlohmann::json labels = nlohmann::json::array();
        for (const auto& run : report.models) labels.push_back(run.label);
        nlohmann::json assets = nlohmann::json::array();
        for (const auto& a : report.assets) assets.push_back(a);
        const nlohmann::json doc{{"format", "covarcast-backtest-report"},
                                 {"version", 1},
                                 {"config_digest", report.config_digest},
                                 {"data_digest", report.data_digest},
                                 {"rng_seed", report.rng_seed},
                                 {"train_days", report.train_days},
                                 {"month_len", report.month_len},
                                 {"models", labels},
                                 {"assets", assets}};
        auto out = detail::open_out(fs::path(dir) / "provenance.json");
        out << doc.dump(2) << '\n';
    }
}

inline BacktestReport read_report(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream prov(fs::path(dir) / "provenance.json");
    if (!prov)
        throw std::runtime_error("read_report: cannot open provenance.json in " + dir);
    nlohmann::json doc;
    prov >> doc;
    if (!doc.contains("format") || doc.at("format") != "covarcast-backtest-report")
        throw std::runtime_error("read_report: unrecognized provenance format");

    BacktestReport report;
    report.config_digest = doc.at("config_digest").get<std::string>();
    report.data_digest = doc.at("data_digest").get<std::string>();
    report.rng_seed = doc.at("rng_seed").get<std::uint64_t>();
    report.train_days = doc.at("train_days").get<Eigen::Index>();
    report.month_len = doc.at("month_len").get<Eigen::Index>();
    for (const auto& a : doc.at("assets"))
        report.assets.push_back(a.get<std::string>());

    for (const auto& label_json : doc.at("models")) {
        ModelRun run;
        run.label = label_json.get<std::string>();
        const std::string stem = detail::sanitize_label(run.label);

        std::ifstream rin(fs::path(dir) / ("returns_" + stem + ".csv"));
        if (!rin)
            throw std::runtime_error("read_report: missing returns file for " + run.label);
        std::string line;
        std::getline(rin, line);  // header
        std::vector<std::string> dates;
        std::vector<double> values;
        while (std::getline(rin, line)) {
            if (line.empty()) continue;
            const auto cells = covarcast::detail::split_csv_line(line);
            if (cells.size() != 2)
                throw std::runtime_error("read_report: ragged returns row for " + run.label);
            dates.push_back(cells[0]);
            values.push_back(covarcast::detail::parse_double(cells[1], "returns"));
        }
        run.daily_returns = Eigen::Map<const Eigen::VectorXd>(
            values.data(), static_cast<Eigen::Index>(values.size()));
        if (report.dates.empty()) report.dates = dates;

        std::ifstream win(fs::path(dir) / ("weights_" + stem + ".csv"));
        if (!win)
            throw std::runtime_error("read_report: missing weights file for " + run.label);
        std::getline(win, line);  // header
        std::vector<double> current;
        std::string current_date, current_label;
        auto flush = [&]() {
            if (current.empty()) return;
            PortfolioWeights w;
            w.weights = Eigen::Map<const Eigen::VectorXd>(
                current.data(), static_cast<Eigen::Index>(current.size()));
            w.as_of_date = current_date;
            w.label = current_label;
            run.weights.push_back(std::move(w));
            current.clear();
        };
        while (std::getline(win, line)) {
            if (line.empty()) continue;
            const auto cells = covarcast::detail::split_csv_line(line);
            if (cells.size() != 4)
                throw std::runtime_error("read_report: ragged weights row for " + run.label);
            if (cells[0] != current_date) {
                flush();
                current_date = cells[0];
            }
            current_label = cells[3];
            current.push_back(covarcast::detail::parse_double(cells[2], "weights"));
        }
        flush();

        run.metrics = compute_metrics(run.daily_returns);
        report.models.push_back(std::move(run));
    }
    return report;
}

}  // namespace covarcast
