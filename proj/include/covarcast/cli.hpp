#pragma once
// Command-line front end: simulate | fit-garch | fit-dcc | train | backtest |
// report.  Exit codes: 0 success, 1 usage error, 2 runtime error.  Every run
// echoes its resolved configuration to standard output before doing work.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "covarcast/backtest.hpp"
#include "covarcast/csv.hpp"
#include "covarcast/dcc.hpp"
#include "covarcast/garch.hpp"
#include "covarcast/hybrid.hpp"
#include "covarcast/neural.hpp"
#include "covarcast/panel.hpp"
#include "covarcast/portfolio.hpp"
#include "covarcast/shrinkage.hpp"
#include "covarcast/simulate.hpp"

namespace covarcast {
namespace cli {

struct Options {
    // simulate
    long long sim_assets = 5;
    long long sim_days = 500;
    std::uint64_t sim_seed = 1;
    double sim_omega = 4e-6, sim_alpha = 0.06, sim_beta = 0.90;
    double sim_dcc_alpha = 0.04, sim_dcc_beta = 0.92, sim_rho = 0.4;
    std::string sim_out = ".";

    // fit-garch
    std::string fg_input;
    std::string fg_out = "garch_fits.json";
    int fg_threads = 1;

    // fit-dcc
    std::string fd_input;
    std::string fd_out = "dcc_fit.json";
    int fd_threads = 1;

    // train
    std::string tr_input;
    std::string tr_out = ".";
    std::string tr_variant = "G-LSTM-DCC";
    long long tr_tau = 21;
    long long tr_lstm = 100;
    std::vector<long long> tr_dense = {350, 300, 250, 200, 1};
    double tr_lstm_drop = 0.4, tr_dense_drop = 0.5;
    int tr_epochs = 100, tr_batch = 256, tr_patience = 10, tr_threads = 1;
    double tr_lr = 1e-3, tr_val = 0.1;
    std::uint64_t tr_seed = 0;

    // backtest
    std::string bt_input;
    std::string bt_config;
    std::string bt_out = "runs";
    std::vector<std::string> bt_variants;
    long long bt_tau = 21;
    long long bt_train_days = 1250;
    std::uint64_t bt_seed = 0;
    int bt_threads = 1;
    bool bt_no_short = false;

    // report
    std::string rp_input;
};

struct AppBundle {
    CLI::App app{"covariance forecasting toolkit: GARCH, DCC, shrinkage, "
                 "hybrid neural volatility, minimum-variance backtests",
                 "covarcast"};
    Options opts;
    CLI::App* simulate = nullptr;
    CLI::App* fit_garch = nullptr;
    CLI::App* fit_dcc = nullptr;
    CLI::App* train = nullptr;
    CLI::App* backtest = nullptr;
    CLI::App* report = nullptr;
};

inline void configure(AppBundle& b) {
    Options& o = b.opts;
    b.app.require_subcommand(1);

    b.simulate = b.app.add_subcommand(
        "simulate", "Generate a synthetic return panel with known dynamics");
    b.simulate->add_option("--assets", o.sim_assets, "Number of assets")
        ->capture_default_str();
    b.simulate->add_option("--days", o.sim_days, "Number of trading days")
        ->capture_default_str();
    b.simulate->add_option("--seed", o.sim_seed, "RNG seed")->capture_default_str();
    b.simulate->add_option("--omega", o.sim_omega, "GARCH omega")
        ->capture_default_str();
    b.simulate->add_option("--alpha", o.sim_alpha, "GARCH alpha")
        ->capture_default_str();
    b.simulate->add_option("--beta", o.sim_beta, "GARCH beta")->capture_default_str();
    b.simulate->add_option("--dcc-alpha", o.sim_dcc_alpha, "DCC alpha")
        ->capture_default_str();
    b.simulate->add_option("--dcc-beta", o.sim_dcc_beta, "DCC beta")
        ->capture_default_str();
    b.simulate->add_option("--rho", o.sim_rho, "AR(1) base correlation")
        ->capture_default_str();
    b.simulate->add_option("--out", o.sim_out, "Output directory")
        ->capture_default_str();

    b.fit_garch = b.app.add_subcommand(
        "fit-garch", "Fit univariate GARCH(1,1) models to a returns CSV");
    b.fit_garch->add_option("--input", o.fg_input, "Returns CSV path")->required();
    b.fit_garch->add_option("--out", o.fg_out, "Output JSON path")
        ->capture_default_str();
    b.fit_garch->add_option("--threads", o.fg_threads, "Worker threads")
        ->capture_default_str();

    b.fit_dcc = b.app.add_subcommand(
        "fit-dcc", "De-garch a returns CSV and fit the scalar DCC model");
    b.fit_dcc->add_option("--input", o.fd_input, "Returns CSV path")->required();
    b.fit_dcc->add_option("--out", o.fd_out, "Output JSON path")
        ->capture_default_str();
    b.fit_dcc->add_option("--threads", o.fd_threads, "Worker threads")
        ->capture_default_str();

    b.train = b.app.add_subcommand(
        "train", "Train a hybrid volatility network on a returns CSV");
    b.train->add_option("--input", o.tr_input, "Returns CSV path")->required();
    b.train->add_option("--variant", o.tr_variant,
                        "Model variant label (LSTM-DCC, G-LSTM-DCC, "
                        "LSTM-DCC-OH, G-LSTM-DCC-OH)")
        ->capture_default_str();
    b.train->add_option("--tau", o.tr_tau, "Input window length (days)")
        ->capture_default_str();
    b.train->add_option("--lstm-width", o.tr_lstm, "LSTM hidden width")
        ->capture_default_str();
    b.train
        ->add_option("--dense-widths", o.tr_dense,
                     "Dense widths, comma separated, ending in 1")
        ->delimiter(',')
        ->capture_default_str();
    b.train->add_option("--lstm-dropout", o.tr_lstm_drop, "LSTM output dropout")
        ->capture_default_str();
    b.train->add_option("--dense-dropout", o.tr_dense_drop, "Hidden dense dropout")
        ->capture_default_str();
    b.train->add_option("--epochs", o.tr_epochs, "Training epochs")
        ->capture_default_str();
    b.train->add_option("--batch-size", o.tr_batch, "Mini-batch size")
        ->capture_default_str();
    b.train->add_option("--learning-rate", o.tr_lr, "Adam learning rate")
        ->capture_default_str();
    b.train->add_option("--patience", o.tr_patience, "Early-stop patience (0 = off)")
        ->capture_default_str();
    b.train->add_option("--val-fraction", o.tr_val, "Tail validation fraction")
        ->capture_default_str();
    b.train->add_option("--seed", o.tr_seed, "RNG seed")->capture_default_str();
    b.train->add_option("--threads", o.tr_threads, "Worker threads")
        ->capture_default_str();
    b.train->add_option("--out", o.tr_out, "Output directory")->capture_default_str();

    b.backtest = b.app.add_subcommand(
        "backtest", "Run the rolling out-of-sample protocol over the model roster");
    b.backtest->add_option("--input", o.bt_input, "Returns CSV path")->required();
    b.backtest->add_option("--config", o.bt_config,
                           "Config file (JSON or key = value lines)");
    b.backtest->add_option("--out", o.bt_out, "Run directory root")
        ->capture_default_str();
    b.backtest->add_option("--variant", o.bt_variants,
                           "Variant label; repeat for several (overrides config)");
    b.backtest->add_option("--tau", o.bt_tau, "Input window length (days)")
        ->capture_default_str();
    b.backtest->add_option("--train-days", o.bt_train_days, "Initial training window")
        ->capture_default_str();
    b.backtest->add_option("--seed", o.bt_seed, "RNG seed")->capture_default_str();
    b.backtest->add_option("--threads", o.bt_threads, "Worker threads")
        ->capture_default_str();
    b.backtest->add_flag("--no-short", o.bt_no_short,
                         "Long-only minimum-variance weights");

    b.report = b.app.add_subcommand(
        "report", "Print the metric table of a stored backtest report");
    b.report->add_option("--input", o.rp_input, "Report directory")->required();
}

// ---- config file ---------------------------------------------------------------

namespace detail {

inline bool parse_bool(const std::string& value, const std::string& key) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw std::runtime_error("config: boolean expected for '" + key + "', got '" +
                             value + "'");
}

inline std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(value);
    while (std::getline(ss, item, ',')) {
        const std::string t = covarcast::detail::trim(item);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

inline void apply_config_line(BacktestConfig& cfg, const std::string& key,
                              const std::string& value) {
    try {
        if (key == "train_days")
            cfg.train_days = std::stoll(value);
        else if (key == "month_len")
            cfg.month_len = std::stoll(value);
        else if (key == "nn_refit_every")
            cfg.nn_refit_every = std::stoi(value);
        else if (key == "dcc_refit_every")
            cfg.dcc_refit_every = std::stoi(value);
        else if (key == "variants") {
            cfg.variants.clear();
            for (const auto& label : split_list(value))
                cfg.variants.push_back(variant_from_label(label));
        } else if (key == "include_dcc")
            cfg.include_dcc = parse_bool(value, key);
        else if (key == "include_equal")
            cfg.include_equal = parse_bool(value, key);
        else if (key == "allow_short")
            cfg.allow_short = parse_bool(value, key);
        else if (key == "rng_seed")
            cfg.rng_seed = std::stoull(value);
        else if (key == "tau")
            cfg.tau = std::stoll(value);
        else if (key == "lstm_width")
            cfg.lstm_width = std::stoll(value);
        else if (key == "dense_widths") {
            cfg.dense_widths.clear();
            for (const auto& w : split_list(value))
                cfg.dense_widths.push_back(std::stoll(w));
        } else if (key == "lstm_dropout")
            cfg.lstm_dropout = std::stod(value);
        else if (key == "dense_dropout")
            cfg.dense_dropout = std::stod(value);
        else if (key == "epochs")
            cfg.training.epochs = std::stoi(value);
        else if (key == "batch_size")
            cfg.training.batch_size = std::stoi(value);
        else if (key == "learning_rate")
            cfg.training.learning_rate = std::stod(value);
        else if (key == "dropout_enabled")
            cfg.training.dropout_enabled = parse_bool(value, key);
        else if (key == "patience")
            cfg.training.patience = std::stoi(value);
        else if (key == "val_fraction")
            cfg.training.val_fraction = std::stod(value);
        else if (key == "threads")
            cfg.threads = std::stoi(value);
        else
            throw std::runtime_error("config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
        throw std::runtime_error("config: cannot parse value '" + value + "' for '" +
                                 key + "'");
    }
}

}  // namespace detail

// JSON (leading '{') or 'key = value' lines with '#' comments.
inline BacktestConfig load_backtest_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    const std::string text = buffer.str();

    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{')
        return backtest_config_from_json(nlohmann::json::parse(text));

    BacktestConfig cfg;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = covarcast::detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: expected 'key = value', got '" + line +
                                     "'");
        detail::apply_config_line(cfg, covarcast::detail::trim(line.substr(0, eq)),
                                  covarcast::detail::trim(line.substr(eq + 1)));
    }
    return cfg;
}

// ---- subcommands ----------------------------------------------------------------

namespace detail {

inline void echo_config(const nlohmann::json& doc) {
    std::cout << "config: " << doc.dump() << "\n";
}

inline void wrote(const std::filesystem::path& path) {
    std::cout << "wrote " << path.string() << "\n";
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    return out;
}

inline void print_metrics_table(const BacktestReport& report) {
    std::printf("%-16s %10s %10s %10s\n", "model", "SD", "AV", "IR");
    for (const auto& run : report.models) {
        char ir[32];
        if (run.metrics.ir_defined)
            std::snprintf(ir, sizeof ir, "%.2f", run.metrics.ir);
        else
            std::snprintf(ir, sizeof ir, "NA");
        std::printf("%-16s %10.2f %10.2f %10s\n", run.label.c_str(),
                    100.0 * run.metrics.sd, 100.0 * run.metrics.av, ir);
    }
}

}  // namespace detail

inline int run_simulate(const Options& o) {
    SimulationSpec spec;
    spec.garch.assign(std::size_t(o.sim_assets),
                      GarchParams{o.sim_omega, o.sim_alpha, o.sim_beta});
    spec.dcc_alpha = o.sim_dcc_alpha;
    spec.dcc_beta = o.sim_dcc_beta;
    spec.rbar = ar1_correlation_matrix(o.sim_assets, o.sim_rho);
    spec.n_days = o.sim_days;
    spec.seed = o.sim_seed;

    detail::echo_config(nlohmann::json{{"subcommand", "simulate"},
                                       {"assets", o.sim_assets},
                                       {"days", o.sim_days},
                                       {"seed", o.sim_seed},
                                       {"omega", o.sim_omega},
                                       {"alpha", o.sim_alpha},
                                       {"beta", o.sim_beta},
                                       {"dcc_alpha", o.sim_dcc_alpha},
                                       {"dcc_beta", o.sim_dcc_beta},
                                       {"rho", o.sim_rho},
                                       {"out", o.sim_out}});

    const SimulationResult sim = simulate_dcc_garch(spec, false);

    namespace fs = std::filesystem;
    fs::create_directories(o.sim_out);
    const fs::path returns_path = fs::path(o.sim_out) / "returns.csv";
    save_returns_csv(returns_path.string(), sim.panel);
    detail::wrote(returns_path);

    nlohmann::json garch = nlohmann::json::array();
    for (const auto& p : spec.garch)
        garch.push_back({{"omega", p.omega}, {"alpha", p.alpha}, {"beta", p.beta}});
    const nlohmann::json truth{{"format", "covarcast-simulation-truth"},
                               {"version", 1},
                               {"garch", garch},
                               {"dcc_alpha", spec.dcc_alpha},
                               {"dcc_beta", spec.dcc_beta},
                               {"rbar", {{"structure", "ar1"}, {"rho", o.sim_rho}}},
                               {"seed", spec.seed},
                               {"assets", sim.panel.assets}};
    const fs::path truth_path = fs::path(o.sim_out) / "truth.json";
    auto out = detail::open_out(truth_path);
    out << truth.dump(2) << '\n';
    out.close();
    detail::wrote(truth_path);
    return 0;
}

inline int run_fit_garch(const Options& o) {
    detail::echo_config(nlohmann::json{{"subcommand", "fit-garch"},
                                       {"input", o.fg_input},
                                       {"out", o.fg_out},
                                       {"threads", o.fg_threads}});
    const ReturnPanel panel = load_returns_csv(o.fg_input);
    const DegarchResult dg = degarch(panel, {}, o.fg_threads);

    auto out = detail::open_out(o.fg_out);
    out << garch_fits_to_json(dg.fits, panel.assets).dump(2) << '\n';
    out.close();
    detail::wrote(o.fg_out);

    int converged = 0;
    for (const auto& f : dg.fits) converged += f.converged ? 1 : 0;
    std::cout << "fitted " << dg.fits.size() << " assets (" << converged
              << " converged)\n";
    return 0;
}

inline int run_fit_dcc(const Options& o) {
    detail::echo_config(nlohmann::json{{"subcommand", "fit-dcc"},
                                       {"input", o.fd_input},
                                       {"out", o.fd_out},
                                       {"threads", o.fd_threads}});
    const ReturnPanel panel = load_returns_csv(o.fd_input);
    const DegarchResult dg = degarch(panel, {}, o.fd_threads);
    const ShrinkageResult shrunk = nonlinear_shrink(dg.std_residuals);
    DccFitOptions opts;
    opts.threads = o.fd_threads;
    const DccFit fit = fit_dcc(dg.std_residuals, shrunk.matrix, opts);

    auto out = detail::open_out(o.fd_out);
    out << dcc_fit_to_json(fit).dump(2) << '\n';
    out.close();
    detail::wrote(o.fd_out);

    // The matrices travel beside the JSON scalars.
    namespace fs = std::filesystem;
    const fs::path json_path(o.fd_out);
    const fs::path rbar_path =
        json_path.parent_path() / (json_path.stem().string() + "_rbar.csv");
    const fs::path q_path =
        json_path.parent_path() / (json_path.stem().string() + "_q_last.csv");
    save_matrix_csv(rbar_path.string(), fit.rbar);
    detail::wrote(rbar_path);
    save_matrix_csv(q_path.string(), fit.q_last);
    detail::wrote(q_path);

    std::cout << "dcc alpha " << fit.params.alpha << ", beta " << fit.params.beta
              << (fit.converged ? "" : " (did not converge)") << "\n";
    if (!fit.converged) log_warn("fit-dcc: optimizer did not converge");
    return 0;
}

inline int run_train(const Options& o) {
    const ModelVariant variant = variant_from_label(o.tr_variant);
    detail::echo_config(nlohmann::json{{"subcommand", "train"},
                                       {"input", o.tr_input},
                                       {"variant", variant.label()},
                                       {"tau", o.tr_tau},
                                       {"lstm_width", o.tr_lstm},
                                       {"dense_widths", o.tr_dense},
                                       {"lstm_dropout", o.tr_lstm_drop},
                                       {"dense_dropout", o.tr_dense_drop},
                                       {"epochs", o.tr_epochs},
                                       {"batch_size", o.tr_batch},
                                       {"learning_rate", o.tr_lr},
                                       {"patience", o.tr_patience},
                                       {"val_fraction", o.tr_val},
                                       {"seed", o.tr_seed},
                                       {"threads", o.tr_threads},
                                       {"out", o.tr_out}});

    const ReturnPanel panel = load_returns_csv(o.tr_input);
    const ProxyPanel proxies = volatility_proxy(panel);
    const DegarchResult dg = degarch(panel, {}, o.tr_threads);
    const auto features =
        build_hybrid_features(proxies, dg.fits, variant, o.tr_threads);
    const HybridTrainingSet set =
        build_training_set(features, proxies, o.tr_tau, variant);

    NetworkArch arch;
    arch.input_width = variant.feature_width();
    arch.lstm_width = o.tr_lstm;
    arch.dense_widths.assign(o.tr_dense.begin(), o.tr_dense.end());
    arch.concat_one_hot = variant.use_one_hot;
    arch.one_hot_width = variant.use_one_hot ? panel.n_assets() : 0;
    arch.lstm_dropout = o.tr_lstm_drop;
    arch.dense_dropout = o.tr_dense_drop;
    arch.seed = o.tr_seed;
    Network net = make_network(arch);

    TrainingConfig cfg;
    cfg.epochs = o.tr_epochs;
    cfg.batch_size = o.tr_batch;
    cfg.learning_rate = o.tr_lr;
    cfg.rng_seed = o.tr_seed;
    cfg.patience = o.tr_patience;
    cfg.val_fraction = o.tr_val;
    cfg.threads = o.tr_threads;
    const TrainResult result = train(net, set.data, cfg);

    namespace fs = std::filesystem;
    fs::create_directories(o.tr_out);
    const fs::path net_path = fs::path(o.tr_out) / "network.json";
    const fs::path scaler_path = fs::path(o.tr_out) / "scaler.json";
    const fs::path meta_path = fs::path(o.tr_out) / "train_meta.json";
    {
        auto out = detail::open_out(net_path);
        out << network_to_json(net).dump() << '\n';
    }
    detail::wrote(net_path);
    {
        auto out = detail::open_out(scaler_path);
        out << scaler_to_json(set.scaler).dump(2) << '\n';
    }
    detail::wrote(scaler_path);
    {
        const nlohmann::json meta{
            {"format", "covarcast-train-meta"},
            {"version", 1},
            {"variant", variant.label()},
            {"tau", o.tr_tau},
            {"examples", set.data.size()},
            {"final_train_mse", result.train_mse.back()},
            {"final_val_mse", result.val_mse.empty() ? -1.0 : result.val_mse.back()},
            {"best_epoch", result.best_epoch},
            {"stopped_early", result.stopped_early}};
        auto out = detail::open_out(meta_path);
        out << meta.dump(2) << '\n';
    }
    detail::wrote(meta_path);

    std::cout << "train mse " << result.train_mse.back();
    if (!result.val_mse.empty()) std::cout << ", val mse " << result.val_mse.back();
    std::cout << ", best epoch " << result.best_epoch << "\n";
    return 0;
}

inline int run_backtest_cmd(const AppBundle& b) {
    const Options& o = b.opts;
    BacktestConfig cfg;
    if (!o.bt_config.empty()) cfg = load_backtest_config(o.bt_config);

    // Flags override the config file.
    if (b.backtest->count("--variant")) {
        cfg.variants.clear();
        for (const auto& label : o.bt_variants)
            cfg.variants.push_back(variant_from_label(label));
    }
    if (b.backtest->count("--tau")) cfg.tau = o.bt_tau;
    if (b.backtest->count("--train-days")) cfg.train_days = o.bt_train_days;
    if (b.backtest->count("--seed")) cfg.rng_seed = o.bt_seed;
    if (b.backtest->count("--threads")) cfg.threads = o.bt_threads;
    if (o.bt_no_short) cfg.allow_short = false;

    detail::echo_config(backtest_config_to_json(cfg));

    const ReturnPanel panel = load_returns_csv(o.bt_input);
    const BacktestReport report = run_backtest(panel, cfg);

    namespace fs = std::filesystem;
    const fs::path run_dir =
        fs::path(o.bt_out) / report.config_digest.substr(0, 12);
    write_report(report, run_dir.string());
    std::cout << "report: " << run_dir.string() << "\n";
    detail::print_metrics_table(report);
    return 0;
}

inline int run_report(const Options& o) {
    const BacktestReport report = read_report(o.rp_input);
    detail::print_metrics_table(report);
    std::cout << "cumulative returns: "
              << (std::filesystem::path(o.rp_input) / "cumulative.csv").string()
              << "\n";
    return 0;
}

// ---- entry point ------------------------------------------------------------------

inline int cli_main(int argc, const char* const* argv) {
    AppBundle b;
    configure(b);
    try {
        b.app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = b.app.exit(e);
        return code == 0 ? 0 : 1;
    }
    try {
        if (b.simulate->parsed()) return run_simulate(b.opts);
        if (b.fit_garch->parsed()) return run_fit_garch(b.opts);
        if (b.fit_dcc->parsed()) return run_fit_dcc(b.opts);
        if (b.train->parsed()) return run_train(b.opts);
        if (b.backtest->parsed()) return run_backtest_cmd(b);
        if (b.report->parsed()) return run_report(b.opts);
        std::cerr << b.app.help();
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "covarcast: " << e.what() << "\n";
        return 2;
    }
}

inline std::string help_text(const std::string& subcommand = "") {
    AppBundle b;
    configure(b);
    if (subcommand.empty()) return b.app.help();
    return b.app.get_subcommand(subcommand)->help(b.app.get_name());
}

}  // namespace cli
}  // namespace covarcast
