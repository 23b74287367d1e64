// Backtest engine: metrics, rolling protocol, determinism, lookahead audit,
// report files, provenance digests.

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <covarcast/backtest.hpp>
#include <covarcast/csv.hpp>
#include <covarcast/rng.hpp>
#include <covarcast/sha1.hpp>
#include <covarcast/simulate.hpp>

using covarcast::BacktestConfig;
using covarcast::BacktestReport;
using covarcast::compute_metrics;
using covarcast::ModelVariant;
using covarcast::ReturnPanel;
using covarcast::Rng;
using covarcast::run_backtest;

namespace {

ReturnPanel simulated_panel(Eigen::Index n, Eigen::Index t_len, std::uint64_t seed) {
    covarcast::SimulationSpec spec;
    spec.garch.assign(std::size_t(n), {4e-6, 0.06, 0.90});
    spec.dcc_alpha = 0.04;
    spec.dcc_beta = 0.92;
    spec.rbar = covarcast::ar1_correlation_matrix(n, 0.4);
    spec.n_days = t_len;
    spec.seed = seed;
    return covarcast::simulate_dcc_garch(spec, false).panel;
}

ReturnPanel iid_panel(Eigen::Index n, Eigen::Index t_len, std::uint64_t seed,
                      double scale = 0.01) {
    Rng rng(seed);
    ReturnPanel panel;
    panel.returns.resize(t_len, n);
    for (Eigen::Index t = 0; t < t_len; ++t) {
        panel.dates.push_back("d" + std::to_string(300000 + t));
        for (Eigen::Index i = 0; i < n; ++i) panel.returns(t, i) = scale * rng.normal();
    }
    for (Eigen::Index i = 0; i < n; ++i)
        panel.assets.push_back("a" + std::to_string(i));
    return panel;
}

// Small full-roster configuration used by several cases; memoized because the
// run involves network training.
const BacktestConfig& mini_config() {
    static const BacktestConfig cfg = [] {
        BacktestConfig c;
        c.train_days = 100;
        c.month_len = 10;
        c.tau = 5;
        c.nn_refit_every = 2;
        c.dcc_refit_every = 1;
        c.variants = {ModelVariant{false, false}, ModelVariant{true, true}};
        c.lstm_width = 6;
        c.dense_widths = {5, 1};
        c.lstm_dropout = 0.1;
        c.dense_dropout = 0.1;
        c.training.epochs = 6;
        c.training.batch_size = 64;
        c.training.learning_rate = 2e-3;
        c.training.patience = 0;
        c.training.val_fraction = 0.1;
        c.rng_seed = 77;
        c.threads = 1;
        return c;
    }();
    return cfg;
}

const ReturnPanel& mini_panel() {
    static const ReturnPanel panel = simulated_panel(4, 160, 2024);
    return panel;
}

const BacktestReport& mini_report() {
    static const BacktestReport report = run_backtest(mini_panel(), mini_config());
    return report;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("sha1 known vectors and git blob framing", "[backtest]") {
    CHECK(covarcast::sha1_hex("") == "da39a3ee5e6b4b0d3255bfef95601890afd80709");
    CHECK(covarcast::sha1_hex("abc") == "a9993e364706816aba3e25717850c26c9cd0d89d");
    CHECK(covarcast::sha1_hex("The quick brown fox jumps over the lazy dog") ==
          "2fd4e1c67a2d28fced849ee1bb76e7391b93eb12");
    // Exactly what `git hash-object` prints for a file containing "hello\n".
    CHECK(covarcast::git_blob_sha1("hello\n") ==
          "ce013625030ba8dba906f756967f9e9ca394464a");
    // Multi-block input (> 64 bytes).
    CHECK(covarcast::sha1_hex(std::string(1000, 'a')) ==
          "291e9a6c66994949b57ba5e650361e98fc36b1ba");
}

TEST_CASE("performance metrics", "[backtest]") {
    SECTION("constant series: AV only, IR undefined") {
        const auto m = compute_metrics(Eigen::VectorXd::Constant(100, 0.01));
        CHECK(m.av == Catch::Approx(2.52).epsilon(1e-12));
        CHECK(m.sd == 0.0);
        CHECK_FALSE(m.ir_defined);
    }

    SECTION("alternating +r/-r: zero mean, zero IR") {
        Eigen::VectorXd r(50);
        for (Eigen::Index t = 0; t < 50; ++t) r(t) = (t % 2 == 0) ? 0.004 : -0.004;
        const auto m = compute_metrics(r);
        CHECK(m.av == 0.0);
        CHECK(m.ir_defined);
        CHECK(m.ir == 0.0);
        CHECK(m.sd > 0.0);
    }

    SECTION("iid normal sample lands near the annualized truth") {
        Rng rng(8);
        Eigen::VectorXd r(2772);
        for (Eigen::Index t = 0; t < r.size(); ++t) r(t) = 0.01 * rng.normal();
        const auto m = compute_metrics(r);
        CHECK(m.sd == Catch::Approx(std::sqrt(252.0) * 0.01).epsilon(0.05));
    }

    SECTION("divisor is T-1") {
        Eigen::VectorXd r(2);
        r << 0.0, 0.02;
        // mean 0.01, sum of squares 2e-4, divided by 1.
        const auto m = compute_metrics(r);
        CHECK(m.sd == Catch::Approx(std::sqrt(252.0) * std::sqrt(2e-4)).epsilon(1e-12));
    }

    SECTION("fewer than two returns is an error") {
        CHECK_THROWS_AS(compute_metrics(Eigen::VectorXd::Constant(1, 0.01)),
                        std::invalid_argument);
    }
}

TEST_CASE("returns CSV round trip", "[backtest]") {
    const ReturnPanel panel = iid_panel(3, 7, 42);
    const std::string text = covarcast::returns_csv_string(panel);
    std::istringstream in(text);
    const ReturnPanel back = covarcast::load_returns_csv(in, "mem");
    REQUIRE(back.assets == panel.assets);
    REQUIRE(back.dates == panel.dates);
    CHECK((back.returns - panel.returns).cwiseAbs().maxCoeff() == 0.0);

    std::istringstream bad("date,a\nx,notanumber\n");
    CHECK_THROWS_AS(covarcast::load_returns_csv(bad, "mem"), std::runtime_error);
}

TEST_CASE("boundary panel: exactly one rebalance month", "[backtest]") {
    BacktestConfig cfg;
    cfg.train_days = 60;
    cfg.month_len = 21;
    cfg.tau = 5;
    cfg.variants.clear();
    cfg.include_dcc = true;
    cfg.include_equal = true;
    const ReturnPanel panel = simulated_panel(3, 60 + 21, 7);

    const BacktestReport report = run_backtest(panel, cfg);
    REQUIRE(report.models.size() == 2);
    for (const auto& run : report.models) {
        CHECK(run.daily_returns.size() == 21);
        CHECK(run.weights.size() == 1);
    }
    CHECK(report.dates.size() == 21);
    CHECK(report.dates.front() == panel.dates[60]);

    SECTION("a panel one day shorter is rejected") {
        ReturnPanel shorter = panel;
        shorter.returns = panel.returns.topRows(80).eval();
        shorter.dates.resize(80);
        CHECK_THROWS_AS(run_backtest(shorter, cfg), std::invalid_argument);
    }
}

TEST_CASE("equal-weight benchmark holds exact 1/N every month", "[backtest]") {
    BacktestConfig cfg;
    cfg.train_days = 30;
    cfg.month_len = 7;
    cfg.tau = 5;
    cfg.include_dcc = false;  // equal-only roster: no fitting stages at all
    const ReturnPanel panel = iid_panel(4, 30 + 3 * 7, 9);

    const BacktestReport report = run_backtest(panel, cfg);
    REQUIRE(report.models.size() == 1);
    const auto& run = report.models[0];
    CHECK(run.label == "1/N");
    REQUIRE(run.weights.size() == 3);
    for (const auto& w : run.weights)
        for (Eigen::Index i = 0; i < 4; ++i) CHECK(w.weights(i) == 0.25);

    // Daily portfolio returns must equal the cross-sectional mean.
    for (Eigen::Index t = 0; t < run.daily_returns.size(); ++t)
        CHECK(run.daily_returns(t) ==
              Catch::Approx(panel.returns.row(30 + t).mean()).margin(1e-15));
}

TEST_CASE("paper-scale calendar arithmetic", "[backtest]") {
    BacktestConfig cfg;
    cfg.train_days = 1250;
    cfg.month_len = 21;
    cfg.include_dcc = false;  // keep the shape check cheap
    const ReturnPanel panel = iid_panel(2, 4022, 10);

    const BacktestReport report = run_backtest(panel, cfg);
    REQUIRE(report.models.size() == 1);
    CHECK(report.models[0].weights.size() == 132);
    CHECK(report.models[0].daily_returns.size() == 2772);
    CHECK(report.dates.size() == 2772);
}

TEST_CASE("full roster mini run: structure and weight consistency", "[backtest][slow]") {
    const BacktestReport& report = mini_report();
    const ReturnPanel& panel = mini_panel();
    const BacktestConfig& cfg = mini_config();

    REQUIRE(report.models.size() == 4);
    CHECK(report.models[0].label == "DCC");
    CHECK(report.models[1].label == "LSTM-DCC");
    CHECK(report.models[2].label == "G-LSTM-DCC-OH");
    CHECK(report.models[3].label == "1/N");

    const Eigen::Index months = (160 - 100) / 10;
    for (const auto& run : report.models) {
        REQUIRE(run.daily_returns.size() == 60);
        REQUIRE(run.weights.size() == std::size_t(months));
        for (const auto& w : run.weights) {
            CHECK(std::abs(w.weights.sum() - 1.0) <= 1e-10);
            CHECK(w.label == run.label);
        }
    }

    SECTION("every stored daily return recomputes from weights and raw returns") {
        for (const auto& run : report.models)
            for (Eigen::Index m = 0; m < months; ++m)
                for (Eigen::Index d = 0; d < cfg.month_len; ++d) {
                    const Eigen::Index t = cfg.train_days + m * cfg.month_len + d;
                    const double recomputed =
                        run.weights[std::size_t(m)].weights.dot(panel.returns.row(t));
                    REQUIRE(std::abs(run.daily_returns(m * cfg.month_len + d) -
                                     recomputed) <= 1e-12);
                }
    }

    SECTION("weights carry the month's first out-of-sample date") {
        for (const auto& run : report.models)
            for (Eigen::Index m = 0; m < months; ++m)
                CHECK(run.weights[std::size_t(m)].as_of_date ==
                      panel.dates[std::size_t(cfg.train_days + m * cfg.month_len)]);
    }

    SECTION("metrics recompute bit-exactly from the stored series") {
        for (const auto& run : report.models) {
            const auto again = compute_metrics(run.daily_returns);
            CHECK(again.av == run.metrics.av);
            CHECK(again.sd == run.metrics.sd);
            CHECK(again.ir == run.metrics.ir);
        }
    }
}

TEST_CASE("determinism: identical config and seed give identical report files",
          "[backtest][slow]") {
    const BacktestReport again = run_backtest(mini_panel(), mini_config());
    const BacktestReport& base = mini_report();

    namespace fs = std::filesystem;
    const fs::path dir_a = fs::temp_directory_path() / "covarcast_bt_a";
    const fs::path dir_b = fs::temp_directory_path() / "covarcast_bt_b";
    covarcast::write_report(base, dir_a.string());
    covarcast::write_report(again, dir_b.string());

    for (const auto& entry : fs::directory_iterator(dir_a)) {
        const auto name = entry.path().filename();
        INFO("file " << name);
        CHECK(slurp(entry.path()) == slurp(dir_b / name));
    }
}

TEST_CASE("roster order does not change per-model results", "[backtest][slow]") {
    BacktestConfig reordered = mini_config();
    std::swap(reordered.variants[0], reordered.variants[1]);
    const BacktestReport swapped = run_backtest(mini_panel(), reordered);

    std::map<std::string, const covarcast::ModelRun*> by_label;
    for (const auto& run : swapped.models) by_label[run.label] = &run;

    for (const auto& run : mini_report().models) {
        REQUIRE(by_label.count(run.label) == 1);
        const auto& other = *by_label[run.label];
        CHECK((other.daily_returns - run.daily_returns).cwiseAbs().maxCoeff() == 0.0);
        for (std::size_t m = 0; m < run.weights.size(); ++m)
            CHECK((other.weights[m].weights - run.weights[m].weights)
                      .cwiseAbs()
                      .maxCoeff() == 0.0);
    }
}

TEST_CASE("no lookahead: truncating the future leaves early months unchanged",
          "[backtest][slow]") {
    const BacktestConfig& cfg = mini_config();
    const ReturnPanel& panel = mini_panel();

    // Keep only the first two out-of-sample months' worth of data.
    const Eigen::Index keep = cfg.train_days + 2 * cfg.month_len;
    ReturnPanel truncated = panel;
    truncated.returns = panel.returns.topRows(keep).eval();
    truncated.dates.assign(panel.dates.begin(), panel.dates.begin() + keep);

    const BacktestReport early = run_backtest(truncated, cfg);
    const BacktestReport& full = mini_report();
    REQUIRE(early.models.size() == full.models.size());
    for (std::size_t k = 0; k < full.models.size(); ++k) {
        const auto& e = early.models[k];
        const auto& f = full.models[k];
        REQUIRE(e.label == f.label);
        REQUIRE(e.weights.size() == 2);
        for (std::size_t m = 0; m < 2; ++m) {
            INFO("model " << f.label << " month " << m);
            CHECK((e.weights[m].weights - f.weights[m].weights).cwiseAbs().maxCoeff() ==
                  0.0);
        }
        CHECK((e.daily_returns - f.daily_returns.head(2 * cfg.month_len))
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }
}

TEST_CASE("long-only configuration produces nonnegative weights", "[backtest]") {
    BacktestConfig cfg;
    cfg.train_days = 80;
    cfg.month_len = 10;
    cfg.tau = 5;
    cfg.allow_short = false;
    cfg.variants.clear();  // DCC + 1/N roster keeps this quick
    const ReturnPanel panel = simulated_panel(5, 110, 31);

    const BacktestReport report = run_backtest(panel, cfg);
    for (const auto& run : report.models)
        for (const auto& w : run.weights) CHECK(w.weights.minCoeff() >= -1e-12);
}

TEST_CASE("module failures carry month and model context", "[backtest]") {
    BacktestConfig cfg;
    cfg.train_days = 60;
    cfg.month_len = 10;
    cfg.tau = 5;
    // 40 assets against a 60-day window: the shrinkage stage must refuse.
    const ReturnPanel panel = simulated_panel(40, 80, 13);
    CHECK_THROWS_WITH(run_backtest(panel, cfg),
                      Catch::Matchers::ContainsSubstring("month 0"));
}

TEST_CASE("config validation and serialization", "[backtest]") {
    BacktestConfig cfg;

    SECTION("invalid settings are rejected") {
        BacktestConfig bad = cfg;
        bad.train_days = bad.tau;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

        bad = cfg;
        bad.month_len = 0;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

        bad = cfg;
        bad.nn_refit_every = 0;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

        bad = cfg;
        bad.include_dcc = false;
        bad.include_equal = false;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    }

    SECTION("JSON round trip preserves the digest") {
        cfg.variants = {ModelVariant{true, false}, ModelVariant{true, true}};
        cfg.train_days = 500;
        cfg.rng_seed = 12345;
        cfg.training.epochs = 17;
        const auto doc = covarcast::backtest_config_to_json(cfg);
        const BacktestConfig back = covarcast::backtest_config_from_json(
            nlohmann::json::parse(doc.dump()));
        CHECK(covarcast::backtest_config_digest(back) ==
              covarcast::backtest_config_digest(cfg));

        BacktestConfig tweaked = cfg;
        tweaked.rng_seed = 54321;
        CHECK(covarcast::backtest_config_digest(tweaked) !=
              covarcast::backtest_config_digest(cfg));

        CHECK_THROWS_AS(
            covarcast::backtest_config_from_json(nlohmann::json{{"format", "x"}}),
            std::runtime_error);
    }
}

TEST_CASE("metrics CSV row formatting matches the published convention",
          "[backtest]") {
    covarcast::PerformanceMetrics m;
    m.sd = 0.1374;
    m.av = 0.0813;
    m.ir = 0.48;
    m.ir_defined = true;
    CHECK(covarcast::detail::metrics_csv_row("DCC", m) == "DCC,13.74,8.13,0.48");

    m.sd = 0.1916;
    CHECK(covarcast::detail::metrics_csv_row("1/N", m) == "1/N,19.16,8.13,0.48");

    covarcast::PerformanceMetrics flat;
    flat.av = 2.52;
    flat.sd = 0.0;
    CHECK(covarcast::detail::metrics_csv_row("x", flat) == "x,0.00,252.00,NA");
}

TEST_CASE("report write / read round trip", "[backtest][slow]") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "covarcast_bt_rt";
    const BacktestReport& base = mini_report();
    covarcast::write_report(base, dir.string());

    const BacktestReport back = covarcast::read_report(dir.string());
    CHECK(back.config_digest == base.config_digest);
    CHECK(back.data_digest == base.data_digest);
    CHECK(back.rng_seed == base.rng_seed);
    CHECK(back.train_days == base.train_days);
    CHECK(back.month_len == base.month_len);
    CHECK(back.assets == base.assets);
    CHECK(back.dates == base.dates);

    REQUIRE(back.models.size() == base.models.size());
    for (std::size_t k = 0; k < base.models.size(); ++k) {
        const auto& a = base.models[k];
        const auto& b = back.models[k];
        CHECK(b.label == a.label);
        CHECK((b.daily_returns - a.daily_returns).cwiseAbs().maxCoeff() == 0.0);
        CHECK(b.metrics.av == a.metrics.av);
        CHECK(b.metrics.sd == a.metrics.sd);
        REQUIRE(b.weights.size() == a.weights.size());
        for (std::size_t m = 0; m < a.weights.size(); ++m) {
            CHECK(b.weights[m].as_of_date == a.weights[m].as_of_date);
            CHECK(b.weights[m].label == a.weights[m].label);
            CHECK((b.weights[m].weights - a.weights[m].weights).cwiseAbs().maxCoeff() ==
                  0.0);
        }
    }

    SECTION("expected files exist") {
        CHECK(fs::exists(dir / "metrics.csv"));
        CHECK(fs::exists(dir / "provenance.json"));
        CHECK(fs::exists(dir / "cumulative.csv"));
        CHECK(fs::exists(dir / "returns_1-N.csv"));  // sanitized label
        CHECK(fs::exists(dir / "weights_G-LSTM-DCC-OH.csv"));
    }

    SECTION("metrics CSV has one row per model") {
        std::ifstream in(dir / "metrics.csv");
        std::string line;
        std::getline(in, line);
        CHECK(line == "model,SD,AV,IR");
        std::size_t rows = 0;
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        CHECK(rows == base.models.size());
    }

    SECTION("missing directory fails loudly") {
        CHECK_THROWS_AS(covarcast::read_report((dir / "nope").string()),
                        std::runtime_error);
    }
}
