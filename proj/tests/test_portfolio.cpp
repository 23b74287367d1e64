// Portfolio weights: closed-form minimum variance, long-only elimination with
// KKT certification, equal weights, returns, CSV export.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include <covarcast/portfolio.hpp>
#include <covarcast/rng.hpp>

using covarcast::equal_weights;
using covarcast::min_variance_weights;
using covarcast::min_variance_weights_long_only;
using covarcast::PortfolioWeights;
using covarcast::Rng;

namespace {

Eigen::MatrixXd random_pd(Eigen::Index n, std::uint64_t seed, double ridge = 0.1) {
    Rng rng(seed);
    Eigen::MatrixXd a(2 * n, n);
    for (Eigen::Index r = 0; r < a.rows(); ++r)
        for (Eigen::Index c = 0; c < n; ++c) a(r, c) = rng.normal();
    Eigen::MatrixXd h = a.transpose() * a / double(2 * n);
    h += ridge * Eigen::MatrixXd::Identity(n, n);
    return 0.5 * (h + h.transpose());
}

Eigen::VectorXd random_simplex(Eigen::Index n, Rng& rng) {
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) w(i) = -std::log(rng.uniform());
    return w / w.sum();
}

double objective(const Eigen::MatrixXd& h, const Eigen::VectorXd& w) {
    return w.dot(h * w);
}

}  // namespace

TEST_CASE("minimum variance closed-form examples", "[portfolio]") {
    SECTION("identity covariance gives equal weights") {
        const auto w = min_variance_weights(Eigen::MatrixXd::Identity(4, 4));
        for (Eigen::Index i = 0; i < 4; ++i) CHECK(w.weights(i) == 0.25);
    }

    SECTION("diag(1,4) gives (0.8, 0.2)") {
        Eigen::MatrixXd h = Eigen::Vector2d(1.0, 4.0).asDiagonal();
        const auto w = min_variance_weights(h);
        CHECK(w.weights(0) == Catch::Approx(0.8).margin(1e-15));
        CHECK(w.weights(1) == Catch::Approx(0.2).margin(1e-15));
    }

    SECTION("forecast wrapper forwards the date") {
        covarcast::CovarianceForecast fc;
        fc.matrix = Eigen::MatrixXd::Identity(2, 2);
        fc.as_of_date = "d000300";
        const auto w = min_variance_weights(fc, "mine");
        CHECK(w.as_of_date == "d000300");
        CHECK(w.label == "mine");
    }
}

TEST_CASE("minimum variance beats a thousand random simplex vectors", "[portfolio]") {
    const Eigen::MatrixXd h = random_pd(6, 808);
    const auto opt = min_variance_weights(h);
    const double f_opt = objective(h, opt.weights);

    Rng rng(809);
    for (int k = 0; k < 1000; ++k) {
        const Eigen::VectorXd w = random_simplex(6, rng);
        REQUIRE(objective(h, w) >= f_opt - 1e-12);
    }
}

TEST_CASE("minimum variance invariants", "[portfolio]") {
    const Eigen::MatrixXd h = random_pd(8, 500);
    const auto w = min_variance_weights(h);

    SECTION("weights sum to one") {
        CHECK(std::abs(w.weights.sum() - 1.0) <= 1e-10);
    }

    SECTION("gradient condition: H w* is a constant vector") {
        const Eigen::VectorXd g = h * w.weights;
        const double spread = (g.array() - g(0)).abs().maxCoeff();
        CHECK(spread <= 1e-8 * g.cwiseAbs().maxCoeff());
    }

    SECTION("scaling the covariance does not move the weights") {
        for (const double c : {3.0, 1e-4, 1e6}) {
            const auto ws = min_variance_weights((c * h).eval());
            CHECK((ws.weights - w.weights).cwiseAbs().maxCoeff() <= 1e-12);
        }
    }
}

TEST_CASE("minimum variance rejects broken covariances", "[portfolio]") {
    SECTION("not positive definite") {
        Eigen::MatrixXd h(2, 2);
        h << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
        CHECK_THROWS_AS(min_variance_weights(h), std::runtime_error);
    }

    SECTION("ill-conditioned triggers the repair prompt") {
        Eigen::MatrixXd h = Eigen::Vector2d(1.0, 1e-13).asDiagonal();
        CHECK_THROWS_WITH(min_variance_weights(h),
                          Catch::Matchers::ContainsSubstring("condition estimate"));
    }

    SECTION("asymmetric input is rejected") {
        Eigen::MatrixXd h(2, 2);
        h << 1.0, 0.2, 0.3, 1.0;
        CHECK_THROWS_AS(min_variance_weights(h), std::invalid_argument);
    }
}

TEST_CASE("long-only: feasible unconstrained solutions pass through", "[portfolio]") {
    SECTION("identity gives equal weights") {
        const auto w = min_variance_weights_long_only(Eigen::MatrixXd::Identity(3, 3));
        for (Eigen::Index i = 0; i < 3; ++i)
            CHECK(w.weights(i) == Catch::Approx(1.0 / 3.0).margin(1e-15));
    }

    SECTION("bitwise identical to unconstrained when no shorts appear") {
        Eigen::MatrixXd h = Eigen::Vector3d(1.0, 2.0, 4.0).asDiagonal();
        const auto lo = min_variance_weights_long_only(h);
        const auto un = min_variance_weights(h);
        CHECK((lo.weights - un.weights).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("long-only elimination matches a brute-force grid", "[portfolio]") {
    // The unconstrained solution shorts the first asset hard; long-only must
    // concentrate in the lower-variance second asset.
    Eigen::MatrixXd h(2, 2);
    h << 1.0, 0.9,
         0.9, 0.811;

    const auto un = min_variance_weights(h);
    REQUIRE(un.weights(0) < -1.0);  // construction check: shorting is severe

    const auto lo = min_variance_weights_long_only(h);
    CHECK(lo.weights(0) == Catch::Approx(0.0).margin(1e-15));
    CHECK(lo.weights(1) == Catch::Approx(1.0).margin(1e-15));

    double best = std::numeric_limits<double>::infinity();
    double best_w1 = -1.0;
    for (int k = 0; k <= 10000; ++k) {
        const double w1 = double(k) * 1e-4;
        Eigen::Vector2d w(1.0 - w1, w1);
        const double f = objective(h, w);
        if (f < best) {
            best = f;
            best_w1 = w1;
        }
    }
    CHECK(best_w1 == Catch::Approx(1.0).margin(1e-12));
    CHECK(objective(h, lo.weights) <= best + 1e-12);
}

TEST_CASE("long-only invariants on correlated designs", "[portfolio]") {
    // Strongly correlated assets with spread variances force eliminations.
    for (const std::uint64_t seed : {11u, 12u, 13u, 14u, 15u}) {
        Rng rng(seed);
        const Eigen::Index n = 7;
        Eigen::MatrixXd corr = Eigen::MatrixXd::Constant(n, n, 0.93);
        corr.diagonal().setOnes();
        Eigen::VectorXd vol(n);
        for (Eigen::Index i = 0; i < n; ++i) vol(i) = rng.uniform(0.5, 3.0);
        const Eigen::MatrixXd h =
            vol.asDiagonal() * corr * vol.asDiagonal();

        const auto un = min_variance_weights(h);
        const auto lo = min_variance_weights_long_only(h);

        INFO("seed " << seed);
        REQUIRE(un.weights.minCoeff() < 0.0);  // construction check
        CHECK(lo.weights.minCoeff() >= -1e-12);
        CHECK(std::abs(lo.weights.sum() - 1.0) <= 1e-10);
        CHECK(objective(h, lo.weights) >= objective(h, un.weights) - 1e-12);

        // KKT: eliminated assets cannot lower the variance at the margin.
        const Eigen::VectorXd grad = 2.0 * (h * lo.weights);
        const double two_var = 2.0 * objective(h, lo.weights);
        for (Eigen::Index j = 0; j < n; ++j)
            if (lo.weights(j) == 0.0) CHECK(grad(j) >= two_var - 1e-8);

        // And the held assets all share the same marginal variance.
        double held_ref = std::numeric_limits<double>::quiet_NaN();
        for (Eigen::Index j = 0; j < n; ++j)
            if (lo.weights(j) > 0.0) {
                if (std::isnan(held_ref)) held_ref = grad(j);
                CHECK(grad(j) == Catch::Approx(held_ref).epsilon(1e-8));
            }
    }
}

TEST_CASE("simplex projection and projected gradient fallback", "[portfolio]") {
    SECTION("projection hand cases") {
        Eigen::Vector2d a(0.4, 0.8);
        const Eigen::VectorXd pa = covarcast::detail::project_simplex(a);
        CHECK(pa(0) == Catch::Approx(0.3).margin(1e-15));
        CHECK(pa(1) == Catch::Approx(0.7).margin(1e-15));

        Eigen::Vector2d b(-1.0, 1.0);
        const Eigen::VectorXd pb = covarcast::detail::project_simplex(b);
        CHECK(pb(0) == 0.0);
        CHECK(pb(1) == 1.0);

        Eigen::Vector3d c(1.0 / 3, 1.0 / 3, 1.0 / 3);
        const Eigen::VectorXd pc = covarcast::detail::project_simplex(c);
        CHECK((pc - c).cwiseAbs().maxCoeff() <= 1e-15);
    }

    SECTION("projected gradient reaches the grid-verified optimum") {
        Eigen::MatrixXd h(2, 2);
        h << 1.0, 0.9,
             0.9, 0.811;
        const Eigen::VectorXd w = covarcast::detail::projected_gradient_min_variance(
            h, Eigen::Vector2d(0.5, 0.5));
        CHECK(w(1) > 0.99);
        CHECK(objective(h, w) <= 0.811 + 1e-6);
    }

    SECTION("projected gradient on the identity keeps equal weights") {
        const Eigen::VectorXd w = covarcast::detail::projected_gradient_min_variance(
            Eigen::MatrixXd::Identity(4, 4), Eigen::VectorXd::Constant(4, 0.25));
        CHECK((w.array() - 0.25).abs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("equal weights", "[portfolio]") {
    SECTION("single asset") {
        const auto w = equal_weights(1);
        CHECK(w.weights(0) == 1.0);
    }

    SECTION("four hundred assets") {
        const auto w = equal_weights(400);
        for (Eigen::Index i = 0; i < 400; ++i) CHECK(w.weights(i) == 0.0025);
        CHECK(std::abs(w.weights.sum() - 1.0) <= 1e-12);
    }

    SECTION("powers of two sum exactly") {
        for (const Eigen::Index n : {1, 2, 4, 8, 16, 64}) {
            CHECK(equal_weights(n).weights.sum() == 1.0);
        }
    }

    SECTION("invalid count") {
        CHECK_THROWS_AS(equal_weights(0), std::invalid_argument);
    }
}

TEST_CASE("portfolio returns", "[portfolio]") {
    SECTION("equal weights with a common return recover it exactly") {
        const auto w = equal_weights(4);
        CHECK(covarcast::portfolio_return(w, Eigen::VectorXd::Constant(4, 0.0123)) ==
              0.0123);
    }

    SECTION("zero returns give zero") {
        const auto w = equal_weights(5);
        CHECK(covarcast::portfolio_return(w, Eigen::VectorXd::Zero(5)) == 0.0);
    }

    SECTION("hand two-asset case") {
        PortfolioWeights w;
        w.weights = Eigen::Vector2d(0.8, 0.2);
        CHECK(covarcast::portfolio_return(w, Eigen::Vector2d(0.01, -0.01)) ==
              Catch::Approx(0.006).epsilon(1e-12));
    }

    SECTION("length mismatch throws") {
        const auto w = equal_weights(3);
        CHECK_THROWS_AS(covarcast::portfolio_return(w, Eigen::VectorXd::Zero(4)),
                        std::invalid_argument);
    }
}

TEST_CASE("weights export to CSV rows", "[portfolio]") {
    auto w = equal_weights(2, "d000200", "equal");
    const auto rows = covarcast::weights_csv_rows(w, {"aaa", "bbb"});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0] == "d000200,aaa,0.5,equal");
    CHECK(rows[1] == "d000200,bbb,0.5,equal");

    CHECK_THROWS_AS(covarcast::weights_csv_rows(w, {"aaa"}), std::invalid_argument);
}

TEST_CASE("weight vector validation", "[portfolio]") {
    PortfolioWeights w;
    w.weights = Eigen::Vector2d(0.7, 0.2);  // sums to 0.9
    CHECK_THROWS_AS(w.validate(), std::invalid_argument);

    w.weights = Eigen::Vector2d(1.5, -0.5);
    CHECK_NOTHROW(w.validate());
    CHECK_THROWS_AS(w.validate(true), std::invalid_argument);

    w.weights.resize(0);
    CHECK_THROWS_AS(w.validate(), std::invalid_argument);
}
