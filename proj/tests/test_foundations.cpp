// Foundations: deterministic RNG, the BFGS / Nelder-Mead minimizer, matrix
// helpers, and the fork-join helper.

#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <vector>

#include "covarcast/linalg.hpp"
#include "covarcast/optim.hpp"
#include "covarcast/parallel.hpp"
#include "covarcast/rng.hpp"

using namespace covarcast;

TEST_CASE("Rng is deterministic and seed-sensitive") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 1000; ++i) {
        const double x = a.normal();
        all_equal = all_equal && (x == b.normal());
        any_diff = any_diff || (x != c.normal());
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("Rng normal variates have standard-normal moments") {
    Rng rng(7);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0;
    int within_1sd = 0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sum2 += z * z;
        if (std::abs(z) < 1.0) ++within_1sd;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
    CHECK(std::abs(within_1sd / double(n) - 0.6827) < 0.01);
}

TEST_CASE("Rng uniform stays in [0,1) and below() in range") {
    Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        REQUIRE(rng.below(7) < 7);
    }
    CHECK_THROWS_AS(rng.below(0), std::invalid_argument);
}

TEST_CASE("shuffle is a deterministic permutation") {
    std::vector<int> v1{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, v2 = v1, sorted = v1;
    Rng r1(5), r2(5);
    shuffle(v1, r1);
    shuffle(v2, r2);
    CHECK(v1 == v2);
    auto s = v1;
    std::sort(s.begin(), s.end());
    CHECK(s == sorted);
}

static double rosenbrock(const Eigen::VectorXd& x) {
    const double a = 1.0 - x(0);
    const double b = x(1) - x(0) * x(0);
    return a * a + 100.0 * b * b;
}

static Eigen::VectorXd rosenbrock_grad(const Eigen::VectorXd& x) {
    Eigen::VectorXd g(2);
    g(0) = -2.0 * (1.0 - x(0)) - 400.0 * x(0) * (x(1) - x(0) * x(0));
    g(1) = 200.0 * (x(1) - x(0) * x(0));
    return g;
}

TEST_CASE("BFGS minimizes Rosenbrock from the standard start") {
    Eigen::VectorXd x0(2);
    x0 << -1.2, 1.0;
    const OptimResult res = minimize(rosenbrock, rosenbrock_grad, x0);
    CHECK(res.converged);
    CHECK(std::abs(res.x(0) - 1.0) < 1e-5);
    CHECK(std::abs(res.x(1) - 1.0) < 1e-5);
}

TEST_CASE("Nelder-Mead minimizes a shifted quadratic") {
    auto f = [](const Eigen::VectorXd& x) {
        return (x(0) - 2.0) * (x(0) - 2.0) + 3.0 * (x(1) + 1.0) * (x(1) + 1.0);
    };
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(2);
    OptimOptions opts;
    opts.max_iters = 500;
    const OptimResult res = minimize_nelder_mead(f, x0, opts);
    CHECK(res.converged);
    CHECK(std::abs(res.x(0) - 2.0) < 1e-4);
    CHECK(std::abs(res.x(1) + 1.0) < 1e-4);
}

TEST_CASE("central_difference_gradient matches an analytic gradient") {
    auto f = [](const Eigen::VectorXd& x) {
        return std::sin(x(0)) * std::exp(x(1)) + x(0) * x(0);
    };
    Eigen::VectorXd x(2);
    x << 0.7, -0.3;
    const Eigen::VectorXd g = central_difference_gradient(f, x);
    CHECK(std::abs(g(0) - (std::cos(0.7) * std::exp(-0.3) + 1.4)) < 1e-7);
    CHECK(std::abs(g(1) - std::sin(0.7) * std::exp(-0.3)) < 1e-7);
}

TEST_CASE("correlation_from_q has exact unit diagonal and exact symmetry") {
    Rng rng(11);
    Eigen::MatrixXd a(4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) a(i, j) = rng.normal();
    Eigen::MatrixXd q = a * a.transpose() + 4.0 * Eigen::MatrixXd::Identity(4, 4);
    const Eigen::MatrixXd r = correlation_from_q(q);
    for (int i = 0; i < 4; ++i) {
        CHECK(r(i, i) == 1.0);
        for (int j = 0; j < 4; ++j) {
            CHECK(r(i, j) == r(j, i));
            CHECK(std::abs(r(i, j)) <= 1.0 + 1e-14);
        }
    }
}

TEST_CASE("correlation_from_q is scale invariant") {
    Eigen::MatrixXd q(3, 3);
    q << 2.0, 0.6, -0.2, 0.6, 1.5, 0.4, -0.2, 0.4, 0.9;
    const Eigen::MatrixXd r1 = correlation_from_q(q);
    const Eigen::MatrixXd r2 = correlation_from_q(737.0 * q);
    CHECK((r1 - r2).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("chol_lower rejects indefinite input, clip repair fixes it") {
    Eigen::MatrixXd m(2, 2);
    m << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
    CHECK_THROWS_AS(chol_lower(m, "test"), std::domain_error);
    const Eigen::MatrixXd fixed = clip_eigenvalues_spd(m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fixed);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    CHECK_NOTHROW(chol_lower(fixed, "test"));
}

TEST_CASE("parallel_for matches sequential execution and propagates errors") {
    const std::size_t n = 1000;
    std::vector<double> seq(n), par(n);
    auto work = [](std::size_t i) { return std::sqrt(double(i)) * std::sin(double(i)); };
    parallel_for(n, 1, [&](std::size_t i) { seq[i] = work(i); });
    parallel_for(n, 8, [&](std::size_t i) { par[i] = work(i); });
    CHECK(seq == par);

    CHECK_THROWS_WITH(
        parallel_for(100, 4,
                     [&](std::size_t i) {
                         if (i == 57) throw std::runtime_error("boom at 57");
                     }),
        "boom at 57");
}
