#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "varcp/estimation.hpp"
#include "varcp/model.hpp"

using namespace varcp;

namespace {

Dataset dataset_from(const Eigen::MatrixXd& values) {
    Dataset d;
    d.values = values;
    return d;
}

Eigen::MatrixXd random_matrix(long rows, long cols, rng_engine& eng, double scale = 1.0) {
    std::normal_distribution<double> gauss(0.0, scale);
    Eigen::MatrixXd m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) m(i, j) = gauss(eng);
    return m;
}

}  // namespace

TEST_CASE("build_regression stacks newest-first with lagged predictors", "[estimation]") {
    Eigen::MatrixXd values(3, 1);
    values << 1, 2, 3;
    RegressionView reg = build_regression(dataset_from(values), 1);
    REQUIRE(reg.n == 2);
    REQUIRE(reg.Y(0, 0) == 3.0);
    REQUIRE(reg.Y(1, 0) == 2.0);
    REQUIRE(reg.X(0, 0) == 2.0);
    REQUIRE(reg.X(1, 0) == 1.0);
}

TEST_CASE("build_regression refuses too-short series", "[estimation]") {
    Eigen::MatrixXd values(3, 2);
    values.setRandom();
    REQUIRE_THROWS_AS(build_regression(dataset_from(values), 3), data_error);
}

TEST_CASE("build_regression predictor rows match direct index arithmetic", "[estimation]") {
    rng_engine eng(31);
    const long rows = 40, p = 3, h = 2;
    Dataset d = dataset_from(random_matrix(rows, p, eng));
    RegressionView reg = build_regression(d, h);
    REQUIRE(reg.n == rows - h);
    for (long i = 0; i < reg.n; ++i) {
        const long t = rows - 1 - i;  // response time (0-based row)
        for (long j = 0; j < p; ++j) REQUIRE(reg.Y(i, j) == d.values(t, j));
        for (long l = 1; l <= h; ++l)
            for (long k = 0; k < p; ++k) REQUIRE(reg.X(i, (l - 1) * p + k) == d.values(t - l, k));
    }
}

TEST_CASE("lasso at or above lambda_max is identically zero", "[estimation][lasso]") {
    rng_engine eng(5);
    Dataset d = dataset_from(random_matrix(120, 3, eng));
    RegressionView reg = build_regression(d, 1);
    const double top = lambda_max(reg);
    REQUIRE(fit_lasso(reg, top).isZero(0.0));
    REQUIRE(fit_lasso(reg, 2.0 * top).isZero(0.0));
    // just below, at least one coefficient activates
    REQUIRE_FALSE(fit_lasso(reg, 0.99 * top).isZero(0.0));
}

TEST_CASE("unpenalized lasso matches the normal equations", "[estimation][lasso]") {
    Dataset d = simulate(scaled_identity_model(2, 0.6), 201, 8);
    RegressionView reg = build_regression(d, 1);
    REQUIRE(reg.n == 200);
    const Eigen::VectorXd beta = fit_lasso(reg, 0.0);
    const Eigen::MatrixXd gram = reg.X.transpose() * reg.X;
    for (long j = 0; j < reg.p; ++j) {
        const Eigen::VectorXd direct = gram.ldlt().solve(reg.X.transpose() * reg.Y.col(j));
        for (long k = 0; k < reg.h * reg.p; ++k)
            REQUIRE(beta(j * reg.h * reg.p + k) == Catch::Approx(direct(k)).margin(1e-6));
    }
}

TEST_CASE("KKT certificate holds at convergence", "[estimation][lasso]") {
    rng_engine eng(17);
    for (int rep = 0; rep < 20; ++rep) {
        const long p = 2 + static_cast<long>(eng() % 3);
        Dataset d = simulate(scaled_identity_model(p, 0.5), 150 + p, eng());
        RegressionView reg = build_regression(d, 1);
        const double lambda = 0.1;
        const Eigen::VectorXd beta = fit_lasso(reg, lambda);
        const double slack = 10.0 * default_cd_tol;
        for (long j = 0; j < reg.p; ++j) {
            const Eigen::VectorXd b = beta.segment(j * reg.h * reg.p, reg.h * reg.p);
            const Eigen::VectorXd resid = reg.Y.col(j) - reg.X * b;
            for (long k = 0; k < reg.h * reg.p; ++k) {
                const double g = 2.0 * reg.X.col(k).dot(resid) / static_cast<double>(reg.n);
                if (b(k) != 0.0)
                    REQUIRE(std::abs(std::abs(g) - lambda) <= slack);
                else
                    REQUIRE(std::abs(g) <= lambda + slack);
            }
        }
    }
}

TEST_CASE("coordinate descent objective is non-increasing sweep over sweep", "[estimation][lasso]") {
    rng_engine eng(23);
    for (int rep = 0; rep < 10; ++rep) {
        const long n = 80, dpred = 12;
        const Eigen::MatrixXd x = random_matrix(n, dpred, eng);
        const Eigen::VectorXd y = random_matrix(n, 1, eng);
        const Eigen::MatrixXd gram = x.transpose() * x / static_cast<double>(n);
        const Eigen::VectorXd corr = x.transpose() * y / static_cast<double>(n);
        std::vector<double> trace;
        LassoOptions opts;
        opts.objective_trace = &trace;
        Eigen::VectorXd b = Eigen::VectorXd::Zero(dpred);
        solve_gram_lasso(gram, corr, y.squaredNorm() / n, 0.05, b, opts);
        REQUIRE(trace.size() >= 1);
        for (size_t s = 1; s < trace.size(); ++s)
            REQUIRE(trace[s] <= trace[s - 1] + 1e-9 * (1.0 + std::abs(trace[s - 1])));
    }
}

TEST_CASE("decoupled solve equals the stacked problem", "[estimation][lasso]") {
    rng_engine eng(41);
    Dataset d = simulate(scaled_identity_model(3, 0.5), 61, eng());
    RegressionView reg = build_regression(d, 1);
    const double lambda = 0.08;
    const Eigen::VectorXd beta = fit_lasso(reg, lambda);

    // Stacked oracle: materialize Z = I_p (x) X and solve the np-row problem.
    // Its objective divides by np, so the penalty rescales by 1/p.
    const long n = reg.n, p = reg.p, dpred = reg.h * reg.p;
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n * p, p * dpred);
    Eigen::VectorXd ystack(n * p);
    for (long j = 0; j < p; ++j) {
        z.block(j * n, j * dpred, n, dpred) = reg.X;
        ystack.segment(j * n, n) = reg.Y.col(j);
    }
    const Eigen::VectorXd stacked = oracles::naive_lasso(z, ystack, lambda / static_cast<double>(p));
    for (long k = 0; k < beta.size(); ++k) REQUIRE(beta(k) == Catch::Approx(stacked(k)).margin(1e-10));
}

TEST_CASE("negative penalties are rejected", "[estimation]") {
    rng_engine eng(2);
    Dataset d = dataset_from(random_matrix(60, 2, eng));
    RegressionView reg = build_regression(d, 1);
    REQUIRE_THROWS_AS(fit_lasso(reg, -0.1), config_error);
    REQUIRE_THROWS_AS(select_lambda_cv(reg, {0.5, -0.1}, 2), config_error);
}

TEST_CASE("non-finite regressions are rejected", "[estimation]") {
    rng_engine eng(4);
    Dataset d = dataset_from(random_matrix(60, 2, eng));
    RegressionView reg = build_regression(d, 1);
    reg.Y(5, 1) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(fit_lasso(reg, 0.1), data_error);
    RegressionView reg2 = build_regression(d, 1);
    reg2.X(3, 0) = std::numeric_limits<double>::infinity();
    REQUIRE_THROWS_AS(fit_lasso(reg2, 0.1), data_error);
}

TEST_CASE("cross-validation singleton and tie rules", "[estimation][cv]") {
    rng_engine eng(3);
    Dataset d = dataset_from(random_matrix(100, 2, eng));
    RegressionView reg = build_regression(d, 1);
    SECTION("singleton grid returns its element") {
        REQUIRE(select_lambda_cv(reg, {0.37}, 5) == 0.37);
    }
    SECTION("ties break toward the larger penalty") {
        const double top = lambda_max(reg);
        // both grid points kill every coefficient, so errors tie exactly
        REQUIRE(select_lambda_cv(reg, {2.0 * top, 4.0 * top}, 5) == 4.0 * top);
    }
}

TEST_CASE("cross-validation beats the grid endpoints on sparse VAR data", "[estimation][cv]") {
    const long p = 10, n = 500;
    const VarModel truth = scaled_identity_model(p, 0.8);
    const Eigen::VectorXd beta_star = stack_coefs(truth.coefs);
    double err_sel = 0.0, err_hi = 0.0, err_lo = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        Dataset d = simulate(truth, n + 1, derive_seed(404, rep));
        RegressionView reg = build_regression(d, 1);
        const auto grid = default_lambda_grid(reg);
        const double lam = select_lambda_cv(reg, grid, 5);
        err_sel += (fit_lasso(reg, lam) - beta_star).norm();
        err_hi += (fit_lasso(reg, grid.front()) - beta_star).norm();
        err_lo += (fit_lasso(reg, grid.back()) - beta_star).norm();
    }
    REQUIRE(err_sel < err_hi);
    REQUIRE(err_sel < err_lo);
}

TEST_CASE("BIC lag selection", "[estimation][bic]") {
    SECTION("single candidate") {
        Dataset d = simulate(scaled_identity_model(2, 0.5), 200, 1);
        REQUIRE(select_lag_bic(d, 1) == 1);
    }
    SECTION("strong lag-2 signal is found") {
        VarModel m;
        m.p = 5;
        m.coefs = {0.15 * Eigen::MatrixXd::Identity(5, 5), 0.6 * Eigen::MatrixXd::Identity(5, 5)};
        m.sigma2 = Eigen::VectorXd::Constant(1, 1.0);
        REQUIRE(is_stationary(m));
        int hits = 0;
        const int reps = 50;
        for (int rep = 0; rep < reps; ++rep) {
            Dataset d = simulate(m, 2000, derive_seed(7007, rep));
            if (select_lag_bic(d, 3) == 2) ++hits;
        }
        REQUIRE(hits >= static_cast<int>(0.8 * reps));
    }
    SECTION("white noise prefers the smallest lag") {
        int hits = 0;
        const int reps = 20;
        for (int rep = 0; rep < reps; ++rep) {
            Dataset d = simulate(scaled_identity_model(3, 0.0), 400, derive_seed(8118, rep));
            if (select_lag_bic(d, 3) == 1) ++hits;
        }
        REQUIRE(hits > reps / 2);
    }
}

TEST_CASE("moment estimators on hand-forced inputs", "[estimation][moments]") {
    SECTION("zero residuals give zero moments") {
        Eigen::MatrixXd values(5, 1);
        values << 1, 2, 4, 8, 16;  // doubles every step; beta=2 predicts exactly
        RegressionView reg = build_regression(dataset_from(values), 1);
        Eigen::VectorXd beta(1);
        beta << 2.0;
        auto [s2, v] = estimate_moments(reg, beta, VarianceMode::homogeneous);
        REQUIRE(s2(0) == 0.0);
        REQUIRE(v(0) == 0.0);
    }
    SECTION("alternating unit residuals: sigma2=1, V=0") {
        Eigen::MatrixXd values(5, 1);
        values << 0, 1, -1, 1, -1;
        RegressionView reg = build_regression(dataset_from(values), 1);
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(1);
        auto [s2, v] = estimate_moments(reg, beta, VarianceMode::homogeneous);
        REQUIRE(s2(0) == 1.0);
        REQUIRE(v(0) == 0.0);
    }
    SECTION("fourth-moment spread stays nonnegative on heavy-tailed residuals") {
        rng_engine eng(6);
        std::normal_distribution<double> gauss(0.0, 1.0);
        Eigen::MatrixXd values(400, 1);
        for (long i = 0; i < 400; ++i) {
            const double u = gauss(eng);
            values(i, 0) = u * u * u;  // heavy tails, injected directly as residuals
        }
        RegressionView reg = build_regression(dataset_from(values), 1);
        auto [s2h, vh] = estimate_moments(reg, Eigen::VectorXd::Zero(1), VarianceMode::heterogeneous);
        auto [s2, v] = estimate_moments(reg, Eigen::VectorXd::Zero(1), VarianceMode::homogeneous);
        REQUIRE(v(0) >= 0.0);
        REQUIRE(vh(0) >= 0.0);
        REQUIRE(s2(0) >= 0.0);
        REQUIRE(s2h(0) >= 0.0);
    }
}

TEST_CASE("moment estimators are consistent with the truth supplied", "[estimation][moments]") {
    const long p = 4, n = 5000;
    const double sigma2 = 1.3;
    VarModel m = scaled_identity_model(p, 0.6, sigma2);
    Dataset d = simulate(m, n + 1, 555);
    RegressionView reg = build_regression(d, 1);
    auto [s2, v] = estimate_moments(reg, stack_coefs(m.coefs), VarianceMode::homogeneous);
    REQUIRE(s2(0) == Catch::Approx(sigma2).epsilon(0.05));
    REQUIRE(v(0) == Catch::Approx(2.0 * sigma2 * sigma2).epsilon(0.10));
}

TEST_CASE("scaling the data scales the moment estimates", "[estimation][moments]") {
    // On the unpenalized path the coefficients are scale-equivariant, so
    // multiplying the data by c multiplies sigma2 by c^2 and V by c^4.
    Dataset d = simulate(scaled_identity_model(3, 0.5), 300, 12);
    const double c = 3.7;
    Dataset scaled = d;
    scaled.values *= c;
    RegressionView reg = build_regression(d, 1);
    RegressionView reg_scaled = build_regression(scaled, 1);
    const Eigen::VectorXd beta = fit_lasso(reg, 0.0);
    const Eigen::VectorXd beta_scaled = fit_lasso(reg_scaled, 0.0);
    for (long k = 0; k < beta.size(); ++k)
        REQUIRE(beta_scaled(k) == Catch::Approx(beta(k)).margin(1e-7));
    auto [s2, v] = estimate_moments(reg, beta, VarianceMode::homogeneous);
    auto [s2c, vc] = estimate_moments(reg_scaled, beta_scaled, VarianceMode::homogeneous);
    REQUIRE(s2c(0) == Catch::Approx(c * c * s2(0)).epsilon(1e-6));
    REQUIRE(vc(0) == Catch::Approx(c * c * c * c * v(0)).epsilon(1e-6));
}

TEST_CASE("fit_baseline rejects degenerate noise-free data", "[estimation][baseline]") {
    VarModel m = scaled_identity_model(3, 0.5, 0.0);
    Dataset d = simulate(m, 200, 1);
    BaselineOptions opts;
    opts.h = 1;
    REQUIRE_THROWS_AS(fit_baseline(d, opts), numerical_error);
}

TEST_CASE("fit_baseline rejects undersized training sets", "[estimation][baseline]") {
    Dataset d = simulate(scaled_identity_model(10, 0.5), 40, 9);
    BaselineOptions opts;
    opts.h = 1;
    REQUIRE_THROWS_AS(fit_baseline(d, opts), data_error);
}

TEST_CASE("fit_baseline recovers sparse coefficients", "[estimation][baseline]") {
    const long p = 10, n = 500;
    const VarModel truth = scaled_identity_model(p, 0.8);
    const Eigen::VectorXd beta_star = stack_coefs(truth.coefs);
    int hits = 0;
    const int reps = 50;
    for (int rep = 0; rep < reps; ++rep) {
        Dataset d = simulate(truth, n + 1, derive_seed(909, rep));
        BaselineOptions opts;
        opts.h = 1;
        const FittedBaseline fb = fit_baseline(d, opts);
        if ((fb.beta - beta_star).norm() <= 0.5) ++hits;
    }
    REQUIRE(hits >= static_cast<int>(0.9 * reps));
}

TEST_CASE("heterogeneous moments recover per-component variances", "[estimation][baseline]") {
    const long p = 10, n = 2000;
    rng_engine eng(70);
    std::uniform_real_distribution<double> unif(0.5, 1.5);
    VarModel m = scaled_identity_model(p, 0.8);
    m.sigma2.resize(p);
    for (long j = 0; j < p; ++j) m.sigma2(j) = unif(eng);
    Dataset d = simulate(m, n + 1, 7100);
    BaselineOptions opts;
    opts.h = 1;
    opts.mode = VarianceMode::heterogeneous;
    const FittedBaseline fb = fit_baseline(d, opts);
    REQUIRE(fb.sigma2_hat.size() == p);
    for (long j = 0; j < p; ++j)
        REQUIRE(fb.sigma2_hat(j) == Catch::Approx(m.sigma2(j)).epsilon(0.15));
}

TEST_CASE("coefficient layout round-trips through stack/unstack", "[estimation]") {
    rng_engine eng(123);
    std::vector<Eigen::MatrixXd> coefs = {random_matrix(3, 3, eng), random_matrix(3, 3, eng)};
    const Eigen::VectorXd beta = stack_coefs(coefs);
    // normative position: (target row j, source col k, lag l) at j*hp + (l-1)*p + (k-1)
    const long p = 3, h = 2;
    for (long j = 0; j < p; ++j)
        for (long l = 0; l < h; ++l)
            for (long k = 0; k < p; ++k)
                REQUIRE(beta(j * h * p + l * p + k) == coefs[static_cast<size_t>(l)](j, k));
    const auto back = unstack_coefs(beta, p, h);
    REQUIRE(back[0] == coefs[0]);
    REQUIRE(back[1] == coefs[1]);
}
