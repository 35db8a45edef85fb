#include <catch2/catch_amalgamated.hpp>

#include <memory>

#include "oracles.hpp"
#include "varcp/monitor.hpp"

using namespace varcp;

namespace {

std::shared_ptr<const FittedBaseline> gaussian_exact_baseline(const VarModel& model, long n = 2000) {
    // Gaussian errors: V = Var(eps^2) = 2 sigma^4 per component.
    Eigen::VectorXd s2 = model.sigma2.size() == 1
                             ? Eigen::VectorXd::Constant(1, model.sigma2(0))
                             : model.sigma2;
    Eigen::VectorXd v = 2.0 * s2.array().square();
    return std::make_shared<const FittedBaseline>(exact_baseline(model, s2, v, n));
}

std::vector<Eigen::VectorXd> rows_as_vectors(const Dataset& d, long lo, long count) {
    std::vector<Eigen::VectorXd> out;
    for (long i = lo; i < lo + count; ++i) out.push_back(d.values.row(i).transpose());
    return out;
}

}  // namespace

TEST_CASE("threshold values against a bisection oracle", "[monitor][threshold]") {
    REQUIRE(threshold(1.0) == 0.0);
    REQUIRE(threshold(0.05) == Catch::Approx(1.959964).margin(1e-5));
    REQUIRE(threshold(0.001) == Catch::Approx(3.290527).margin(1e-5));
    for (double alpha : {0.5, 0.1, 0.01, 1e-3, 1e-4, 1e-5, 2e-7}) {
        const double want = oracles::normal_quantile_bisect(1.0 - alpha / 2.0);
        REQUIRE(threshold(alpha) == Catch::Approx(want).margin(1e-9));
    }
    REQUIRE_THROWS_AS(threshold(0.0), config_error);
    REQUIRE_THROWS_AS(threshold(-0.2), config_error);
    REQUIRE_THROWS_AS(threshold(1.5), config_error);
}

TEST_CASE("default window length follows the 10*ln(h p^2) rule", "[monitor]") {
    REQUIRE(default_omega(1, 10) == 46);
    REQUIRE(default_omega(1, 40) == 74);
    REQUIRE(default_omega(1, 70) == 85);
    REQUIRE(default_omega(1, 100) == 92);
}

TEST_CASE("window residual statistic on forced inputs", "[monitor][stat]") {
    SECTION("perfect prediction gives zero") {
        VarModel m = scaled_identity_model(2, 0.5, 0.0);
        Dataset d = simulate(m, 60, 4);  // all-zero series
        auto fb = gaussian_exact_baseline(scaled_identity_model(2, 0.5, 1.0));
        auto window = rows_as_vectors(d, 0, fb->h + 10);
        REQUIRE(window_residual_stat(window, *fb, 10).total == 0.0);
    }
    SECTION("unit series under a zero model averages to one") {
        VarModel zero = scaled_identity_model(1, 0.0, 1.0);
        auto fb = gaussian_exact_baseline(zero);
        std::vector<Eigen::VectorXd> window(5, Eigen::VectorXd::Ones(1));  // h + omega = 1 + 4
        const auto stat = window_residual_stat(window, *fb, 4);
        REQUIRE(stat.total == 1.0);
        REQUIRE(stat.per_component(0) == 1.0);
    }
    SECTION("matches a naive double loop") {
        rng_engine eng(12);
        std::normal_distribution<double> gauss(0.0, 1.0);
        VarModel m = scaled_identity_model(3, 0.4);
        m.coefs.push_back(0.2 * Eigen::MatrixXd::Identity(3, 3));
        auto fb = gaussian_exact_baseline(m);
        const long omega = 7;
        std::vector<Eigen::VectorXd> window;
        for (long i = 0; i < fb->h + omega; ++i) {
            Eigen::VectorXd x(3);
            for (long j = 0; j < 3; ++j) x(j) = gauss(eng);
            window.push_back(x);
        }
        double naive = 0.0;
        for (long i = fb->h; i < fb->h + omega; ++i) {
            for (long j = 0; j < 3; ++j) {
                double pred = 0.0;
                for (long l = 1; l <= fb->h; ++l)
                    for (long k = 0; k < 3; ++k)
                        pred += fb->coefs[static_cast<size_t>(l - 1)](j, k) *
                                window[static_cast<size_t>(i - l)](k);
                const double r = window[static_cast<size_t>(i)](j) - pred;
                naive += r * r;
            }
        }
        naive /= static_cast<double>(omega);
        REQUIRE(window_residual_stat(window, *fb, omega).total == Catch::Approx(naive).margin(1e-10));
    }
    SECTION("wrong window length errors") {
        auto fb = gaussian_exact_baseline(scaled_identity_model(2, 0.5));
        std::vector<Eigen::VectorXd> window(3, Eigen::VectorXd::Zero(2));
        REQUIRE_THROWS_AS(window_residual_stat(window, *fb, 10), data_error);
    }
}

TEST_CASE("test statistic formula values", "[monitor][stat]") {
    SECTION("centered case is zero") {
        auto fb = gaussian_exact_baseline(scaled_identity_model(4, 0.3, 1.7));
        REQUIRE(test_statistic(4 * 1.7, *fb, 25) == 0.0);
    }
    SECTION("direct evaluation at p=1, omega=1") {
        VarModel m = scaled_identity_model(1, 0.0, 1.0);
        Eigen::VectorXd s2 = Eigen::VectorXd::Zero(1);
        Eigen::VectorXd v = Eigen::VectorXd::Ones(1);
        auto fb = std::make_shared<const FittedBaseline>(exact_baseline(m, s2, v, 100));
        REQUIRE(test_statistic(2.0, *fb, 1) == 2.0);
    }
    SECTION("heterogeneous equals homogeneous under equal per-component moments") {
        rng_engine eng(55);
        std::uniform_real_distribution<double> unif(0.2, 3.0);
        const long p = 6;
        for (int rep = 0; rep < 100; ++rep) {
            const double s = unif(eng);
            const double v = unif(eng);
            const long omega = 5 + static_cast<long>(eng() % 50);
            const double r_hat = unif(eng) * p;
            VarModel m = scaled_identity_model(p, 0.2, s);
            auto homo = std::make_shared<const FittedBaseline>(exact_baseline(
                m, Eigen::VectorXd::Constant(1, s), Eigen::VectorXd::Constant(1, v), 100));
            VarModel mh = m;
            mh.sigma2 = Eigen::VectorXd::Constant(p, s);
            auto hetero = std::make_shared<const FittedBaseline>(exact_baseline(
                mh, Eigen::VectorXd::Constant(p, s), Eigen::VectorXd::Constant(p, v), 100));
            const double t_homo = test_statistic(r_hat, *homo, omega);
            const double t_hetero = test_statistic(r_hat, *hetero, omega);
            REQUIRE(t_homo == Catch::Approx(t_hetero).margin(1e-12 * (1.0 + std::abs(t_homo))));
        }
    }
    SECTION("degenerate fourth moment refuses to monitor") {
        VarModel m = scaled_identity_model(2, 0.1, 1.0);
        auto fb = std::make_shared<const FittedBaseline>(
            exact_baseline(m, Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Zero(1), 100));
        MonitorConfig config;
        config.omega = 10;
        REQUIRE_THROWS_AS(MonitorState(fb, config), numerical_error);
    }
}

TEST_CASE("warm-up emits no statistic for exactly h+omega-1 pushes", "[monitor][step]") {
    VarModel m = scaled_identity_model(2, 0.5);
    m.coefs.push_back(0.1 * Eigen::MatrixXd::Identity(2, 2));  // h = 2
    auto fb = gaussian_exact_baseline(m);
    MonitorConfig config;
    config.omega = 9;
    MonitorState state(fb, config);
    Dataset d = simulate(m, 40, 21);
    const long warm = fb->h + 9 - 1;
    for (long i = 0; i < 40; ++i) {
        const auto res = state.step(d.values.row(i).transpose());
        if (i < warm)
            REQUIRE_FALSE(res.statistic.has_value());
        else
            REQUIRE(res.statistic.has_value());
    }
}

TEST_CASE("step rejects dimension mismatches", "[monitor][step]") {
    auto fb = gaussian_exact_baseline(scaled_identity_model(3, 0.5));
    MonitorConfig config;
    config.omega = 5;
    MonitorState state(fb, config);
    REQUIRE_THROWS_AS(state.step(Eigen::VectorXd::Zero(2)), data_error);
}

TEST_CASE("null rejection rate near alpha with a known baseline", "[monitor][step]") {
    const long p = 10, omega = 50;
    VarModel m = scaled_identity_model(p, 0.8);
    auto fb = gaussian_exact_baseline(m);
    MonitorConfig config;
    config.omega = omega;
    config.alpha = 0.05;
    MonitorState state(fb, config);
    Dataset d = simulate(m, 2000 + fb->h + omega - 1, 3141);
    long alarms = 0, stats = 0;
    for (long i = 0; i < d.rows(); ++i) {
        const auto res = state.step(d.values.row(i).transpose());
        if (!res.statistic) continue;
        ++stats;
        if (res.alarm) ++alarms;
    }
    REQUIRE(stats == 2000);
    const double rate = static_cast<double>(alarms) / static_cast<double>(stats);
    REQUIRE(rate >= 0.02);
    REQUIRE(rate <= 0.09);
}

TEST_CASE("statistic depends only on the window contents", "[monitor][step]") {
    const long p = 3, omega = 12;
    VarModel m = scaled_identity_model(p, 0.6);
    auto fb = gaussian_exact_baseline(m);
    MonitorConfig config;
    config.omega = omega;
    Dataset core_data = simulate(m, fb->h + omega, 777);
    Dataset prefix_a = simulate(m, 40, 778);
    Dataset prefix_b = simulate(m, 7, 779);

    auto run = [&](const Dataset& prefix) {
        MonitorState state(fb, config);
        for (long i = 0; i < prefix.rows(); ++i) state.step(prefix.values.row(i).transpose());
        std::optional<double> last;
        for (long i = 0; i < core_data.rows(); ++i)
            last = state.step(core_data.values.row(i).transpose()).statistic;
        return *last;
    };
    const double ta = run(prefix_a);
    const double tb = run(prefix_b);
    REQUIRE(ta == tb);  // bit-equal
}

TEST_CASE("post-change detection inside the delay budget", "[monitor][step]") {
    const long p = 10, omega = 50;
    const VarModel base = scaled_identity_model(p, 0.8);
    auto fb = gaussian_exact_baseline(base);
    MonitorConfig config;
    config.omega = omega;
    config.alpha = 1e-3;
    const long lead = fb->h + omega - 1;
    int within = 0;
    const int reps = 100;
    for (int rep = 0; rep < reps; ++rep) {
        const std::uint64_t seed = derive_seed(1212, rep);
        VarModel post = make_jump(base, 4.0, p, seed);
        ChangeSpec spec;
        spec.segments.push_back({1, base});
        spec.segments.push_back({lead + 1, post});
        spec.total_length = lead + omega + fb->h + 5;
        Dataset d = simulate(spec, seed);
        MonitorState state(fb, config, 1);
        long alarm_at = -1;
        for (long i = 0; i < d.rows(); ++i) {
            const auto res = state.step(d.values.row(i).transpose());
            if (res.alarm) {
                alarm_at = state.t();
                break;
            }
        }
        if (alarm_at > 0 && alarm_at - lead <= omega + fb->h) ++within;
    }
    REQUIRE(within >= static_cast<int>(0.9 * reps));
}

TEST_CASE("variance drops raise negative-statistic alarms", "[monitor][step]") {
    // Halving the noise variance with unchanged coefficients must alarm far
    // above the null rate, through the negative tail.
    const long p = 5, omega = 40;
    const VarModel base = scaled_identity_model(p, 0.5, 1.0);
    const VarModel quiet = scaled_identity_model(p, 0.5, 0.5);
    auto fb = gaussian_exact_baseline(base);
    MonitorConfig config;
    config.omega = omega;
    config.alpha = 0.05;
    const double thr = threshold(config.alpha);

    auto negative_rate = [&](const VarModel& gen, std::uint64_t seed) {
        MonitorState state(fb, config);
        Dataset d = simulate(gen, 1500 + fb->h + omega - 1, seed);
        long negative = 0, stats = 0;
        for (long i = 0; i < d.rows(); ++i) {
            const auto res = state.step(d.values.row(i).transpose());
            if (!res.statistic) continue;
            ++stats;
            if (*res.statistic < -thr) ++negative;
        }
        return static_cast<double>(negative) / static_cast<double>(stats);
    };
    const double null_rate = std::max(negative_rate(base, 500), 1e-3);
    const double drop_rate = negative_rate(quiet, 501);
    REQUIRE(drop_rate >= 5.0 * null_rate);
}

TEST_CASE("refinement localizes and confirms", "[monitor][refine]") {
    const long p = 10, omega = 50;
    const VarModel base = scaled_identity_model(p, 0.8);
    auto fb = gaussian_exact_baseline(base);
    MonitorConfig config;
    config.omega = omega;
    config.alpha = 1e-3;
    config.refine_ratio = 0.1;

    SECTION("refined estimates improve on the raw delay") {
        // Fitted baselines, change 300 observations into monitoring: the sub-run
        // must localize better than the raw last-read convention.
        const long n = 2000, lead = 300;
        std::vector<double> raw_err, refined_err;
        int refine_present = 0;
        const int reps = 100;
        for (int rep = 0; rep < reps; ++rep) {
            const std::uint64_t seed = derive_seed(3434, rep);
            VarModel post = make_jump(base, 4.0, p, seed);
            const long t_star = n + 1 + lead;
            ChangeSpec spec;
            spec.segments.push_back({1, base});
            spec.segments.push_back({t_star + 1, post});
            spec.total_length = t_star + 2 * (omega + 1);
            Dataset d = simulate(spec, seed);
            Dataset train;
            train.values = d.values.topRows(n + 1);
            BaselineOptions bopts;
            bopts.h = 1;
            auto fitted = std::make_shared<const FittedBaseline>(fit_baseline(train, bopts));
            MonitorState state(fitted, config, n + 2 - (1 + omega));
            for (long i = n + 1 - (1 + omega - 1); i < d.rows(); ++i) {
                const auto res = state.step(d.values.row(i - 1).transpose());
                if (!res.alarm || state.t() <= t_star) continue;
                const long t_hat = state.t() - omega;
                const auto window = state.window_snapshot();
                const auto refined = refine(window, fitted, config, t_hat);
                REQUIRE(confirm(window, fitted, config) == refined.has_value());
                raw_err.push_back(static_cast<double>(state.t() - t_star));
                if (refined) {
                    ++refine_present;
                    REQUIRE(*refined > t_hat);
                    REQUIRE(*refined <= t_hat + omega);
                    refined_err.push_back(static_cast<double>(std::abs(*refined - t_star)));
                }
                break;
            }
        }
        REQUIRE(refine_present >= 90);
        REQUIRE(oracles::median(refined_err) < oracles::median(raw_err));
    }

    SECTION("pure-noise windows are usually dismissed") {
        int absent = 0;
        const int reps = 200;
        for (int rep = 0; rep < reps; ++rep) {
            Dataset d = simulate(base, fb->h + omega, derive_seed(5656, rep));
            auto window = rows_as_vectors(d, 0, fb->h + omega);
            if (!refine(window, fb, config, 1000)) ++absent;
        }
        REQUIRE(absent > reps / 2);
        // dismissal probability is near 1 - omega*alpha
        REQUIRE(static_cast<double>(absent) / reps >= 0.80);
    }

    SECTION("windows holding a genuine large change confirm") {
        int confirmed = 0;
        const int reps = 100;
        for (int rep = 0; rep < reps; ++rep) {
            const std::uint64_t seed = derive_seed(7878, rep);
            VarModel post = make_jump(base, 4.0, p, seed);
            ChangeSpec spec;
            spec.segments.push_back({1, base});
            spec.segments.push_back({201, post});
            spec.total_length = 200 + omega;
            Dataset d = simulate(spec, seed);
            auto window = rows_as_vectors(d, 200 - fb->h, fb->h + omega);
            if (confirm(window, fb, config)) ++confirmed;
        }
        REQUIRE(confirmed >= 95);
    }
}
