#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "bdre/convergence.hpp"
#include "bdre/error.hpp"

using namespace bdre;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::InvalidArgument;
}

BoundsProfile profile(double p, double q) {
    BoundsProfile b;
    b.p_bar = p;
    b.q_bar = q;
    b.lambda_bar = p * q;
    b.ratio_sup = kInf;
    return b;
}

EnvChainSpec single_state() {
    return scaled_environment({{"only", {}}}, Eigen::MatrixXd::Zero(1, 1), constant_variability());
}

}  // namespace

TEST_SUITE("convergence") {

TEST_CASE("theta") {
    CHECK(theta(2.0, 1.0, 1.0, 0.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(theta(5.0, 3.0, 0.2, 0.0) == doctest::Approx(1.0).epsilon(1e-15));
    const double t = theta(2.0, 1.0, 1.0, 0.5);
    CHECK(t > 1.0);
    CHECK(t < 2.0);
    double prev = 1.0;
    for (int k = 1; k < 100; ++k) {
        const double a = 0.0099 * k;
        const double v = theta(2.0, 1.0, 1.0, a);
        CHECK(v >= prev);
        CHECK(v <= 1.0 / (1.0 - a) + 1e-12);
        prev = v;
    }
    CHECK(code_of([] { theta(1.0, 1.0, 1.0, 0.1); }) == ErrorCode::DomainError);
    CHECK(code_of([] { theta(2.0, 1.0, 1.0, 1.0); }) == ErrorCode::DomainError);
}

TEST_CASE("g and G") {
    for (double p : {0.1, 0.25, 0.4}) {
        const double b = 4.0 * p * (1.0 - p);
        CHECK(g_pgf(1.0, p) == 1.0);
        CHECK(std::abs(g_pgf(1.0 / std::sqrt(b), p) - std::sqrt((1.0 - p) / p)) < 1e-12);
        double prev = 0.0;
        for (int k = 1; k <= 1000; ++k) {
            const double v = g_pgf(k / (1000.0 * std::sqrt(b)), p);
            CHECK(v > prev);
            prev = v;
        }
        CHECK(G_mgf(0.0, p, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
        const double us = u_star(p, 1.0).u_star;
        double gp = 1.0;
        for (int k = 1; k <= 100; ++k) {
            const double v = G_mgf(us * k / 100.0, p, 1.0);
            CHECK(v > gp);
            gp = v;
        }
    }
    CHECK(code_of([] { g_pgf(1.2, 0.3); }) == ErrorCode::DomainError);
    CHECK(code_of([] { g_pgf(0.0, 0.3); }) == ErrorCode::DomainError);
}

TEST_CASE("g against the walk's first passage") {
    // independent oracle: our own walk, E[s^tau] per s
    const double p = 0.3;
    std::mt19937_64 rng(2024);
    std::bernoulli_distribution up(p);
    std::vector<int> steps(100000);
    for (auto& st : steps) {
        int level = 1, k = 0;
        while (level > 0) {
            level += up(rng) ? 1 : -1;
            ++k;
        }
        st = k;
    }
    for (double s : {0.5, 0.8, 1.05}) {
        std::vector<double> vals;
        vals.reserve(steps.size());
        for (int st : steps) vals.push_back(std::pow(s, st));
        auto est = mean_estimate(vals);
        CHECK(std::abs(est.mean - g_pgf(s, p)) < 3.0 * est.stderr_);
    }
    auto lib = walk_first_passage_samples(p, 50000, 9);
    std::vector<double> vals;
    for (double st : lib) vals.push_back(std::pow(0.8, st));
    auto est = mean_estimate(vals);
    CHECK(std::abs(est.mean - g_pgf(0.8, p)) < 3.0 * est.stderr_);
}

TEST_CASE("u star") {
    auto r = u_star(0.25, 1.0);
    CHECK(r.u_star == doctest::Approx(1.0 - std::sqrt(0.75)).epsilon(1e-14));
    CHECK(r.u_star == doctest::Approx(0.133975).epsilon(1e-5));
    // q / (q - u*) = b^{-1/2}
    CHECK(1.0 / (1.0 - r.u_star) == doctest::Approx(1.0 / std::sqrt(0.75)).epsilon(1e-14));
    CHECK(r.G_at_u_star == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
    CHECK(r.closed_form == doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));
    CHECK(r.alternative_display == doctest::Approx(std::sqrt(0.25 * 0.75)).epsilon(1e-15));
    CHECK(u_star(0.4999999, 1.0).u_star < 1e-6);
    CHECK(u_star(0.25, 2.0).u_star == doctest::Approx(2.0 * r.u_star).epsilon(1e-14));
    CHECK(code_of([] { u_star(0.5, 1.0); }) == ErrorCode::DomainError);
}

TEST_CASE("exponential condition") {
    auto b = profile(0.25, 1.0);
    auto near0 = check_exponential_condition(b, 2.0, 1.0, 1e-6, 0.5);
    CHECK(near0.lhs == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(near0.rhs > 1.0);
    CHECK(near0.valid);
    CHECK(near0.kappa == doctest::Approx(0.5e-6));

    // at u* the left side exceeds 1; epsilon close to 1 still certifies, with tiny kappa
    const double us = u_star(0.25, 1.0).u_star;
    auto lhs_big = check_exponential_condition(b, 2.0, 1.0, us, 0.5);
    CHECK(lhs_big.lhs > 1.0);
    auto eps1 = check_exponential_condition(b, 2.0, 1.0, us, 0.999);
    CHECK(eps1.valid);
    CHECK(eps1.kappa < 1e-3 * us * 1.0001);

    auto best = best_exponential_certificate(b, 2.0, 1.0);
    CHECK(best.valid);
    CHECK(best.kappa > 0.0);
    CHECK(best.kappa == doctest::Approx((1.0 - best.epsilon) * best.u).epsilon(1e-14));
    CHECK(best.u <= us * (1 + 1e-12));
    // independent re-evaluation of the displayed inequality at the reported point
    const double lhs = G_mgf(best.u, 0.25, 1.0) * theta(2.0, 1.0, 1.0, best.u);
    const double rhs = std::pow(1.0 - std::pow(2.0, -1.0) * 0.5, -best.epsilon / (1.0 - best.epsilon));
    CHECK(lhs < rhs);

    CHECK(code_of([] { check_exponential_condition(profile(0.5, 1.0), 2.0, 1.0, 0.01, 0.5); }) ==
          ErrorCode::DomainError);

    auto grid = u_grid(0.2);
    CHECK(grid.size() == 64);
    CHECK(grid.back() == doctest::Approx(0.2));
    CHECK(grid.front() == doctest::Approx(2e-4));

    std::ostringstream out;
    write_certificate(out, best, &b);
    CHECK(out.str().find("kappa") != std::string::npos);
}

TEST_CASE("bounds profile") {
    auto m = catalog("mm1", {{"lambda", Param::env(0)}, {"mu", Param::env(1)}});
    std::vector<Point> probes{{0.3, 1.0}, {0.6, 2.0}};
    auto b = bounds_profile(m, probes, 50);
    CHECK(b.q_bar == doctest::Approx(1.3));
    CHECK(b.p_bar == doctest::Approx(3.0 / 13.0));
    CHECK(b.lambda_bar == doctest::Approx(0.6));
    CHECK(b.ratio_sup == doctest::Approx(0.3));
    CHECK(b.scenario1());
}

TEST_CASE("integrability") {
    // M/M/1, rho = 0.3, p = 0.25: 0.3 <= 1/3
    auto m = catalog("mm1", {{"lambda", Param::constant(0.3)}, {"mu", Param::constant(1.0)}});
    auto env = single_state();
    Eigen::VectorXd v = Eigen::VectorXd::Ones(1);
    auto b = profile(0.25, 1.0);
    b.ratio_sup = 0.3;
    const std::vector<double> us{0.05, 0.1};
    auto rep = check_integrability(m, env, v, us, b);
    CHECK(rep.sufficient_holds);
    CHECK(rep.ratio_limit == doctest::Approx(1.0 / 3.0));
    CHECK(rep.c_bound == doctest::Approx(std::pow(1.0 / 3.0, 1.5)).epsilon(1e-14));
    // sum (0.3 G)^n = 1 / (1 - 0.3 G)
    for (const auto& pt : rep.points) CHECK(pt.value == doctest::Approx(1.0 / (1.0 - 0.3 * pt.G)).epsilon(1e-8));

    // arrival-rate RBM, Exp(1) law: finite iff 1 - G(u)/mu > 0, value 1 / (1 - G/mu)
    DiffusiveParams p;
    p.c = {1.0};
    p.sigma = {std::sqrt(2.0)};
    auto law = stationary_law("rbm_halfline", p);
    auto ex31 = [](double mu) { return catalog("mminf", {{"lambda", Param::env(0)}, {"mu", Param::constant(mu)}}); };
    const double us0 = u_star(0.25, 1.0).u_star;
    const std::vector<double> grid{0.0, 0.5 * us0, us0};
    auto ok = check_integrability(ex31(2.0), law, grid, b);
    CHECK(ok.series_finite);
    CHECK(ok.points[0].value == doctest::Approx(2.0).epsilon(1e-6));
    for (const auto& pt : ok.points) CHECK(pt.value == doctest::Approx(1.0 / (1.0 - pt.G / 2.0)).epsilon(1e-6));

    // mu = 1.5: G(u*) = sqrt(3) > 1.5 fails, G(0) = 1 does not
    auto bad = b;
    bad.ratio_sup = kInf;
    const double u_fail = grid[2];
    REQUIRE(G_mgf(u_fail, 0.25, 1.0) > 1.5);
    CHECK(code_of([&] { check_integrability(ex31(1.5), law, grid, bad); }) == ErrorCode::Divergence);
    const std::vector<double> zero{0.0};
    CHECK(check_integrability(ex31(1.5), law, zero, bad).points[0].value == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("busy period MGF") {
    BusyPeriodConfig cfg;
    cfg.replicas = 50000;
    cfg.seed = 1;
    auto samples = busy_period_samples(1.0, 2.0, cfg);
    auto at0 = busy_period_mgf(samples, 1.0, 2.0, 0.0);
    CHECK(at0.estimate == 1.0);
    CHECK(at0.stderr_ == 0.0);
    double prev = 1.0;
    for (double u : {0.05, 0.1, 0.2, 0.3}) {
        auto e = busy_period_mgf(samples, 1.0, 2.0, u);
        CHECK(e.estimate >= prev);
        prev = e.estimate;
    }
    auto a = busy_period_mgf(1.0, 2.0, 0.1, cfg);
    cfg.seed = 2;
    auto c = busy_period_mgf(1.0, 2.0, 0.1, cfg);
    CHECK(std::abs(a.estimate - c.estimate) < 3.0 * std::hypot(a.stderr_, c.stderr_));

    // mean busy period (e^{rho} - 1)/lambda: derivative of the series at 0
    const double h = 1e-5;
    const double slope = (busy_period_mgf_series(1.0, 2.0, h) - 1.0) / h;
    CHECK(slope == doctest::Approx(std::exp(0.5) - 1.0).epsilon(1e-3));
    cfg.series = true;
    auto s = busy_period_mgf(1.0, 2.0, 0.3, cfg);
    CHECK(s.series_agrees);
    CHECK(std::abs(s.series - s.estimate) < 3.0 * s.stderr_);
    CHECK(busy_period_mgf_series(1.0, 2.0, 0.0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(code_of([] { busy_period_mgf_series(1.0, 1.0, 0.5); }) == ErrorCode::DivergenceSuspected);
}

TEST_CASE("environment coupling fit") {
    std::mt19937_64 rng(5);
    std::exponential_distribution<double> e2(2.0);
    std::vector<double> times(20000);
    for (auto& t : times) t = e2(rng);
    auto fit = fit_env_coupling(times);
    CHECK(fit.gamma == doctest::Approx(2.0).epsilon(0.1));
    CHECK(fit.alpha > 1.0);
    CHECK(fit.alpha < 1.5);

    // swap chain with rate 1 from different states: first jump of either copy meets, Exp(2)
    Eigen::MatrixXd T(2, 2);
    T << -1, 1, 1, -1;
    auto env = scaled_environment({{"a", {}}, {"b", {}}}, T, constant_variability());
    CouplingConfig cc;
    cc.replicas = 20000;
    auto meet = env_coupling_times_jump(env, 0, cc);
    auto est = mean_estimate(meet);
    CHECK(std::abs(est.mean - 0.5) < 3.0 * est.stderr_);

    DiffusiveParams p;
    p.c = {1.0};
    p.sigma = {1.0};
    auto ex = diffusive_example("rbm_halfline", p);
    cc.replicas = 500;
    cc.dt = 1e-3;
    std::size_t censored = 0;
    auto mirror = env_coupling_times_mirror(ex.spec, 0.0, 2.0, cc, &censored);
    CHECK(censored == 0);
    for (double t : mirror) CHECK(t > 0.0);
}

TEST_CASE("coupling the joint chain") {
    auto m = catalog("mm1", {{"lambda", Param::constant(1.0)}, {"mu", Param::constant(2.0)}});
    auto env = single_state();
    CouplingConfig cc;
    cc.replicas = 200;
    auto same = couple_exponential(m, env, 3, 0, 3, 0, cc);
    for (double t : same.times) CHECK(t == 0.0);

    // oracle: two independent M/M/1 copies simulated here until they share a level
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> unif;
    std::vector<double> oracle(20000);
    for (auto& out : oracle) {
        int n1 = 0, n2 = 4;
        double t = 0.0;
        while (n1 != n2) {
            const double r1 = 1.0 + (n1 > 0 ? 2.0 : 0.0), r2 = 1.0 + (n2 > 0 ? 2.0 : 0.0);
            t += std::exponential_distribution<double>(r1 + r2)(rng);
            double x = unif(rng) * (r1 + r2);
            if (x < r1) {
                n1 += x < 1.0 ? 1 : -1;
            } else {
                x -= r1;
                n2 += x < 1.0 ? 1 : -1;
            }
        }
        out = t;
    }
    cc.replicas = 20000;
    cc.seed = 8;
    auto lib = couple_exponential(m, env, 0, 0, 4, 0, cc);
    auto a = mean_estimate(oracle);
    CHECK(lib.censored == 0);
    CHECK(std::abs(lib.mean.mean - a.mean) < 3.0 * std::hypot(lib.mean.stderr_, a.stderr_));

    std::ostringstream csv;
    write_coupling_tail_csv(csv, lib.times, lib.censored, 0.1);
    CHECK(csv.str().rfind("t,survival,bound", 0) == 0);
}

TEST_CASE("domination") {
    auto m = catalog("mm1", {{"lambda", Param::env(0)}, {"mu", Param::env(1)}});
    std::vector<Point> probes{{0.3, 1.0}, {0.6, 2.0}};
    auto b = bounds_profile(m, probes, 50);
    auto walk = check_walk_domination(m, probes, b.p_bar, 10000, 3);
    CHECK(walk.excursions == 10000);
    CHECK(walk.violations == 0);

    auto inf = catalog("mminf", {{"lambda", Param::env(0)}, {"mu", Param::constant(1.0)}});
    std::vector<Point> lp{{1.0}, {2.0}};
    auto rep = check_mminf_domination(inf, lp, 2.0, 1.0, 10000, 4);
    CHECK(rep.violations == 0);
}

TEST_CASE("Lyapunov certificates") {
    auto lin = [](std::size_t n) { return static_cast<double>(n); };
    auto c = lyapunov_certificate([](std::size_t) { return 1.0; }, [](std::size_t) { return 3.0; }, lin, 100);
    CHECK(c.c_v == doctest::Approx(2.0));
    CHECK(c.valid);

    auto r52 = lyapunov_certificate([](std::size_t) { return 1.0; },
                                    [](std::size_t n) { return 1.0 + std::sqrt(static_cast<double>(n)); }, lin, 200);
    CHECK(r52.c_v == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(r52.c_v_at == 1);

    CHECK(code_of([&] {
              lyapunov_certificate([](std::size_t) { return 1.0; }, [](std::size_t) { return 3.0; },
                                   [](std::size_t) { return 0.0; }, 50);
          }) == ErrorCode::NotLyapunov);
    CHECK(code_of([&] {
              lyapunov_certificate([](std::size_t) { return 1.0; }, [](std::size_t) { return 3.0; },
                                   [](std::size_t n) { return n + 1.0; }, 50);
          }) == ErrorCode::InvalidArgument);
}

TEST_CASE("hitting bounds") {
    auto lin = [](std::size_t n) { return static_cast<double>(n); };
    auto lam = [](std::size_t) { return 1.0; };
    auto mu = [](std::size_t) { return 2.0; };
    HittingConfig cfg;
    cfg.replicas = 10000;
    cfg.seed = 12;
    const std::vector<std::size_t> starts{0, 1, 2, 5, 10};
    auto rows = hitting_bound_check(lam, mu, lin, 1.0, starts, cfg);
    for (const auto& r : rows) {
        CHECK(r.bound == doctest::Approx(static_cast<double>(r.n)));
        if (r.n == 0) {
            CHECK(r.mean == 0.0);
        } else {
            CHECK(std::abs(r.mean - static_cast<double>(r.n)) < 3.0 * r.stderr_);
        }
        CHECK(r.ok);
    }

    auto sq = [](std::size_t n) { return 1.0 + std::sqrt(static_cast<double>(n)); };
    const std::vector<std::size_t> five{5};
    auto r52 = hitting_bound_check(lam, sq, lin, 1.0, five, cfg);
    CHECK(r52[0].mean <= 5.0 + 3.0 * r52[0].stderr_);

    // M/M/1 with rho = 1/2: E N = 1
    CHECK(stationary_mean_v(lam, mu, lin) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("TV decay") {
    auto m = catalog("mm1", {{"lambda", Param::constant(1.0)}, {"mu", Param::constant(2.0)}});
    auto env = single_state();
    std::vector<double> grid;
    for (int k = 0; k < 25; ++k) grid.push_back(0.5 * std::pow(1.2, k));
    DecayConfig cfg;
    cfg.replicas = 4000;
    cfg.n_cap = 30;
    auto curve = tv_decay_polynomial(m, env, 10, 0, grid, cfg, 1.0, 1.0, 10.0);
    REQUIRE(curve.tv.size() == grid.size());
    CHECK(curve.tv.back() < curve.tv.front());
    CHECK(curve.tv.back() < 3.0 * curve.noise_floor + 0.01);
    CHECK(curve.bound.front() == doctest::Approx(2.0 * (1.0 + 10.0) / grid.front()));
    std::ostringstream csv;
    write_decay_csv(csv, curve);
    CHECK(csv.str().rfind("t,tv,bound", 0) == 0);
}

TEST_CASE("theta tail bounds") {
    auto r = theta_bound_check(2.0, 1.0, 1.0, 0.5, 200000, 17);
    CHECK(r.p_bound == doctest::Approx(std::pow(2.0, -1.0) * 0.5));
    CHECK(r.theta_value == doctest::Approx(theta(2.0, 1.0, 1.0, 0.5)));
    CHECK(r.p_ok);
    CHECK(r.mgf_ok);
    CHECK(r.p_estimate >= r.p_bound - 3.0 * r.p_stderr);
    CHECK(r.mgf_estimate <= r.theta_value + 3.0 * r.mgf_stderr);

    // own construction: xi ~ Exp(beta), P(eta > u) = min(1, alpha e^{-gamma u})
    for (double alpha : {1.5, 3.0}) {
        const double beta = 1.0, gamma = 0.7, a = 0.4;
        std::mt19937_64 rng(99);
        std::exponential_distribution<double> ex(beta), ey(gamma);
        std::vector<double> hit, mgf;
        for (int k = 0; k < 200000; ++k) {
            const double xi = ex(rng), eta = std::log(alpha) / gamma + ey(rng);
            hit.push_back(eta < xi ? 1.0 : 0.0);
            mgf.push_back(std::exp(a * std::min(xi, eta)));
        }
        auto ph = mean_estimate(hit);
        auto pm = mean_estimate(mgf);
        CHECK(ph.mean >= std::pow(alpha, -beta / gamma) * gamma / (beta + gamma) - 3.0 * ph.stderr_);
        CHECK(pm.mean <= theta(alpha, beta, gamma, a) + 3.0 * pm.stderr_);
    }
}

}
