#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "bdre/error.hpp"
#include "bdre/joint_sim.hpp"

using namespace bdre;

namespace {

std::vector<double> n_marginal(const DiffusiveRun& run) {
    const std::size_t nb = run.bins.cells();
    auto m = run.occupancy_measure();
    std::vector<double> out(run.n_cap + 2, 0.0);
    for (std::size_t n = 0; n <= run.n_cap; ++n)
        for (std::size_t b = 0; b < nb; ++b) out[n] += m.masses[n * nb + b];
    out.back() = m.masses.back();
    return out;
}

const Target at_zero = [](std::size_t n, EnvPoint) { return n == 0; };

}  // namespace

TEST_SUITE("joint_sim") {

TEST_CASE("no arrivals: all occupancy at n = 0") {
    auto model = catalog("mm1", {{"lambda", Param::constant(0.0)}, {"mu", Param::constant(1.0)}});
    auto spec = rbm_spec(DomainSpec::half_line(), {-1.0}, Eigen::MatrixXd::Constant(1, 1, 1.0));
    ZBinning bins{{0.0}, {5.0}, {10}};
    DiffusiveSimConfig cfg;
    cfg.horizon = 50;
    cfg.burn_in = 1;
    cfg.n_cap = 4;
    auto rng = replica_rng(1, 0);
    auto run = simulate_joint_diffusive(model, spec, bins, cfg, JointState{0, {0.5}, 0.0}, rng);
    auto marg = n_marginal(run);
    CHECK(marg[0] + run.occupancy_measure().masses.back() == doctest::Approx(1.0).epsilon(1e-12));
    double sum = 0.0;
    for (double m : run.occupancy_measure().masses) sum += m;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("frozen environment reproduces the fixed-z weights") {
    // beta_n = 0.4^n makes the speed beta_n / r_n(z0) = 1 at z0 = 0.4
    auto model = catalog("mm1", {{"lambda", Param::env(0)}, {"mu", Param::constant(1.0)}}, geometric_variability(0.4));
    auto spec = rbm_spec(DomainSpec::half_line(), {0.0}, Eigen::MatrixXd::Zero(1, 1));
    ZBinning bins{{0.0}, {1.0}, {4}};
    DiffusiveSimConfig cfg;
    cfg.horizon = 3000;
    cfg.burn_in = 10;
    cfg.n_cap = 20;
    auto rng = replica_rng(3, 0);
    const Point z0{0.4};
    auto run = simulate_joint_diffusive(model, spec, bins, cfg, JointState{0, z0, 0.0}, rng);
    auto marg = n_marginal(run);
    auto kappa = normalized_weights(model, z0, 200).kappa;
    std::vector<double> expected(marg.size(), 0.0);
    double tail = 1.0;
    for (std::size_t n = 0; n <= 20; ++n) {
        expected[n] = kappa[n];
        tail -= kappa[n];
    }
    expected.back() = tail;
    CHECK(tv_distance(marg, expected) < 0.02);
    CHECK(run.final_state.z[0] == 0.4);
}

TEST_CASE("step guard") {
    auto model = catalog("mm1", {{"lambda", Param::constant(200.0)}, {"mu", Param::constant(500.0)}});
    auto spec = rbm_spec(DomainSpec::half_line(), {-1.0}, Eigen::MatrixXd::Constant(1, 1, 1.0));
    DiffusiveSimConfig cfg;
    DiffusiveStepper stepper(model, spec, cfg);
    JointState s{0, {0.5}, 0.0};
    auto rng = replica_rng(1, 0);
    try {
        stepper.advance(s, rng);
        FAIL("expected RateTooLargeForStep");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::RateTooLargeForStep);
    }
    DiffusiveSimConfig bad;
    bad.burn_in = 200;
    bad.horizon = 100;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("variable-domain projection") {
    auto domain = DomainSpec::variable_half_line([](std::size_t n) { return 0.5 + static_cast<double>(n); });
    Point z{1.2};
    project_to_domain(domain, z, 0);
    CHECK(z[0] == 1.2);
    project_to_domain(domain, z, 3);
    CHECK(z[0] == 3.5);
}

TEST_CASE("hitting times") {
    auto mm1 = catalog("mm1", {{"lambda", Param::constant(1.0)}, {"mu", Param::constant(2.0)}});
    HittingConfig cfg;
    cfg.replicas = 20000;
    cfg.seed = 5;
    // busy period mean 1 / (mu - lambda)
    auto h = hitting_time_bd(mm1, {}, 1, at_zero, cfg);
    CHECK(h.censored == 0);
    CHECK(std::abs(h.mean.mean - 1.0) < 3.0 * h.mean.stderr_);

    auto h0 = hitting_time_bd(mm1, {}, 0, at_zero, cfg);
    CHECK(h0.mean.mean == 0.0);

    // M/M/inf busy period mean (e^rho - 1) / lambda
    auto mminf = catalog("mminf", {{"lambda", Param::constant(1.0)}, {"mu", Param::constant(1.0)}});
    auto hi = hitting_time_bd(mminf, {}, 1, at_zero, cfg);
    CHECK(std::abs(hi.mean.mean - (std::exp(1.0) - 1.0)) < 3.0 * hi.mean.stderr_);
    std::vector<double> moments;
    for (double t : hi.times) moments.push_back(std::exp(0.1 * t));
    CHECK(std::isfinite(mean_estimate(moments).mean));

    auto single = scaled_environment({{"only", {}}}, Eigen::MatrixXd::Zero(1, 1), constant_variability());
    auto hj = hitting_time_jump(mm1, single, 1, 0, at_zero, cfg);
    CHECK(std::abs(hj.mean.mean - 1.0) < 3.0 * hj.mean.stderr_);

    HittingConfig tiny = cfg;
    tiny.horizon = 1e-9;
    tiny.replicas = 10;
    CHECK_THROWS_AS(hitting_time_bd(mm1, {}, 5, at_zero, tiny), Error);
}

TEST_CASE("replicas do not depend on the thread count") {
    auto model = catalog("mminf", {{"lambda", Param::env(0)}, {"mu", Param::constant(2.0)}}, geometric_variability(0.5));
    DiffusiveParams p;
    p.c = {1.0};
    p.sigma = {std::sqrt(2.0)};
    auto ex = diffusive_example("rbm_halfline", p);
    auto bins = ZBinning::from_law(ex.law, 16);
    DiffusiveSimConfig cfg;
    cfg.horizon = 20;
    cfg.burn_in = 1;
    cfg.n_cap = 8;
    cfg.speed_cap = 1e300;
    cfg.max_substeps = 100000000;
    JointState init{0, {1.0}, 0.0};
    auto one = simulate_joint_diffusive_replicas(model, ex.spec, bins, cfg, init, 4, 1, 77);
    auto two = simulate_joint_diffusive_replicas(model, ex.spec, bins, cfg, init, 4, 3, 77);
    CHECK(one.occupancy == two.occupancy);
    std::ostringstream a, b;
    write_occupancy_csv(a, one);
    write_occupancy_csv(b, two);
    CHECK(a.str() == b.str());
    auto other = simulate_joint_diffusive_replicas(model, ex.spec, bins, cfg, init, 4, 1, 78);
    CHECK(one.occupancy != other.occupancy);
}

}
