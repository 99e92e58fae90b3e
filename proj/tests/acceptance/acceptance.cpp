// One PASS/FAIL line per acceptance criterion. Exit status 0 iff all pass.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bdre/commands.hpp"
#include "bdre/config.hpp"
#include "bdre/convergence.hpp"
#include "bdre/error.hpp"
#include "bdre/joint_sim.hpp"

using namespace bdre;
namespace fs = std::filesystem;

namespace {

fs::path config_dir = BDRE_CONFIG_DIR;
std::size_t threads = 1;

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string fmt(double x, int digits = 6) {
    std::ostringstream s;
    s.precision(digits);
    s << x;
    return s.str();
}

RunConfig fixture(const std::string& name) { return load_config(config_dir / (name + ".json")); }

// 1: balance of the product-form measure for the catalog with T_n = 0.9^n T
Outcome product_form() {
    Eigen::MatrixXd T(2, 2);
    T << -1.0, 1.0, 2.0, -2.0;
    struct Case {
        const char* name;
        ParamMap params;
        std::vector<Point> coords;
    };
    const std::vector<Case> cases{
        {"mm1", {{"lambda", Param::env(0)}, {"mu", Param::env(1)}}, {{0.3, 1.0}, {0.6, 2.0}}},
        {"mminf", {{"lambda", Param::env(0)}, {"mu", Param::constant(1.0)}}, {{1.0}, {2.0}}},
        {"mmk", {{"K", Param::constant(2)}, {"lambda", Param::env(0)}, {"mu", Param::constant(1.0)}}, {{1.0}, {1.5}}},
        {"mmk0", {{"K", Param::constant(3)}, {"lambda", Param::env(0)}, {"mu", Param::constant(1.0)}}, {{1.0}, {2.5}}},
        {"mmk_plus_m",
         {{"K", Param::constant(2)}, {"lambda", Param::env(0)}, {"mu", Param::constant(1.0)}, {"gamma", Param::constant(0.5)}},
         {{1.0}, {3.0}}},
        {"linear_growth",
         {{"lambda", Param::env(0)}, {"theta", Param::constant(1.0)}, {"mu", Param::constant(3.0)}},
         {{0.5}, {1.0}}},
    };
    Outcome out{true, ""};
    for (const auto& c : cases) {
        const ModelSpec model = catalog(c.name, c.params);
        const EnvChainSpec env =
            scaled_environment({{"a", c.coords[0]}, {"b", c.coords[1]}}, T, geometric_variability(0.9));
        const JointGeneratorMatrix gen = build_joint_generator(model, env, 200);
        const InvariantMeasureJump pi = invariant_measure_jump(model, env, 200);
        const double r = verify_balance(gen, pi);
        out.passed = out.passed && r < 1e-9;
        out.detail += std::string(out.detail.empty() ? "" : ", ") + c.name + " " + fmt(r, 2);
    }
    return out;
}

// 2: Gillespie occupancy against pi
Outcome jump_simulation() {
    const RunConfig cfg = fixture("mm1_two_state");
    const ModelSpec model = cfg.build_model();
    const EnvChainSpec env = cfg.build_jump_env();
    JumpSimConfig jc;
    jc.horizon = cfg.sim.horizon;
    jc.burn_in = cfg.sim.burn_in;
    jc.occupancy_n_cap = cfg.sim.n_cap;
    Rng rng = replica_rng(*cfg.sim.seed, 0);
    const JumpPath path = simulate_jump_joint(model, env, 0, 0, jc, rng);
    const InvariantMeasureJump pi = invariant_measure_jump(model, env, cfg.analysis.n_max);
    const double tv = tv_distance(path.occupancy_measure().masses, pi.cells(cfg.sim.n_cap));
    return {tv <= 0.02 && path.event_count >= 1000000,
            "TV " + fmt(tv, 4) + " <= 0.02 over " + std::to_string(path.event_count) + " events"};
}

// 3: RBM and reflected OU empirical CDFs
double empirical_sup(const DiffusiveExample& ex, std::uint64_t seed) {
    HistogramCdf hist(ex.law.lower[0], ex.law.lower[0] + 15.0, 3000);
    Rng rng = replica_rng(seed, 0);
    run_environment(ex.spec, {ex.law.lower[0]}, 1e-3, 1e4, rng, [&](double t, EnvPoint z) {
        if (t > 1e3) hist.add(z[0]);
    });
    return hist.sup_distance([&](double x) { return ex.law.marginal_cdf(0, x); });
}

Outcome diffusive_laws() {
    DiffusiveParams p;
    p.c = {1.0};
    p.sigma = {std::sqrt(2.0)};
    const double rbm = empirical_sup(diffusive_example("rbm_halfline", p), 31);
    const double ou = empirical_sup(diffusive_example("reflected_ou", p), 32);
    return {rbm <= 0.02 && ou <= 0.02, "RBM sup " + fmt(rbm, 4) + ", reflected OU sup " + fmt(ou, 4) + " (<= 0.02)"};
}

// 4: Xi closed form, quadrature, divergence boundary
Outcome xi_check() {
    DiffusiveParams p;
    p.c = {1.0};
    p.sigma = {std::sqrt(2.0)};
    const StationaryLawDiffusive law = stationary_law("rbm_halfline", p);
    auto model = [](double mu) { return catalog("mminf", {{"lambda", Param::env(0)}, {"mu", Param::constant(mu)}}); };
    const double closed = xi_rbm_arrival_closed_form(1.0, std::sqrt(2.0), 2.0);
    const double quad = compute_xi_diffusive(model(2.0), law).xi;
    const double rel = std::abs(quad - closed) / closed;
    bool boundary_ok = true;
    // 2c/sigma^2 = 1: divergent iff mu <= 1
    for (double mu : {0.5, 0.9, 1.0, 1.1, 1.5, 2.0, 5.0}) {
        bool diverged = false;
        double value = 0.0;
        try {
            value = compute_xi_diffusive(model(mu), law).xi;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::XiDivergent) throw;
            diverged = true;
        }
        const bool expect = 1.0 - 1.0 / mu <= 0.0;
        boundary_ok = boundary_ok && diverged == expect;
        if (!diverged && !expect) boundary_ok = boundary_ok && std::abs(value / (1.0 / (1.0 - 1.0 / mu)) - 1.0) < 1e-6;
    }
    return {std::abs(closed - 2.0) < 1e-12 && rel < 1e-6 && boundary_ok,
            "closed form " + fmt(closed, 17) + ", quadrature rel err " + fmt(rel, 2) + ", divergence boundary " +
                (boundary_ok ? "exact" : "wrong")};
}

// 5: M/M/inf driven by an RBM arrival rate, occupancy against pi({n}, dz)
Outcome joint_diffusive() {
    const RunConfig cfg = fixture("mminf_rbm");
    const ModelSpec model = cfg.build_model();
    const DiffusiveExample ex = cfg.build_diffusive();
    const ZBinning bins = ZBinning::from_law(ex.law, cfg.analysis.bins);
    DiffusiveSimConfig sc;
    sc.dt = cfg.sim.dt;
    sc.horizon = cfg.sim.horizon;
    sc.burn_in = cfg.sim.burn_in;
    sc.speed_cap = cfg.sim.speed_cap;
    sc.max_substeps = cfg.sim.max_substeps;
    sc.n_cap = cfg.sim.n_cap;
    const JointState init{cfg.sim.n0, ex.law.lower, 0.0};
    const DiffusiveRun run =
        simulate_joint_diffusive_replicas(model, ex.spec, bins, sc, init, cfg.sim.replicas, threads, *cfg.sim.seed);
    const InvariantMeasureDiffusive pi = invariant_measure_diffusive(model, ex.law, cfg.analysis.n_max);
    const double tv = tv_distance(run.occupancy_measure().masses, pi.cells(model, bins, sc.n_cap));
    const double steps = sc.horizon / sc.dt;
    return {tv <= 0.03, "TV " + fmt(tv, 4) + " <= 0.03, " + fmt(steps, 3) + " steps x " +
                            std::to_string(cfg.sim.replicas) + " replicas, " + std::to_string(bins.cells()) + " z-bins"};
}

// 6: g, theta and the tail bounds behind theta
Outcome auxiliary() {
    bool ok = true;
    std::string detail;
    for (double p : {0.1, 0.25, 0.4}) {
        const double b = 4.0 * p * (1.0 - p);
        ok = ok && g_pgf(1.0, p) == 1.0;
        const double err = std::abs(g_pgf(1.0 / std::sqrt(b), p) - std::sqrt((1.0 - p) / p));
        ok = ok && err < 1e-12;
    }
    detail += "g(1) = 1 and g(b^-1/2) to 1e-12: " + std::string(ok ? "yes" : "no");

    const double p = 0.3;
    std::mt19937_64 rng(606);
    std::bernoulli_distribution up(p);
    std::vector<double> steps(200000);
    for (auto& st : steps) {
        long level = 1, k = 0;
        while (level > 0) {
            level += up(rng) ? 1 : -1;
            ++k;
        }
        st = static_cast<double>(k);
    }
    double worst = 0.0;
    for (double s : {0.5, 0.8, 1.05}) {
        std::vector<double> v(steps.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::pow(s, steps[i]);
        const MeanEstimate est = mean_estimate(v);
        worst = std::max(worst, std::abs(est.mean - g_pgf(s, p)) / est.stderr_);
    }
    ok = ok && worst < 3.0;
    detail += "; walk PGF worst z " + fmt(worst, 3);

    bool theta0 = true;
    for (double a : {1.5, 2.0, 10.0})
        for (double be : {0.5, 1.0, 3.0}) theta0 = theta0 && std::abs(theta(a, be, 0.7, 0.0) - 1.0) < 1e-15;
    ok = ok && theta0;

    bool bounds = true;
    for (double alpha : {1.5, 2.0, 4.0}) {
        const ThetaBoundCheck r = theta_bound_check(alpha, 1.0, 0.8, 0.5, 200000, 600 + static_cast<std::uint64_t>(alpha * 10));
        bounds = bounds && r.p_ok && r.mgf_ok;
    }
    ok = ok && bounds;
    detail += std::string("; theta(.,0) = 1: ") + (theta0 ? "yes" : "no") + "; theta tail bounds: " + (bounds ? "hold" : "fail");
    return {ok, detail};
}

// 7: exponential rate for M/M/1 with rho = 0.3
Outcome exponential_rate() {
    const RunConfig cfg = fixture("mm1_two_state");
    const ModelSpec model = cfg.build_model();
    const EnvChainSpec env = cfg.build_jump_env();
    std::vector<Point> probes;
    for (const auto& s : env.states) probes.push_back(s.coords);
    const BoundsProfile profile = bounds_profile(model, probes, cfg.analysis.rates.probe_n_max);
    CouplingConfig cc;
    cc.replicas = cfg.analysis.rates.env_coupling_replicas;
    cc.threads = threads;
    cc.seed = 71;
    std::size_t censored = 0;
    const auto env_times = env_coupling_times_jump(env, 0, cc, &censored);
    const EnvCouplingFit fit = fit_env_coupling(env_times, censored);
    const RateCertificate cert = best_exponential_certificate(profile, fit.alpha, fit.gamma);
    // re-evaluate the condition from its parts
    const double lhs = G_mgf(cert.u, profile.p_bar, profile.q_bar) * theta(fit.alpha, profile.q_bar, fit.gamma, cert.u);
    const double rhs = std::pow(1.0 - std::pow(fit.alpha, -profile.q_bar / fit.gamma) * fit.gamma / (profile.q_bar + fit.gamma),
                                -cert.epsilon / (1.0 - cert.epsilon));
    CouplingConfig joint = cc;
    joint.replicas = 10000;
    joint.seed = 72;
    const CouplingResult cr = couple_exponential(model, env, 0, 0, cfg.analysis.rates.start_n, env.size() - 1, joint,
                                                 cert.kappa, 0.1);
    const bool ok = cert.valid && cert.kappa > 0.0 && lhs < rhs && cr.censored == 0 && cr.times.size() == 10000 &&
                    cr.tail.slope <= -cert.kappa * 0.9;
    return {ok, "p_bar " + fmt(profile.p_bar, 4) + ", alpha " + fmt(fit.alpha, 4) + ", gamma " + fmt(fit.gamma, 4) +
                    ", kappa " + fmt(cert.kappa, 4) + " (u " + fmt(cert.u, 4) + ", eps " + fmt(cert.epsilon, 3) +
                    "), tail slope " + fmt(cr.tail.slope, 4) + " <= " + fmt(-cert.kappa * 0.9, 4)};
}

// 8: pathwise domination and the hitting-time table
Outcome domination() {
    const RunConfig s1 = fixture("mm1_two_state");
    const ModelSpec m1 = s1.build_model();
    std::vector<Point> p1;
    for (const auto& s : s1.build_jump_env().states) p1.push_back(s.coords);
    const BoundsProfile b1 = bounds_profile(m1, p1, 200);
    const DominationReport walk = check_walk_domination(m1, p1, b1.p_bar, 10000, 81, 100000000);

    const RunConfig s2 = fixture("mminf_scenario2");
    const ModelSpec m2 = s2.build_model();
    std::vector<Point> p2;
    for (const auto& s : s2.build_jump_env().states) p2.push_back(s.coords);
    const BoundsProfile b2 = bounds_profile(m2, p2, 200);
    const DominationReport inf = check_mminf_domination(m2, p2, b2.lambda_bar, b2.mu_linear, 10000, 82);

    HittingConfig hc;
    hc.replicas = 10000;
    hc.threads = threads;
    hc.seed = 83;
    const std::vector<std::size_t> starts{1, 2, 5, 10};
    const auto rows = hitting_bound_table([](std::size_t) { return 1.0; }, [](std::size_t) { return 2.0; },
                                          [](std::size_t n) { return static_cast<double>(n); }, 1.0, starts, hc);
    bool table_ok = true;
    std::string table;
    for (const auto& r : rows) {
        table_ok = table_ok && r.mean <= r.bound + 3.0 * r.stderr_ && std::abs(r.mean - r.bound) <= 3.0 * r.stderr_;
        table += " " + std::to_string(r.n) + ":" + fmt(r.mean, 4) + "+-" + fmt(r.stderr_, 2);
    }
    const bool ok = walk.excursions == 10000 && walk.violations == 0 && inf.excursions == 10000 &&
                    inf.violations == 0 && table_ok;
    return {ok, "walk " + std::to_string(walk.violations) + "/" + std::to_string(walk.excursions) + ", M/M/inf " +
                    std::to_string(inf.violations) + "/" + std::to_string(inf.excursions) + " violations; E tau vs n:" +
                    table};
}

// 9: polynomial decay for the square-root service model
Outcome polynomial_decay() {
    const RunConfig cfg = fixture("sqrt_service");
    const auto& rt = cfg.analysis.rates;
    const ModelSpec model = cfg.build_model();
    const EnvChainSpec env = cfg.build_jump_env();
    std::vector<Point> probes;
    for (const auto& s : env.states) probes.push_back(s.coords);
    LevelFn lambda_bar = [&](std::size_t n) {
        double v = 0.0;
        for (const auto& z : probes) v = std::max(v, model.birth(n, z));
        return v;
    };
    LevelFn mu_bar = [&](std::size_t n) {
        double v = kInf;
        for (const auto& z : probes) v = std::min(v, model.death(n, z));
        return v;
    };
    LevelFn V = [](std::size_t n) { return static_cast<double>(n); };
    const RateCertificate cert = lyapunov_certificate(lambda_bar, mu_bar, V, rt.probe_n_max);
    std::vector<double> grid(rt.decay_points);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const double f = static_cast<double>(k) / static_cast<double>(grid.size() - 1);
        grid[k] = std::exp(std::log(rt.decay_t_min) + f * (std::log(rt.decay_t_max) - std::log(rt.decay_t_min)));
    }
    grid.front() = rt.decay_t_min;
    grid.back() = rt.decay_t_max;
    DecayConfig dc;
    dc.replicas = rt.decay_replicas;
    dc.threads = threads;
    dc.seed = 91;
    dc.n_cap = rt.decay_n_cap;
    dc.rate_cap = cfg.sim.rate_cap;
    const DecayCurve curve = tv_decay_polynomial(model, env, rt.start_n, 0, grid, dc, cert.c_v,
                                                 stationary_mean_v(lambda_bar, mu_bar, V), V(rt.start_n));
    const bool ok = curve.fitted && curve.exponent >= 0.8 && dc.replicas >= 10000 && grid.front() == 10.0 &&
                    grid.back() == 1000.0;
    return {ok, "C_V " + fmt(cert.c_v) + ", fitted exponent " + fmt(curve.exponent, 4) + " >= 0.8 over " +
                    std::to_string(curve.fit.points) + " of " + std::to_string(grid.size()) + " t values, " +
                    std::to_string(dc.replicas) + " replicas"};
}

// 10: every command twice, second run with more threads; CSVs must match byte for byte
std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "bdre_acceptance_determinism";
    fs::remove_all(root);
    struct Job {
        const char* command;
        const char* config;
    };
    const std::vector<Job> jobs{{"invariant", "mm1_two_state"}, {"verify", "mm1_two_state"},
                                {"simulate", "mm1_two_state"},  {"rates", "mm1_two_state"},
                                {"invariant", "mminf_rbm"},     {"rates", "sqrt_service"},
                                {"rates", "mminf_scenario2"}};
    std::size_t compared = 0;
    std::string mismatch;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        std::vector<fs::path> dirs;
        std::vector<CommandResult> results;
        for (std::size_t rep = 0; rep < 2; ++rep) {
            CommandOptions opt;
            opt.out_dir = root / (std::to_string(j) + "_" + std::to_string(rep));
            opt.threads = rep == 0 ? 1 : 3;
            results.push_back(run_command(jobs[j].command, fixture(jobs[j].config), opt));
            dirs.push_back(*opt.out_dir);
        }
        for (const auto& f : results[0].files) {
            if (fs::path(f).extension() != ".csv") continue;
            ++compared;
            if (slurp(dirs[0] / f) != slurp(dirs[1] / f)) mismatch += " " + std::string(jobs[j].command) + "/" + f;
        }
    }
    fs::remove_all(root);
    return {mismatch.empty() && compared > 0,
            std::to_string(compared) + " CSV files compared across reruns" + (mismatch.empty() ? "" : ", differ:" + mismatch)};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc > 1) config_dir = argv[1];
    struct Criterion {
        int id;
        const char* name;
        double limit_s;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "product-form stationarity", 10, product_form},
        {2, "jump simulation vs pi", 60, jump_simulation},
        {3, "diffusive stationary laws", 240, diffusive_laws},
        {4, "Xi closed form vs quadrature", 1, xi_check},
        {5, "joint diffusive invariant measure", 300, joint_diffusive},
        {6, "auxiliary functions", 60, auxiliary},
        {7, "exponential-rate certificate", 300, exponential_rate},
        {8, "domination and hitting bounds", 120, domination},
        {9, "polynomial decay", 600, polynomial_decay},
        {10, "determinism", 600, determinism},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs <= c.limit_s;
        const bool pass = o.passed && in_time;
        failed += pass ? 0 : 1;
        std::printf("%s [%d] %s: %s (%.1f s, limit %.0f s%s)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                    secs, c.limit_s, in_time ? "" : ", too slow");
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
