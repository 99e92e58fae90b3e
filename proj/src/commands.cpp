#include "bdre/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "bdre/convergence.hpp"
#include "bdre/error.hpp"
#include "bdre/joint_sim.hpp"

namespace bdre {

namespace {

std::string num(double x, int precision = 10) {
    std::ostringstream s;
    s.precision(precision);
    s << x;
    return s.str();
}

// Everything a command writes goes through here so the manifest can list it.
class Run {
public:
    Run(std::string command, const RunConfig& cfg, const CommandOptions& opt) : cfg_(cfg) {
        result_.command = std::move(command);
        result_.out_dir = opt.out_dir.value_or(std::filesystem::path(cfg.output.dir));
        result_.seed = cfg.sim.seed.value_or(1);
        threads_ = std::max<std::size_t>(1, opt.threads);
        std::filesystem::create_directories(result_.out_dir);
    }

    const RunConfig& cfg() const { return cfg_; }
    std::uint64_t seed() const { return result_.seed; }
    std::uint64_t seed(std::uint64_t stage) const { return result_.seed * 1000003ull + stage; }
    std::size_t threads() const { return threads_; }

    void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
        std::ostringstream buf;
        body(buf);
        const std::string bytes = buf.str();
        std::ofstream out(result_.out_dir / name, std::ios::binary);
        if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + (result_.out_dir / name).string());
        out << bytes;
        hashes_.emplace_back(name, fnv1a(bytes));
        result_.files.push_back(name);
    }

    void check(std::string name, bool passed, std::string detail) {
        result_.checks.push_back({std::move(name), passed, std::move(detail)});
    }
    void note(std::string line) { result_.notes.push_back(std::move(line)); }

    CommandResult finish() {
        write("report.txt", [&](std::ostream& out) {
            out << "bdre " << kVersion << " " << result_.command << "\n";
            out << "model = " << cfg_.model_name << "\n";
            out << "environment = "
                << (cfg_.is_jump() ? "jump (" + std::to_string(cfg_.jump->states.size()) + " states)"
                                   : "diffusive " + cfg_.diffusive->example)
                << "\n";
            out << "beta_n = " << cfg_.beta.describe() << "\n";
            out << "seed = " << result_.seed << "\n";
            for (const auto& n : result_.notes) out << n << "\n";
            for (const auto& c : result_.checks) {
                out << "check " << c.name << ": " << (c.passed ? "PASS" : "FAIL");
                if (!c.detail.empty()) out << " (" << c.detail << ")";
                out << "\n";
            }
            out << "status: " << (result_.passed() ? "PASS" : "FAIL") << "\n";
        });
        write("config.json", [&](std::ostream& out) { out << cfg_.source_text; });
        std::ostringstream manifest;
        manifest << "tool = bdre\n";
        manifest << "version = " << kVersion << "\n";
        manifest << "command = " << result_.command << "\n";
        manifest << "config_hash = fnv1a:" << hex64(fnv1a(cfg_.source_text)) << "\n";
        manifest << "seed = " << result_.seed << "\n";
        manifest << "threads = " << threads_ << "\n";
        for (const auto& [name, h] : hashes_) manifest << "output = " << name << " fnv1a:" << hex64(h) << "\n";
        std::ofstream out(result_.out_dir / "manifest.txt", std::ios::binary);
        out << manifest.str();
        result_.files.push_back("manifest.txt");
        return result_;
    }

private:
    const RunConfig& cfg_;
    CommandResult result_;
    std::size_t threads_ = 1;
    std::vector<std::pair<std::string, std::uint64_t>> hashes_;
};

std::vector<Point> jump_probes(const EnvChainSpec& env) {
    std::vector<Point> out;
    for (const auto& s : env.states) out.push_back(s.coords);
    return out;
}

// Quantile grid for 1D laws, law samples otherwise.
std::vector<Point> diffusive_probes(const StationaryLawDiffusive& law, std::size_t count, std::uint64_t seed) {
    std::vector<Point> out;
    if (law.dim() == 1) {
        out.push_back({law.lower[0]});
        for (std::size_t k = 0; k < count; ++k) {
            const double p = (static_cast<double>(k) + 0.5) / static_cast<double>(count);
            out.push_back({law.marginal_quantile(0, p)});
        }
        return out;
    }
    Rng rng = replica_rng(seed, 0x9b);
    out.push_back(law.lower);
    for (std::size_t k = 0; k < count; ++k) {
        Point z(law.dim());
        law.sample(rng, z);
        out.push_back(std::move(z));
    }
    return out;
}

// ---------------------------------------------------------------- checks

void jump_assumptions(Run& run, const ModelSpec& model, const EnvChainSpec& env) {
    const auto& cfg = run.cfg();
    const Eigen::MatrixXd T0 = env.generator(0);
    run.check("irreducible", is_irreducible(T0), "T_0 support graph");
    std::vector<std::size_t> levels;
    for (std::size_t n = 0; n <= std::min<std::size_t>(cfg.analysis.n_max, 64); ++n) levels.push_back(n);
    try {
        const CommonV v = solve_common_v(env, levels);
        run.check("common_v", true, "max residual " + num(v.max_residual, 3) + " over n <= " + std::to_string(levels.back()));
    } catch (const Error& e) {
        run.check("common_v", false, e.what());
    }
    for (std::size_t z = 0; z < env.size(); ++z) {
        const SummabilityReport s = check_summability(model, env.states[z].coords, cfg.analysis.n_max);
        const char* verdict = s.verdict == Summability::summable  ? "summable"
                              : s.verdict == Summability::divergent ? "divergent"
                                                                    : "inconclusive";
        run.check("summable[" + env.states[z].label + "]", s.summable(),
                  std::string(verdict) + ", tail ratio " + num(s.tail_ratio, 6));
    }
}

struct JumpInvariant {
    InvariantMeasureJump measure;
    double balance = 0.0;
};

JumpInvariant jump_invariant(Run& run, const ModelSpec& model, const EnvChainSpec& env) {
    const std::size_t n_max = run.cfg().analysis.n_max;
    JumpInvariant out{invariant_measure_jump(model, env, n_max), 0.0};
    const JointGeneratorMatrix gen = build_joint_generator(model, env, n_max);
    out.balance = verify_balance(gen, out.measure);
    run.check("balance", out.balance < run.cfg().analysis.balance_tol,
              "max relative residual " + num(out.balance, 3) + " on interior rows, n_max = " + std::to_string(n_max));
    run.note("xi = " + num(out.measure.xi(), 15));
    run.note("log_xi = " + num(out.measure.log_xi, 15));
    run.note("truncation_residual = " + num(out.measure.truncation_residual, 3));
    return out;
}

void write_pi_jump(Run& run, const EnvChainSpec& env, const InvariantMeasureJump& m) {
    const std::size_t levels = m.weights.size() / m.env_size;
    std::size_t last = 0;
    for (std::size_t n = 0; n < levels; ++n) {
        for (std::size_t z = 0; z < m.env_size; ++z) {
            if (m.pi(n, z) > 0.0) last = n;
        }
    }
    run.write("pi.csv", [&](std::ostream& out) {
        out.precision(17);
        out << "n,z_index,z_label,mass\n";
        for (std::size_t n = 0; n <= last; ++n) {
            for (std::size_t z = 0; z < m.env_size; ++z) {
                out << n << ',' << z << ',' << env.states[z].label << ',' << m.pi(n, z) << '\n';
            }
        }
    });
    run.write("environment.csv", [&](std::ostream& out) {
        out.precision(17);
        out << "z_index,z_label,v";
        for (std::size_t i = 0; i < env.states[0].coords.size(); ++i) out << ",coord" << i;
        out << '\n';
        for (std::size_t z = 0; z < env.size(); ++z) {
            out << z << ',' << env.states[z].label << ',' << m.v(static_cast<Eigen::Index>(z));
            for (double c : env.states[z].coords) out << ',' << c;
            out << '\n';
        }
    });
}

struct DiffusiveInvariant {
    bool ok = false;
    InvariantMeasureDiffusive measure;
};

DiffusiveInvariant diffusive_invariant(Run& run, const ModelSpec& model, const DiffusiveExample& ex) {
    DiffusiveInvariant out;
    run.note("law = " + std::string(to_string(ex.law.family)));
    try {
        out.measure = invariant_measure_diffusive(model, ex.law, run.cfg().analysis.n_max);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::XiDivergent && e.code() != ErrorCode::Divergence) throw;
        run.check("xi_finite", false, e.what());
        return out;
    }
    const XiResult& xi = out.measure.xi;
    run.check("xi_finite", std::isfinite(xi.xi), std::string(to_string(xi.method)) + ", error " + num(xi.error, 3));
    run.note("xi = " + num(xi.xi, 15));
    out.ok = true;
    return out;
}

// ---------------------------------------------------------------- commands

void cmd_invariant(Run& run) {
    const auto& cfg = run.cfg();
    const ModelSpec model = cfg.build_model();
    if (cfg.is_jump()) {
        const EnvChainSpec env = cfg.build_jump_env();
        jump_assumptions(run, model, env);
        const JumpInvariant inv = jump_invariant(run, model, env);
        write_pi_jump(run, env, inv.measure);
        return;
    }
    const DiffusiveExample ex = cfg.build_diffusive();
    const DiffusiveInvariant inv = diffusive_invariant(run, model, ex);
    run.write("law.json", [&](std::ostream& out) { out << law_to_json(ex.law) << '\n'; });
    if (!inv.ok) return;
    run.write("weights.csv", [&](std::ostream& out) {
        out.precision(17);
        out << "n,weight\n";
        for (std::size_t n = 0; n < inv.measure.weights.size(); ++n) out << n << ',' << inv.measure.weights[n] << '\n';
    });
}

void cmd_verify(Run& run) {
    const auto& cfg = run.cfg();
    const ModelSpec model = cfg.build_model();
    if (cfg.is_jump()) {
        const EnvChainSpec env = cfg.build_jump_env();
        jump_assumptions(run, model, env);
        jump_invariant(run, model, env);
        return;
    }
    DiffusiveExample ex;
    try {
        ex = cfg.build_diffusive();
    } catch (const Error& e) {
        if (e.code() != ErrorCode::SkewSymmetryFailed && e.code() != ErrorCode::NegativeEffectiveDrift) throw;
        run.check("stationary_law", false, e.what());
        return;
    }
    run.check("stationary_law", true, std::string(to_string(ex.law.family)));
    if (ex.law.family == LawFamily::mgf_implicit) {
        const double f = jump_rbm_f(ex.law, ex.law.u0);
        run.check("mgf_root", std::abs(f) < 1e-9, "F(u0) = " + num(f, 3));
    }
    diffusive_invariant(run, model, ex);
}

void cmd_simulate(Run& run) {
    const auto& cfg = run.cfg();
    const ModelSpec model = cfg.build_model();
    const auto& sim = cfg.sim;
    if (cfg.is_jump()) {
        const EnvChainSpec env = cfg.build_jump_env();
        std::vector<JumpPath> paths(sim.replicas);
        for_each_replica(sim.replicas, run.threads(), [&](std::size_t i) {
            JumpSimConfig jc;
            jc.horizon = sim.horizon;
            jc.burn_in = sim.burn_in;
            jc.max_events = sim.max_events;
            jc.rate_cap = sim.rate_cap;
            jc.record_path = cfg.output.trajectory && i == 0;
            jc.occupancy_n_cap = sim.n_cap;
            Rng rng = replica_rng(run.seed(), i);
            paths[i] = simulate_jump_joint(model, env, sim.n0, sim.z0, jc, rng);
        });
        std::vector<double> occupancy(paths[0].occupancy.size(), 0.0);
        std::size_t events = 0;
        for (const auto& p : paths) {
            for (std::size_t c = 0; c < occupancy.size(); ++c) occupancy[c] += p.occupancy[c];
            events += p.event_count;
        }
        run.write("occupancy.csv", [&](std::ostream& out) { write_occupancy_csv(out, occupancy, sim.n_cap, env.size()); });
        if (cfg.output.trajectory) run.write("events.csv", [&](std::ostream& out) { write_events_csv(out, paths[0]); });
        run.note("events = " + std::to_string(events));
        const InvariantMeasureJump pi = invariant_measure_jump(model, env, std::max(cfg.analysis.n_max, sim.n_cap + 1));
        const double tv = tv_distance(EmpiricalMeasure::from_weights(occupancy).masses, pi.cells(sim.n_cap));
        run.note("tv_vs_analytic = " + num(tv, 6));
        if (cfg.analysis.tv_tolerance) {
            run.check("tv", tv <= *cfg.analysis.tv_tolerance, num(tv, 6) + " vs " + num(*cfg.analysis.tv_tolerance, 6));
        }
        return;
    }
    const DiffusiveExample ex = cfg.build_diffusive();
    const ZBinning bins = ZBinning::from_law(ex.law, cfg.analysis.bins);
    DiffusiveSimConfig dc;
    dc.dt = sim.dt;
    dc.horizon = sim.horizon;
    dc.burn_in = sim.burn_in;
    dc.speed_cap = sim.speed_cap;
    dc.max_substeps = sim.max_substeps;
    dc.n_cap = sim.n_cap;
    JointState init;
    init.n = sim.n0;
    init.z = sim.z0_point.empty() ? ex.law.lower : sim.z0_point;
    const DiffusiveRun merged =
        simulate_joint_diffusive_replicas(model, ex.spec, bins, dc, init, sim.replicas, run.threads(), run.seed());
    run.write("occupancy.csv", [&](std::ostream& out) { write_occupancy_csv(out, merged); });
    if (cfg.output.trajectory) {
        DiffusiveSimConfig traced = dc;
        traced.record_every = sim.record_every > 0.0 ? sim.record_every : sim.dt * 100;
        Rng rng = replica_rng(run.seed(), 0);
        const DiffusiveRun first = simulate_joint_diffusive(model, ex.spec, bins, traced, init, rng);
        run.write("trajectory.csv", [&](std::ostream& out) {
            out.precision(17);
            out << "t,n";
            for (std::size_t i = 0; i < ex.spec.dim(); ++i) out << ",z" << i;
            out << '\n';
            for (const auto& s : first.path) {
                out << s.t << ',' << s.n;
                for (double z : s.z) out << ',' << z;
                out << '\n';
            }
        });
    }
    run.note("substeps = " + std::to_string(merged.substeps));
    const DiffusiveInvariant inv = diffusive_invariant(run, model, ex);
    if (!inv.ok) return;
    const double tv =
        tv_distance(EmpiricalMeasure::from_weights(merged.occupancy).masses, inv.measure.cells(model, bins, sim.n_cap));
    run.note("tv_vs_analytic = " + num(tv, 6));
    if (cfg.analysis.tv_tolerance) {
        run.check("tv", tv <= *cfg.analysis.tv_tolerance, num(tv, 6) + " vs " + num(*cfg.analysis.tv_tolerance, 6));
    }
}

// ---------------------------------------------------------------- rates

void rates_exponential(Run& run, const ModelSpec& model, const BoundsProfile& profile, bool scenario1,
                       const EnvChainSpec* env, const DiffusiveExample* ex) {
    const auto& cfg = run.cfg();
    const auto& rt = cfg.analysis.rates;

    // environment coupling at N = 0
    double alpha = 1.0 + 1e-9, gamma = 1e6;
    CouplingConfig cc;
    cc.replicas = rt.env_coupling_replicas;
    cc.threads = run.threads();
    cc.seed = run.seed(1);
    cc.horizon = rt.horizon;
    cc.rate_cap = cfg.sim.rate_cap;
    cc.dt = cfg.sim.dt;
    std::vector<double> env_times;
    std::size_t censored = 0;
    if (env) {
        if (env->size() > 1) env_times = env_coupling_times_jump(*env, 0, cc, &censored);
    } else {
        if (ex->spec.dim() != 1) {
            run.check("env_coupling_fit", false, "mirror coupling needs a 1D environment");
            return;
        }
        env_times = env_coupling_times_mirror(ex->spec, ex->law.lower[0], ex->law.marginal_quantile(0, 0.9), cc,
                                              &censored);
    }
    if (!env_times.empty()) {
        const EnvCouplingFit fit = fit_env_coupling(env_times, censored);
        alpha = fit.alpha;
        gamma = fit.gamma;
        run.note("env_coupling: alpha = " + num(alpha) + ", gamma = " + num(gamma) + ", censored = " +
                 std::to_string(censored));
    } else {
        run.note("env_coupling: single-state environment, alpha = 1, gamma = inf");
    }

    RateCertificate cert;
    std::vector<BusyPeriodMgf> busy_table;
    if (scenario1) {
        cert = best_exponential_certificate(profile, alpha, gamma);
    } else {
        BusyPeriodConfig bc;
        bc.replicas = rt.busy_replicas;
        bc.threads = run.threads();
        bc.seed = run.seed(2);
        bc.horizon = rt.horizon;
        bc.series = rt.busy_series;
        const auto samples = busy_period_samples(profile.lambda_bar, profile.mu_linear, bc);
        auto busy = [&](double u) {
            const BusyPeriodMgf m = busy_period_mgf(samples, profile.lambda_bar, profile.mu_linear, u, bc.series);
            busy_table.push_back(m);
            if (bc.series && !std::isfinite(m.series)) {
                throw Error(ErrorCode::DivergenceSuspected, "series diverges at u=" + num(u));
            }
            return m.estimate;
        };
        const double u_max = 0.999 * std::min(profile.q_bar, profile.lambda_bar + profile.mu_linear);
        cert = best_exponential_certificate_s2(profile, alpha, gamma, busy, u_max);
        run.write("busy_mgf.csv", [&](std::ostream& out) {
            out.precision(17);
            out << "u,estimate,stderr,series,series_agrees\n";
            for (const auto& m : busy_table) {
                out << m.u << ',' << m.estimate << ',' << m.stderr_ << ',' << m.series << ',' << (m.series_agrees ? 1 : 0)
                    << '\n';
            }
        });
    }
    run.write("certificate.txt", [&](std::ostream& out) { write_certificate(out, cert, &profile); });
    const std::string theorem = scenario1 ? "exponential_s1" : "exponential_s2";
    run.check("certificate", cert.valid,
              cert.valid ? cert.label + ", kappa = " + num(cert.kappa) + " at u = " + num(cert.u) +
                               ", epsilon = " + num(cert.epsilon)
                         : "failed, best residual " + num(cert.condition_residual));
    if (!cert.valid) return;

    if (scenario1) {
        const std::vector<double> us{cert.u};
        try {
            IntegrabilityReport ir;
            if (env) {
                std::vector<std::size_t> levels{0, 1, 2};
                const CommonV v = solve_common_v(*env, levels);
                ir = check_integrability(model, *env, v.v, us, profile, cfg.analysis.n_max);
            } else {
                ir = check_integrability(model, ex->law, us, profile, cfg.analysis.n_max);
            }
            run.check("integrability", ir.holds(),
                      ir.certified_by + ", series " + num(ir.sup_value) + ", ratio " + num(ir.ratio_sup) +
                          " vs " + num(ir.ratio_limit));
        } catch (const Error& e) {
            if (e.code() != ErrorCode::Divergence) throw;
            run.check("integrability", false, e.what());
        }
        std::vector<Point> probes = env ? jump_probes(*env) : diffusive_probes(ex->law, rt.probe_points, run.seed(3));
        const DominationReport d = check_walk_domination(model, probes, profile.p_bar, 10000, run.seed(4), 100000000);
        run.check("walk_domination", d.violations == 0,
                  std::to_string(d.violations) + " violations over " + std::to_string(d.excursions) + " excursions");
    } else {
        std::vector<Point> probes = env ? jump_probes(*env) : diffusive_probes(ex->law, rt.probe_points, run.seed(3));
        const DominationReport d =
            check_mminf_domination(model, probes, profile.lambda_bar, profile.mu_linear, 10000, run.seed(4));
        run.check("mminf_domination", d.violations == 0,
                  std::to_string(d.violations) + " violations over " + std::to_string(d.excursions) + " excursions");
    }

    CouplingConfig joint = cc;
    joint.replicas = rt.coupling_replicas;
    joint.seed = run.seed(5);
    CouplingResult cr;
    if (env) {
        cr = couple_exponential(model, *env, 0, 0, rt.start_n, env->size() - 1, joint, cert.kappa, rt.slack);
    } else {
        JointState a{0, ex->law.lower, 0.0}, b{rt.start_n, {ex->law.marginal_quantile(0, 0.9)}, 0.0};
        cr = couple_exponential_diffusive(model, ex->spec, a, b, joint, cert.kappa, rt.slack);
    }
    run.write("coupling_tail.csv", [&](std::ostream& out) { write_coupling_tail_csv(out, cr.times, cr.censored, cert.kappa); });
    run.note("coupling: mean " + num(cr.mean.mean) + " +- " + num(cr.mean.stderr_, 3) + ", attempts " +
             num(cr.mean_attempts, 4) + ", censored " + std::to_string(cr.censored));
    run.check("coupling_tail_slope", cr.slope_ok,
              "slope " + num(cr.tail.slope, 6) + " vs -kappa(1 - slack) = " + num(-cert.kappa * (1.0 - rt.slack), 6));
    run.note("theorem " + theorem + ": " + (cr.slope_ok ? cert.label : std::string("failed")));
}

void rates_polynomial(Run& run, const ModelSpec& model, const std::vector<Point>& probes, const EnvChainSpec* env) {
    const auto& cfg = run.cfg();
    const auto& rt = cfg.analysis.rates;
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
    RateCertificate cert;
    try {
        cert = lyapunov_certificate(lambda_bar, mu_bar, V, rt.probe_n_max, "V(n) = n");
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NotLyapunov) throw;
        run.check("lyapunov", false, e.what());
        return;
    }
    run.write("certificate.txt", [&](std::ostream& out) { write_certificate(out, cert, nullptr); });
    run.check("lyapunov", cert.valid, "C_V = " + num(cert.c_v) + " at n = " + std::to_string(cert.c_v_at));

    HittingConfig hc;
    hc.replicas = rt.hitting_replicas;
    hc.threads = run.threads();
    hc.seed = run.seed(6);
    hc.horizon = rt.horizon;
    const auto rows = hitting_bound_table(lambda_bar, mu_bar, V, cert.c_v, rt.hitting_starts, hc);
    run.write("hitting_bounds.csv", [&](std::ostream& out) {
        out.precision(17);
        out << "n,mean,stderr,bound,ok\n";
        for (const auto& r : rows) out << r.n << ',' << r.mean << ',' << r.stderr_ << ',' << r.bound << ',' << (r.ok ? 1 : 0) << '\n';
    });
    const bool rows_ok = std::all_of(rows.begin(), rows.end(), [](const HittingBoundRow& r) { return r.ok; });
    run.check("hitting_bounds", rows_ok, std::to_string(rows.size()) + " starting levels");

    if (!env) {
        run.note("decay curve: only computed for jump environments");
        run.note(std::string("theorem polynomial: ") + (cert.valid && rows_ok ? cert.label : "failed"));
        return;
    }
    const double ev = stationary_mean_v(lambda_bar, mu_bar, V);
    std::vector<double> grid(rt.decay_points);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const double f = static_cast<double>(k) / static_cast<double>(grid.size() - 1);
        grid[k] = std::exp(std::log(rt.decay_t_min) + f * (std::log(rt.decay_t_max) - std::log(rt.decay_t_min)));
    }
    grid.front() = rt.decay_t_min;
    grid.back() = rt.decay_t_max;
    DecayConfig dc;
    dc.replicas = rt.decay_replicas;
    dc.threads = run.threads();
    dc.seed = run.seed(7);
    dc.n_cap = rt.decay_n_cap;
    dc.rate_cap = cfg.sim.rate_cap;
    const DecayCurve curve =
        tv_decay_polynomial(model, *env, rt.start_n, 0, grid, dc, cert.c_v, ev, V(rt.start_n));
    run.write("decay.csv", [&](std::ostream& out) { write_decay_csv(out, curve); });
    run.note("decay: noise floor " + num(curve.noise_floor, 4) + ", E V = " + num(ev, 6));
    bool under_bound = true;
    for (std::size_t k = 0; k < curve.t.size(); ++k) {
        under_bound = under_bound && curve.tv[k] <= curve.bound[k] + 3.0 * curve.noise_floor;
    }
    run.check("decay_bound", under_bound, "TV(t) <= 2 (E V + V(n0)) / (C_V t)");
    run.check("decay_exponent", curve.fitted && curve.exponent >= rt.min_decay_exponent,
              curve.fitted ? "a = " + num(curve.exponent, 4) + " over " + std::to_string(curve.fit.points) +
                                 " points, need >= " + num(rt.min_decay_exponent, 3)
                           : std::string("too few points above the noise floor"));
    run.note(std::string("theorem polynomial: ") + (cert.valid && rows_ok ? cert.label : "failed"));
}

void cmd_rates(Run& run) {
    const auto& cfg = run.cfg();
    const auto& rt = cfg.analysis.rates;
    if (!rt.enabled) {
        run.check("rates_enabled", false, "analysis.rates.enabled is false");
        return;
    }
    const ModelSpec model = cfg.build_model();
    std::optional<EnvChainSpec> env;
    std::optional<DiffusiveExample> ex;
    std::vector<Point> probes;
    if (cfg.is_jump()) {
        env = cfg.build_jump_env();
        probes = jump_probes(*env);
    } else {
        ex = cfg.build_diffusive();
        probes = diffusive_probes(ex->law, rt.probe_points, run.seed(3));
    }
    const BoundsProfile profile = bounds_profile(model, probes, rt.probe_n_max);
    run.note("profile: q_bar = " + num(profile.q_bar) + ", p_bar = " + num(profile.p_bar) + ", lambda_bar = " +
             num(profile.lambda_bar) + ", mu_linear = " + num(profile.mu_linear) + ", levels 1.." +
             std::to_string(profile.n_max) + ", " + std::to_string(profile.probes) + " probe points");
    if (rt.scenario == "polynomial") {
        rates_polynomial(run, model, probes, env ? &*env : nullptr);
        return;
    }
    if (profile.scenario1()) {
        const UStar us = u_star(profile.p_bar, profile.q_bar);
        run.note("u* = " + num(us.u_star) + ", G(u*) = " + num(us.G_at_u_star) + ", closed form " +
                 num(us.closed_form) + ", alternative display " + num(us.alternative_display));
        rates_exponential(run, model, profile, true, env ? &*env : nullptr, ex ? &*ex : nullptr);
    } else if (profile.scenario2()) {
        run.note("scenario 1 refused: p_bar = " + num(profile.p_bar) + " >= 1/2; trying scenario 2");
        rates_exponential(run, model, profile, false, env ? &*env : nullptr, ex ? &*ex : nullptr);
    } else if (rt.scenario == "auto") {
        run.note("no exponential scenario applies (p_bar = " + num(profile.p_bar) + ", mu_linear = " +
                 num(profile.mu_linear) + "); trying the polynomial route");
        rates_polynomial(run, model, probes, env ? &*env : nullptr);
    } else {
        run.check("scenario", false, "p_bar = " + num(profile.p_bar) + " >= 1/2 and mu_n >= n mu_bar fails");
    }
}

}  // namespace

bool CommandResult::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckLine& c) { return c.passed; });
}

std::vector<std::string> command_names() { return {"invariant", "simulate", "rates", "verify"}; }

CommandResult run_command(std::string_view command, RunConfig cfg, const CommandOptions& options) {
    if (options.seed) cfg.sim.seed = options.seed;
    cfg.validate();
    Run run(std::string(command), cfg, options);
    if (command == "invariant") {
        cmd_invariant(run);
    } else if (command == "simulate") {
        cmd_simulate(run);
    } else if (command == "rates") {
        cmd_rates(run);
    } else if (command == "verify") {
        cmd_verify(run);
    } else {
        throw Error(ErrorCode::InvalidArgument, "unknown command '" + std::string(command) + "'");
    }
    return run.finish();
}

}  // namespace bdre
