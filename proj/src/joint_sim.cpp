#include "bdre/joint_sim.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "bdre/error.hpp"

namespace bdre {

void DiffusiveSimConfig::validate() const {
    if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "dt must be positive");
    if (!(horizon > 0.0) || burn_in < 0.0 || !(burn_in < horizon)) {
        throw Error(ErrorCode::InvalidArgument, "need 0 <= burn_in < horizon");
    }
    if (!(speed_cap > 0.0)) throw Error(ErrorCode::InvalidArgument, "speed_cap must be positive");
    if (max_substeps == 0) throw Error(ErrorCode::InvalidArgument, "max_substeps must be positive");
}

DiffusiveStepper::DiffusiveStepper(const ModelSpec& model, const DiffusionSpec& spec, const DiffusiveSimConfig& cfg)
    : model_(model), spec_(spec), cfg_(cfg) {
    cfg_.validate();
}

double DiffusiveStepper::speed(std::size_t n, EnvPoint z) const {
    const double lr = log_ratio(model_, n, z);
    return model_.beta(n) * std::exp(-lr);
}

void project_to_domain(const DomainSpec& domain, std::span<double> z, std::size_t n) {
    if (domain.kind == DomainKind::variable_half_line) {
        z[0] = std::max(z[0], domain.lower_of_n(n));
    }
}

void DiffusiveStepper::advance(JointState& s, Rng& rng) {
    const double dt = cfg_.dt;
    double remaining = dt;
    double births = 0.0, deaths = 0.0;
    std::size_t count = 0;
    StepOptions opts{cfg_.speed_cap};
    while (remaining > 0.0) {
        const double sp = speed(s.n, s.z);
        if (!(sp <= cfg_.speed_cap)) {
            throw Error(ErrorCode::SpeedCap, "environment speed " + std::to_string(sp) + " at n=" + std::to_string(s.n) +
                                                 " exceeds the cap");
        }
        if (++count > cfg_.max_substeps) {
            throw Error(ErrorCode::SpeedCap, "more than " + std::to_string(cfg_.max_substeps) +
                                                 " substeps needed inside one step at n=" + std::to_string(s.n));
        }
        const double delta = sp > 1.0 ? std::min(remaining, dt / sp) : remaining;
        births += model_.birth(s.n, s.z) * delta;
        deaths += model_.death(s.n, s.z) * delta;
        step_reflected(spec_, s.z, delta, s.n, sp, rng, opts);
        remaining -= delta;
        if (remaining < 1e-15 * dt) remaining = 0.0;
    }
    substeps_ += count;
    if (births + deaths > 0.1) {
        throw Error(ErrorCode::RateTooLargeForStep, "(lambda + mu) dt = " + std::to_string(births + deaths) +
                                                        " at n=" + std::to_string(s.n) + "; use a smaller dt");
    }
    const double u = std::uniform_real_distribution<double>()(rng);
    if (u < births) {
        ++s.n;
        project_to_domain(spec_.domain, s.z, s.n);
    } else if (u < births + deaths && s.n > 0) {
        --s.n;
        project_to_domain(spec_.domain, s.z, s.n);
    }
    s.t += dt;
}

EmpiricalMeasure DiffusiveRun::occupancy_measure() const { return EmpiricalMeasure::from_weights(occupancy); }

namespace {

std::size_t joint_cell(const ZBinning& bins, std::size_t n_cap, std::size_t n, EnvPoint z) {
    const std::size_t nb = bins.cells();
    const std::size_t overflow = (n_cap + 1) * nb;
    if (n > n_cap) return overflow;
    const std::size_t b = bins.index(z);
    return b >= nb ? overflow : n * nb + b;
}

}  // namespace

DiffusiveRun simulate_joint_diffusive(const ModelSpec& model, const DiffusionSpec& spec, const ZBinning& bins,
                                      const DiffusiveSimConfig& cfg, JointState initial, Rng& rng) {
    cfg.validate();
    if (initial.z.size() != spec.dim() || !spec.domain.contains(initial.z, initial.n)) {
        throw Error(ErrorCode::InvalidArgument, "initial point is not in the domain");
    }
    if (bins.dim() != spec.dim()) throw Error(ErrorCode::CellMismatch, "binning dimension differs from the environment");
    DiffusiveStepper stepper(model, spec, cfg);
    DiffusiveRun run;
    run.bins = bins;
    run.n_cap = cfg.n_cap;
    run.occupancy.assign((cfg.n_cap + 1) * bins.cells() + 1, 0.0);
    const auto steps = static_cast<std::size_t>(std::llround(cfg.horizon / cfg.dt));
    const auto burn_steps = static_cast<std::size_t>(std::llround(cfg.burn_in / cfg.dt));
    const auto record_stride =
        cfg.record_every > 0.0 ? std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.record_every / cfg.dt)))
                               : 0;
    JointState s = std::move(initial);
    s.t = 0.0;
    if (record_stride > 0) run.path.push_back(s);
    for (std::size_t k = 1; k <= steps; ++k) {
        stepper.advance(s, rng);
        if (k > burn_steps) run.occupancy[joint_cell(bins, cfg.n_cap, s.n, s.z)] += cfg.dt;
        if (record_stride > 0 && k % record_stride == 0) run.path.push_back(s);
    }
    run.final_state = s;
    run.substeps = stepper.substeps();
    return run;
}

DiffusiveRun simulate_joint_diffusive_replicas(const ModelSpec& model, const DiffusionSpec& spec, const ZBinning& bins,
                                               const DiffusiveSimConfig& cfg, const JointState& initial,
                                               std::size_t replicas, std::size_t threads, std::uint64_t seed) {
    if (replicas == 0) throw Error(ErrorCode::InvalidArgument, "need at least one replica");
    std::vector<DiffusiveRun> runs(replicas);
    DiffusiveSimConfig quiet = cfg;
    quiet.record_every = 0.0;
    for_each_replica(replicas, threads, [&](std::size_t i) {
        Rng rng = replica_rng(seed, i);
        runs[i] = simulate_joint_diffusive(model, spec, bins, quiet, initial, rng);
    });
    DiffusiveRun merged = std::move(runs[0]);
    for (std::size_t i = 1; i < replicas; ++i) {
        for (std::size_t c = 0; c < merged.occupancy.size(); ++c) merged.occupancy[c] += runs[i].occupancy[c];
        merged.substeps += runs[i].substeps;
    }
    return merged;
}

namespace {

HittingSample collect(std::vector<double>& raw) {
    HittingSample out;
    for (double t : raw) {
        if (std::isfinite(t)) {
            out.times.push_back(t);
        } else {
            ++out.censored;
        }
    }
    if (out.times.empty()) {
        throw Error(ErrorCode::AllCensored, "all " + std::to_string(raw.size()) + " replicas hit the horizon");
    }
    out.mean = mean_estimate(out.times);
    return out;
}

void check_hitting(const HittingConfig& cfg) {
    if (!(cfg.horizon > 0.0)) throw Error(ErrorCode::InvalidArgument, "hitting horizon must be positive");
    if (cfg.replicas == 0) throw Error(ErrorCode::InvalidArgument, "need at least one replica");
}

}  // namespace

HittingSample hitting_time_jump(const ModelSpec& model, const EnvChainSpec& env, std::size_t n0, std::size_t z0,
                                const Target& target, const HittingConfig& cfg) {
    check_hitting(cfg);
    if (z0 >= env.size()) throw Error(ErrorCode::InvalidArgument, "initial environment index out of range");
    std::vector<double> raw(cfg.replicas, kInf);
    for_each_replica(cfg.replicas, cfg.threads, [&](std::size_t i) {
        Rng rng = replica_rng(cfg.seed, i);
        JumpDynamics dyn(model, env, cfg.rate_cap);
        std::exponential_distribution<double> unit_exp(1.0);
        std::size_t n = n0, z = z0;
        double t = 0.0;
        while (!target(n, env.states[z].coords)) {
            const double rate = dyn.total(n, z);
            if (!(rate > 0.0)) return;  // absorbed away from the target
            t += unit_exp(rng) / rate;
            if (t >= cfg.horizon) return;
            const auto mv = dyn.draw(n, z, rng);
            n = mv.n;
            z = mv.z;
        }
        raw[i] = t;
    });
    return collect(raw);
}

HittingSample hitting_time_bd(const ModelSpec& model, Point z, std::size_t n0, const Target& target,
                              const HittingConfig& cfg) {
    check_hitting(cfg);
    std::vector<double> raw(cfg.replicas, kInf);
    for_each_replica(cfg.replicas, cfg.threads, [&](std::size_t i) {
        Rng rng = replica_rng(cfg.seed, i);
        std::exponential_distribution<double> unit_exp(1.0);
        std::uniform_real_distribution<double> unif;
        std::size_t n = n0;
        double t = 0.0;
        while (!target(n, z)) {
            const double lambda = model.birth(n, z), mu = model.death(n, z);
            const double rate = lambda + mu;
            if (!(rate > 0.0)) return;
            t += unit_exp(rng) / rate;
            if (t >= cfg.horizon) return;
            if (unif(rng) * rate < lambda) {
                ++n;
            } else {
                --n;
            }
        }
        raw[i] = t;
    });
    return collect(raw);
}

HittingSample hitting_time_diffusive(const ModelSpec& model, const DiffusionSpec& spec, const JointState& initial,
                                     const Target& target, const DiffusiveSimConfig& sim, const HittingConfig& cfg) {
    check_hitting(cfg);
    std::vector<double> raw(cfg.replicas, kInf);
    for_each_replica(cfg.replicas, cfg.threads, [&](std::size_t i) {
        Rng rng = replica_rng(cfg.seed, i);
        DiffusiveStepper stepper(model, spec, sim);
        JointState s = initial;
        s.t = 0.0;
        while (!target(s.n, s.z)) {
            if (s.t >= cfg.horizon) return;
            stepper.advance(s, rng);
        }
        raw[i] = s.t;
    });
    return collect(raw);
}

void write_occupancy_csv(std::ostream& out, const DiffusiveRun& run) {
    const double total = [&] {
        double acc = 0.0;
        for (double v : run.occupancy) acc += v;
        return acc;
    }();
    const std::size_t nb = run.bins.cells();
    const auto old_precision = out.precision(17);
    out << "n";
    for (std::size_t i = 0; i < run.bins.dim(); ++i) out << ",z" << i << "_center";
    out << ",mass\n";
    for (std::size_t n = 0; n <= run.n_cap; ++n) {
        for (std::size_t b = 0; b < nb; ++b) {
            out << n;
            for (double c : run.bins.center(b)) out << ',' << c;
            out << ',' << (total > 0.0 ? run.occupancy[n * nb + b] / total : 0.0) << '\n';
        }
    }
    out << "overflow";
    for (std::size_t i = 0; i < run.bins.dim(); ++i) out << ',';
    out << ',' << (total > 0.0 ? run.occupancy.back() / total : 0.0) << '\n';
    out.precision(old_precision);
}

void write_occupancy_csv(std::ostream& out, std::span<const double> masses, std::size_t n_cap, std::size_t env_size) {
    if (masses.size() != (n_cap + 1) * env_size + 1) {
        throw Error(ErrorCode::CellMismatch, "occupancy size does not match (n_cap + 1) * env_size + 1");
    }
    double total = 0.0;
    for (double v : masses) total += v;
    const auto old_precision = out.precision(17);
    out << "n,z_index,mass\n";
    for (std::size_t n = 0; n <= n_cap; ++n) {
        for (std::size_t z = 0; z < env_size; ++z) {
            out << n << ',' << z << ',' << (total > 0.0 ? masses[n * env_size + z] / total : 0.0) << '\n';
        }
    }
    out << "overflow,," << (total > 0.0 ? masses.back() / total : 0.0) << '\n';
    out.precision(old_precision);
}

void write_samples_csv(std::ostream& out, std::string_view column, std::span<const double> samples) {
    const auto old_precision = out.precision(17);
    out << column << '\n';
    for (double x : samples) out << x << '\n';
    out.precision(old_precision);
}

}  // namespace bdre
