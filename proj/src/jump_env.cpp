#include "bdre/jump_env.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <queue>

#include "bdre/error.hpp"

namespace bdre {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();


}  // namespace

Eigen::MatrixXd EnvChainSpec::generator(std::size_t n) const {
    Eigen::MatrixXd t = generators(n);
    const auto m = static_cast<Eigen::Index>(states.size());
    if (t.rows() != m || t.cols() != m) {
        throw Error(ErrorCode::InvalidArgument, "T_" + std::to_string(n) + " is not " + std::to_string(m) + "x" +
                                                    std::to_string(m));
    }
    for (Eigen::Index i = 0; i < m; ++i) {
        double off = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) {
            if (i == j) continue;
            if (!(t(i, j) >= 0.0)) {
                throw Error(ErrorCode::InvalidArgument, "T_" + std::to_string(n) + " has a negative off-diagonal rate");
            }
            off += t(i, j);
        }
        if (std::abs(off + t(i, i)) > 1e-12 * std::max(off, 1e-300) && std::abs(off + t(i, i)) > 0.0) {
            throw Error(ErrorCode::InvalidArgument, "T_" + std::to_string(n) + " row " + std::to_string(i) +
                                                        " does not sum to zero");
        }
    }
    return t;
}

EnvChainSpec scaled_environment(std::vector<EnvState> states, Eigen::MatrixXd base, Variability beta) {
    EnvChainSpec env;
    env.states = std::move(states);
    env.generators = [base = std::move(base), beta = std::move(beta)](std::size_t n) -> Eigen::MatrixXd {
        return beta(n) * base;
    };
    return env;
}

bool is_irreducible(const Eigen::MatrixXd& generator) {
    const auto m = generator.rows();
    if (m <= 1) return true;
    auto reaches_all = [&](bool transpose) {
        std::vector<bool> seen(static_cast<std::size_t>(m), false);
        std::queue<Eigen::Index> frontier;
        frontier.push(0);
        seen[0] = true;
        while (!frontier.empty()) {
            const Eigen::Index i = frontier.front();
            frontier.pop();
            for (Eigen::Index j = 0; j < m; ++j) {
                const double rate = transpose ? generator(j, i) : generator(i, j);
                if (i != j && rate > 0.0 && !seen[static_cast<std::size_t>(j)]) {
                    seen[static_cast<std::size_t>(j)] = true;
                    frontier.push(j);
                }
            }
        }
        return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
    };
    return reaches_all(false) && reaches_all(true);
}

CommonV solve_common_v(const EnvChainSpec& env, std::span<const std::size_t> probes, double tol) {
    if (probes.empty()) throw Error(ErrorCode::InvalidArgument, "solve_common_v needs at least one probe");
    const auto m = static_cast<Eigen::Index>(env.size());
    CommonV out;
    out.probes.assign(probes.begin(), probes.end());

    const Eigen::MatrixXd first = env.generator(probes.front());
    if (!is_irreducible(first)) {
        throw Error(ErrorCode::NotIrreducible, "T_" + std::to_string(probes.front()) + " is not irreducible");
    }
    // v'T = 0 with the last balance equation replaced by sum(v) = 1
    Eigen::MatrixXd a = first.transpose();
    a.row(m - 1).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
    rhs(m - 1) = 1.0;
    out.v = a.fullPivLu().solve(rhs);
    for (Eigen::Index i = 0; i < m; ++i) {
        if (out.v(i) < 0.0 && out.v(i) > -1e-14) out.v(i) = 0.0;
    }
    if ((out.v.array() <= 0.0).any()) {
        throw Error(ErrorCode::NoCommonV, "stationary vector of T_" + std::to_string(probes.front()) +
                                              " is not strictly positive");
    }

    for (std::size_t n : probes) {
        const Eigen::MatrixXd t = env.generator(n);
        const Eigen::RowVectorXd flow = out.v.transpose() * t;
        const double scale = (out.v.array() * t.diagonal().array().abs()).maxCoeff();
        const double residual = scale > 0.0 ? flow.cwiseAbs().maxCoeff() / scale : flow.cwiseAbs().maxCoeff();
        out.max_residual = std::max(out.max_residual, residual);
        if (residual > tol) {
            throw Error(ErrorCode::NoCommonV, "first failing n=" + std::to_string(n) +
                                                  ", residual=" + std::to_string(residual));
        }
    }
    return out;
}

double JointGeneratorMatrix::rate(std::size_t row, std::size_t col) const {
    if (row == col) return -std::exp(log_exit.at(row));
    for (const auto& e : rows.at(row)) {
        if (e.col == col) return std::exp(e.log_rate);
    }
    return 0.0;
}

double JointGeneratorMatrix::relative_row_sum(std::size_t row) const {
    double acc = 0.0;
    for (const auto& e : rows.at(row)) acc += std::exp(e.log_rate - log_exit[row]);
    return std::abs(acc - 1.0);
}

void JointGeneratorMatrix::write_triples(std::ostream& out) const {
    const auto old_precision = out.precision(17);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::vector<std::pair<std::size_t, double>> line;
        line.emplace_back(r, -std::exp(log_exit[r]));
        for (const auto& e : rows[r]) line.emplace_back(e.col, std::exp(e.log_rate));
        std::sort(line.begin(), line.end());
        for (const auto& [c, v] : line) out << r << ' ' << c << ' ' << v << '\n';
    }
    out.precision(old_precision);
}

namespace {

// Largest level n <= n_max at which r_n(z) > 0 for every z. Throws
// DegenerateRatio if some level has r_n vanishing for only part of Z.
std::size_t effective_top(const std::vector<CumulativeRatio>& ratios, std::size_t n_max) {
    for (std::size_t n = 0; n <= n_max; ++n) {
        std::size_t zeros = 0;
        for (const auto& r : ratios) zeros += r.log_values[n] == kNegInf ? 1 : 0;
        if (zeros == ratios.size()) return n - 1;
        if (zeros > 0) {
            throw Error(ErrorCode::DegenerateRatio,
                        "r_" + std::to_string(n) + "(z) vanishes for some environment states but not others");
        }
    }
    return n_max;
}

std::vector<CumulativeRatio> ratios_for(const ModelSpec& model, const EnvChainSpec& env, std::size_t n_max) {
    std::vector<CumulativeRatio> out;
    out.reserve(env.size());
    for (const auto& s : env.states) out.push_back(cumulative_ratio(model, s.coords, n_max));
    return out;
}

}  // namespace

JointGeneratorMatrix build_joint_generator(const ModelSpec& model, const EnvChainSpec& env, std::size_t n_max) {
    const std::vector<CumulativeRatio> ratios = ratios_for(model, env, n_max);
    const std::size_t top = effective_top(ratios, n_max);
    const std::size_t m = env.size();

    JointGeneratorMatrix gen;
    gen.n_max = top;
    gen.env_size = m;
    gen.rows.resize((top + 1) * m);
    gen.log_exit.assign(gen.rows.size(), kNegInf);
    gen.truncated.assign(gen.rows.size(), false);

    for (std::size_t n = 0; n <= top; ++n) {
        const Eigen::MatrixXd t = env.generator(n);
        for (std::size_t z = 0; z < m; ++z) {
            const std::size_t row = gen.index(n, z);
            const EnvPoint coords = env.states[z].coords;
            auto& entries = gen.rows[row];
            double exit = kNegInf;

            const double lambda = model.birth(n, coords);
            if (lambda > 0.0) {
                exit = log_add_exp(exit, std::log(lambda));
                if (n < top) {
                    entries.push_back({gen.index(n + 1, z), std::log(lambda)});
                } else {
                    gen.truncated[row] = true;
                }
            }
            if (n > 0) {
                const double mu = model.death(n, coords);
                if (!(mu > 0.0)) throw Error(ErrorCode::ZeroDeathRate, "mu_" + std::to_string(n) + " is not positive");
                entries.push_back({gen.index(n - 1, z), std::log(mu)});
                exit = log_add_exp(exit, std::log(mu));
            }
            const double log_r = ratios[z].log_values[n];
            for (std::size_t w = 0; w < m; ++w) {
                const double tau = t(static_cast<Eigen::Index>(z), static_cast<Eigen::Index>(w));
                if (w == z || tau <= 0.0) continue;
                const double lr = std::log(tau) - log_r;
                entries.push_back({gen.index(n, w), lr});
                exit = log_add_exp(exit, lr);
            }
            gen.log_exit[row] = exit;
        }
    }
    return gen;
}

double InvariantMeasureJump::xi() const { return std::exp(log_xi); }

std::vector<double> InvariantMeasureJump::marginal_n() const {
    std::vector<double> out(n_max + 1, 0.0);
    for (std::size_t n = 0; n <= n_max; ++n) {
        for (std::size_t z = 0; z < env_size; ++z) out[n] += pi(n, z);
    }
    return out;
}

std::vector<double> InvariantMeasureJump::cells(std::size_t n_cap) const {
    std::vector<double> out((n_cap + 1) * env_size + 1, 0.0);
    for (std::size_t n = 0; n <= n_max; ++n) {
        for (std::size_t z = 0; z < env_size; ++z) {
            if (n <= n_cap) {
                out[n * env_size + z] += pi(n, z);
            } else {
                out.back() += pi(n, z);
            }
        }
    }
    out.back() += truncation_residual;
    return out;
}

InvariantMeasureJump invariant_measure_jump(const ModelSpec& model, const EnvChainSpec& env, std::size_t n_max) {
    const std::vector<CumulativeRatio> ratios = ratios_for(model, env, n_max);
    const std::size_t top = effective_top(ratios, n_max);
    std::vector<std::size_t> probes(top + 1);
    for (std::size_t n = 0; n <= top; ++n) probes[n] = n;
    const CommonV common = solve_common_v(env, probes);

    const std::size_t m = env.size();
    InvariantMeasureJump out;
    out.n_max = top;
    out.env_size = m;
    out.v = common.v;
    out.log_eta.resize((top + 1) * m);

    double log_tail = kNegInf;
    for (std::size_t z = 0; z < m; ++z) {
        const double log_v = std::log(common.v(static_cast<Eigen::Index>(z)));
        for (std::size_t n = 0; n <= top; ++n) out.log_eta[n * m + z] = ratios[z].log_values[n] + log_v;
        if (top == n_max) {
            const SummabilityReport report = tail_report(ratios[z]);
            if (!report.summable()) {
                throw Error(ErrorCode::XiDivergent, "tail of r_n(" + env.states[z].label + ") not certified summable");
            }
            log_tail = log_add_exp(log_tail, report.log_residual + log_v);
        }
    }
    const double log_head = log_sum_exp(out.log_eta);
    out.log_xi = log_add_exp(log_head, log_tail);
    if (!std::isfinite(out.log_xi)) throw Error(ErrorCode::XiDivergent, "normalizer is not finite");
    out.weights.resize(out.log_eta.size());
    for (std::size_t i = 0; i < out.weights.size(); ++i) out.weights[i] = std::exp(out.log_eta[i] - out.log_xi);
    out.truncation_residual = std::exp(log_tail - out.log_xi);
    return out;
}

double verify_balance(const JointGeneratorMatrix& gen, const InvariantMeasureJump& measure) {
    if (gen.dimension() != measure.log_eta.size() || gen.env_size != measure.env_size) {
        throw Error(ErrorCode::InvalidArgument, "generator and measure have different state spaces");
    }
    // inflow into each state, scaled by eta(s) |R[s,s]|
    std::vector<double> inflow(gen.dimension(), 0.0);
    for (std::size_t row = 0; row < gen.dimension(); ++row) {
        for (const auto& e : gen.rows[row]) {
            inflow[e.col] += std::exp(measure.log_eta[row] + e.log_rate - measure.log_eta[e.col] - gen.log_exit[e.col]);
        }
    }
    double worst = 0.0;
    for (std::size_t n = 0; n < gen.n_max; ++n) {
        for (std::size_t z = 0; z < gen.env_size; ++z) {
            worst = std::max(worst, std::abs(inflow[gen.index(n, z)] - 1.0));
        }
    }
    return worst;
}

std::string_view to_string(EventKind kind) {
    switch (kind) {
        case EventKind::birth: return "birth";
        case EventKind::death: return "death";
        case EventKind::env: return "env";
    }
    return "unknown";
}

JumpDynamics::JumpDynamics(const ModelSpec& model, const EnvChainSpec& env, double rate_cap)
    : model_(model), env_(env), rate_cap_(rate_cap) {}

void JumpDynamics::extend(std::size_t n) {
    while (log_r_.size() <= n) {
        const std::size_t k = log_r_.size();
        std::vector<double> level(env_.size());
        for (std::size_t z = 0; z < env_.size(); ++z) {
            const EnvPoint coords = env_.states[z].coords;
            if (k == 0) {
                level[z] = 0.0;
            } else {
                const double prev = log_r_[k - 1][z];
                const double lambda = model_.birth(k - 1, coords);
                const double mu = model_.death(k, coords);
                if (!(mu > 0.0)) throw Error(ErrorCode::ZeroDeathRate, "mu_" + std::to_string(k) + " is not positive");
                level[z] = (prev == kNegInf || lambda <= 0.0) ? kNegInf : prev + std::log(lambda) - std::log(mu);
            }
        }
        log_r_.push_back(std::move(level));
        generators_.push_back(env_.generator(k));
    }
}

double JumpDynamics::birth(std::size_t n, std::size_t z) { return model_.birth(n, env_.states[z].coords); }

double JumpDynamics::death(std::size_t n, std::size_t z) { return model_.death(n, env_.states[z].coords); }

double JumpDynamics::env_rate(std::size_t n, std::size_t z, std::size_t z_to) {
    if (z == z_to) return 0.0;
    extend(n);
    const double tau = generators_[n](static_cast<Eigen::Index>(z), static_cast<Eigen::Index>(z_to));
    if (tau <= 0.0) return 0.0;
    return std::exp(std::log(tau) - log_r_[n][z]);
}

double JumpDynamics::env_exit(std::size_t n, std::size_t z) {
    double acc = 0.0;
    for (std::size_t w = 0; w < env_.size(); ++w) acc += env_rate(n, z, w);
    return acc;
}

double JumpDynamics::total(std::size_t n, std::size_t z) {
    const double rate = birth(n, z) + death(n, z) + env_exit(n, z);
    if (!(rate <= rate_cap_)) {
        throw Error(ErrorCode::RateExplosion, "exit rate " + std::to_string(rate) + " at (n=" + std::to_string(n) +
                                                  ", z=" + env_.states[z].label + ") exceeds cap");
    }
    return rate;
}

JumpDynamics::Move JumpDynamics::draw(std::size_t n, std::size_t z, Rng& rng) {
    const double lambda = birth(n, z);
    const double mu = death(n, z);
    const double total_rate = lambda + mu + env_exit(n, z);
    double u = std::uniform_real_distribution<double>(0.0, total_rate)(rng);
    if (u < lambda) return {n + 1, z, EventKind::birth};
    u -= lambda;
    if (u < mu) return {n - 1, z, EventKind::death};
    u -= mu;
    std::size_t last = z;
    for (std::size_t w = 0; w < env_.size(); ++w) {
        const double r = env_rate(n, z, w);
        if (r <= 0.0) continue;
        last = w;
        if (u < r) return {n, w, EventKind::env};
        u -= r;
    }
    // rounding left u just past the final bucket
    if (last != z) return {n, last, EventKind::env};
    return mu > 0.0 ? Move{n - 1, z, EventKind::death} : Move{n + 1, z, EventKind::birth};
}

EmpiricalMeasure JumpPath::occupancy_measure() const { return EmpiricalMeasure::from_weights(occupancy, event_count); }

JumpPath simulate_jump_joint(const ModelSpec& model, const EnvChainSpec& env, std::size_t n0, std::size_t z0,
                             const JumpSimConfig& cfg, Rng& rng) {
    if (z0 >= env.size()) throw Error(ErrorCode::InvalidArgument, "initial environment index out of range");
    if (!(cfg.horizon > 0.0) || cfg.burn_in < 0.0 || cfg.burn_in >= cfg.horizon) {
        throw Error(ErrorCode::InvalidArgument, "need 0 <= burn_in < horizon");
    }
    JumpDynamics dyn(model, env, cfg.rate_cap);
    const std::size_t m = env.size();
    JumpPath path;
    path.n_cap = cfg.occupancy_n_cap;
    path.occupancy.assign((cfg.occupancy_n_cap + 1) * m + 1, 0.0);

    auto occupy = [&](std::size_t n, std::size_t z, double from, double to) {
        from = std::max(from, cfg.burn_in);
        if (to <= from) return;
        const std::size_t cell = n <= path.n_cap ? n * m + z : path.occupancy.size() - 1;
        path.occupancy[cell] += to - from;
    };

    std::size_t n = n0, z = z0;
    double t = 0.0;
    std::exponential_distribution<double> unit_exp(1.0);
    if (cfg.record_path) path.events.push_back({0.0, n, z, EventKind::env});
    while (true) {
        const double rate = dyn.total(n, z);
        const double hold = rate > 0.0 ? unit_exp(rng) / rate : std::numeric_limits<double>::infinity();
        const bool stop_by_events = cfg.max_events > 0 && path.event_count >= cfg.max_events;
        if (stop_by_events || t + hold >= cfg.horizon) {
            const double end = stop_by_events ? t : cfg.horizon;
            occupy(n, z, t, end);
            t = end;
            break;
        }
        occupy(n, z, t, t + hold);
        t += hold;
        const JumpDynamics::Move mv = dyn.draw(n, z, rng);
        n = mv.n;
        z = mv.z;
        ++path.event_count;
        if (cfg.record_path) path.events.push_back({t, n, z, mv.kind});
    }
    path.final_t = t;
    path.final_n = n;
    path.final_z = z;
    return path;
}

void write_events_csv(std::ostream& out, const JumpPath& path) {
    out << "time,n,z_index,event_kind\n";
    const auto old_precision = out.precision(17);
    for (std::size_t i = 0; i < path.events.size(); ++i) {
        const auto& e = path.events[i];
        out << e.t << ',' << e.n << ',' << e.z << ',' << (i == 0 ? "start" : to_string(e.kind)) << '\n';
    }
    out.precision(old_precision);
}

}  // namespace bdre
