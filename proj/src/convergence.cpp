#include "bdre/convergence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <ostream>
#include <string>

#include "bdre/error.hpp"

namespace bdre {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double x) {
    std::ostringstream s;
    s.precision(10);
    s << x;
    return s.str();
}

void require(bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::DomainError, what);
}

}  // namespace

double theta(double alpha, double beta, double gamma, double a) {
    require(alpha > 1.0 && beta > 0.0 && gamma > 0.0 && a >= 0.0 && a < beta,
            "theta needs alpha > 1, beta > 0, gamma > 0, 0 <= a < beta (got alpha=" + num(alpha) + ", beta=" +
                num(beta) + ", gamma=" + num(gamma) + ", a=" + num(a) + ")");
    const double d = beta - a;
    return beta / d - a * gamma / (d * (d + gamma)) * std::pow(alpha, -d / gamma);
}

double g_pgf(double s, double p_bar) {
    require(p_bar > 0.0 && p_bar < 0.5, "g needs 0 < p_bar < 1/2");
    const double b = 4.0 * p_bar * (1.0 - p_bar);
    const double s_max = 1.0 / std::sqrt(b);
    require(s > 0.0 && s <= s_max * (1.0 + 1e-12), "g is defined for 0 < s <= b^{-1/2} = " + num(s_max) + ", got " + num(s));
    if (s == 1.0) return 1.0;  // the passage time is a.s. finite
    // 1 - b s^2 = (1 - 2p)^2 + b (1 - s^2) keeps digits near s = 1. Within a
    // few ulps of b^{-1/2} the discriminant is rounding noise whose square
    // root would cost eight digits, so it is snapped to 0.
    const double q = 1.0 - 2.0 * p_bar;
    double disc = q * q + b * (1.0 - s) * (1.0 + s);
    if (disc < 8.0 * std::numeric_limits<double>::epsilon()) disc = 0.0;
    return 2.0 * (1.0 - p_bar) * s / (1.0 + std::sqrt(disc));
}

UStar u_star(double p_bar, double q_bar) {
    require(p_bar > 0.0 && p_bar < 0.5, "u* needs 0 < p_bar < 1/2");
    require(q_bar > 0.0, "u* needs q_bar > 0");
    const double b = 4.0 * p_bar * (1.0 - p_bar);
    UStar out;
    out.u_star = q_bar * (1.0 - std::sqrt(b));
    out.G_at_u_star = g_pgf(1.0 / std::sqrt(b), p_bar);
    out.closed_form = std::sqrt((1.0 - p_bar) / p_bar);
    out.alternative_display = std::sqrt(p_bar * (1.0 - p_bar)) / q_bar;
    return out;
}

double G_mgf(double u, double p_bar, double q_bar) {
    const double us = u_star(p_bar, q_bar).u_star;
    require(u >= 0.0 && u <= us * (1.0 + 1e-12), "G is defined for 0 <= u <= u* = " + num(us) + ", got " + num(u));
    return g_pgf(q_bar / (q_bar - std::min(u, us)), p_bar);
}

BoundsProfile bounds_profile(const ModelSpec& model, std::span<const Point> probes, std::size_t n_max) {
    if (probes.empty()) throw Error(ErrorCode::InvalidArgument, "bounds profile needs at least one probe point");
    if (n_max == 0) throw Error(ErrorCode::InvalidArgument, "bounds profile needs n_max >= 1");
    BoundsProfile p;
    p.q_bar = kInf;
    p.mu_linear = kInf;
    p.n_max = n_max;
    p.probes = probes.size();
    for (const Point& z : probes) {
        p.lambda_bar = std::max(p.lambda_bar, model.birth(0, z));
        for (std::size_t n = 1; n <= n_max; ++n) {
            const double lambda = model.birth(n, z);
            const double mu = model.death(n, z);
            if (!(mu > 0.0)) throw Error(ErrorCode::ZeroDeathRate, "mu_" + std::to_string(n) + " is not positive");
            const double q = lambda + mu;
            p.q_bar = std::min(p.q_bar, q);
            p.p_bar = std::max(p.p_bar, lambda / q);
            p.lambda_bar = std::max(p.lambda_bar, lambda);
            p.mu_linear = std::min(p.mu_linear, mu / static_cast<double>(n));
            p.ratio_sup = std::max(p.ratio_sup, model.birth(n - 1, z) / mu);
        }
    }
    return p;
}

std::string_view to_string(Scenario s) {
    switch (s) {
        case Scenario::exponential_s1: return "exponential_s1";
        case Scenario::exponential_s2: return "exponential_s2";
        case Scenario::polynomial: return "polynomial";
    }
    return "unknown";
}

RateCertificate evaluate_condition(Scenario scenario, double G_value, double alpha, double gamma, double q_bar,
                                   double u, double epsilon) {
    require(epsilon > 0.0 && epsilon < 1.0, "epsilon must be in (0, 1)");
    require(u > 0.0, "u must be positive");
    RateCertificate c;
    c.scenario = scenario;
    c.alpha = alpha;
    c.gamma = gamma;
    c.q_bar = q_bar;
    c.u = u;
    c.epsilon = epsilon;
    c.kappa = (1.0 - epsilon) * u;
    c.G_value = G_value;
    c.theta_value = theta(alpha, q_bar, gamma, u);
    const double base = 1.0 - std::pow(alpha, -q_bar / gamma) * gamma / (q_bar + gamma);
    const double log_rhs = -epsilon / (1.0 - epsilon) * std::log(base);
    c.lhs = G_value * c.theta_value;
    c.rhs = std::exp(log_rhs);
    c.condition_residual = log_rhs - std::log(c.lhs);
    c.valid = std::isfinite(c.lhs) && c.condition_residual > 0.0;
    return c;
}

RateCertificate check_exponential_condition(const BoundsProfile& profile, double alpha, double gamma, double u,
                                            double epsilon) {
    require(profile.scenario1(), "scenario 1 needs q_bar > 0 and p_bar < 1/2 (p_bar = " + num(profile.p_bar) + ")");
    const double us = u_star(profile.p_bar, profile.q_bar).u_star;
    require(u > 0.0 && u <= us * (1.0 + 1e-12), "u must lie in (0, u*]");
    RateCertificate c = evaluate_condition(Scenario::exponential_s1, G_mgf(u, profile.p_bar, profile.q_bar), alpha,
                                           gamma, profile.q_bar, u, epsilon);
    c.p_bar = profile.p_bar;
    c.lambda_bar = profile.lambda_bar;
    c.u_max = us;
    c.vartheta_bar = gamma / (profile.lambda_bar + gamma) * std::pow(alpha, -profile.lambda_bar / gamma);
    return c;
}

std::vector<double> u_grid(double u_max, std::size_t count) {
    require(u_max > 0.0 && count >= 2, "u grid needs u_max > 0 and at least two points");
    std::vector<double> out(count);
    const double lo = std::log(u_max * 1e-3), hi = std::log(u_max);
    for (std::size_t k = 0; k < count; ++k) {
        out[k] = std::exp(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1));
    }
    out.back() = u_max;
    return out;
}

namespace {

RateCertificate grid_search(const std::function<RateCertificate(double, double)>& at, std::span<const double> us) {
    RateCertificate best, fallback;
    bool have_best = false, have_fallback = false;
    for (double u : us) {
        for (int j = 1; j <= 32; ++j) {
            const double eps = static_cast<double>(j) / 33.0;
            RateCertificate c;
            try {
                c = at(u, eps);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::DivergenceSuspected) throw;
                continue;
            }
            if (c.valid) {
                if (!have_best || c.kappa > best.kappa) {
                    best = c;
                    have_best = true;
                }
                break;  // larger epsilon only lowers kappa at this u
            }
            if (!have_fallback || c.condition_residual > fallback.condition_residual) {
                fallback = c;
                have_fallback = true;
            }
        }
    }
    if (have_best) return best;
    if (have_fallback) return fallback;
    throw Error(ErrorCode::DivergenceSuspected, "no grid point could be evaluated");
}

}  // namespace

RateCertificate best_exponential_certificate(const BoundsProfile& profile, double alpha, double gamma) {
    require(profile.scenario1(), "scenario 1 needs q_bar > 0 and p_bar < 1/2 (p_bar = " + num(profile.p_bar) + ")");
    const double us = u_star(profile.p_bar, profile.q_bar).u_star;
    const auto grid = u_grid(us);
    return grid_search([&](double u, double eps) { return check_exponential_condition(profile, alpha, gamma, u, eps); },
                       grid);
}

RateCertificate best_exponential_certificate_s2(const BoundsProfile& profile, double alpha, double gamma,
                                                const std::function<double(double)>& busy_mgf, double u_max) {
    require(profile.scenario2(), "scenario 2 needs q_bar > 0, lambda_bar > 0 and mu_n >= n mu_bar with mu_bar > 0");
    require(u_max > 0.0 && u_max < profile.q_bar, "scenario 2 search needs 0 < u_max < q_bar");
    const auto grid = u_grid(u_max);
    std::vector<double> cache(grid.size(), kNaN);
    auto at = [&](double u, double eps) {
        const auto k = static_cast<std::size_t>(std::find(grid.begin(), grid.end(), u) - grid.begin());
        if (std::isnan(cache[k])) cache[k] = busy_mgf(u);
        RateCertificate c = evaluate_condition(Scenario::exponential_s2, cache[k], alpha, gamma, profile.q_bar, u, eps);
        c.p_bar = profile.p_bar;
        c.lambda_bar = profile.lambda_bar;
        c.u_max = u_max;
        c.vartheta_bar = gamma / (profile.lambda_bar + gamma) * std::pow(alpha, -profile.lambda_bar / gamma);
        return c;
    };
    return grid_search(at, grid);
}

namespace {

IntegrabilityReport integrability(const std::function<double(double)>& series_at, std::span<const double> us,
                                  const BoundsProfile& profile) {
    require(profile.scenario1(), "integrability check needs p_bar < 1/2 and q_bar > 0");
    IntegrabilityReport r;
    r.ratio_sup = profile.ratio_sup;
    r.ratio_limit = profile.p_bar / (1.0 - profile.p_bar);
    r.c_bound = std::pow(r.ratio_limit, 1.5);
    r.sufficient_holds = r.ratio_sup <= r.ratio_limit * (1.0 + 1e-12);
    r.series_finite = true;
    double failing_u = kNaN;
    for (double u : us) {
        IntegrabilityPoint pt;
        pt.u = u;
        pt.G = G_mgf(u, profile.p_bar, profile.q_bar);
        try {
            pt.value = series_at(pt.G);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::XiDivergent && e.code() != ErrorCode::Divergence) throw;
            pt.value = kInf;
        }
        if (!std::isfinite(pt.value)) {
            if (r.series_finite) failing_u = u;
            r.series_finite = false;
        }
        r.sup_value = std::max(r.sup_value, pt.value);
        r.points.push_back(pt);
    }
    if (r.series_finite && r.sufficient_holds) {
        r.certified_by = "series+sufficient";
    } else if (r.series_finite) {
        r.certified_by = "series";
    } else if (r.sufficient_holds) {
        r.certified_by = "sufficient";
    } else {
        throw Error(ErrorCode::Divergence, "sum_n G(u)^n int r_n dnu diverges at u=" + num(failing_u) +
                                               " and sup lambda_{i-1}/mu_i = " + num(r.ratio_sup) + " > p/(1-p) = " +
                                               num(r.ratio_limit));
    }
    return r;
}

}  // namespace

IntegrabilityReport check_integrability(const ModelSpec& model, const StationaryLawDiffusive& law,
                                        std::span<const double> us, const BoundsProfile& profile, std::size_t n_max) {
    QuadratureConfig cfg;
    cfg.n_max = n_max;
    cfg.mc_samples = 50000;
    return integrability([&](double G) { return compute_xi_weighted(model, law, G, cfg).xi; }, us, profile);
}

IntegrabilityReport check_integrability(const ModelSpec& model, const EnvChainSpec& env, const Eigen::VectorXd& v,
                                        std::span<const double> us, const BoundsProfile& profile, std::size_t n_max) {
    if (static_cast<std::size_t>(v.size()) != env.size()) {
        throw Error(ErrorCode::InvalidArgument, "v does not match the environment size");
    }
    auto series = [&](double G) {
        double total = 0.0;
        for (std::size_t z = 0; z < env.size(); ++z) {
            const double l = log_ratio_sum(model, env.states[z].coords, n_max, G);
            if (l == kInf) return kInf;
            total += v(static_cast<Eigen::Index>(z)) * std::exp(l);
        }
        return total;
    };
    return integrability(series, us, profile);
}

std::vector<double> busy_period_samples(double lambda_bar, double mu_bar, const BusyPeriodConfig& cfg) {
    require(lambda_bar >= 0.0 && mu_bar > 0.0, "busy period needs lambda >= 0 and mu > 0");
    if (cfg.replicas == 0) throw Error(ErrorCode::InvalidArgument, "need at least one replica");
    std::vector<double> out(cfg.replicas, kInf);
    for_each_replica(cfg.replicas, cfg.threads, [&](std::size_t i) {
        Rng rng = replica_rng(cfg.seed, i);
        std::exponential_distribution<double> unit_exp(1.0);
        std::uniform_real_distribution<double> unif;
        std::size_t n = 1;
        double t = 0.0;
        while (n > 0) {
            const double death = mu_bar * static_cast<double>(n);
            const double rate = lambda_bar + death;
            t += unit_exp(rng) / rate;
            if (t > cfg.horizon) return;
            if (unif(rng) * rate < lambda_bar) {
                ++n;
            } else {
                --n;
            }
        }
        out[i] = t;
    });
    const auto censored = static_cast<std::size_t>(std::count(out.begin(), out.end(), kInf));
    if (censored > 0) {
        throw Error(ErrorCode::HorizonExceeded, std::to_string(censored) + " busy periods exceeded the horizon");
    }
    return out;
}

double busy_period_mgf_series(double lambda_bar, double mu_bar, double u) {
    require(lambda_bar >= 0.0 && mu_bar > 0.0, "busy period needs lambda >= 0 and mu > 0");
    if (u == 0.0) return 1.0;
    auto run = [&](std::size_t depth) {
        double h = 1.0;
        for (std::size_t n = depth; n >= 1; --n) {
            const double nm = static_cast<double>(n) * mu_bar;
            const double denom = lambda_bar + nm - u - lambda_bar * h;
            if (!(denom > 0.0)) {
                throw Error(ErrorCode::DivergenceSuspected,
                            "busy-period continued fraction breaks down at level " + std::to_string(n) + " for u=" + num(u));
            }
            h = nm / denom;
        }
        return h;
    };
    std::size_t depth = 64 + static_cast<std::size_t>(4.0 * (lambda_bar + u) / mu_bar);
    double prev = run(depth);
    for (int k = 0; k < 10; ++k) {
        depth *= 2;
        const double next = run(depth);
        if (std::abs(next - prev) <= 1e-14 * std::abs(next)) return next;
        prev = next;
    }
    return prev;
}

BusyPeriodMgf busy_period_mgf(std::span<const double> samples, double lambda_bar, double mu_bar, double u, bool series) {
    BusyPeriodMgf out;
    out.u = u;
    out.series = kNaN;
    if (u == 0.0) {
        out.estimate = 1.0;
        if (series) out.series = 1.0;
        return out;
    }
    const MgfEstimate full = mgf_estimate(samples, u);
    if (!std::isfinite(full.mean)) {
        throw Error(ErrorCode::DivergenceSuspected, "exp(u tau) overflows at u=" + num(u));
    }
    out.estimate = full.mean;
    out.stderr_ = full.stderr_;
    out.heavy_tail_warning = full.heavy_tail_warning;
    if (samples.size() >= 400 && full.heavy_tail_warning) {
        const MgfEstimate quarter = mgf_estimate(samples.first(samples.size() / 4), u);
        const MgfEstimate half = mgf_estimate(samples.first(samples.size() / 2), u);
        const bool growing = half.mean - quarter.mean > 3.0 * half.stderr_ && full.mean - half.mean > 3.0 * full.stderr_;
        if (growing) {
            throw Error(ErrorCode::DivergenceSuspected,
                        "MGF estimate keeps growing across replica doublings at u=" + num(u));
        }
    }
    if (series) {
        try {
            out.series = busy_period_mgf_series(lambda_bar, mu_bar, u);
            out.series_agrees = std::abs(out.series - out.estimate) <= 3.0 * out.stderr_ + 1e-12;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::DivergenceSuspected) throw;
            out.series = kInf;
            out.series_agrees = false;
        }
    }
    return out;
}

BusyPeriodMgf busy_period_mgf(double lambda_bar, double mu_bar, double u, const BusyPeriodConfig& cfg) {
    const auto samples = busy_period_samples(lambda_bar, mu_bar, cfg);
    return busy_period_mgf(samples, lambda_bar, mu_bar, u, cfg.series);
}

namespace {

// P(T >= t_k) at the sorted uncensored times, censored samples counted as
// still running.
void survival_ge(std::vector<double>& sorted, std::size_t censored, std::vector<double>& surv) {
    std::sort(sorted.begin(), sorted.end());
    const double total = static_cast<double>(sorted.size() + censored);
    surv.resize(sorted.size());
    for (std::size_t k = 0; k < sorted.size(); ++k) surv[k] = (total - static_cast<double>(k)) / total;
}

}  // namespace

EnvCouplingFit fit_env_coupling(std::span<const double> coupling_times, std::size_t censored,
                                std::size_t min_at_risk) {
    std::vector<double> t(coupling_times.begin(), coupling_times.end());
    std::vector<double> s_ge;
    survival_ge(t, censored, s_ge);
    // P(T > t_k): drop the last point, where it would be zero without censoring
    const double total = static_cast<double>(t.size() + censored);
    std::vector<double> x, y;
    for (std::size_t k = 0; k < t.size(); ++k) {
        const double s_gt = (total - static_cast<double>(k + 1)) / total;
        if (s_gt > 0.0 && t[k] > 0.0) {
            x.push_back(t[k]);
            y.push_back(s_gt);
        }
    }
    const std::size_t start = x.size() - x.size() / 3;
    EnvCouplingFit out;
    out.samples = t.size();
    out.censored = censored;
    out.fit = fit_tail(std::span<const double>(x).subspan(start), std::span<const double>(y).subspan(start),
                       TailModel::exponential);
    if (!(out.fit.slope < 0.0)) {
        throw Error(ErrorCode::InsufficientData, "coupling-time tail does not decay (slope " + num(out.fit.slope) + ")");
    }
    out.gamma = -out.fit.slope;
    double alpha = 1.0;
    for (std::size_t k = 0; k < t.size(); ++k) {
        if (t.size() + censored - k < min_at_risk) break;
        alpha = std::max(alpha, s_ge[k] * std::exp(out.gamma * t[k]));
    }
    out.alpha = std::max(alpha, 1.0 + 1e-9);
    return out;
}

std::vector<double> env_coupling_times_jump(const EnvChainSpec& env, std::size_t level, const CouplingConfig& cfg,
                                            std::size_t* censored) {
    const Eigen::MatrixXd T = env.generator(level);
    if (!is_irreducible(T)) throw Error(ErrorCode::NotIrreducible, "T_" + std::to_string(level) + " is reducible");
    const std::size_t m = env.size();
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = 0; b < m; ++b) {
            if (a != b) pairs.emplace_back(a, b);
        }
    }
    std::vector<double> raw(cfg.replicas, 0.0);
    if (!pairs.empty()) {
        for_each_replica(cfg.replicas, cfg.threads, [&](std::size_t i) {
            Rng rng = replica_rng(cfg.seed, i);
            std::exponential_distribution<double> unit_exp(1.0);
            std::uniform_real_distribution<double> unif;
            auto [a, b] = pairs[i % pairs.size()];
            double t = 0.0;
            auto jump_from = [&](std::size_t s) {
                const double exit = -T(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s));
                double x = unif(rng) * exit;
                for (std::size_t to = 0; to < m; ++to) {
                    if (to == s) continue;
                    x -= T(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(to));
                    if (x < 0.0) return to;
                }
                return s == m - 1 ? m - 2 : m - 1;
            };
            while (a != b) {
                const double ra = -T(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a));
                const double rb = -T(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(b));
                t += unit_exp(rng) / (ra + rb);
                if (t >= cfg.horizon) {
                    raw[i] = kInf;
                    return;
                }
                if (unif(rng) * (ra + rb) < ra) {
                    a = jump_from(a);
                } else {
                    b = jump_from(b);
                }
            }
            raw[i] = t;
        });
    }
    std::vector<double> out;
    std::size_t cens = 0;
    for (double t : raw) {
        if (std::isfinite(t)) {
            out.push_back(t);
        } else {
            ++cens;
        }
    }
    if (censored) *censored = cens;
    return out;
}

namespace {

void check_mirror_spec(const DiffusionSpec& spec) {
    if (spec.dim() != 1) throw Error(ErrorCode::InvalidArgument, "mirror coupling is implemented for 1D environments");
}

// One speed-scaled Euler step of both copies with mirrored noise and shared
// jumps. Returns true once the copies have crossed.
bool mirror_step(const DiffusionSpec& spec, double& x, double& y, double h, Rng& rng) {
    double bx = 0.0, by = 0.0, sx = 0.0, sy = 0.0;
    spec.drift(std::span<const double>(&x, 1), std::span<double>(&bx, 1));
    spec.drift(std::span<const double>(&y, 1), std::span<double>(&by, 1));
    spec.sigma(std::span<const double>(&x, 1), std::span<double>(&sx, 1));
    spec.sigma(std::span<const double>(&y, 1), std::span<double>(&sy, 1));
    const double w = std::normal_distribution<double>()(rng) * std::sqrt(h);
    const double before = x - y;
    double nx = x + bx * h + sx * w;
    double ny = y + by * h - sy * w;
    if (spec.jumps.intensity > 0.0 && std::uniform_real_distribution<double>()(rng) < spec.jumps.intensity * h) {
        const double jump = std::exponential_distribution<double>(1.0 / spec.jumps.mean)(rng);
        nx += jump;
        ny += jump;
    }
    // crossing of the unreflected increments or of the reflected points
    const bool crossed_free = (nx - ny) * before <= 0.0;
    reflect(spec.domain, std::span<double>(&nx, 1), 0);
    reflect(spec.domain, std::span<double>(&ny, 1), 0);
    x = nx;
    y = ny;
    return crossed_free || (x - y) * before <= 0.0;
}

}  // namespace

std::vector<double> env_coupling_times_mirror(const DiffusionSpec& spec, double z1, double z2,
                                              const CouplingConfig& cfg, std::size_t* censored) {
    check_mirror_spec(spec);
    std::vector<double> raw(cfg.replicas, kInf);
    const auto max_steps = static_cast<std::size_t>(std::ceil(cfg.horizon / cfg.dt));
    for_each_replica(cfg.replicas, cfg.threads, [&](std::size_t i) {
        Rng rng = replica_rng(cfg.seed, i);
        double x = z1, y = z2;
        if (x == y) {
            raw[i] = 0.0;
            return;
        }
        for (std::size_t k = 1; k <= max_steps; ++k) {
            if (mirror_step(spec, x, y, cfg.dt, rng)) {
                raw[i] = static_cast<double>(k) * cfg.dt;
                return;
            }
        }
    });
    std::vector<double> out;
    std::size_t cens = 0;
    for (double t : raw) {
        if (std::isfinite(t)) {
            out.push_back(t);
        } else {
            ++cens;
        }
    }
    if (censored) *censored = cens;
    return out;
}

namespace {

void finish_coupling(CouplingResult& r, std::vector<double>& raw, const std::vector<double>& attempts, double kappa,
                     double slack) {
    double attempt_sum = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (std::isfinite(raw[i])) {
            r.times.push_back(raw[i]);
        } else {
            ++r.censored;
        }
        attempt_sum += attempts[i];
    }
    r.mean_attempts = attempt_sum / static_cast<double>(raw.size());
    if (r.times.empty()) throw Error(ErrorCode::HorizonExceeded, "every coupling replica reached the horizon");
    r.mean = mean_estimate(r.times);
    r.kappa = kappa;
    try {
        r.tail = fit_survival_tail(r.times, 1.0 / 3.0);
        r.slope_ok = r.tail.slope <= -kappa * (1.0 - slack);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::InsufficientData) throw;
        r.slope_ok = false;
    }
}

}  // namespace

CouplingResult couple_exponential(const ModelSpec& model, const EnvChainSpec& env, std::size_t n1, std::size_t z1,
                                  std::size_t n2, std::size_t z2, const CouplingConfig& cfg, double kappa,
                                  double slack) {
    if (z1 >= env.size() || z2 >= env.size()) throw Error(ErrorCode::InvalidArgument, "environment index out of range");
    if (cfg.replicas == 0) throw Error(ErrorCode::InvalidArgument, "need at least one replica");
    std::vector<double> raw(cfg.replicas, kInf), attempts(cfg.replicas, 0.0);
    for_each_replica(cfg.replicas, cfg.threads, [&](std::size_t i) {
        Rng rng = replica_rng(cfg.seed, i);
        JumpDynamics d1(model, env, cfg.rate_cap), d2(model, env, cfg.rate_cap);
        std::exponential_distribution<double> unit_exp(1.0);
        std::uniform_real_distribution<double> unif;
        std::size_t a_n = n1, a_z = z1, b_n = n2, b_z = z2;
        double t = 0.0;
        bool both_zero = false;
        while (!(a_n == b_n && a_z == b_z)) {
            const bool zero_now = a_n == 0 && b_n == 0;
            if (zero_now && !both_zero) attempts[i] += 1.0;
            both_zero = zero_now;
            const double ra = d1.total(a_n, a_z), rb = d2.total(b_n, b_z);
            t += unit_exp(rng) / (ra + rb);
            if (t >= cfg.horizon) return;
            if (unif(rng) * (ra + rb) < ra) {
                const auto mv = d1.draw(a_n, a_z, rng);
                a_n = mv.n;
                a_z = mv.z;
            } else {
                const auto mv = d2.draw(b_n, b_z, rng);
                b_n = mv.n;
                b_z = mv.z;
            }
        }
        raw[i] = t;
    });
    CouplingResult r;
    finish_coupling(r, raw, attempts, kappa, slack);
    return r;
}

CouplingResult couple_exponential_diffusive(const ModelSpec& model, const DiffusionSpec& spec, const JointState& a,
                                            const JointState& b, const CouplingConfig& cfg, double kappa,
                                            double slack) {
    check_mirror_spec(spec);
    if (cfg.replicas == 0) throw Error(ErrorCode::InvalidArgument, "need at least one replica");
    DiffusiveSimConfig sim;
    sim.dt = cfg.dt;
    sim.horizon = cfg.horizon;
    sim.burn_in = 0.0;
    std::vector<double> raw(cfg.replicas, kInf), attempts(cfg.replicas, 0.0);
    const auto max_steps = static_cast<std::size_t>(std::ceil(cfg.horizon / cfg.dt));
    for_each_replica(cfg.replicas, cfg.threads, [&](std::size_t i) {
        Rng rng = replica_rng(cfg.seed, i);
        DiffusiveStepper s1(model, spec, sim), s2(model, spec, sim);
        JointState x = a, y = b;
        if (x.n == y.n && x.z == y.z) {
            raw[i] = 0.0;
            return;
        }
        std::uniform_real_distribution<double> unif;
        bool both_zero = false;
        for (std::size_t k = 1; k <= max_steps; ++k) {
            const bool zero_now = x.n == 0 && y.n == 0;
            if (zero_now && !both_zero) attempts[i] += 1.0;
            both_zero = zero_now;
            if (zero_now) {
                const double h = cfg.dt * model.beta(0);
                const double lx = model.birth(0, x.z) * cfg.dt, ly = model.birth(0, y.z) * cfg.dt;
                const bool met = mirror_step(spec, x.z[0], y.z[0], h, rng);
                if (met) {
                    raw[i] = static_cast<double>(k) * cfg.dt;
                    return;
                }
                if (unif(rng) < lx) x.n = 1;
                if (unif(rng) < ly) y.n = 1;
                x.t += cfg.dt;
                y.t += cfg.dt;
            } else {
                s1.advance(x, rng);
                s2.advance(y, rng);
            }
        }
    });
    CouplingResult r;
    finish_coupling(r, raw, attempts, kappa, slack);
    return r;
}

void write_coupling_tail_csv(std::ostream& out, std::span<const double> times, std::size_t censored, double kappa) {
    std::vector<double> t(times.begin(), times.end());
    std::vector<double> s;
    survival_ge(t, censored, s);
    const auto old_precision = out.precision(17);
    out << "t,survival,bound\n";
    const double total = static_cast<double>(t.size() + censored);
    for (std::size_t k = 0; k < t.size(); ++k) {
        out << t[k] << ',' << (total - static_cast<double>(k + 1)) / total << ',' << std::exp(-kappa * t[k]) << '\n';
    }
    out.precision(old_precision);
}

DominationReport check_walk_domination(const ModelSpec& model, std::span<const Point> probes, double p_bar,
                                       std::size_t excursions, std::uint64_t seed, std::size_t level_cap) {
    require(p_bar > 0.0 && p_bar < 0.5, "walk domination needs 0 < p_bar < 1/2");
    if (probes.empty()) throw Error(ErrorCode::InvalidArgument, "need at least one probe point");
    DominationReport r;
    r.excursions = excursions;
    Rng rng = replica_rng(seed, 0xd0);
    std::uniform_real_distribution<double> unif;
    for (std::size_t e = 0; e < excursions; ++e) {
        const Point& z = probes[e % probes.size()];
        std::size_t n = 1, w = 1, len = 0;
        bool violated = false;
        while (w > 0) {
            const double u = unif(rng);
            double p = 1.0;
            if (n > 0) {
                const double lambda = model.birth(n, z), mu = model.death(n, z);
                p = lambda / (lambda + mu);
            }
            n = u < p ? n + 1 : n - 1;
            w = u < p_bar ? w + 1 : w - 1;
            ++len;
            if (n > w) violated = true;
            if (w > level_cap) throw Error(ErrorCode::HorizonExceeded, "walk excursion exceeded the level cap");
        }
        r.violations += violated ? 1 : 0;
        r.steps += len;
        r.longest = std::max(r.longest, len);
    }
    return r;
}

DominationReport check_mminf_domination(const ModelSpec& model, std::span<const Point> probes, double lambda_bar,
                                        double mu_bar, std::size_t excursions, std::uint64_t seed) {
    require(lambda_bar > 0.0 && mu_bar > 0.0, "M/M/inf domination needs positive rates");
    if (probes.empty()) throw Error(ErrorCode::InvalidArgument, "need at least one probe point");
    DominationReport r;
    r.excursions = excursions;
    Rng rng = replica_rng(seed, 0xd1);
    std::uniform_real_distribution<double> unif;
    std::uniform_int_distribution<std::size_t> pick(0, probes.size() - 1);
    for (std::size_t e = 0; e < excursions; ++e) {
        std::size_t n = 1, nb = 1, len = 0;
        bool violated = false;
        while (nb > 0) {
            const Point& z = probes[pick(rng)];
            const double lambda = model.birth(n, z);
            const double mu = model.death(n, z);
            const double dbar = mu_bar * static_cast<double>(nb);
            const double up = std::max(lambda_bar, lambda);
            const double total = up + std::max(mu, dbar);
            const double u = unif(rng) * total;
            const bool birth_n = u < lambda, birth_bar = u < lambda_bar;
            const bool death_n = n > 0 && u >= up && u < up + mu;
            const bool death_bar = u >= up && u < up + dbar;
            if (birth_n) ++n;
            if (death_n) --n;
            if (birth_bar) ++nb;
            if (death_bar) --nb;
            ++len;
            if (n > nb) violated = true;
        }
        r.violations += violated ? 1 : 0;
        r.steps += len;
        r.longest = std::max(r.longest, len);
    }
    return r;
}

RateCertificate lyapunov_certificate(const LevelFn& lambda_bar, const LevelFn& mu_bar, const LevelFn& V,
                                     std::size_t n_max, std::string v_description) {
    if (n_max < 1) throw Error(ErrorCode::InvalidArgument, "Lyapunov check needs n_max >= 1");
    if (V(0) != 0.0) throw Error(ErrorCode::InvalidArgument, "V(0) must be 0");
    for (std::size_t n = 1; n <= n_max + 1; ++n) {
        if (V(n) < V(n - 1)) throw Error(ErrorCode::InvalidArgument, "V decreases at n=" + std::to_string(n));
    }
    std::vector<double> drift(n_max + 1, 0.0);
    double c = kInf;
    std::size_t at = 1;
    for (std::size_t n = 1; n <= n_max; ++n) {
        drift[n] = -(lambda_bar(n) * (V(n + 1) - V(n)) + mu_bar(n) * (V(n - 1) - V(n)));
        if (drift[n] < c) {
            c = drift[n];
            at = n;
        }
    }
    if (!(c > 0.0)) {
        throw Error(ErrorCode::NotLyapunov, "-LV(" + std::to_string(at) + ") = " + num(c) + " is not positive");
    }
    bool tail_monotone = true;
    const std::size_t from = std::max<std::size_t>(2, n_max - n_max / 4);
    for (std::size_t n = from; n <= n_max; ++n) {
        tail_monotone = tail_monotone && drift[n] >= drift[n - 1] * (1.0 - 1e-12);
    }
    RateCertificate cert;
    cert.scenario = Scenario::polynomial;
    cert.v_description = std::move(v_description);
    cert.c_v = c;
    cert.c_v_at = at;
    cert.valid = tail_monotone;
    return cert;
}

namespace {

ModelSpec level_model(const LevelFn& lambda_bar, const LevelFn& mu_bar) {
    ModelSpec m;
    m.name = "dominating";
    m.birth_rate = [lambda_bar](std::size_t n, EnvPoint) { return lambda_bar(n); };
    m.death_rate = [mu_bar](std::size_t n, EnvPoint) { return mu_bar(n); };
    return m;
}

}  // namespace

std::vector<HittingBoundRow> hitting_bound_table(const LevelFn& lambda_bar, const LevelFn& mu_bar, const LevelFn& V,
                                                 double c_v, std::span<const std::size_t> starts,
                                                 const HittingConfig& cfg) {
    require(c_v > 0.0, "hitting bound needs C_V > 0");
    const ModelSpec dom = level_model(lambda_bar, mu_bar);
    std::vector<HittingBoundRow> rows;
    for (std::size_t k = 0; k < starts.size(); ++k) {
        HittingBoundRow row;
        row.n = starts[k];
        row.bound = V(row.n) / c_v;
        if (row.n > 0) {
            HittingConfig c = cfg;
            c.seed = cfg.seed + 7919 * k;
            const HittingSample s = hitting_time_bd(dom, {}, row.n, [](std::size_t n, EnvPoint) { return n == 0; }, c);
            if (s.censored > 0) {
                throw Error(ErrorCode::HorizonExceeded,
                            std::to_string(s.censored) + " hitting replicas censored from n=" + std::to_string(row.n));
            }
            row.mean = s.mean.mean;
            row.stderr_ = s.mean.stderr_;
        }
        row.ok = row.mean <= row.bound + 3.0 * row.stderr_;
        rows.push_back(row);
    }
    return rows;
}

std::vector<HittingBoundRow> hitting_bound_check(const LevelFn& lambda_bar, const LevelFn& mu_bar, const LevelFn& V,
                                                 double c_v, std::span<const std::size_t> starts,
                                                 const HittingConfig& cfg) {
    auto rows = hitting_bound_table(lambda_bar, mu_bar, V, c_v, starts, cfg);
    for (const auto& r : rows) {
        if (!r.ok) {
            throw Error(ErrorCode::BoundViolated, "n=" + std::to_string(r.n) + ": mean " + num(r.mean) + " exceeds bound " +
                                                      num(r.bound) + " by " + num(r.mean - r.bound) + " (stderr " +
                                                      num(r.stderr_) + ")");
        }
    }
    return rows;
}

double stationary_mean_v(const LevelFn& lambda_bar, const LevelFn& mu_bar, const LevelFn& V, std::size_t n_max) {
    std::vector<double> log_r{0.0};
    double acc = 0.0;
    for (std::size_t n = 1; n <= n_max; ++n) {
        const double l = lambda_bar(n - 1);
        if (l <= 0.0) break;
        acc += std::log(l) - std::log(mu_bar(n));
        log_r.push_back(acc);
    }
    const double log_total = log_sum_exp(log_r);
    if (log_r.size() == n_max + 1 && log_r.back() - log_total > std::log(1e-14)) {
        throw Error(ErrorCode::Divergence, "dominating chain keeps mass at n_max=" + std::to_string(n_max));
    }
    double mean = 0.0;
    for (std::size_t n = 0; n < log_r.size(); ++n) mean += V(n) * std::exp(log_r[n] - log_total);
    return mean;
}

DecayCurve tv_decay_polynomial(const ModelSpec& model, const EnvChainSpec& env, std::size_t n0, std::size_t z0,
                               std::span<const double> t_grid, const DecayConfig& cfg, double c_v,
                               double stationary_v, double v_start) {
    if (t_grid.empty() || !std::is_sorted(t_grid.begin(), t_grid.end()) || !(t_grid.front() > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "time grid must be positive and increasing");
    }
    if (z0 >= env.size()) throw Error(ErrorCode::InvalidArgument, "initial environment index out of range");
    const InvariantMeasureJump pi = invariant_measure_jump(model, env, std::max<std::size_t>(4 * cfg.n_cap, 256));
    const std::vector<double> ref = pi.cells(cfg.n_cap);
    const std::size_t m = env.size();
    const std::size_t overflow = ref.size() - 1;
    const std::size_t grid = t_grid.size();
    std::vector<std::uint32_t> cells(cfg.replicas * grid);
    for_each_replica(cfg.replicas, cfg.threads, [&](std::size_t i) {
        Rng rng = replica_rng(cfg.seed, i);
        JumpDynamics dyn(model, env, cfg.rate_cap);
        std::exponential_distribution<double> unit_exp(1.0);
        std::size_t n = n0, z = z0, k = 0;
        double t = 0.0;
        while (k < grid) {
            const double rate = dyn.total(n, z);
            const double next = rate > 0.0 ? t + unit_exp(rng) / rate : kInf;
            while (k < grid && t_grid[k] < next) {
                cells[i * grid + k] = static_cast<std::uint32_t>(n <= cfg.n_cap ? n * m + z : overflow);
                ++k;
            }
            if (k == grid) break;
            t = next;
            const auto mv = dyn.draw(n, z, rng);
            n = mv.n;
            z = mv.z;
        }
    });
    DecayCurve curve;
    const double R = static_cast<double>(cfg.replicas);
    for (double p : ref) curve.noise_floor += 0.5 * std::sqrt(2.0 * p * (1.0 - p) / (M_PI * R));
    std::vector<double> counts(ref.size());
    for (std::size_t k = 0; k < grid; ++k) {
        std::fill(counts.begin(), counts.end(), 0.0);
        for (std::size_t i = 0; i < cfg.replicas; ++i) counts[cells[i * grid + k]] += 1.0;
        for (auto& c : counts) c /= R;
        curve.t.push_back(t_grid[k]);
        curve.tv.push_back(tv_distance(counts, ref));
        curve.bound.push_back(c_v > 0.0 ? 2.0 * (stationary_v + v_start) / (c_v * t_grid[k]) : kNaN);
    }
    std::vector<double> x, y;
    for (std::size_t k = 0; k < grid; ++k) {
        if (curve.tv[k] > 3.0 * curve.noise_floor) {
            x.push_back(curve.t[k]);
            y.push_back(curve.tv[k]);
        }
    }
    try {
        curve.fit = fit_tail(x, y, TailModel::power);
        curve.exponent = -curve.fit.slope;
        curve.fitted = true;
    } catch (const Error& e) {
        if (e.code() != ErrorCode::InsufficientData) throw;
    }
    return curve;
}

void write_decay_csv(std::ostream& out, const DecayCurve& curve) {
    const auto old_precision = out.precision(17);
    out << "t,tv,bound\n";
    for (std::size_t k = 0; k < curve.t.size(); ++k) {
        out << curve.t[k] << ',' << curve.tv[k] << ',';
        if (std::isfinite(curve.bound[k])) out << curve.bound[k];
        out << '\n';
    }
    out.precision(old_precision);
}

void write_certificate(std::ostream& out, const RateCertificate& c, const BoundsProfile* profile) {
    const auto old_precision = out.precision(12);
    out << "scenario = " << to_string(c.scenario) << '\n';
    out << "valid = " << (c.valid ? "true" : "false") << '\n';
    out << "label = " << c.label << '\n';
    if (c.scenario == Scenario::polynomial) {
        out << "V = " << c.v_description << '\n';
        out << "C_V = " << c.c_v << '\n';
        out << "C_V_attained_at = " << c.c_v_at << '\n';
    } else {
        out << "alpha = " << c.alpha << '\n';
        out << "gamma = " << c.gamma << '\n';
        out << "q_bar = " << c.q_bar << '\n';
        out << "p_bar = " << c.p_bar << '\n';
        out << "lambda_bar = " << c.lambda_bar << '\n';
        out << "u = " << c.u << '\n';
        out << "u_max = " << c.u_max << '\n';
        out << "epsilon = " << c.epsilon << '\n';
        out << "kappa = " << c.kappa << '\n';
        out << "G(u) = " << c.G_value << '\n';
        out << "theta = " << c.theta_value << '\n';
        out << "lhs = " << c.lhs << '\n';
        out << "rhs = " << c.rhs << '\n';
        out << "condition_residual = " << c.condition_residual << '\n';
        out << "vartheta_bar = " << c.vartheta_bar << '\n';
    }
    if (profile) {
        out << "probe_levels = 1.." << profile->n_max << '\n';
        out << "probe_points = " << profile->probes << '\n';
    }
    out.precision(old_precision);
}

ThetaBoundCheck theta_bound_check(double alpha, double beta, double gamma, double a, std::size_t samples, std::uint64_t seed) {
    ThetaBoundCheck r;
    r.theta_value = theta(alpha, beta, gamma, a);
    r.p_bound = std::pow(alpha, -beta / gamma) * gamma / (beta + gamma);
    Rng rng = replica_rng(seed, 0xb0);
    std::exponential_distribution<double> xi_d(beta), eta_d(gamma);
    const double shift = std::log(alpha) / gamma;
    std::vector<double> ind(samples), mgf(samples);
    for (std::size_t i = 0; i < samples; ++i) {
        const double xi = xi_d(rng);
        const double eta = shift + eta_d(rng);
        ind[i] = eta < xi ? 1.0 : 0.0;
        mgf[i] = std::exp(a * std::min(xi, eta));
    }
    const MeanEstimate p = mean_estimate(ind), m = mean_estimate(mgf);
    r.p_estimate = p.mean;
    r.p_stderr = p.stderr_;
    r.mgf_estimate = m.mean;
    r.mgf_stderr = m.stderr_;
    r.p_ok = r.p_estimate >= r.p_bound - 3.0 * r.p_stderr;
    r.mgf_ok = r.mgf_estimate <= r.theta_value + 3.0 * r.mgf_stderr;
    return r;
}

std::vector<double> walk_first_passage_samples(double p_bar, std::size_t count, std::uint64_t seed) {
    require(p_bar > 0.0 && p_bar < 0.5, "walk needs 0 < p_bar < 1/2");
    Rng rng = replica_rng(seed, 0xa1);
    std::uniform_real_distribution<double> unif;
    std::vector<double> out(count);
    for (auto& v : out) {
        std::size_t level = 1, steps = 0;
        while (level > 0) {
            level = unif(rng) < p_bar ? level + 1 : level - 1;
            ++steps;
        }
        v = static_cast<double>(steps);
    }
    return out;
}

}  // namespace bdre
