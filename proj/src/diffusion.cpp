#include "bdre/diffusion.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/tools/roots.hpp>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "bdre/error.hpp"
#include "bdre/stats.hpp"

namespace bdre {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double std_normal_cdf(double x) { return 0.5 * boost::math::erfc(-x / std::sqrt(2.0)); }

void require_dim(std::size_t d) {
    if (d == 0 || d > kMaxEnvDim) {
        throw Error(ErrorCode::InvalidArgument, "environment dimension must be in 1.." + std::to_string(kMaxEnvDim));
    }
}

}  // namespace

std::string_view to_string(DomainKind kind) {
    switch (kind) {
        case DomainKind::half_line: return "half_line";
        case DomainKind::interval: return "interval";
        case DomainKind::orthant: return "orthant";
        case DomainKind::variable_half_line: return "variable_half_line";
    }
    return "unknown";
}

DomainSpec DomainSpec::half_line(double lower) {
    DomainSpec d;
    d.kind = DomainKind::half_line;
    d.lo = lower;
    d.validate();
    return d;
}

DomainSpec DomainSpec::interval(double lo, double hi) {
    DomainSpec d;
    d.kind = DomainKind::interval;
    d.lo = lo;
    d.hi = hi;
    d.validate();
    return d;
}

DomainSpec DomainSpec::orthant(std::vector<double> shifts, Eigen::MatrixXd reflection) {
    DomainSpec d;
    d.kind = DomainKind::orthant;
    d.shifts = std::move(shifts);
    d.reflection = std::move(reflection);
    d.validate();
    return d;
}

DomainSpec DomainSpec::variable_half_line(std::function<double(std::size_t)> lower) {
    DomainSpec d;
    d.kind = DomainKind::variable_half_line;
    d.lower_of_n = std::move(lower);
    d.validate();
    return d;
}

std::size_t DomainSpec::dim() const { return kind == DomainKind::orthant ? shifts.size() : 1; }

double DomainSpec::lower(std::size_t n) const {
    switch (kind) {
        case DomainKind::variable_half_line: return lower_of_n(n);
        case DomainKind::orthant: return shifts.at(0);
        default: return lo;
    }
}

bool DomainSpec::contains(EnvPoint z, std::size_t n, double tol) const {
    if (z.size() != dim()) return false;
    switch (kind) {
        case DomainKind::half_line: return z[0] >= lo - tol;
        case DomainKind::interval: return z[0] >= lo - tol && z[0] <= hi + tol;
        case DomainKind::variable_half_line: return z[0] >= lower_of_n(n) - tol;
        case DomainKind::orthant:
            for (std::size_t i = 0; i < z.size(); ++i) {
                if (z[i] < shifts[i] - tol) return false;
            }
            return true;
    }
    return false;
}

void DomainSpec::validate() const {
    switch (kind) {
        case DomainKind::half_line:
            if (!std::isfinite(lo)) throw Error(ErrorCode::InvalidArgument, "half-line lower bound must be finite");
            break;
        case DomainKind::interval:
            if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi)) {
                throw Error(ErrorCode::InvalidArgument, "interval needs finite lo < hi");
            }
            break;
        case DomainKind::variable_half_line:
            if (!lower_of_n) throw Error(ErrorCode::InvalidArgument, "variable half-line needs a lower-bound function");
            break;
        case DomainKind::orthant: {
            require_dim(shifts.size());
            for (double s : shifts) {
                if (!std::isfinite(s)) throw Error(ErrorCode::InvalidArgument, "orthant shifts must be finite");
            }
            if (reflection.size() > 0) {
                const auto d = static_cast<Eigen::Index>(shifts.size());
                if (reflection.rows() != d || reflection.cols() != d) {
                    throw Error(ErrorCode::InvalidArgument, "reflection matrix must be square of the orthant dimension");
                }
                if (std::abs(reflection.determinant()) < 1e-12) {
                    throw Error(ErrorCode::InvalidArgument, "reflection matrix is singular");
                }
                for (Eigen::Index i = 0; i < d; ++i) {
                    if (!(reflection(i, i) > 0.0)) {
                        throw Error(ErrorCode::InvalidArgument, "reflection matrix needs a positive diagonal");
                    }
                }
            }
            break;
        }
    }
}

double ExpJumps::mgf(double u) const {
    if (u * mean >= 1.0) return kInf;
    return 1.0 / (1.0 - mean * u);
}

DiffusionSpec rbm_spec(DomainSpec domain, std::vector<double> drift, Eigen::MatrixXd sigma, ExpJumps jumps) {
    const std::size_t d = domain.dim();
    if (drift.size() != d || sigma.rows() != static_cast<Eigen::Index>(d) || sigma.cols() != static_cast<Eigen::Index>(d)) {
        throw Error(ErrorCode::InvalidArgument, "drift and sigma must match the domain dimension");
    }
    if (jumps.intensity < 0.0 || !(jumps.mean > 0.0) || jumps.coord >= d) {
        throw Error(ErrorCode::InvalidArgument, "jump intensity must be >= 0 with a positive mean");
    }
    const Eigen::MatrixXd cov = sigma * sigma.transpose();
    // an all-zero sigma is the frozen (deterministic) environment and is allowed
    if (!sigma.isZero(0.0) && cov.llt().info() != Eigen::Success) {
        throw Error(ErrorCode::InvalidArgument, "sigma sigma^T is not positive definite");
    }
    DiffusionSpec spec;
    spec.domain = std::move(domain);
    spec.jumps = jumps;
    spec.drift = [drift = std::move(drift)](EnvPoint, std::span<double> out) {
        std::copy(drift.begin(), drift.end(), out.begin());
    };
    std::vector<double> flat(d * d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) flat[i * d + j] = sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    spec.sigma = [flat = std::move(flat)](EnvPoint, std::span<double> out) {
        std::copy(flat.begin(), flat.end(), out.begin());
    };
    return spec;
}

DiffusionSpec ou_spec(DomainSpec domain, double c, double sigma, double center) {
    if (domain.dim() != 1) throw Error(ErrorCode::InvalidArgument, "OU environment is one-dimensional");
    if (!(c > 0.0) || !(sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "OU needs c > 0 and sigma > 0");
    DiffusionSpec spec;
    spec.domain = std::move(domain);
    spec.drift = [c, center](EnvPoint z, std::span<double> out) { out[0] = -c * (z[0] - center); };
    spec.sigma = [sigma](EnvPoint, std::span<double> out) { out[0] = sigma; };
    return spec;
}

namespace {

double fold_below(double x, double lo) { return x < lo ? 2.0 * lo - x : x; }

double fold_interval(double x, double lo, double hi) {
    if (x >= lo && x <= hi) return x;
    const double len = hi - lo;
    double y = std::fmod(std::abs(x - lo), 2.0 * len);
    if (y > len) y = 2.0 * len - y;
    return lo + y;
}

// Discrete Skorokhod problem on a shifted orthant: find y >= 0 with
// z = x + R y >= s and y_i (z_i - s_i) = 0, by Gauss-Seidel sweeps.
void project_oblique(const DomainSpec& domain, std::span<double> z) {
    const std::size_t d = z.size();
    bool inside = true;
    for (std::size_t i = 0; i < d; ++i) inside = inside && z[i] >= domain.shifts[i];
    if (inside) return;
    const Eigen::MatrixXd& R = domain.reflection;
    std::array<double, kMaxEnvDim> x{}, y{};
    std::copy(z.begin(), z.end(), x.begin());
    for (int iter = 0; iter < 100; ++iter) {
        double change = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double acc = x[i];
            for (std::size_t j = 0; j < d; ++j) {
                if (j != i) acc += R(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * y[j];
            }
            const double next =
                std::max(0.0, (domain.shifts[i] - acc) / R(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)));
            change = std::max(change, std::abs(next - y[i]));
            y[i] = next;
        }
        if (change < 1e-12) {
            for (std::size_t i = 0; i < d; ++i) {
                double zi = x[i];
                for (std::size_t j = 0; j < d; ++j) zi += R(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * y[j];
                z[i] = std::max(zi, domain.shifts[i]);
            }
            return;
        }
    }
    throw Error(ErrorCode::StepRejected, "oblique reflection projection did not converge in 100 iterations");
}

}  // namespace

void reflect(const DomainSpec& domain, std::span<double> z, std::size_t n) {
    switch (domain.kind) {
        case DomainKind::half_line: z[0] = fold_below(z[0], domain.lo); break;
        case DomainKind::variable_half_line: z[0] = fold_below(z[0], domain.lower_of_n(n)); break;
        case DomainKind::interval: z[0] = fold_interval(z[0], domain.lo, domain.hi); break;
        case DomainKind::orthant:
            if (domain.oblique()) {
                project_oblique(domain, z);
            } else {
                for (std::size_t i = 0; i < z.size(); ++i) z[i] = fold_below(z[i], domain.shifts[i]);
            }
            break;
    }
}

void step_reflected(const DiffusionSpec& spec, std::span<double> z, double dt, std::size_t n, double speed, Rng& rng,
                    const StepOptions& opts) {
    if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "dt must be positive");
    if (!(speed > 0.0) || speed > opts.speed_cap) {
        throw Error(ErrorCode::SpeedCap, "environment speed " + std::to_string(speed) + " outside (0, " +
                                             std::to_string(opts.speed_cap) + "]");
    }
    const std::size_t d = z.size();
    const double h = dt * speed;
    const double root_h = std::sqrt(h);
    std::array<double, kMaxEnvDim> b{}, noise{};
    std::array<double, kMaxEnvDim * kMaxEnvDim> s{};
    spec.drift(z, std::span<double>(b.data(), d));
    spec.sigma(z, std::span<double>(s.data(), d * d));
    std::normal_distribution<double> gauss;
    for (std::size_t j = 0; j < d; ++j) noise[j] = gauss(rng);
    for (std::size_t i = 0; i < d; ++i) {
        double diffusion = 0.0;
        for (std::size_t j = 0; j < d; ++j) diffusion += s[i * d + j] * noise[j];
        z[i] += b[i] * h + root_h * diffusion;
    }
    if (spec.jumps.intensity > 0.0) {
        if (std::uniform_real_distribution<double>()(rng) < spec.jumps.intensity * h) {
            z[spec.jumps.coord] += std::exponential_distribution<double>(1.0 / spec.jumps.mean)(rng);
        }
    }
    reflect(spec.domain, z, n);
}

void run_environment(const DiffusionSpec& spec, Point z0, double dt, double horizon, Rng& rng,
                     const std::function<void(double, EnvPoint)>& observe) {
    if (z0.size() != spec.dim() || !spec.domain.contains(z0)) {
        throw Error(ErrorCode::InvalidArgument, "initial point is not in the domain");
    }
    const auto steps = static_cast<std::size_t>(std::llround(horizon / dt));
    for (std::size_t k = 1; k <= steps; ++k) {
        step_reflected(spec, z0, dt, 0, 1.0, rng);
        observe(static_cast<double>(k) * dt, z0);
    }
}

void write_trajectory_csv(std::ostream& out, std::span<const double> times, std::span<const Point> points) {
    if (times.size() != points.size()) throw Error(ErrorCode::InvalidArgument, "times and points differ in length");
    out << "time";
    const std::size_t d = points.empty() ? 1 : points.front().size();
    for (std::size_t i = 0; i < d; ++i) out << ",z" << i;
    out << '\n';
    const auto old_precision = out.precision(17);
    for (std::size_t k = 0; k < times.size(); ++k) {
        out << times[k];
        for (double v : points[k]) out << ',' << v;
        out << '\n';
    }
    out.precision(old_precision);
}

std::string_view to_string(LawFamily family) {
    switch (family) {
        case LawFamily::exponential: return "exponential";
        case LawFamily::shifted_exponential: return "shifted_exponential";
        case LawFamily::product_exponential: return "product_exponential";
        case LawFamily::one_sided_gaussian: return "one_sided_gaussian";
        case LawFamily::truncated_gaussian: return "truncated_gaussian";
        case LawFamily::mgf_implicit: return "mgf_implicit";
        case LawFamily::point_mass: return "point_mass";
    }
    return "unknown";
}

namespace {

bool is_exponential(LawFamily f) {
    return f == LawFamily::exponential || f == LawFamily::shifted_exponential || f == LawFamily::product_exponential;
}

bool is_gaussian(LawFamily f) { return f == LawFamily::one_sided_gaussian || f == LawFamily::truncated_gaussian; }

// Exponential with rate a on [l, u); rate 0 means uniform on a bounded [l, u].

double exp_cdf(double a, double l, double u, double x) {
    if (x <= l) return 0.0;
    if (x >= u) return 1.0;
    if (a == 0.0) return (x - l) / (u - l);
    const double mass = std::isfinite(u) ? -std::expm1(-a * (u - l)) : 1.0;
    return -std::expm1(-a * (x - l)) / mass;
}

double exp_quantile(double a, double l, double u, double p) {
    if (a == 0.0) return l + p * (u - l);
    const double mass = std::isfinite(u) ? -std::expm1(-a * (u - l)) : 1.0;
    return l - std::log1p(-p * mass) / a;
}

double exp_mean(double a, double l, double u) {
    if (a == 0.0) return 0.5 * (l + u);
    if (!std::isfinite(u)) return l + 1.0 / a;
    const double len = u - l;
    return l + 1.0 / a - len * std::exp(-a * len) / -std::expm1(-a * len);
}

struct GaussBounds {
    double a, b, mass;
};

GaussBounds gauss_bounds(const StationaryLawDiffusive& law) {
    const double a = (law.lower[0] - law.center) / law.scale;
    const double b = std::isfinite(law.upper[0]) ? (law.upper[0] - law.center) / law.scale : kInf;
    const double mass = std::isfinite(b) ? std_normal_cdf(b) - std_normal_cdf(a) : std_normal_cdf(-a);
    return {a, b, mass};
}


double mixture_cdf(const StationaryLawDiffusive& law, double x) {
    const double y = x - law.lower[0];
    if (y <= 0.0) return 0.0;
    return law.weight0 * -std::expm1(-law.u0 * y) + (1.0 - law.weight0) * -std::expm1(-law.u1 * y);
}

}  // namespace

bool StationaryLawDiffusive::independent_coordinates() const { return is_exponential(family) || dim() == 1; }

double StationaryLawDiffusive::log_marginal_density(std::size_t i, double x) const {
    if (is_exponential(family)) {
        const double a = rate.at(i), l = lower.at(i), u = upper.at(i);
        if (x < l || x > u) return kNegInf;
        if (a == 0.0) return -std::log(u - l);
        const double log_mass = std::isfinite(u) ? std::log(-std::expm1(-a * (u - l))) : 0.0;
        return std::log(a) - a * (x - l) - log_mass;
    }
    if (i != 0) throw Error(ErrorCode::DomainError, "law is one-dimensional");
    if (is_gaussian(family)) {
        if (x < lower[0] || x > upper[0]) return kNegInf;
        const GaussBounds g = gauss_bounds(*this);
        const double t = (x - center) / scale;
        return -0.5 * t * t - std::log(std::sqrt(2.0 * M_PI) * scale * g.mass);
    }
    if (family == LawFamily::mgf_implicit) {
        const double y = x - lower[0];
        if (y < 0.0) return kNegInf;
        // the slower pole dominates far out; combine in log form
        const double la = std::log(weight0 * u0) - u0 * y;
        const double w1 = (1.0 - weight0) * u1;
        return w1 > 0.0 ? log_add_exp(la, std::log(w1) - u1 * y)
                        : (w1 == 0.0 ? la : std::log(std::exp(la) + w1 * std::exp(-u1 * y)));
    }
    throw Error(ErrorCode::DomainError, "point mass has no density");
}

double StationaryLawDiffusive::marginal_density(std::size_t i, double x) const {
    return std::exp(log_marginal_density(i, x));
}

double StationaryLawDiffusive::density(EnvPoint z) const { return std::exp(log_density(z)); }

double StationaryLawDiffusive::log_density(EnvPoint z) const {
    if (z.size() != dim()) throw Error(ErrorCode::InvalidArgument, "point dimension does not match the law");
    double out = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) out += log_marginal_density(i, z[i]);
    return out;
}

double StationaryLawDiffusive::marginal_cdf(std::size_t i, double x) const {
    if (is_exponential(family)) return exp_cdf(rate.at(i), lower.at(i), upper.at(i), x);
    if (family == LawFamily::point_mass) return x >= atom.at(i) ? 1.0 : 0.0;
    if (i != 0) throw Error(ErrorCode::DomainError, "law is one-dimensional");
    if (is_gaussian(family)) {
        if (x <= lower[0]) return 0.0;
        if (x >= upper[0]) return 1.0;
        const GaussBounds g = gauss_bounds(*this);
        const double t = (x - center) / scale;
        // upper-tail form keeps precision far out
        return (std::erfc(g.a / std::sqrt(2.0)) - std::erfc(t / std::sqrt(2.0))) / (2.0 * g.mass);
    }
    return mixture_cdf(*this, x);
}

double StationaryLawDiffusive::marginal_quantile(std::size_t i, double p) const {
    if (!(p >= 0.0 && p < 1.0)) throw Error(ErrorCode::DomainError, "quantile level must be in [0, 1)");
    if (is_exponential(family)) return exp_quantile(rate.at(i), lower.at(i), upper.at(i), p);
    if (family == LawFamily::point_mass) return atom.at(i);
    double lo = lower.at(i);
    double hi = std::isfinite(upper.at(i)) ? upper[i] : lo + 1.0;
    while (marginal_cdf(i, hi) < p) hi = lo + 2.0 * (hi - lo);
    for (int k = 0; k < 200 && hi - lo > 1e-14 * std::max(1.0, std::abs(hi)); ++k) {
        const double mid = 0.5 * (lo + hi);
        (marginal_cdf(i, mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

double StationaryLawDiffusive::mean(std::size_t i) const {
    if (is_exponential(family)) return exp_mean(rate.at(i), lower.at(i), upper.at(i));
    if (family == LawFamily::point_mass) return atom.at(i);
    if (i != 0) throw Error(ErrorCode::DomainError, "law is one-dimensional");
    if (is_gaussian(family)) {
        const GaussBounds g = gauss_bounds(*this);
        const double phi_a = std::exp(-0.5 * g.a * g.a) / std::sqrt(2.0 * M_PI);
        const double phi_b = std::isfinite(g.b) ? std::exp(-0.5 * g.b * g.b) / std::sqrt(2.0 * M_PI) : 0.0;
        return center + scale * (phi_a - phi_b) / g.mass;
    }
    return lower[0] + weight0 / u0 + (1.0 - weight0) / u1;
}

double StationaryLawDiffusive::mgf(double u) const {
    if (dim() != 1) throw Error(ErrorCode::DomainError, "mgf is defined for one-dimensional laws");
    const double l = lower[0];
    switch (family) {
        case LawFamily::exponential:
        case LawFamily::shifted_exponential:
        case LawFamily::product_exponential: {
            const double a = rate[0];
            if (std::isfinite(upper[0])) {
                const double len = upper[0] - l;
                if (u == a) return std::exp(u * l) * a * len / -std::expm1(-a * len);
                return std::exp(u * l) * a * std::expm1((u - a) * len) / ((u - a) * -std::expm1(-a * len));
            }
            if (u >= a) return kInf;
            return std::exp(u * l) * a / (a - u);
        }
        case LawFamily::one_sided_gaussian:
        case LawFamily::truncated_gaussian: {
            const GaussBounds g = gauss_bounds(*this);
            const double shift = u * scale;
            const double num = std::isfinite(g.b) ? std_normal_cdf(g.b - shift) - std_normal_cdf(g.a - shift)
                                                  : std_normal_cdf(shift - g.a);
            return std::exp(u * center + 0.5 * shift * shift) * num / g.mass;
        }
        case LawFamily::mgf_implicit: {
            if (u >= u0) return kInf;
            if (u == 0.0) return 1.0;
            return std::exp(u * l) * m_const * u / jump_rbm_f(*this, u);
        }
        case LawFamily::point_mass: return std::exp(u * atom[0]);
    }
    return kInf;
}

void StationaryLawDiffusive::sample(Rng& rng, std::span<double> out) const {
    if (out.size() != dim()) throw Error(ErrorCode::InvalidArgument, "output size does not match the law");
    std::uniform_real_distribution<double> unif;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (family == LawFamily::point_mass) {
            out[i] = atom[i];
        } else if (is_exponential(family)) {
            out[i] = exp_quantile(rate[i], lower[i], upper[i], unif(rng));
        } else if (family == LawFamily::mgf_implicit) {
            const double a = unif(rng) < weight0 ? u0 : u1;
            out[i] = lower[0] + std::exponential_distribution<double>(a)(rng);
        } else {
            // rejection from the untruncated normal is fine for the ranges used here;
            // fall back to inversion when the acceptance region is thin
            const GaussBounds g = gauss_bounds(*this);
            if (g.mass > 0.05) {
                std::normal_distribution<double> gauss(center, scale);
                double x;
                do {
                    x = gauss(rng);
                } while (x < lower[0] || x > upper[0]);
                out[i] = x;
            } else {
                out[i] = marginal_quantile(0, unif(rng));
            }
        }
    }
}

double jump_rbm_f(const StationaryLawDiffusive& law, double u) {
    const double psi = law.jumps.mgf(u);
    return law.drift_c * u - 0.5 * law.sigma * law.sigma * u * u - law.jumps.intensity * psi + law.jumps.intensity;
}

SkewSymmetry skew_symmetry_check(const Eigen::MatrixXd& R, const Eigen::MatrixXd& Sigma) {
    if (R.rows() != R.cols() || Sigma.rows() != Sigma.cols() || R.rows() != Sigma.rows()) {
        throw Error(ErrorCode::InvalidArgument, "R and Sigma must be square of the same size");
    }
    const Eigen::MatrixXd D = Sigma.diagonal().asDiagonal();
    SkewSymmetry out;
    out.residual = (2.0 * Sigma - R * D - D * R.transpose()).cwiseAbs().maxCoeff();
    out.holds = out.residual < 1e-12;
    return out;
}

namespace {

double need(const std::vector<double>& v, std::size_t i, std::string_view tag, std::string_view what) {
    if (v.size() <= i) {
        throw Error(ErrorCode::MissingParam, std::string(tag) + " needs parameter '" + std::string(what) + "'");
    }
    return v[i];
}

double positive(double x, std::string_view tag, std::string_view what) {
    if (!(x > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, std::string(tag) + ": '" + std::string(what) + "' must be positive");
    }
    return x;
}

StationaryLawDiffusive exponential_law(double rate, double lower, double upper) {
    StationaryLawDiffusive law;
    law.family = lower == 0.0 ? LawFamily::exponential : LawFamily::shifted_exponential;
    law.rate = {rate};
    law.lower = {lower};
    law.upper = {upper};
    return law;
}

Eigen::MatrixXd square_from(const std::vector<double>& flat, std::size_t d, std::string_view tag, std::string_view what) {
    if (flat.size() == 1 && d == 1) return Eigen::MatrixXd::Constant(1, 1, flat[0]);
    if (flat.size() == d && d > 1 && what == "sigma") {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < d; ++i) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = flat[i];
        return m;
    }
    if (flat.size() != d * d) {
        throw Error(ErrorCode::InvalidArgument,
                    std::string(tag) + ": '" + std::string(what) + "' needs " + std::to_string(d * d) + " entries");
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = flat[i * d + j];
    }
    return m;
}

StationaryLawDiffusive jump_rbm_law(double c, double sigma, double kappa, double jump_mean, double lower) {
    if (!(c > kappa * jump_mean)) {
        throw Error(ErrorCode::NegativeEffectiveDrift, "jump_rbm: need c > kappa * mean jump, got c=" +
                                                           std::to_string(c) + ", kappa*mean=" +
                                                           std::to_string(kappa * jump_mean));
    }
    StationaryLawDiffusive law;
    law.family = LawFamily::mgf_implicit;
    law.lower = {lower};
    law.upper = {kInf};
    law.drift_c = c;
    law.sigma = sigma;
    law.jumps = ExpJumps{kappa, jump_mean, 0};
    law.m_const = c - kappa * jump_mean;
    if (kappa == 0.0) {
        law.u0 = 2.0 * c / (sigma * sigma);
        law.u1 = law.u0;
        law.weight0 = 1.0;
        return law;
    }
    // F > 0 just right of 0 and F -> -inf as u -> 1/mean, so the root is bracketed
    const double right = 1.0 / jump_mean;
    double lo = 0.0, hi = right;
    for (int k = 0; k < 300 && hi - lo > 1e-15 * right; ++k) {
        const double mid = 0.5 * (lo + hi);
        (mid > 0.0 && jump_rbm_f(law, mid) > 0.0 ? lo : hi) = mid;
    }
    law.u0 = 0.5 * (lo + hi);
    // With exponential jump sizes Psi_nu(u) = M (1 - m u) / Q(u) where
    // Q(u) = (s^2 m / 2)(u - u0)(u - u1), so nu is a two-exponential mixture.
    const double m = jump_mean, s2 = sigma * sigma;
    const double qa = 0.5 * s2 * m, qb = -(c * m + 0.5 * s2), qc = c - kappa * m;
    const double disc = std::sqrt(qb * qb - 4.0 * qa * qc);
    law.u1 = (-qb + disc) / (2.0 * qa);
    const double root_small = qc / (qa * law.u1);
    if (std::abs(root_small - law.u0) > 1e-9 * law.u0) {
        throw Error(ErrorCode::DomainError, "jump_rbm: bisection root disagrees with the quadratic root");
    }
    law.weight0 = law.m_const * (1.0 - m * law.u0) / (qa * (law.u1 - law.u0) * law.u0);
    return law;
}

}  // namespace

StationaryLawDiffusive reflected_ou_law(double c, double sigma, double lower, bool as_printed) {
    positive(c, "reflected_ou", "c");
    positive(sigma, "reflected_ou", "sigma");
    StationaryLawDiffusive law;
    law.family = LawFamily::one_sided_gaussian;
    law.lower = {lower};
    law.upper = {kInf};
    law.center = lower;
    // dZ = -c Z dt + sigma dW has density exp(-c z^2 / sigma^2): variance sigma^2 / (2c)
    law.scale = as_printed ? sigma / (2.0 * std::sqrt(c)) : sigma / std::sqrt(2.0 * c);
    return law;
}

StationaryLawDiffusive point_mass_law(Point z0) {
    StationaryLawDiffusive law;
    law.family = LawFamily::point_mass;
    law.lower = z0;
    law.upper = z0;
    law.atom = std::move(z0);
    return law;
}

DiffusiveExample diffusive_example(std::string_view tag, const DiffusiveParams& p) {
    DiffusiveExample ex;
    ex.tag = std::string(tag);
    const double lower = p.lower.empty() ? 0.0 : p.lower[0];
    if (tag == "rbm_halfline" || tag == "rbm_shifted") {
        if (tag == "rbm_shifted") need(p.lower, 0, tag, "lower");
        const double c = positive(need(p.c, 0, tag, "c"), tag, "c");
        const double s = positive(need(p.sigma, 0, tag, "sigma"), tag, "sigma");
        ex.spec = rbm_spec(DomainSpec::half_line(lower), {-c}, Eigen::MatrixXd::Constant(1, 1, s));
        ex.law = exponential_law(2.0 * c / (s * s), lower, kInf);
        if (tag == "rbm_shifted") ex.law.family = LawFamily::shifted_exponential;
    } else if (tag == "rbm_interval") {
        const double c = need(p.c, 0, tag, "c");
        const double s = positive(need(p.sigma, 0, tag, "sigma"), tag, "sigma");
        if (c < 0.0) throw Error(ErrorCode::InvalidArgument, "rbm_interval: c must be >= 0");
        ex.spec = rbm_spec(DomainSpec::interval(lower, p.upper), {-c}, Eigen::MatrixXd::Constant(1, 1, s));
        ex.law = exponential_law(2.0 * c / (s * s), lower, p.upper);
    } else if (tag == "rbm_product_orthant") {
        const std::size_t d = p.c.size();
        require_dim(d);
        std::vector<double> shifts = p.lower.empty() ? std::vector<double>(d, 0.0) : p.lower;
        if (shifts.size() != d) throw Error(ErrorCode::InvalidArgument, "rbm_product_orthant: lower needs d entries");
        const Eigen::MatrixXd sigma = square_from(p.sigma, d, tag, "sigma");
        const Eigen::MatrixXd R = p.reflection.empty()
                                      ? Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))
                                      : square_from(p.reflection, d, tag, "reflection");
        const Eigen::MatrixXd Sigma = sigma * sigma.transpose();
        const SkewSymmetry skew = skew_symmetry_check(R, Sigma);
        if (!skew.holds) {
            throw Error(ErrorCode::SkewSymmetryFailed, "2 Sigma - R D - D R^T has max entry " + std::to_string(skew.residual));
        }
        const Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(p.c.data(), static_cast<Eigen::Index>(d));
        const Eigen::VectorXd xi = R.fullPivLu().solve(c);
        StationaryLawDiffusive law;
        law.family = d == 1 ? LawFamily::exponential : LawFamily::product_exponential;
        law.lower = shifts;
        law.upper.assign(d, kInf);
        for (std::size_t i = 0; i < d; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            if (!(xi(ii) > 0.0)) {
                throw Error(ErrorCode::NegativeEffectiveDrift,
                            "rbm_product_orthant: component " + std::to_string(i) + " of R^{-1} c is not positive");
            }
            law.rate.push_back(2.0 * xi(ii) / Sigma(ii, ii));
        }
        std::vector<double> drift(d);
        for (std::size_t i = 0; i < d; ++i) drift[i] = -p.c[i];
        ex.spec = rbm_spec(DomainSpec::orthant(shifts, p.reflection.empty() ? Eigen::MatrixXd() : R), drift, sigma);
        ex.law = std::move(law);
    } else if (tag == "reflected_ou") {
        const double c = positive(need(p.c, 0, tag, "c"), tag, "c");
        const double s = positive(need(p.sigma, 0, tag, "sigma"), tag, "sigma");
        if (std::isfinite(p.upper)) {
            ex.spec = ou_spec(DomainSpec::interval(lower, p.upper), c, s, lower);
            ex.law = reflected_ou_law(c, s, lower);
            ex.law.family = LawFamily::truncated_gaussian;
            ex.law.upper = {p.upper};
        } else {
            ex.spec = ou_spec(DomainSpec::half_line(lower), c, s, lower);
            ex.law = reflected_ou_law(c, s, lower);
        }
    } else if (tag == "jump_rbm") {
        const double c = positive(need(p.c, 0, tag, "c"), tag, "c");
        const double s = positive(need(p.sigma, 0, tag, "sigma"), tag, "sigma");
        if (p.jump_intensity < 0.0) throw Error(ErrorCode::InvalidArgument, "jump_rbm: intensity must be >= 0");
        positive(p.jump_mean, tag, "jump_mean");
        ex.law = jump_rbm_law(c, s, p.jump_intensity, p.jump_mean, lower);
        ex.spec = rbm_spec(DomainSpec::half_line(lower), {-c}, Eigen::MatrixXd::Constant(1, 1, s),
                           ExpJumps{p.jump_intensity, p.jump_mean, 0});
    } else {
        throw Error(ErrorCode::UnknownModel, "no diffusive example named '" + std::string(tag) + "'");
    }
    return ex;
}

std::vector<std::string> diffusive_example_names() {
    return {"rbm_halfline", "rbm_shifted", "rbm_interval", "rbm_product_orthant", "reflected_ou", "jump_rbm"};
}

StationaryLawDiffusive stationary_law(std::string_view tag, const DiffusiveParams& params) {
    return diffusive_example(tag, params).law;
}

std::string law_to_json(const StationaryLawDiffusive& law) {
    nlohmann::ordered_json j;
    j["family"] = std::string(to_string(law.family));
    auto finite_or_null = [](const std::vector<double>& v) {
        nlohmann::json arr = nlohmann::json::array();
        for (double x : v) arr.push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr));
        return arr;
    };
    j["lower"] = finite_or_null(law.lower);
    j["upper"] = finite_or_null(law.upper);
    switch (law.family) {
        case LawFamily::exponential:
        case LawFamily::shifted_exponential:
        case LawFamily::product_exponential: j["rate"] = law.rate; break;
        case LawFamily::one_sided_gaussian:
        case LawFamily::truncated_gaussian:
            j["center"] = law.center;
            j["scale"] = law.scale;
            break;
        case LawFamily::mgf_implicit:
            j["c"] = law.drift_c;
            j["sigma"] = law.sigma;
            j["jump_intensity"] = law.jumps.intensity;
            j["jump_mean"] = law.jumps.mean;
            j["M"] = law.m_const;
            j["u0"] = law.u0;
            j["u1"] = law.u1;
            j["weight0"] = law.weight0;
            break;
        case LawFamily::point_mass: j["atom"] = law.atom; break;
    }
    return j.dump(2);
}

std::string_view to_string(XiMethod method) {
    switch (method) {
        case XiMethod::closed_form: return "closed_form";
        case XiMethod::quadrature: return "quadrature";
        case XiMethod::monte_carlo: return "monte_carlo";
        case XiMethod::finite_sum: return "finite_sum";
    }
    return "unknown";
}

double xi_rbm_arrival_closed_form(double c, double sigma, double mu) {
    const double a = 2.0 * c / (sigma * sigma);
    if (!(a - 1.0 / mu > 0.0)) {
        throw Error(ErrorCode::XiDivergent, "2c/sigma^2 - 1/mu = " + std::to_string(a - 1.0 / mu) + " <= 0");
    }
    return a / (a - 1.0 / mu);
}

double log_ratio_sum(const ModelSpec& model, EnvPoint z, std::size_t n_max, double weight) {
    const double log_w = std::log(weight);
    // grow the cutoff until the ratio test certifies the tail
    for (std::size_t cap = n_max; cap <= (std::size_t{1} << 17); cap *= 2) {
        std::vector<double> terms;
        terms.reserve(cap + 1);
        terms.push_back(0.0);
        double acc = 0.0;
        for (std::size_t k = 1; k <= cap; ++k) {
            const double lambda = model.birth(k - 1, z);
            if (lambda <= 0.0) break;
            const double mu = model.death(k, z);
            if (!(mu > 0.0)) throw Error(ErrorCode::ZeroDeathRate, "mu_" + std::to_string(k) + " is not positive");
            acc += std::log(lambda) - std::log(mu) + log_w;
            terms.push_back(acc);
        }
        if (terms.size() <= cap) return log_sum_exp(terms);  // chain cannot pass some level
        CumulativeRatio cr;
        cr.log_values = terms;
        const SummabilityReport report = tail_report(cr);
        if (report.summable()) {
            const double head = log_sum_exp(terms);
            return log_add_exp(head, report.log_residual);
        }
        if (report.verdict == Summability::divergent && report.tail_ratio >= 1.0) {
            // ratios >= 1 and not falling across the window: more terms will not
            // help. Falling ratios (infinite-server type) may still cross 1 later.
            const std::size_t k0 = terms.size() - terms.size() / 4;
            const double first = terms[k0] - terms[k0 - 1];
            const double last = terms.back() - terms[terms.size() - 2];
            bool rising = true;
            for (std::size_t k = k0; k < terms.size(); ++k) rising = rising && terms[k] >= terms[k - 1];
            if (rising && last >= first - 1e-12) return kInf;
        }
    }
    return kInf;
}

namespace {

// Composite Gauss-Legendre nodes on [a, b] split into `pieces`.
template <class Fn>
void composite_nodes(double a, double b, std::size_t pieces, Fn&& fn) {
    using rule = boost::math::quadrature::gauss<double, 20>;
    const auto& x = rule::abscissa();
    const auto& w = rule::weights();
    const double h = (b - a) / static_cast<double>(pieces);
    for (std::size_t p = 0; p < pieces; ++p) {
        const double mid = a + (static_cast<double>(p) + 0.5) * h;
        const double half = 0.5 * h;
        for (std::size_t k = 0; k < x.size(); ++k) {
            if (x[k] == 0.0) {
                fn(mid, w[k] * half);
            } else {
                fn(mid - half * x[k], w[k] * half);
                fn(mid + half * x[k], w[k] * half);
            }
        }
    }
}

struct TailProbe {
    double slope = -kInf;
    double z_far = 0.0;
};

TailProbe probe_tail(const std::function<double(double)>& log_integrand, const StationaryLawDiffusive& law) {
    TailProbe probe;
    if (std::isfinite(law.upper[0])) return probe;
    const double za = law.marginal_quantile(0, 1.0 - 1e-6);
    const double zb = law.marginal_quantile(0, 1.0 - 1e-9);
    const double fa = log_integrand(za), fb = log_integrand(zb);
    probe.slope = fb == kInf ? kInf : (fb - fa) / (zb - za);
    probe.z_far = zb;
    return probe;
}

XiResult xi_one_dimensional(const ModelSpec& model, const StationaryLawDiffusive& law, double weight,
                            const QuadratureConfig& cfg) {
    auto log_f = [&](double z) {
        const double ld = law.log_density(std::span<const double>(&z, 1));
        if (ld == kNegInf) return kNegInf;
        return ld + log_ratio_sum(model, std::span<const double>(&z, 1), cfg.n_max, weight);
    };
    XiResult out;
    out.method = XiMethod::quadrature;
    const TailProbe probe = probe_tail(log_f, law);
    out.tail_slope = probe.slope;
    if (std::isfinite(probe.slope)) {
        const double za = law.marginal_quantile(0, 1.0 - 1e-6);
        const double density_slope =
            (law.log_density(std::span<const double>(&probe.z_far, 1)) - law.log_density(std::span<const double>(&za, 1))) /
            (probe.z_far - za);
        if (probe.slope >= 1e-9 * density_slope) {
            throw Error(ErrorCode::XiDivergent,
                        "integrand of Xi does not decay (log slope " + std::to_string(probe.slope) + ")");
        }
    } else if (probe.slope == kInf) {
        throw Error(ErrorCode::XiDivergent, "sum of r_n diverges in the far tail of the law");
    }

    auto f = [&](double z) {
        const double v = log_f(z);
        if (v == kInf) throw Error(ErrorCode::XiDivergent, "sum of r_n diverges at z=" + std::to_string(z));
        return std::exp(v);
    };
    using gk = boost::math::quadrature::gauss_kronrod<double, 61>;
    const double lo = law.lower[0];
    if (std::isfinite(law.upper[0])) {
        double err = 0.0;
        out.xi = gk::integrate(f, lo, law.upper[0], 15, cfg.rel_tol, &err);
        out.error = err;
        return out;
    }
    // Integrate segment by segment until the remaining exponential tail,
    // bounded from the local log-slope, is negligible.
    const double step = std::max(law.marginal_quantile(0, 0.999) - lo, 1e-6);
    double a = lo, total = 0.0, err_total = 0.0;
    for (int seg = 0; seg < 100000; ++seg) {
        const double b = a + step;
        double err = 0.0;
        total += gk::integrate(f, a, b, 15, cfg.rel_tol, &err);
        err_total += err;
        const double fb = log_f(b);
        const double fb2 = log_f(b + 0.5 * step);
        const double local = (fb2 - fb) / (0.5 * step);
        a = b;
        if (fb == kNegInf) break;
        if (local < 0.0) {
            const double tail = std::exp(fb) / -local;
            if (tail < cfg.rel_tol * total * 1e-2) {
                total += tail;
                err_total += tail;
                break;
            }
        }
    }
    out.xi = total;
    out.error = err_total;
    return out;
}

XiResult xi_monte_carlo(const ModelSpec& model, const StationaryLawDiffusive& law, double weight,
                        const QuadratureConfig& cfg) {
    Rng rng = replica_rng(cfg.seed, 0x5eed);
    std::vector<double> values(cfg.mc_samples);
    Point z(law.dim());
    for (auto& v : values) {
        law.sample(rng, z);
        const double l = log_ratio_sum(model, z, cfg.n_max, weight);
        if (l == kInf) throw Error(ErrorCode::XiDivergent, "sum of r_n diverges at a sampled environment point");
        v = std::exp(l);
    }
    const MeanEstimate est = mean_estimate(values);
    XiResult out;
    out.method = XiMethod::monte_carlo;
    out.xi = est.mean;
    out.error = est.stderr_;
    if (!std::isfinite(out.xi)) throw Error(ErrorCode::XiDivergent, "Monte Carlo estimate of Xi is not finite");
    return out;
}

}  // namespace

XiResult compute_xi_weighted(const ModelSpec& model, const StationaryLawDiffusive& law, double weight,
                             const QuadratureConfig& cfg) {
    if (!(weight > 0.0)) throw Error(ErrorCode::InvalidArgument, "weight must be positive");
    if (law.family == LawFamily::point_mass) {
        XiResult out;
        out.method = XiMethod::finite_sum;
        const double l = log_ratio_sum(model, law.atom, cfg.n_max, weight);
        if (l == kInf) throw Error(ErrorCode::XiDivergent, "sum of r_n diverges at the atom");
        out.xi = std::exp(l);
        return out;
    }
    if (law.dim() == 1) return xi_one_dimensional(model, law, weight, cfg);
    return xi_monte_carlo(model, law, weight, cfg);
}

XiResult compute_xi_diffusive(const ModelSpec& model, const StationaryLawDiffusive& law, const QuadratureConfig& cfg) {
    return compute_xi_weighted(model, law, 1.0, cfg);
}

ZBinning ZBinning::from_law(const StationaryLawDiffusive& law, std::size_t bins_per_dim, double coverage) {
    if (bins_per_dim == 0) throw Error(ErrorCode::InvalidArgument, "need at least one bin");
    ZBinning b;
    const std::size_t d = law.dim();
    const double per_dim = std::pow(coverage, 1.0 / static_cast<double>(d));
    for (std::size_t i = 0; i < d; ++i) {
        if (law.family == LawFamily::point_mass) {
            b.lo.push_back(law.atom[i] - 0.5);
            b.hi.push_back(law.atom[i] + 0.5);
        } else {
            b.lo.push_back(law.lower[i]);
            b.hi.push_back(std::isfinite(law.upper[i]) ? law.upper[i] : law.marginal_quantile(i, per_dim));
        }
        b.counts.push_back(bins_per_dim);
    }
    return b;
}

std::size_t ZBinning::cells() const {
    std::size_t total = 1;
    for (auto c : counts) total *= c;
    return total;
}

std::size_t ZBinning::index(EnvPoint z) const {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < lo.size(); ++i) {
        if (z[i] < lo[i] || z[i] > hi[i]) return cells();
        auto k = static_cast<std::size_t>((z[i] - lo[i]) / width(i));
        k = std::min(k, counts[i] - 1);
        idx = idx * counts[i] + k;
    }
    return idx;
}

Point ZBinning::center(std::size_t cell) const {
    Point out(lo.size());
    for (std::size_t i = lo.size(); i-- > 0;) {
        const std::size_t k = cell % counts[i];
        cell /= counts[i];
        out[i] = lo[i] + (static_cast<double>(k) + 0.5) * width(i);
    }
    return out;
}

namespace {

// Adds exp(log r_n(z)) * w to acc[n] for every n < acc.size().
void accumulate_ratios(const ModelSpec& model, EnvPoint z, double w, std::vector<double>& acc) {
    double lr = 0.0;
    acc[0] += w;
    for (std::size_t n = 1; n < acc.size(); ++n) {
        const double lambda = model.birth(n - 1, z);
        if (lambda <= 0.0) return;
        lr += std::log(lambda) - std::log(model.death(n, z));
        acc[n] += std::exp(lr) * w;
    }
}

}  // namespace

InvariantMeasureDiffusive invariant_measure_diffusive(const ModelSpec& model, const StationaryLawDiffusive& law,
                                                      std::size_t n_max, const QuadratureConfig& cfg) {
    InvariantMeasureDiffusive out;
    out.law = law;
    out.xi = compute_xi_diffusive(model, law, cfg);
    out.weights.assign(n_max + 1, 0.0);
    if (law.family == LawFamily::point_mass) {
        accumulate_ratios(model, law.atom, 1.0, out.weights);
    } else if (law.dim() == 1) {
        const double lo = law.lower[0];
        double hi = std::isfinite(law.upper[0]) ? law.upper[0] : law.marginal_quantile(0, 1.0 - 1e-14);
        std::size_t pieces = 400;
        if (!std::isfinite(law.upper[0])) {
            // r_n shifts mass to large z for large n: extend until the whole
            // integrand is negligible against Xi
            const double step = hi - lo;
            const double floor = std::log(out.xi.xi) - 40.0;
            auto log_f = [&](double z) {
                return law.log_density(std::span<const double>(&z, 1)) +
                       log_ratio_sum(model, std::span<const double>(&z, 1), cfg.n_max);
            };
            for (int k = 0; k < 1000 && log_f(hi) > floor; ++k) {
                hi += step;
                pieces += 400;
            }
        }
        composite_nodes(lo, hi, pieces, [&](double z, double w) {
            const double dens = law.marginal_density(0, z);
            if (dens > 0.0) accumulate_ratios(model, std::span<const double>(&z, 1), w * dens, out.weights);
        });
    } else {
        Rng rng = replica_rng(cfg.seed, 0x3e16);
        Point z(law.dim());
        const double w = 1.0 / static_cast<double>(cfg.mc_samples);
        for (std::size_t k = 0; k < cfg.mc_samples; ++k) {
            law.sample(rng, z);
            accumulate_ratios(model, z, w, out.weights);
        }
    }
    for (auto& w : out.weights) w /= out.xi.xi;
    return out;
}

std::vector<double> InvariantMeasureDiffusive::cells(const ModelSpec& model, const ZBinning& bins, std::size_t n_cap) const {
    const std::size_t nb = bins.cells();
    std::vector<double> out((n_cap + 1) * nb + 1, 0.0);
    std::vector<double> acc(n_cap + 1);
    if (law.family == LawFamily::point_mass) {
        std::fill(acc.begin(), acc.end(), 0.0);
        accumulate_ratios(model, law.atom, 1.0, acc);
        const std::size_t cell = bins.index(law.atom);
        if (cell < nb) {
            for (std::size_t n = 0; n <= n_cap; ++n) out[n * nb + cell] = acc[n] / xi.xi;
        }
    } else if (bins.dim() == 1) {
        for (std::size_t b = 0; b < nb; ++b) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const double a = bins.lo[0] + static_cast<double>(b) * bins.width(0);
            composite_nodes(a, a + bins.width(0), 4, [&](double z, double w) {
                const double dens = law.marginal_density(0, z);
                if (dens > 0.0) accumulate_ratios(model, std::span<const double>(&z, 1), w * dens, acc);
            });
            for (std::size_t n = 0; n <= n_cap; ++n) out[n * nb + b] = acc[n] / xi.xi;
        }
    } else {
        // Monte Carlo over the law, one sample stream shared by every cell
        QuadratureConfig cfg;
        Rng rng = replica_rng(cfg.seed, 0xce11);
        Point z(law.dim());
        const double w = 1.0 / static_cast<double>(cfg.mc_samples);
        for (std::size_t k = 0; k < cfg.mc_samples; ++k) {
            law.sample(rng, z);
            const std::size_t cell = bins.index(z);
            if (cell >= nb) continue;
            std::fill(acc.begin(), acc.end(), 0.0);
            accumulate_ratios(model, z, w, acc);
            for (std::size_t n = 0; n <= n_cap; ++n) out[n * nb + cell] += acc[n] / xi.xi;
        }
    }
    double inside = 0.0;
    for (std::size_t i = 0; i + 1 < out.size(); ++i) inside += out[i];
    out.back() = std::max(0.0, 1.0 - inside);
    return out;
}

VariableDomainLaw variable_domain_law(const std::function<double(std::size_t)>& lower, double c, double sigma,
                                      std::size_t n_max) {
    positive(c, "variable_domain", "c");
    positive(sigma, "variable_domain", "sigma");
    VariableDomainLaw out;
    out.c = c;
    out.sigma = sigma;
    for (std::size_t n = 0; n <= n_max; ++n) {
        const double l = lower(n);
        if (!(l > 0.0)) {
            throw Error(ErrorCode::InvalidArgument, "variable domain lower bound must be positive at n=" + std::to_string(n));
        }
        out.laws.push_back(exponential_law(2.0 * c / (sigma * sigma), l, kInf));
        out.laws.back().family = LawFamily::shifted_exponential;
    }
    return out;
}

XiResult compute_xi_variable(const ModelSpec& model, const VariableDomainLaw& law, double rel_tol) {
    using gk = boost::math::quadrature::gauss_kronrod<double, 61>;
    std::vector<double> terms;
    XiResult out;
    out.method = XiMethod::quadrature;
    for (std::size_t n = 0; n < law.laws.size(); ++n) {
        const StationaryLawDiffusive& nu = law.laws[n];
        auto f = [&](double z) {
            const double lr = log_ratio(model, n, std::span<const double>(&z, 1));
            if (lr == kNegInf) return 0.0;
            return std::exp(lr) * nu.marginal_density(0, z);
        };
        double err = 0.0;
        const double a = nu.lower[0];
        const double term = gk::integrate(f, a, kInf, 15, rel_tol, &err);
        if (!std::isfinite(term)) throw Error(ErrorCode::XiDivergent, "term n=" + std::to_string(n) + " is not finite");
        terms.push_back(term);
        out.error += err;
        if (term == 0.0 && n > 0) break;  // births blocked: all later terms vanish
    }
    const double head = std::accumulate(terms.begin(), terms.end(), 0.0);
    if (terms.back() > 0.0 && terms.size() >= 8) {
        double q = 0.0;
        for (std::size_t k = terms.size() - terms.size() / 4; k < terms.size(); ++k) {
            q = std::max(q, terms[k] / terms[k - 1]);
        }
        if (!(q < 1.0 - 1e-3)) {
            throw Error(ErrorCode::XiDivergent, "terms of Xi do not decay geometrically (ratio " + std::to_string(q) + ")");
        }
        const double tail = terms.back() * q / (1.0 - q);
        out.error += tail;
        out.xi = head + tail;
    } else {
        out.xi = head;
    }
    return out;
}

}  // namespace bdre
