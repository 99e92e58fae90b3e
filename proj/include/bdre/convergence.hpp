#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bdre/diffusion.hpp"
#include "bdre/jump_env.hpp"
#include "bdre/joint_sim.hpp"
#include "bdre/model.hpp"
#include "bdre/stats.hpp"

namespace bdre {

/// beta/(beta-a) - a gamma / ((beta-a)(beta+gamma-a)) alpha^{-(beta-a)/gamma}.
/// Needs alpha > 1, beta > 0, gamma > 0, 0 <= a < beta.
double theta(double alpha, double beta, double gamma, double a);

/// PGF of the first passage from 1 to 0 of the walk stepping up with
/// probability p_bar. Evaluated in conjugate form so s -> 0 is harmless.
double g_pgf(double s, double p_bar);
/// G(u) = g(q_bar / (q_bar - u)) for 0 <= u <= u*.
double G_mgf(double u, double p_bar, double q_bar);

struct UStar {
    double u_star = 0.0;
    double G_at_u_star = 0.0;       // g(b^{-1/2}) evaluated numerically
    double closed_form = 0.0;       // sqrt((1 - p) / p)
    double alternative_display = 0.0;  // sqrt(p (1 - p)) / q, the other printed value
};
/// u* = q_bar (1 - sqrt(b)), b = 4 p_bar (1 - p_bar).
UStar u_star(double p_bar, double q_bar);

/// Sup/inf of the rate bounds over levels 1..n_max and a probe set of
/// environment points. Level 0 is left out: p_0 = 1 whenever lambda_0 > 0
/// and the hitting-time argument never waits at 0.
struct BoundsProfile {
    double q_bar = 0.0;
    double p_bar = 0.0;
    double lambda_bar = 0.0;   // sup over all levels, 0 included
    double mu_linear = 0.0;    // inf over n >= 1 of mu_n / n
    double ratio_sup = 0.0;    // sup lambda_{i-1} / mu_i
    std::size_t n_max = 0;
    std::size_t probes = 0;

    bool scenario1() const { return q_bar > 0.0 && p_bar < 0.5; }
    bool scenario2() const { return q_bar > 0.0 && mu_linear > 0.0 && lambda_bar > 0.0; }
};

BoundsProfile bounds_profile(const ModelSpec& model, std::span<const Point> probes, std::size_t n_max);

enum class Scenario { exponential_s1, exponential_s2, polynomial };
std::string_view to_string(Scenario s);

struct RateCertificate {
    Scenario scenario = Scenario::exponential_s1;
    double alpha = 0.0;
    double gamma = 0.0;
    double q_bar = 0.0;
    double p_bar = 0.0;
    double lambda_bar = 0.0;
    double u = 0.0;
    double u_max = 0.0;  // u* (scenario 1) or the search limit
    double epsilon = 0.0;
    double kappa = 0.0;
    double G_value = 0.0;
    double theta_value = 0.0;
    double lhs = 0.0;
    double rhs = 0.0;
    /// log(rhs) - log(lhs); positive iff the strict inequality holds.
    double condition_residual = 0.0;
    double vartheta_bar = 0.0;
    // polynomial
    std::string v_description;
    double c_v = 0.0;
    std::size_t c_v_at = 0;
    bool valid = false;
    std::string label = "probe-certified";
};

/// Evaluates G theta < (1 - alpha^{-q/gamma} gamma/(q+gamma))^{-eps/(1-eps)}
/// for a given value of the G factor.
RateCertificate evaluate_condition(Scenario scenario, double G_value, double alpha, double gamma, double q_bar,
                                   double u, double epsilon);

/// Scenario 1 at one (u, epsilon). Throws DomainError when p_bar >= 1/2.
RateCertificate check_exponential_condition(const BoundsProfile& profile, double alpha, double gamma, double u,
                                            double epsilon);

/// Best kappa over 64 geometric u values in (0, u*] and 32 epsilon values.
/// Returns an invalid certificate when no grid point satisfies the condition.
RateCertificate best_exponential_certificate(const BoundsProfile& profile, double alpha, double gamma);

/// Scenario 2: the same search with G replaced by a busy-period MGF. u runs
/// over (0, u_max] with u_max < q_bar.
RateCertificate best_exponential_certificate_s2(const BoundsProfile& profile, double alpha, double gamma,
                                                const std::function<double(double)>& busy_mgf, double u_max);

/// Geometric u grid of `count` points ending at u_max, starting at u_max * 1e-3.
std::vector<double> u_grid(double u_max, std::size_t count = 64);

struct IntegrabilityPoint {
    double u = 0.0;
    double G = 0.0;
    double value = 0.0;  // sum_n G^n int r_n dnu (+inf if divergent)
};

struct IntegrabilityReport {
    std::vector<IntegrabilityPoint> points;
    double sup_value = 0.0;
    bool series_finite = false;
    bool sufficient_holds = false;  // sup lambda_{i-1}/mu_i <= p/(1-p)
    double ratio_sup = 0.0;
    double ratio_limit = 0.0;  // p/(1-p)
    double c_bound = 0.0;      // (p/(1-p))^{3/2}
    std::string certified_by;  // "series", "sufficient", "series+sufficient"

    bool holds() const { return series_finite || sufficient_holds; }
};

/// Diffusive environment: integrals against the stationary law.
/// Throws Divergence naming the first failing u when neither criterion holds.
IntegrabilityReport check_integrability(const ModelSpec& model, const StationaryLawDiffusive& law,
                                        std::span<const double> us, const BoundsProfile& profile,
                                        std::size_t n_max = 512);
/// Jump environment: sums weighted by the common v.
IntegrabilityReport check_integrability(const ModelSpec& model, const EnvChainSpec& env, const Eigen::VectorXd& v,
                                        std::span<const double> us, const BoundsProfile& profile,
                                        std::size_t n_max = 512);

struct BusyPeriodConfig {
    std::size_t replicas = 100000;
    std::size_t threads = 1;
    std::uint64_t seed = 1;
    double horizon = 1e6;
    bool series = false;  // also evaluate the continued fraction
};

/// Busy periods of the M/M/inf(lambda, mu) queue started at 1.
std::vector<double> busy_period_samples(double lambda_bar, double mu_bar, const BusyPeriodConfig& cfg);

struct BusyPeriodMgf {
    double u = 0.0;
    double estimate = 0.0;
    double stderr_ = 0.0;
    bool heavy_tail_warning = false;
    double series = 0.0;  // NaN when not requested
    bool series_agrees = true;
};

/// E[exp(u tau)] from given samples. Throws DivergenceSuspected when the
/// estimate keeps growing beyond its error across replica doublings.
BusyPeriodMgf busy_period_mgf(std::span<const double> samples, double lambda_bar, double mu_bar, double u,
                              bool series = false);
BusyPeriodMgf busy_period_mgf(double lambda_bar, double mu_bar, double u, const BusyPeriodConfig& cfg);

/// h_n = n mu / (lambda + n mu - u - lambda h_{n+1}), h_1 = E[exp(u tau)].
/// Throws DivergenceSuspected when a denominator is not positive.
double busy_period_mgf_series(double lambda_bar, double mu_bar, double u);

struct EnvCouplingFit {
    double alpha = 0.0;
    double gamma = 0.0;
    TailFit fit;
    std::size_t samples = 0;
    std::size_t censored = 0;
};

/// gamma from the exponential tail of the survival curve, alpha as the
/// smallest constant with S(t) <= alpha exp(-gamma t) at every sample time
/// where at least `min_at_risk` samples are still uncoupled (past that the
/// envelope only tracks the noise of the last few order statistics).
EnvCouplingFit fit_env_coupling(std::span<const double> coupling_times, std::size_t censored = 0,
                                std::size_t min_at_risk = 30);

struct CouplingConfig {
    std::size_t replicas = 10000;
    std::size_t threads = 1;
    std::uint64_t seed = 1;
    double horizon = 1e4;
    double rate_cap = 1e9;
    double dt = 1e-3;  // diffusive environments
};

/// Meeting times of two independent copies of the level-n environment chain
/// over all ordered pairs of distinct starting states, replicas spread evenly.
std::vector<double> env_coupling_times_jump(const EnvChainSpec& env, std::size_t level, const CouplingConfig& cfg,
                                            std::size_t* censored = nullptr);

/// Mirror coupling of two copies of a 1D reflected diffusion started at z1
/// and z2 (speed 1): the second copy uses the negated noise until the paths
/// cross, after which they are merged.
std::vector<double> env_coupling_times_mirror(const DiffusionSpec& spec, double z1, double z2,
                                              const CouplingConfig& cfg, std::size_t* censored = nullptr);

struct CouplingResult {
    std::vector<double> times;  // uncensored coupling times
    std::size_t censored = 0;
    MeanEstimate mean;
    double mean_attempts = 0.0;  // average J + 1: coupling attempts at N1 = N2 = 0
    TailFit tail;                // exponential fit over the tail third
    double kappa = 0.0;
    bool slope_ok = false;       // tail slope <= -kappa (1 - slack)
};

/// Two copies of the joint jump chain from (n1, z1) and (n2, z2), moved
/// independently until they occupy the same (n, z); afterwards they would
/// move together, so the first meeting is the coupling time.
CouplingResult couple_exponential(const ModelSpec& model, const EnvChainSpec& env, std::size_t n1, std::size_t z1,
                                  std::size_t n2, std::size_t z2, const CouplingConfig& cfg, double kappa = 0.0,
                                  double slack = 0.1);

/// Diffusive version: independent BD parts and independent environments,
/// except that while N1 = N2 = 0 the 1D environments are mirror coupled and
/// the copies merge once their environments cross.
CouplingResult couple_exponential_diffusive(const ModelSpec& model, const DiffusionSpec& spec, const JointState& a,
                                            const JointState& b, const CouplingConfig& cfg, double kappa = 0.0,
                                            double slack = 0.1);

/// Survival curve of coupling times next to C exp(-kappa t) with C chosen so
/// the bound starts at 1: t, survival, bound.
void write_coupling_tail_csv(std::ostream& out, std::span<const double> times, std::size_t censored, double kappa);

struct DominationReport {
    std::size_t excursions = 0;
    std::size_t violations = 0;
    std::size_t steps = 0;
    std::size_t longest = 0;
};

/// Embedded jump chain at probe points against the p_bar walk on shared
/// uniforms, from 1 until the walk returns to 0.
DominationReport check_walk_domination(const ModelSpec& model, std::span<const Point> probes, double p_bar,
                                       std::size_t excursions, std::uint64_t seed, std::size_t level_cap = 100000);

/// N against the M/M/inf(lambda_bar, mu_bar) queue on shared event clocks,
/// with the environment redrawn from the probes at every event.
DominationReport check_mminf_domination(const ModelSpec& model, std::span<const Point> probes, double lambda_bar,
                                        double mu_bar, std::size_t excursions, std::uint64_t seed);

using LevelFn = std::function<double(std::size_t n)>;

/// C_V = inf over 1 <= n <= n_max of -(lambda_n (V(n+1) - V(n)) + mu_n (V(n-1) - V(n))).
/// Throws NotLyapunov when C_V <= 0, InvalidArgument when V(0) != 0 or V
/// decreases.
RateCertificate lyapunov_certificate(const LevelFn& lambda_bar, const LevelFn& mu_bar, const LevelFn& V,
                                     std::size_t n_max, std::string v_description = "V(n) = n");

struct HittingBoundRow {
    std::size_t n = 0;
    double mean = 0.0;
    double stderr_ = 0.0;
    double bound = 0.0;
    bool ok = true;
};

/// MC mean of the hitting time of 0 for the dominating chain from each start
/// next to V(n)/C_V.
std::vector<HittingBoundRow> hitting_bound_table(const LevelFn& lambda_bar, const LevelFn& mu_bar, const LevelFn& V,
                                                 double c_v, std::span<const std::size_t> starts,
                                                 const HittingConfig& cfg);
/// Same, throwing BoundViolated with the margin of the first failing row.
std::vector<HittingBoundRow> hitting_bound_check(const LevelFn& lambda_bar, const LevelFn& mu_bar, const LevelFn& V,
                                                 double c_v, std::span<const std::size_t> starts,
                                                 const HittingConfig& cfg);

/// E V under the stationary law of the dominating chain.
double stationary_mean_v(const LevelFn& lambda_bar, const LevelFn& mu_bar, const LevelFn& V, std::size_t n_max = 2000);

struct DecayCurve {
    std::vector<double> t;
    std::vector<double> tv;
    std::vector<double> bound;
    double noise_floor = 0.0;
    TailFit fit;         // power-law fit of tv over points above 3x the noise floor
    double exponent = 0.0;  // -fit.slope
    bool fitted = false;
};

struct DecayConfig {
    std::size_t replicas = 10000;
    std::size_t threads = 1;
    std::uint64_t seed = 1;
    std::size_t n_cap = 64;
    double rate_cap = 1e9;
};

/// Time-t occupancy of replicas started at (n0, z0) against the stationary
/// cells of the jump chain, on the given time grid. `bound` holds the
/// dominating-chain bound 2 (E V + V(n0)) / (C_V t) when c_v > 0.
DecayCurve tv_decay_polynomial(const ModelSpec& model, const EnvChainSpec& env, std::size_t n0, std::size_t z0,
                               std::span<const double> t_grid, const DecayConfig& cfg, double c_v = 0.0,
                               double stationary_v = 0.0, double v_start = 0.0);

void write_decay_csv(std::ostream& out, const DecayCurve& curve);

/// Plain-text certificate: every constant, validity and probe range.
void write_certificate(std::ostream& out, const RateCertificate& cert, const BoundsProfile* profile = nullptr);

struct ThetaBoundCheck {
    double p_estimate = 0.0;
    double p_stderr = 0.0;
    double p_bound = 0.0;
    double mgf_estimate = 0.0;
    double mgf_stderr = 0.0;
    double theta_value = 0.0;
    bool p_ok = false;
    bool mgf_ok = false;
};

/// xi ~ Exp(beta), eta = log(alpha)/gamma + Exp(gamma) so P(eta > u) = min(1, alpha e^{-gamma u}).
ThetaBoundCheck theta_bound_check(double alpha, double beta, double gamma, double a, std::size_t samples, std::uint64_t seed);

/// Steps of the p_bar walk from 1 to 0.
std::vector<double> walk_first_passage_samples(double p_bar, std::size_t count, std::uint64_t seed);

}  // namespace bdre
