#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bdre/model.hpp"
#include "bdre/parallel.hpp"

namespace bdre {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr std::size_t kMaxEnvDim = 8;

enum class DomainKind { half_line, interval, orthant, variable_half_line };
std::string_view to_string(DomainKind kind);

struct DomainSpec {
    DomainKind kind = DomainKind::half_line;
    double lo = 0.0;
    double hi = kInf;
    std::vector<double> shifts;                 // orthant corner
    std::function<double(std::size_t)> lower_of_n;  // variable_half_line
    Eigen::MatrixXd reflection;                 // empty means normal reflection

    static DomainSpec half_line(double lower = 0.0);
    static DomainSpec interval(double lo, double hi);
    static DomainSpec orthant(std::vector<double> shifts, Eigen::MatrixXd reflection = {});
    static DomainSpec variable_half_line(std::function<double(std::size_t)> lower);

    std::size_t dim() const;
    bool oblique() const { return reflection.size() > 0; }
    /// Lower boundary of a 1D domain at BD state n.
    double lower(std::size_t n = 0) const;
    bool contains(EnvPoint z, std::size_t n = 0, double tol = 1e-12) const;
    /// Throws InvalidArgument on lo >= hi, non-finite shifts, or a singular
    /// or misshapen reflection matrix.
    void validate() const;
};

/// Upward jumps along one coordinate with exponential sizes of the given
/// mean. Intensity 0 switches jumps off.
struct ExpJumps {
    double intensity = 0.0;
    double mean = 1.0;
    std::size_t coord = 0;

    double mgf(double u) const;  // +inf for u >= 1/mean
};

using VectorField = std::function<void(EnvPoint z, std::span<double> out)>;

struct DiffusionSpec {
    DomainSpec domain;
    VectorField drift;  // b(z), length d
    VectorField sigma;  // row-major d x d
    ExpJumps jumps;

    std::size_t dim() const { return domain.dim(); }
};

/// Constant drift and diffusion matrix.
DiffusionSpec rbm_spec(DomainSpec domain, std::vector<double> drift, Eigen::MatrixXd sigma, ExpJumps jumps = {});
/// dZ = -c (Z - center) dt + sigma dW on a 1D domain.
DiffusionSpec ou_spec(DomainSpec domain, double c, double sigma, double center);

/// Folding map for 1D and normal-reflection orthants; projected fixed point
/// for oblique orthants. Modifies z in place.
void reflect(const DomainSpec& domain, std::span<double> z, std::size_t n = 0);

struct StepOptions {
    double speed_cap = 1e12;
};

/// One Euler-Maruyama step of environment time dt * speed, followed by at
/// most one jump and then reflection. Throws SpeedCap / StepRejected.
void step_reflected(const DiffusionSpec& spec, std::span<double> z, double dt, std::size_t n, double speed, Rng& rng,
                    const StepOptions& opts = {});

/// Runs the environment alone for `horizon` time units in steps of dt and
/// calls observe(t, z) after every step.
void run_environment(const DiffusionSpec& spec, Point z0, double dt, double horizon, Rng& rng,
                     const std::function<void(double, EnvPoint)>& observe);

void write_trajectory_csv(std::ostream& out, std::span<const double> times, std::span<const Point> points);

enum class LawFamily {
    exponential,
    shifted_exponential,
    product_exponential,
    one_sided_gaussian,
    truncated_gaussian,
    mgf_implicit,
    point_mass
};
std::string_view to_string(LawFamily family);

/// Closed-form stationary law of a reflected (jump) diffusion. Densities are
/// normalized.
struct StationaryLawDiffusive {
    LawFamily family = LawFamily::exponential;
    std::vector<double> lower;  // per coordinate
    std::vector<double> upper;  // per coordinate, +inf when unbounded
    std::vector<double> rate;   // exponential families
    double center = 0.0;        // gaussian families: exp(-(z - center)^2 / (2 scale^2))
    double scale = 1.0;
    // mgf_implicit: F(u) = c u - sigma^2 u^2 / 2 - kappa Psi_K(u) + kappa
    double drift_c = 0.0;
    double sigma = 0.0;
    ExpJumps jumps;
    double m_const = 0.0;  // M = F'(0)
    double u0 = 0.0;       // positive root of F
    double u1 = 0.0;       // second pole of Psi_nu (exponential jump sizes)
    double weight0 = 1.0;  // nu = weight0 Exp(u0) + (1 - weight0) Exp(u1)
    Point atom;            // point_mass

    std::size_t dim() const { return lower.size(); }
    double density(EnvPoint z) const;
    double log_density(EnvPoint z) const;
    double marginal_density(std::size_t i, double x) const;
    double log_marginal_density(std::size_t i, double x) const;
    double marginal_cdf(std::size_t i, double x) const;
    double marginal_quantile(std::size_t i, double p) const;
    double mean(std::size_t i = 0) const;
    /// E[exp(u Z)] for 1D laws; +inf where it diverges.
    double mgf(double u) const;
    void sample(Rng& rng, std::span<double> out) const;
    /// Product-form families whose coordinates are independent.
    bool independent_coordinates() const;
};

/// F(u) of the jump-RBM law.
double jump_rbm_f(const StationaryLawDiffusive& law, double u);

struct SkewSymmetry {
    bool holds = false;
    double residual = 0.0;
};
SkewSymmetry skew_symmetry_check(const Eigen::MatrixXd& R, const Eigen::MatrixXd& Sigma);

/// Parameters shared by the diffusive catalog. Drift is -c (toward the
/// lower boundary); sigma is the scalar or row-major d x d matrix.
struct DiffusiveParams {
    std::vector<double> c;
    std::vector<double> sigma;
    std::vector<double> reflection;  // row-major; empty is the identity
    std::vector<double> lower;
    double upper = kInf;
    double jump_intensity = 0.0;
    double jump_mean = 1.0;
};

struct DiffusiveExample {
    std::string tag;
    DiffusionSpec spec;
    StationaryLawDiffusive law;
};

/// Tags: rbm_halfline, rbm_shifted, rbm_interval, rbm_product_orthant,
/// reflected_ou, jump_rbm. Throws UnknownModel, MissingParam,
/// SkewSymmetryFailed, NegativeEffectiveDrift.
DiffusiveExample diffusive_example(std::string_view tag, const DiffusiveParams& params);
std::vector<std::string> diffusive_example_names();

StationaryLawDiffusive stationary_law(std::string_view tag, const DiffusiveParams& params);
StationaryLawDiffusive point_mass_law(Point z0);
/// Reflected OU law on [lower, inf). With as_printed the density is
/// exp(-2 c z^2 / sigma^2), the form shown in the source text, kept only
/// for side-by-side comparison; the default is the law the process has.
StationaryLawDiffusive reflected_ou_law(double c, double sigma, double lower = 0.0, bool as_printed = false);

std::string law_to_json(const StationaryLawDiffusive& law);

struct QuadratureConfig {
    std::size_t n_max = 512;
    double rel_tol = 1e-10;
    std::size_t mc_samples = 200000;  // used for laws of dimension >= 2
    std::uint64_t seed = 1;
};

enum class XiMethod { closed_form, quadrature, monte_carlo, finite_sum };
std::string_view to_string(XiMethod method);

struct XiResult {
    double xi = 0.0;
    double error = 0.0;  // quadrature estimate or Monte Carlo standard error
    XiMethod method = XiMethod::quadrature;
    /// Asymptotic slope of log(S(z) density(z)) along the first coordinate.
    double tail_slope = 0.0;
};

/// Closed form for an arrival-rate RBM feeding an infinite-server queue:
/// (2c/s^2) / (2c/s^2 - 1/mu). XiDivergent when 2c/s^2 <= 1/mu.
double xi_rbm_arrival_closed_form(double c, double sigma, double mu);

/// sum_{n <= n_max} r_n(z) plus the geometric tail bound at z, in log form.
double log_ratio_sum(const ModelSpec& model, EnvPoint z, std::size_t n_max, double weight = 1.0);

/// Xi = sum_n int r_n dnu. Divergence is detected from the tail slope of the
/// integrand (>= -1e-9 relative) and from the per-z ratio test.
XiResult compute_xi_diffusive(const ModelSpec& model, const StationaryLawDiffusive& law,
                              const QuadratureConfig& cfg = {});
/// Same with r_n replaced by weight^n r_n, as in the integrability check.
XiResult compute_xi_weighted(const ModelSpec& model, const StationaryLawDiffusive& law, double weight,
                             const QuadratureConfig& cfg = {});

/// Fixed-width cells over a box covering most of the mass, plus one
/// overflow cell for everything outside.
struct ZBinning {
    std::vector<double> lo;
    std::vector<double> hi;
    std::vector<std::size_t> counts;

    static ZBinning from_law(const StationaryLawDiffusive& law, std::size_t bins_per_dim, double coverage = 0.999);

    std::size_t dim() const { return lo.size(); }
    std::size_t cells() const;  // excluding the overflow cell
    std::size_t index(EnvPoint z) const;  // cells() for overflow
    double width(std::size_t i) const { return (hi[i] - lo[i]) / static_cast<double>(counts[i]); }
    Point center(std::size_t cell) const;
};

struct InvariantMeasureDiffusive {
    XiResult xi;
    std::vector<double> weights;  // w_n for n <= n_max
    StationaryLawDiffusive law;

    /// pi mass of (n, bin) for n <= n_cap, then one overflow cell holding
    /// everything else (n > n_cap or z outside the binning box).
    std::vector<double> cells(const ModelSpec& model, const ZBinning& bins, std::size_t n_cap) const;
};

InvariantMeasureDiffusive invariant_measure_diffusive(const ModelSpec& model, const StationaryLawDiffusive& law,
                                                      std::size_t n_max = 64, const QuadratureConfig& cfg = {});

/// Shifted exponential laws on [lower(n), inf) for each n <= n_max.
struct VariableDomainLaw {
    std::vector<StationaryLawDiffusive> laws;
    double c = 0.0;
    double sigma = 0.0;
};

VariableDomainLaw variable_domain_law(const std::function<double(std::size_t)>& lower, double c, double sigma,
                                      std::size_t n_max);

/// Xi = sum_n int_{D_n} r_n dnu_n with a ratio-test tail bound on the terms.
XiResult compute_xi_variable(const ModelSpec& model, const VariableDomainLaw& law, double rel_tol = 1e-10);

}  // namespace bdre
