#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bdre {

/// Coordinates of an environment state. Jump environments attach a small
/// coordinate vector to each discrete state; diffusive environments use the
/// point itself.
using EnvPoint = std::span<const double>;
using Point = std::vector<double>;

using RateField = std::function<double(std::size_t n, EnvPoint z)>;
using Variability = std::function<double(std::size_t n)>;

Variability constant_variability(double value = 1.0);
/// beta_n = a^n
Variability geometric_variability(double a);
/// beta_n = table[min(n, size-1)]
Variability table_variability(std::vector<double> table);

/// Birth-death half of the joint process: lambda_n(z), mu_n(z) and the
/// variability coefficients beta_n. Immutable once built; safe to share.
struct ModelSpec {
    std::string name;
    RateField birth_rate;
    RateField death_rate;
    Variability variability = constant_variability();
    std::size_t truncation_hint = 512;

    double birth(std::size_t n, EnvPoint z) const { return birth_rate(n, z); }
    double death(std::size_t n, EnvPoint z) const { return n == 0 ? 0.0 : death_rate(n, z); }
    double beta(std::size_t n) const { return variability(n); }
};

/// r_0..r_M at a fixed z, stored as logarithms. r_n = 0 is stored as -inf.
struct CumulativeRatio {
    std::vector<double> log_values;
    Point z;
    std::size_t truncated_at = 0;

    /// Throws Overflow when r_n is not representable as a double.
    double value(std::size_t n) const;
    std::vector<double> values() const;
};

CumulativeRatio cumulative_ratio(const ModelSpec& model, EnvPoint z, std::size_t n_max);

/// log r_n(z) by running sum of log(lambda_{k-1}/mu_k); -inf once a birth
/// rate vanishes.
double log_ratio(const ModelSpec& model, std::size_t n, EnvPoint z);

enum class Summability { summable, divergent, inconclusive };

struct SummabilityReport {
    Summability verdict = Summability::inconclusive;
    /// Geometric bound on sum_{n > n_max} r_n (relative to nothing: absolute).
    double residual = 0.0;
    /// log of the same bound, usable when r_n itself overflows.
    double log_residual = -std::numeric_limits<double>::infinity();
    /// Largest ratio r_n / r_{n-1} seen over the tail window.
    double tail_ratio = 0.0;

    bool summable() const { return verdict == Summability::summable; }
};

/// Ratio test over the last quarter of the stored range. Ratios bounded by
/// 1 - delta certify summability; ratios all >= 1 certify divergence;
/// anything else is reported as inconclusive.
SummabilityReport tail_report(const CumulativeRatio& ratio, double delta = 1e-3);
SummabilityReport check_summability(const ModelSpec& model, EnvPoint z, std::size_t n_max);

struct NormalizedWeights {
    std::vector<double> kappa;
    double tail_bound = 0.0;  // residual probability mass beyond n_max
};

/// kappa_n(z) = r_n(z) / (sum_{k<=n_max} r_k(z) + tail). Throws Divergence
/// when the ratio test fails or the tail estimate exceeds `tol` of the mass.
NormalizedWeights normalized_weights(const ModelSpec& model, EnvPoint z, std::size_t n_max = 512,
                                     double tol = 1e-10);

/// A catalog parameter: a constant, or coordinate `coord` of the
/// environment point (scaled and shifted).
struct Param {
    double value = 0.0;
    int coord = -1;
    double scale = 1.0;

    static Param constant(double v) { return Param{v, -1, 1.0}; }
    static Param env(int coord, double scale = 1.0, double offset = 0.0) { return Param{offset, coord, scale}; }

    double eval(EnvPoint z) const;
    bool is_constant() const { return coord < 0; }
};

using ParamMap = std::map<std::string, Param, std::less<>>;

/// Names: mm1, mminf, mmk, mmk0, mmk_plus_m, linear_growth, growth_stock,
/// sqrt_service. Throws UnknownModel / MissingParam.
ModelSpec catalog(std::string_view name, const ParamMap& params, Variability variability = constant_variability());

std::vector<std::string> catalog_names();

}  // namespace bdre
