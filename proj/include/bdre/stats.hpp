#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace bdre {

/// Discrete probability vector over a fixed cell structure. The meaning of
/// a cell (a count n, or an (n, z-bin) pair) is owned by whoever built it.
struct EmpiricalMeasure {
    std::vector<double> masses;
    std::size_t sample_count = 0;

    /// Normalizes raw nonnegative weights; throws InvalidArgument on a
    /// negative entry or zero total.
    static EmpiricalMeasure from_weights(std::span<const double> weights, std::size_t samples = 0);
};

/// (1/2) * sum |p_i - q_i|. Throws CellMismatch when sizes differ.
double tv_distance(std::span<const double> p, std::span<const double> q);
double tv_distance(const EmpiricalMeasure& p, const EmpiricalMeasure& q);

enum class TailModel { exponential, power };

struct TailFit {
    TailModel model = TailModel::exponential;
    double slope = 0.0;  // d log y / dx (exponential) or d log y / d log x (power)
    double intercept = 0.0;
    double x_min = 0.0;
    double x_max = 0.0;
    std::size_t points = 0;
    double r_squared = 0.0;
};

/// Least squares on log-transformed coordinates. Points with y <= 0 (and
/// x <= 0 for the power model) are dropped; fewer than `min_points` usable
/// points raise InsufficientData.
TailFit fit_tail(std::span<const double> x, std::span<const double> y, TailModel model,
                 std::size_t min_points = 20);

/// Empirical survival curve P(T > t) evaluated at the sorted sample values.
/// The last point (survival 0) is dropped so the curve is log-safe.
struct SurvivalCurve {
    std::vector<double> t;
    std::vector<double> survival;
};
SurvivalCurve empirical_survival(std::vector<double> samples);

/// Exponential fit of log P(T > t) over the upper `tail_fraction` of the
/// sorted samples.
TailFit fit_survival_tail(std::span<const double> samples, double tail_fraction = 1.0 / 3.0);

struct MeanEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;
    std::size_t count = 0;
};

MeanEstimate mean_estimate(std::span<const double> samples);

struct MgfEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;
    std::size_t count = 0;
    /// Set when the top 1% of samples carries more than half of the mean.
    bool heavy_tail_warning = false;
};

/// Sample mean of exp(u x) with a jackknife standard error.
MgfEstimate mgf_estimate(std::span<const double> samples, double u);

/// Fixed-grid histogram of a scalar used for sup-distance checks against an
/// analytic CDF. Values outside [lo, hi) go to the under/overflow counters.
class HistogramCdf {
public:
    HistogramCdf(double lo, double hi, std::size_t bins);

    void add(double x, double weight = 1.0);
    void merge(const HistogramCdf& other);

    double total() const { return total_; }
    /// max over bin edges of |F_empirical(edge) - cdf(edge)|.
    double sup_distance(const std::function<double(double)>& cdf) const;

private:
    double lo_;
    double hi_;
    double width_;
    std::vector<double> counts_;
    double under_ = 0.0;
    double over_ = 0.0;
    double total_ = 0.0;
};

double log_sum_exp(std::span<const double> values);
/// log(exp(a) + exp(b)) without overflow; either argument may be -inf.
double log_add_exp(double a, double b);

}  // namespace bdre
