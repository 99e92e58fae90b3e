#include "bdre/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bdre/error.hpp"

namespace bdre {

EmpiricalMeasure EmpiricalMeasure::from_weights(std::span<const double> weights, std::size_t samples) {
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw Error(ErrorCode::InvalidArgument, "negative or NaN cell weight");
        total += w;
    }
    if (total <= 0.0) throw Error(ErrorCode::InvalidArgument, "empirical measure has zero total mass");
    EmpiricalMeasure m;
    m.masses.reserve(weights.size());
    for (double w : weights) m.masses.push_back(w / total);
    m.sample_count = samples;
    return m;
}

double tv_distance(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) {
        throw Error(ErrorCode::CellMismatch,
                    "cell counts differ: " + std::to_string(p.size()) + " vs " + std::to_string(q.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
    return std::clamp(0.5 * acc, 0.0, 1.0);
}

double tv_distance(const EmpiricalMeasure& p, const EmpiricalMeasure& q) {
    return tv_distance(std::span<const double>(p.masses), std::span<const double>(q.masses));
}

TailFit fit_tail(std::span<const double> x, std::span<const double> y, TailModel model, std::size_t min_points) {
    if (x.size() != y.size()) throw Error(ErrorCode::InvalidArgument, "fit_tail: x and y differ in length");
    std::vector<double> xs;
    std::vector<double> ys;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(y[i] > 0.0) || !std::isfinite(y[i]) || !std::isfinite(x[i])) continue;
        if (model == TailModel::power && !(x[i] > 0.0)) continue;
        xs.push_back(model == TailModel::power ? std::log(x[i]) : x[i]);
        ys.push_back(std::log(y[i]));
    }
    if (xs.size() < std::max<std::size_t>(min_points, 2)) {
        throw Error(ErrorCode::InsufficientData,
                    "fit_tail needs " + std::to_string(min_points) + " points, got " + std::to_string(xs.size()));
    }
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx <= 0.0) throw Error(ErrorCode::InsufficientData, "fit_tail: abscissae are all equal");
    TailFit fit;
    fit.model = model;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.points = xs.size();
    fit.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
    fit.x_min = model == TailModel::power ? std::exp(*lo) : *lo;
    fit.x_max = model == TailModel::power ? std::exp(*hi) : *hi;
    return fit;
}

SurvivalCurve empirical_survival(std::vector<double> samples) {
    std::sort(samples.begin(), samples.end());
    SurvivalCurve curve;
    const double n = static_cast<double>(samples.size());
    for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
        // ties collapse onto the last index of the run
        if (samples[i + 1] == samples[i]) continue;
        curve.t.push_back(samples[i]);
        curve.survival.push_back((n - static_cast<double>(i + 1)) / n);
    }
    return curve;
}

TailFit fit_survival_tail(std::span<const double> samples, double tail_fraction) {
    SurvivalCurve curve = empirical_survival(std::vector<double>(samples.begin(), samples.end()));
    const std::size_t keep = static_cast<std::size_t>(std::ceil(tail_fraction * static_cast<double>(curve.t.size())));
    const std::size_t start = curve.t.size() - std::min(keep, curve.t.size());
    return fit_tail(std::span<const double>(curve.t).subspan(start),
                    std::span<const double>(curve.survival).subspan(start), TailModel::exponential);
}

MeanEstimate mean_estimate(std::span<const double> samples) {
    MeanEstimate est;
    est.count = samples.size();
    if (samples.empty()) return est;
    const double n = static_cast<double>(samples.size());
    est.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
    if (samples.size() > 1) {
        double ss = 0.0;
        for (double s : samples) ss += (s - est.mean) * (s - est.mean);
        est.stderr_ = std::sqrt(ss / (n - 1.0) / n);
    }
    return est;
}

MgfEstimate mgf_estimate(std::span<const double> samples, double u) {
    MgfEstimate est;
    est.count = samples.size();
    if (samples.empty()) return est;
    std::vector<double> values(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) values[i] = u == 0.0 ? 1.0 : std::exp(u * samples[i]);
    const double n = static_cast<double>(values.size());
    const double total = std::accumulate(values.begin(), values.end(), 0.0);
    est.mean = total / n;
    if (values.size() > 1) {
        // leave-one-out means
        double jk_mean = 0.0;
        std::vector<double> loo(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            loo[i] = (total - values[i]) / (n - 1.0);
            jk_mean += loo[i];
        }
        jk_mean /= n;
        double ss = 0.0;
        for (double v : loo) ss += (v - jk_mean) * (v - jk_mean);
        est.stderr_ = std::sqrt((n - 1.0) / n * ss);
    }
    std::vector<double> sorted = values;
    const std::size_t top = std::max<std::size_t>(1, values.size() / 100);
    std::nth_element(sorted.begin(), sorted.end() - static_cast<std::ptrdiff_t>(top), sorted.end());
    const double top_sum = std::accumulate(sorted.end() - static_cast<std::ptrdiff_t>(top), sorted.end(), 0.0);
    est.heavy_tail_warning = values.size() >= 100 && total > 0.0 && top_sum > 0.5 * total;
    return est;
}

HistogramCdf::HistogramCdf(double lo, double hi, std::size_t bins)
    : lo_(lo), hi_(hi), width_((hi - lo) / static_cast<double>(bins)), counts_(bins, 0.0) {
    if (!(hi > lo) || bins == 0) throw Error(ErrorCode::InvalidArgument, "HistogramCdf needs lo < hi and bins > 0");
}

void HistogramCdf::add(double x, double weight) {
    total_ += weight;
    if (x < lo_) {
        under_ += weight;
        return;
    }
    const auto idx = static_cast<std::size_t>((x - lo_) / width_);
    if (idx >= counts_.size()) {
        over_ += weight;
        return;
    }
    counts_[idx] += weight;
}

void HistogramCdf::merge(const HistogramCdf& other) {
    if (other.counts_.size() != counts_.size() || other.lo_ != lo_ || other.hi_ != hi_) {
        throw Error(ErrorCode::CellMismatch, "HistogramCdf::merge on different grids");
    }
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    under_ += other.under_;
    over_ += other.over_;
    total_ += other.total_;
}

double HistogramCdf::sup_distance(const std::function<double(double)>& cdf) const {
    if (total_ <= 0.0) throw Error(ErrorCode::InsufficientData, "empty histogram");
    double cum = under_;
    double worst = std::abs(cum / total_ - cdf(lo_));
    for (std::size_t i = 0; i < counts_.size(); ++i) {
        cum += counts_[i];
        const double edge = lo_ + width_ * static_cast<double>(i + 1);
        worst = std::max(worst, std::abs(cum / total_ - cdf(edge)));
    }
    return worst;
}

double log_sum_exp(std::span<const double> values) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : values) hi = std::max(hi, v);
    if (!std::isfinite(hi)) return hi;
    double acc = 0.0;
    for (double v : values) acc += std::exp(v - hi);
    return hi + std::log(acc);
}

double log_add_exp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double hi = std::max(a, b);
    return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

}  // namespace bdre
