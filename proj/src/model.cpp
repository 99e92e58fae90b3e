#include "bdre/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bdre/error.hpp"
#include "bdre/stats.hpp"

namespace bdre {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double checked_death(const ModelSpec& model, std::size_t k, EnvPoint z) {
    const double mu = model.death_rate(k, z);
    if (!(mu > 0.0)) {
        throw Error(ErrorCode::ZeroDeathRate,
                    model.name + ": death rate at n=" + std::to_string(k) + " is " + std::to_string(mu));
    }
    return mu;
}

double checked_birth(const ModelSpec& model, std::size_t k, EnvPoint z) {
    const double lambda = model.birth_rate(k, z);
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw Error(ErrorCode::InvalidArgument,
                    model.name + ": birth rate at n=" + std::to_string(k) + " is " + std::to_string(lambda));
    }
    return lambda;
}

}  // namespace

Variability constant_variability(double value) {
    if (!(value > 0.0)) throw Error(ErrorCode::InvalidArgument, "variability must be positive");
    return [value](std::size_t) { return value; };
}

Variability geometric_variability(double a) {
    if (!(a > 0.0)) throw Error(ErrorCode::InvalidArgument, "geometric variability base must be positive");
    return [a](std::size_t n) { return std::pow(a, static_cast<double>(n)); };
}

Variability table_variability(std::vector<double> table) {
    if (table.empty()) throw Error(ErrorCode::InvalidArgument, "variability table is empty");
    for (double b : table) {
        if (!(b > 0.0)) throw Error(ErrorCode::InvalidArgument, "variability table entries must be positive");
    }
    return [t = std::move(table)](std::size_t n) { return t[std::min(n, t.size() - 1)]; };
}

double CumulativeRatio::value(std::size_t n) const {
    const double lv = log_values.at(n);
    if (lv > std::log(std::numeric_limits<double>::max())) {
        throw Error(ErrorCode::Overflow, "r_" + std::to_string(n) + " = exp(" + std::to_string(lv) + ")");
    }
    return std::exp(lv);
}

std::vector<double> CumulativeRatio::values() const {
    std::vector<double> out(log_values.size());
    for (std::size_t n = 0; n < out.size(); ++n) out[n] = value(n);
    return out;
}

CumulativeRatio cumulative_ratio(const ModelSpec& model, EnvPoint z, std::size_t n_max) {
    CumulativeRatio out;
    out.z.assign(z.begin(), z.end());
    out.truncated_at = n_max;
    out.log_values.resize(n_max + 1);
    out.log_values[0] = 0.0;
    double acc = 0.0;
    for (std::size_t k = 1; k <= n_max; ++k) {
        const double mu = checked_death(model, k, z);
        if (acc != kNegInf) {
            const double lambda = checked_birth(model, k - 1, z);
            acc = lambda == 0.0 ? kNegInf : acc + std::log(lambda) - std::log(mu);
        }
        out.log_values[k] = acc;
    }
    return out;
}

double log_ratio(const ModelSpec& model, std::size_t n, EnvPoint z) {
    double acc = 0.0;
    for (std::size_t k = 1; k <= n; ++k) {
        const double lambda = model.birth_rate(k - 1, z);
        if (lambda <= 0.0) return kNegInf;
        const double mu = checked_death(model, k, z);
        acc += std::log(lambda) - std::log(mu);
    }
    return acc;
}

SummabilityReport tail_report(const CumulativeRatio& ratio, double delta) {
    SummabilityReport report;
    const auto& lv = ratio.log_values;
    const std::size_t top = lv.size() - 1;
    if (lv[top] == kNegInf) {
        report.verdict = Summability::summable;
        return report;
    }
    if (top == 0) return report;
    const std::size_t window = std::max<std::size_t>(std::min<std::size_t>(8, top), top / 4);
    double q_max = 0.0;
    double q_min = std::numeric_limits<double>::infinity();
    for (std::size_t k = top + 1 - window; k <= top; ++k) {
        const double q = std::exp(lv[k] - lv[k - 1]);
        q_max = std::max(q_max, q);
        q_min = std::min(q_min, q);
    }
    report.tail_ratio = q_max;
    if (q_max <= 1.0 - delta) {
        report.verdict = Summability::summable;
        report.log_residual = lv[top] + std::log(q_max) - std::log1p(-q_max);
        report.residual = std::exp(report.log_residual);
    } else if (q_min >= 1.0) {
        report.verdict = Summability::divergent;
        report.residual = std::numeric_limits<double>::infinity();
        report.log_residual = report.residual;
    } else {
        report.residual = std::numeric_limits<double>::infinity();
        report.log_residual = report.residual;
    }
    return report;
}

SummabilityReport check_summability(const ModelSpec& model, EnvPoint z, std::size_t n_max) {
    return tail_report(cumulative_ratio(model, z, n_max));
}

NormalizedWeights normalized_weights(const ModelSpec& model, EnvPoint z, std::size_t n_max, double tol) {
    const CumulativeRatio ratio = cumulative_ratio(model, z, n_max);
    const SummabilityReport report = tail_report(ratio);
    if (!report.summable()) {
        throw Error(ErrorCode::Divergence, model.name + ": ratio test did not certify summability by n_max=" +
                                               std::to_string(n_max) +
                                               " (tail ratio " + std::to_string(report.tail_ratio) + ")");
    }
    const double log_head = log_sum_exp(ratio.log_values);
    const double log_tail = report.log_residual;
    if (log_tail - log_head >= std::log(tol)) {
        throw Error(ErrorCode::Divergence, model.name + ": tail estimate exceeds tolerance at n_max=" +
                                               std::to_string(n_max));
    }
    const double log_norm = log_add_exp(log_head, log_tail);
    NormalizedWeights out;
    out.kappa.resize(ratio.log_values.size());
    for (std::size_t n = 0; n < out.kappa.size(); ++n) out.kappa[n] = std::exp(ratio.log_values[n] - log_norm);
    out.tail_bound = std::exp(log_tail - log_norm);
    return out;
}

double Param::eval(EnvPoint z) const {
    if (coord < 0) return value;
    const auto idx = static_cast<std::size_t>(coord);
    if (idx >= z.size()) {
        throw Error(ErrorCode::InvalidArgument,
                    "parameter refers to environment coordinate " + std::to_string(coord) + " of a " +
                        std::to_string(z.size()) + "-dimensional point");
    }
    return value + scale * z[idx];
}

namespace {

const Param& require(const ParamMap& params, std::string_view model, std::string_view key) {
    auto it = params.find(key);
    if (it == params.end()) {
        throw Error(ErrorCode::MissingParam, std::string(model) + " needs parameter '" + std::string(key) + "'");
    }
    return it->second;
}

std::size_t require_count(const ParamMap& params, std::string_view model, std::string_view key) {
    const Param& p = require(params, model, key);
    if (!p.is_constant() || p.value < 1.0 || p.value != std::floor(p.value)) {
        throw Error(ErrorCode::InvalidArgument, std::string(model) + ": '" + std::string(key) +
                                                    "' must be a constant positive integer");
    }
    return static_cast<std::size_t>(p.value);
}

}  // namespace

ModelSpec catalog(std::string_view name, const ParamMap& params, Variability variability) {
    ModelSpec m;
    m.name = std::string(name);
    m.variability = std::move(variability);

    if (name == "mm1") {
        Param lambda = require(params, name, "lambda"), mu = require(params, name, "mu");
        m.birth_rate = [lambda](std::size_t, EnvPoint z) { return lambda.eval(z); };
        m.death_rate = [mu](std::size_t, EnvPoint z) { return mu.eval(z); };
    } else if (name == "mminf") {
        Param lambda = require(params, name, "lambda"), mu = require(params, name, "mu");
        m.birth_rate = [lambda](std::size_t, EnvPoint z) { return lambda.eval(z); };
        m.death_rate = [mu](std::size_t n, EnvPoint z) { return static_cast<double>(n) * mu.eval(z); };
    } else if (name == "mmk") {
        const auto K = require_count(params, name, "K");
        Param lambda = require(params, name, "lambda"), mu = require(params, name, "mu");
        m.birth_rate = [lambda](std::size_t, EnvPoint z) { return lambda.eval(z); };
        m.death_rate = [mu, K](std::size_t n, EnvPoint z) { return static_cast<double>(std::min(n, K)) * mu.eval(z); };
    } else if (name == "mmk0") {
        const auto K = require_count(params, name, "K");
        Param lambda = require(params, name, "lambda"), mu = require(params, name, "mu");
        m.birth_rate = [lambda, K](std::size_t n, EnvPoint z) { return n < K ? lambda.eval(z) : 0.0; };
        m.death_rate = [mu](std::size_t n, EnvPoint z) { return static_cast<double>(n) * mu.eval(z); };
    } else if (name == "mmk_plus_m") {
        const auto K = require_count(params, name, "K");
        Param lambda = require(params, name, "lambda"), mu = require(params, name, "mu");
        Param gamma = require(params, name, "gamma");
        m.birth_rate = [lambda](std::size_t, EnvPoint z) { return lambda.eval(z); };
        m.death_rate = [mu, gamma, K](std::size_t n, EnvPoint z) {
            const double served = static_cast<double>(std::min(n, K));
            const double waiting = n > K ? static_cast<double>(n - K) : 0.0;
            return mu.eval(z) * served + gamma.eval(z) * waiting;
        };
    } else if (name == "linear_growth") {
        Param lambda = require(params, name, "lambda"), theta = require(params, name, "theta");
        Param mu = require(params, name, "mu");
        m.birth_rate = [lambda, theta](std::size_t n, EnvPoint z) {
            return static_cast<double>(n) * lambda.eval(z) + theta.eval(z);
        };
        m.death_rate = [mu](std::size_t n, EnvPoint z) { return static_cast<double>(n) * mu.eval(z); };
    } else if (name == "growth_stock") {
        Param lambda = require(params, name, "lambda"), theta = require(params, name, "theta");
        Param mu = require(params, name, "mu"), vartheta = require(params, name, "vartheta");
        m.birth_rate = [lambda, theta](std::size_t n, EnvPoint z) {
            return static_cast<double>(n) * lambda.eval(z) + theta.eval(z);
        };
        m.death_rate = [mu, vartheta](std::size_t n, EnvPoint z) {
            return static_cast<double>(n) * mu.eval(z) + vartheta.eval(z);
        };
    } else if (name == "sqrt_service") {
        // single server whose service speeds up with congestion: mu_n = mu + c sqrt(n)
        Param lambda = require(params, name, "lambda"), mu = require(params, name, "mu");
        Param c = require(params, name, "c");
        m.birth_rate = [lambda](std::size_t, EnvPoint z) { return lambda.eval(z); };
        m.death_rate = [mu, c](std::size_t n, EnvPoint z) {
            return mu.eval(z) + c.eval(z) * std::sqrt(static_cast<double>(n));
        };
    } else {
        throw Error(ErrorCode::UnknownModel, "no catalog model named '" + std::string(name) + "'");
    }
    return m;
}

std::vector<std::string> catalog_names() {
    return {"mm1", "mminf", "mmk", "mmk0", "mmk_plus_m", "linear_growth", "growth_stock", "sqrt_service"};
}

}  // namespace bdre
