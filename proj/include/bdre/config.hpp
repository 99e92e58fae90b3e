#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "bdre/diffusion.hpp"
#include "bdre/jump_env.hpp"
#include "bdre/model.hpp"

namespace bdre {

/// beta_n in the "beta_n * T" template (and the diffusive speed factor).
struct VariabilityConfig {
    std::string kind = "constant";  // constant | geometric | table
    double value = 1.0;
    double a = 1.0;
    std::vector<double> table;

    Variability build() const;
    std::string describe() const;
};

struct JumpEnvConfig {
    std::vector<EnvState> states;
    Eigen::MatrixXd T;
};

struct DiffusiveEnvConfig {
    std::string example;
    DiffusiveParams params;
};

struct SimSection {
    double dt = 1e-3;
    double horizon = 1e4;
    double burn_in = 0.0;
    std::size_t replicas = 1;
    std::optional<std::uint64_t> seed;
    std::size_t max_events = 0;
    std::size_t n_cap = 64;
    double record_every = 0.0;
    double rate_cap = 1e9;
    double speed_cap = 1e9;
    std::size_t max_substeps = 100000;
    std::size_t n0 = 0;
    std::size_t z0 = 0;   // jump environment: state index
    Point z0_point;       // diffusive: empty means the lower corner of the law
};

struct RatesSection {
    bool enabled = false;
    std::string scenario = "auto";  // auto | exponential | polynomial
    std::size_t probe_n_max = 200;
    std::size_t probe_points = 64;
    std::size_t env_coupling_replicas = 10000;
    std::size_t coupling_replicas = 10000;
    std::size_t start_n = 5;
    double slack = 0.1;
    double horizon = 1e4;
    std::size_t busy_replicas = 100000;
    bool busy_series = true;
    std::vector<std::size_t> hitting_starts{1, 2, 5, 10};
    std::size_t hitting_replicas = 10000;
    std::size_t decay_replicas = 10000;
    double decay_t_min = 10.0;
    double decay_t_max = 1000.0;
    std::size_t decay_points = 100;
    std::size_t decay_n_cap = 64;
    double min_decay_exponent = 0.8;
};

struct AnalysisSection {
    std::size_t n_max = 200;
    std::size_t bins = 64;
    double balance_tol = 1e-9;
    std::optional<double> tv_tolerance;
    RatesSection rates;
};

struct OutputSection {
    std::string dir = "out";
    bool trajectory = false;
};

struct RunConfig {
    std::string model_name;
    ParamMap params;
    VariabilityConfig beta;
    std::optional<JumpEnvConfig> jump;
    std::optional<DiffusiveEnvConfig> diffusive;
    SimSection sim;
    AnalysisSection analysis;
    OutputSection output;
    std::string source_text;  // exact bytes the config was parsed from

    bool is_jump() const { return jump.has_value(); }
    /// Checks that need the command-line overrides applied first.
    void validate() const;
    ModelSpec build_model() const;
    EnvChainSpec build_jump_env() const;
    DiffusiveExample build_diffusive() const;
};

/// Parses a JSON config. Throws ConfigError naming the field, or the line
/// and column for syntax errors.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t value);

}  // namespace bdre
