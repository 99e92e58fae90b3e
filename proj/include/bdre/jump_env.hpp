#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bdre/model.hpp"
#include "bdre/parallel.hpp"
#include "bdre/stats.hpp"

namespace bdre {

struct EnvState {
    std::string label;
    Point coords;
};

/// Finite environment with per-n generators T_n.
struct EnvChainSpec {
    std::vector<EnvState> states;
    std::function<Eigen::MatrixXd(std::size_t n)> generators;

    std::size_t size() const { return states.size(); }
    /// T_n after validation: square of the right size, nonnegative
    /// off-diagonal entries, zero row sums (relative 1e-12).
    Eigen::MatrixXd generator(std::size_t n) const;
};

/// T_n = beta_n * T, the canonical form under which one v serves every n.
EnvChainSpec scaled_environment(std::vector<EnvState> states, Eigen::MatrixXd base, Variability beta);

/// Reachability on the support graph of the off-diagonal entries.
bool is_irreducible(const Eigen::MatrixXd& generator);

struct CommonV {
    Eigen::VectorXd v;  // sums to 1
    double max_residual = 0.0;
    std::vector<std::size_t> probes;
};

/// Solves v'T_n = 0 for the first probe and checks every other probe to
/// relative tolerance `tol`. Throws NoCommonV naming the first failing n.
CommonV solve_common_v(const EnvChainSpec& env, std::span<const std::size_t> probes, double tol = 1e-10);

struct GeneratorEntry {
    std::size_t col;
    double log_rate;
};

/// Sparse generator of the joint chain truncated at n_max, kept in log form
/// because r_n(z)^{-1} overflows long before n = 200 for most catalog models.
/// States are ordered n-major: index = n * env_size + z.
struct JointGeneratorMatrix {
    std::size_t n_max = 0;
    std::size_t env_size = 0;
    std::vector<std::vector<GeneratorEntry>> rows;  // off-diagonal entries
    std::vector<double> log_exit;                   // log of -R[s, s]
    std::vector<bool> truncated;                    // rows that lose mass past n_max

    std::size_t dimension() const { return rows.size(); }
    std::size_t index(std::size_t n, std::size_t z) const { return n * env_size + z; }
    /// R[row, col] as a double (may be +-inf for extreme entries).
    double rate(std::size_t row, std::size_t col) const;
    /// |sum_j R[row, j]| / |R[row, row]|
    double relative_row_sum(std::size_t row) const;
    /// "row col value" lines, one per nonzero entry, diagonal included.
    void write_triples(std::ostream& out) const;
};

/// Assembles the generator on n <= n_max. If r_n(z) vanishes for every z
/// beyond some level (loss models) the state space stops there; a level
/// where it vanishes for some z only raises DegenerateRatio.
JointGeneratorMatrix build_joint_generator(const ModelSpec& model, const EnvChainSpec& env, std::size_t n_max);

struct InvariantMeasureJump {
    std::size_t n_max = 0;
    std::size_t env_size = 0;
    std::vector<double> log_eta;  // log r_n(z) v(z)
    std::vector<double> weights;  // pi(n, z)
    Eigen::VectorXd v;
    double log_xi = 0.0;
    double truncation_residual = 0.0;  // probability mass beyond n_max

    double xi() const;
    double pi(std::size_t n, std::size_t z) const { return weights.at(n * env_size + z); }
    std::vector<double> marginal_n() const;
    /// Cells (n, z) for n <= n_cap followed by one overflow cell.
    std::vector<double> cells(std::size_t n_cap) const;
};

InvariantMeasureJump invariant_measure_jump(const ModelSpec& model, const EnvChainSpec& env, std::size_t n_max);

/// max over states with n < n_max of |(eta'R)(n,z)| / (eta(n,z) |R[(n,z),(n,z)]|).
double verify_balance(const JointGeneratorMatrix& gen, const InvariantMeasureJump& measure);

enum class EventKind { birth, death, env };
std::string_view to_string(EventKind kind);

/// Lazily cached rates of the joint jump chain for one (model, env) pair.
/// Not thread safe: each replica owns its own instance.
class JumpDynamics {
public:
    JumpDynamics(const ModelSpec& model, const EnvChainSpec& env, double rate_cap = 1e9);

    double birth(std::size_t n, std::size_t z);
    double death(std::size_t n, std::size_t z);
    /// tau_n(z, z') / r_n(z)
    double env_rate(std::size_t n, std::size_t z, std::size_t z_to);
    double env_exit(std::size_t n, std::size_t z);
    /// Throws RateExplosion above the cap.
    double total(std::size_t n, std::size_t z);

    struct Move {
        std::size_t n;
        std::size_t z;
        EventKind kind;
    };
    /// Samples the next transition given that one occurs at (n, z).
    Move draw(std::size_t n, std::size_t z, Rng& rng);

    std::size_t env_size() const { return env_.size(); }
    const ModelSpec& model() const { return model_; }

private:
    void extend(std::size_t n);

    const ModelSpec& model_;
    const EnvChainSpec& env_;
    double rate_cap_;
    std::vector<std::vector<double>> log_r_;  // [n][z]
    std::vector<Eigen::MatrixXd> generators_;
};

struct JumpEvent {
    double t;
    std::size_t n;
    std::size_t z;
    EventKind kind;
};

struct JumpSimConfig {
    double horizon = 1e4;
    double burn_in = 0.0;
    std::size_t max_events = 0;  // 0: run to the horizon
    double rate_cap = 1e9;
    bool record_path = false;
    std::size_t occupancy_n_cap = 64;
};

struct JumpPath {
    std::vector<JumpEvent> events;
    /// Time spent in (n, z) after burn-in, laid out like InvariantMeasureJump::cells.
    std::vector<double> occupancy;
    std::size_t n_cap = 0;
    std::size_t event_count = 0;
    double final_t = 0.0;
    std::size_t final_n = 0;
    std::size_t final_z = 0;

    EmpiricalMeasure occupancy_measure() const;
};

/// Exact (Gillespie) simulation of the joint chain from (n0, z0).
JumpPath simulate_jump_joint(const ModelSpec& model, const EnvChainSpec& env, std::size_t n0, std::size_t z0,
                             const JumpSimConfig& cfg, Rng& rng);

void write_events_csv(std::ostream& out, const JumpPath& path);

}  // namespace bdre
