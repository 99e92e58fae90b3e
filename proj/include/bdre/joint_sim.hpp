#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "bdre/diffusion.hpp"
#include "bdre/jump_env.hpp"
#include "bdre/model.hpp"
#include "bdre/parallel.hpp"
#include "bdre/stats.hpp"

namespace bdre {

struct JointState {
    std::size_t n = 0;
    Point z;
    double t = 0.0;
};

struct DiffusiveSimConfig {
    double dt = 1e-3;
    double horizon = 100.0;
    double burn_in = 10.0;
    double speed_cap = 1e9;
    /// Substeps allowed inside one dt before giving up with SpeedCap.
    std::size_t max_substeps = 100000;
    std::size_t n_cap = 32;
    /// Record the state every `record_every` time units (0: no path).
    double record_every = 0.0;

    void validate() const;
};

/// One dt of the joint process. The environment runs at speed
/// beta_n / r_n(z), re-evaluated on substeps so that no substep covers more
/// than dt of environment time; the birth and death hazards are integrated
/// over the same substeps and at most one BD event fires per dt.
class DiffusiveStepper {
public:
    DiffusiveStepper(const ModelSpec& model, const DiffusionSpec& spec, const DiffusiveSimConfig& cfg);

    double speed(std::size_t n, EnvPoint z) const;
    /// Advances by cfg.dt. Throws SpeedCap, RateTooLargeForStep, StepRejected.
    void advance(JointState& s, Rng& rng);
    std::size_t substeps() const { return substeps_; }

private:
    const ModelSpec& model_;
    const DiffusionSpec& spec_;
    DiffusiveSimConfig cfg_;
    std::size_t substeps_ = 0;
};

/// On a variable domain the environment is pushed up to the new lower
/// boundary when a BD move leaves it outside.
void project_to_domain(const DomainSpec& domain, std::span<double> z, std::size_t n);

struct DiffusiveRun {
    ZBinning bins;
    std::size_t n_cap = 0;
    /// Time after burn-in spent in (n, bin) for n <= n_cap, n-major, then
    /// one overflow cell.
    std::vector<double> occupancy;
    std::vector<JointState> path;
    JointState final_state;
    std::size_t substeps = 0;

    EmpiricalMeasure occupancy_measure() const;
};

DiffusiveRun simulate_joint_diffusive(const ModelSpec& model, const DiffusionSpec& spec, const ZBinning& bins,
                                      const DiffusiveSimConfig& cfg, JointState initial, Rng& rng);

/// Independent replicas merged by summing occupancy; replica i uses stream i.
DiffusiveRun simulate_joint_diffusive_replicas(const ModelSpec& model, const DiffusionSpec& spec, const ZBinning& bins,
                                               const DiffusiveSimConfig& cfg, const JointState& initial,
                                               std::size_t replicas, std::size_t threads, std::uint64_t seed);

using Target = std::function<bool(std::size_t n, EnvPoint z)>;

struct HittingConfig {
    double horizon = 1e4;
    std::size_t replicas = 1000;
    std::size_t threads = 1;
    std::uint64_t seed = 1;
    double rate_cap = 1e9;
};

struct HittingSample {
    std::vector<double> times;  // uncensored hits, in replica order
    std::size_t censored = 0;
    MeanEstimate mean;
};

/// First time the joint jump chain started at (n0, z0) satisfies `target`.
HittingSample hitting_time_jump(const ModelSpec& model, const EnvChainSpec& env, std::size_t n0, std::size_t z0,
                                const Target& target, const HittingConfig& cfg);

HittingSample hitting_time_diffusive(const ModelSpec& model, const DiffusionSpec& spec, const JointState& initial,
                                     const Target& target, const DiffusiveSimConfig& sim, const HittingConfig& cfg);

/// Fixed-environment birth-death chain (the environment frozen at z).
HittingSample hitting_time_bd(const ModelSpec& model, Point z, std::size_t n0, const Target& target,
                              const HittingConfig& cfg);

/// n, bin centers..., mass; the overflow cell is written with n = "overflow".
void write_occupancy_csv(std::ostream& out, const DiffusiveRun& run);
void write_occupancy_csv(std::ostream& out, std::span<const double> masses, std::size_t n_cap, std::size_t env_size);
void write_samples_csv(std::ostream& out, std::string_view column, std::span<const double> samples);

}  // namespace bdre
