#pragma once

/**
 * @file verify.hpp
 * @brief Monte Carlo checks of the equilibrium and convergence properties.
 *
 * All paired comparisons are coupled: a perturbed strategy and the
 * equilibrium run on the same filter path and the same exploration and
 * action noise, and the perturbation is applied as an additive correction to
 * the equilibrium terminal wealth. Differences of the mean-variance objective
 * get their standard error from per-path influence differences.
 *
 * Slope tests perturb on a window [0, h) at the initial node and estimate
 *   Delta(h) = (J(perturbed) - J(equilibrium)) / h,
 * which should be nonpositive to leading order in h.
 */

#include "stackelberg/objectives.hpp"
#include "stackelberg/pde_solver.hpp"
#include "stackelberg/simulator.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace stackelberg {

enum class PerturbationKind { follower_constant, leader_mean_shift, leader_variance_scale };

std::string to_string(PerturbationKind kind);

struct PerturbationSpec {
    PerturbationKind kind = PerturbationKind::follower_constant;
    /// Offset from the equilibrium action (follower, leader mean) or variance factor.
    double magnitude = 0.0;
    double window = 0.0;  ///< h, a whole number of grid intervals

    void validate(double T) const;
    bool is_null() const noexcept;
};

struct SlopeEstimate {
    PerturbationSpec spec;
    int realization = -1;  ///< frozen u1 sequence index, -1 when pooled or not applicable
    double delta_hat = 0.0;
    double std_error = 0.0;           ///< paired (common random numbers)
    double unpaired_std_error = 0.0;  ///< as if the two objectives were independent
    double theory = 0.0;              ///< leading-order slope in h
    std::size_t n_paths = 0;
};

/**
 * Leading-order slopes: -(gamma2 sigma^2 (1-lambda2/2)^2 / 2) m^2 for a
 * follower offset m, -(gamma1 sigma^2 chi^2 / 2) d^2 for a leader mean shift d
 * and (lambda0/2)(1 - s + log s) for a leader variance factor s.
 */
double theoretical_slope(const PerturbationSpec& spec, const Market& market);

/**
 * Follower perturbations on a fixed leader action sequence. On [0,h) the
 * follower plays u2*(0,p0) + m + kappa u1(delta(s)): the u1-independent part
 * frozen at its initial value and offset by m, while still tracking the
 * leader's observed action. The equilibrium response resumes after h.
 */
std::vector<SlopeEstimate> follower_slope_tests(const Market& market,
                                                const EquilibriumSurfaces& surfaces,
                                                const TimeGrid& grid,
                                                const std::vector<PerturbationSpec>& specs,
                                                const std::vector<double>& frozen_u1,
                                                const InitialState& init, std::size_t n_paths,
                                                std::uint64_t seed, int threads = 1);

/**
 * Leader perturbations in the exploratory regime: on [0,h) the policy mean is
 * shifted (tracking the equilibrium mean) or the variance is scaled; the
 * entropy gain lambda0 h log(s)/2 is added to the perturbed objective.
 */
std::vector<SlopeEstimate> leader_slope_tests(const Market& market,
                                              const EquilibriumSurfaces& surfaces,
                                              const TimeGrid& grid,
                                              const std::vector<PerturbationSpec>& specs,
                                              const InitialState& init, std::size_t n_paths,
                                              std::uint64_t seed, int threads = 1);

SlopeEstimate follower_slope_test(const PerturbationSpec& spec, const Market& market,
                                  const EquilibriumSurfaces& surfaces, const TimeGrid& grid,
                                  const std::vector<double>& frozen_u1, const InitialState& init,
                                  std::size_t n_paths, std::uint64_t seed, int threads = 1);
SlopeEstimate leader_slope_test(const PerturbationSpec& spec, const Market& market,
                                const EquilibriumSurfaces& surfaces, const TimeGrid& grid,
                                const InitialState& init, std::size_t n_paths,
                                std::uint64_t seed, int threads = 1);

struct SlopeSuiteConfig {
    int grid_intervals = 256;
    int fine_steps = 2048;
    std::vector<int> window_intervals{4, 2, 1};  ///< h in grid intervals
    std::vector<double> follower_offsets{-1.0, 0.0, 1.0};
    std::vector<double> leader_mean_shifts{-1.0, 0.0, 1.0};
    std::vector<double> leader_variance_scales{0.5, 2.0};
    int realizations = 8;
    std::size_t follower_paths = 20000;  ///< per realization
    std::size_t leader_paths = 100000;
    double z_threshold = 3.0;
    std::uint64_t seed = 1;
    int threads = 1;
    InitialState init;
};

/// Per-realization and per-window rows plus h -> 0 extrapolations.
struct SlopeSuiteReport {
    std::vector<SlopeEstimate> rows;
    /// Linear fits of Delta(h) evaluated at h = 0, one per perturbation (and realization).
    std::vector<SlopeEstimate> extrapolated;
    bool nonpositive = true;       ///< every non-null estimate <= z * std_error
    bool null_consistent = true;   ///< every pooled null estimate within z * std_error of 0
    bool paired_tighter = true;    ///< paired error below unpaired for every non-null row
    bool passed() const noexcept { return nonpositive && null_consistent && paired_tighter; }
};

SlopeSuiteReport run_follower_suite(const Market& market, const EquilibriumSurfaces& surfaces,
                                    const SlopeSuiteConfig& config);
SlopeSuiteReport run_leader_suite(const Market& market, const EquilibriumSurfaces& surfaces,
                                  const SlopeSuiteConfig& config);

struct ConvergenceReport {
    std::vector<double> meshes;
    std::vector<double> objective_gaps;  ///< |J1 sampled - J1 exploratory|
    std::vector<double> signed_gaps;
    std::vector<double> gap_std_errors;
    std::vector<double> sampled_objectives;  ///< J1 on each mesh, entropy included
    double exploratory_objective = 0.0;
    double fitted_order = 0.0;
    double epsilon = 0.0;  ///< gap at the finest mesh
    bool monotone = false;
    bool noise_limited = false;
    std::size_t n_paths = 0;
    std::size_t recommended_paths = 0;  ///< set when noise_limited
    bool passed() const noexcept {
        return fitted_order >= 0.7 && fitted_order <= 1.5 && monotone && !noise_limited;
    }
};

struct ConvergenceConfig {
    std::vector<int> intervals{8, 16, 32, 64};  ///< meshes T/n, each dividing fine_steps
    int fine_steps = 2048;
    std::size_t n_paths = 20000;
    std::uint64_t seed = 1;
    int threads = 1;
    InitialState init;
};

/**
 * Leader objective gap between the sampled regime on each mesh and the
 * exploratory regime. Given the filter path the sampled Z1(T) is affine in
 * the action noise, so its conditional mean and variance are integrated out
 * exactly; the exploratory counterpart likewise. All meshes share the filter
 * paths and the SDE step T / fine_steps.
 */
ConvergenceReport convergence_study(const Market& market, const EquilibriumSurfaces& surfaces,
                                    const ConvergenceConfig& config);

struct Deviation {
    double mean_offset = 0.0;
    double variance_scale = 1.0;
};

struct CertificateRow {
    Deviation deviation;
    double improvement = 0.0;  ///< J1(deviation) - J1(equilibrium)
    double std_error = 0.0;
    double unpaired_std_error = 0.0;
};

struct CertificateReport {
    int intervals = 0;
    std::vector<CertificateRow> rows;
    double max_improvement = 0.0;
    double max_std_error = 0.0;  ///< std_error of the maximizing row
    double epsilon = 0.0;
    double epsilon_std_error = 0.0;
    bool passed = false;
    std::string recommendation;
};

struct CertificateConfig {
    int intervals = 64;
    int fine_steps = 2048;
    std::vector<Deviation> deviations{{0.0, 1.0},  {-1.0, 1.0}, {-0.5, 1.0}, {0.5, 1.0},
                                      {1.0, 1.0},  {0.0, 0.5},  {0.0, 2.0}};
    std::size_t n_paths = 20000;
    std::uint64_t seed = 1;
    int threads = 1;
    InitialState init;
    /// Epsilon from an earlier convergence study; measured on the same paths if absent.
    std::optional<double> epsilon;
};

/**
 * Best one-node improvement over the leader's equilibrium in the sampled
 * regime. The deviation replaces the policy on the first grid interval by a
 * Gaussian with shifted mean and scaled variance. Passes when the largest
 * improvement is at most epsilon + 3 std_error.
 */
CertificateReport stackelberg_certificate(const Market& market,
                                          const EquilibriumSurfaces& surfaces,
                                          const CertificateConfig& config);

/// Rows of a slope suite as CSV.
void write_slope_csv(const SlopeSuiteReport& report, const std::filesystem::path& file);
void write_convergence_csv(const ConvergenceReport& report, const std::filesystem::path& file);
void write_certificate_csv(const CertificateReport& report, const std::filesystem::path& file);

}  // namespace stackelberg
