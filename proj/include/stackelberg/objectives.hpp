#pragma once

/**
 * @file objectives.hpp
 * @brief Monte Carlo mean-variance objectives and the closed-form value functions.
 *
 * For terminal samples Z of the relative wealth the estimated objective is
 *   mean(Z) - gamma/2 var(Z) + lambda0 * entropy_term
 * with the unbiased variance. Its standard error comes from the influence
 * function psi = (Z - m) - gamma/2 ((Z - m)^2 - v), which carries the fourth
 * central moment into the error of the variance term.
 */

#include "stackelberg/pde_solver.hpp"
#include "stackelberg/simulator.hpp"
#include "stackelberg/strategies.hpp"

#include <iosfwd>
#include <span>
#include <vector>

namespace stackelberg {

struct ObjectiveEstimate {
    Investor who = Investor::follower;
    Regime regime = Regime::sampled;
    double mean_term = 0.0;
    double variance_term = 0.0;
    double entropy_term = 0.0;  ///< integral of the policy entropy over [0,T]
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n_paths = 0;
};

/// Header matching write_csv_row.
void write_csv_header(std::ostream& out);
void write_csv_row(std::ostream& out, const ObjectiveEstimate& e);

/**
 * Mean-variance statistics of arbitrary terminal samples. entropy_weight is
 * lambda0 for the leader and 0 otherwise. Throws DomainError for fewer than two samples.
 */
ObjectiveEstimate estimate_mean_variance(std::span<const double> z, double gamma,
                                         double entropy_weight, double entropy_term);

/// Z2(T) statistics with gamma2; all samples should share one frozen u1 sequence.
ObjectiveEstimate estimate_follower_objective(std::span<const TerminalSample> samples,
                                              const ModelParams& params,
                                              Regime regime = Regime::sampled);
ObjectiveEstimate estimate_follower_objective(std::span<const PathBundle> paths,
                                              const ModelParams& params);

/**
 * Z1(T) statistics with gamma1 plus lambda0 T H(policy). A zero-variance
 * policy (only usable when lambda0 = 0) contributes no entropy.
 */
ObjectiveEstimate estimate_leader_objective(std::span<const TerminalSample> samples,
                                            const GaussianPolicy& policy,
                                            const ModelParams& params, Regime regime);
ObjectiveEstimate estimate_leader_objective(std::span<const PathBundle> paths,
                                            const GaussianPolicy& policy,
                                            const ModelParams& params);

/// Integral over [0,T] of the entropy of a Gaussian policy with constant variance.
double entropy_integral(double variance, double T);

/// Left-endpoint sum of entropies of a piecewise-constant variance schedule.
double entropy_integral(std::span<const double> variances, std::span<const double> widths);

/// Standard error of the paired difference of two objectives on common samples.
double paired_std_error(std::span<const double> z_a, std::span<const double> z_b, double gamma);

/// Influence values psi_k of the mean-variance functional at each sample.
std::vector<double> influence(std::span<const double> z, double gamma);

/**
 * (1 - lambda/2) x_own - (lambda/2) x_other + A(t,p), with A of kind A1 for
 * the leader and A2 for the follower.
 */
double value_function(Investor who, double t, double x1, double x2, double p,
                      const ValueSurface& A, const ModelParams& params);

}  // namespace stackelberg
