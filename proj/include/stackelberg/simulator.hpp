#pragma once

/**
 * @file simulator.hpp
 * @brief Euler-Maruyama simulation of the filter and both wealth regimes.
 *
 * Every wealth increment has the form control * g with the common gain
 *   g = (theta(P) - r) dt + sigma dW-hat,
 * so one filter path drives any number of strategies. In the sampled regime
 * the leader's action is frozen on each grid interval while the follower's
 * response is re-evaluated every SDE step. In the exploratory regime the
 * leader's policy enters through its mean b and standard deviation s:
 *   dX1 = b g + sigma s dW-bar,   dX2 = (Gamma + kappa b) g + sigma kappa s dW-bar.
 *
 * Noise streams are keyed on (seed, path index, channel), so the two regimes
 * run with the same seed see identical W-hat increments.
 */

#include "stackelberg/market_model.hpp"
#include "stackelberg/pde_solver.hpp"
#include "stackelberg/rng.hpp"
#include "stackelberg/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace stackelberg {

/// Grid of action-sampling times with a fixed number of SDE steps per interval.
struct TimeGrid {
    std::vector<double> nodes;
    int substeps = 1;

    /// Throws DomainError unless nodes run strictly upward from exactly 0 to exactly T.
    void validate(double T) const;

    int n_intervals() const noexcept { return static_cast<int>(nodes.size()) - 1; }
    double mesh() const;
    /// Index i of the interval [t_i, t_{i+1}) holding t; T maps to the last interval.
    int interval_of(double t) const;
    /// Grid node at or before t, the last sampling time.
    double delta(double t) const { return nodes[static_cast<std::size_t>(interval_of(t))]; }
    int total_steps() const noexcept { return n_intervals() * substeps; }

    static TimeGrid uniform(double T, int n_intervals, int substeps);
    /// Uniform grid whose SDE step is at most T / fine_steps.
    static TimeGrid uniform_fine(double T, int n_intervals, int fine_steps = 2048);
};

enum class Regime { sampled, exploratory };
enum class Investor { leader, follower };

std::string to_string(Regime regime);
std::string to_string(Investor who);

/**
 * One simulated path. times, P, X1, X2 have total_steps + 1 entries; What and
 * Wbar hold the increments of each step (Wbar is empty in the sampled regime).
 */
struct PathBundle {
    Regime regime = Regime::sampled;
    TimeGrid grid;
    std::vector<double> times;
    std::vector<double> P;
    std::vector<double> What;
    std::vector<double> Wbar;
    std::vector<double> X1;
    std::vector<double> X2;
    std::vector<double> u1_actions;  ///< one per grid interval (sampled regime)
    std::vector<double> u1_active;   ///< leader action or policy mean in force at each time

    /// CSV with columns t,P,X1,X2,u1_active.
    void write_csv(const std::filesystem::path& file) const;
};

/// Euler-Maruyama step of dP = beta(P) dW-hat, clamped to [0,1].
double step_filter(double p, double dW, double dt, const Market& market);

struct InitialState {
    double x1 = 1.0;
    double x2 = 1.0;
    double p = 0.5;

    void validate() const;
};

/**
 * Sampled regime. Without frozen actions, u1(t_i) is drawn from the policy at
 * (t_i, P(t_i)); with them, frozen_actions[i] is used on interval i.
 */
PathBundle simulate_sampled(const TimeGrid& grid, const GaussianPolicy& policy,
                            const ValueSurface& a2, const Market& market,
                            const InitialState& init, std::uint64_t seed, std::uint64_t path = 0,
                            std::span<const double> frozen_actions = {});

PathBundle simulate_exploratory(const TimeGrid& grid, const GaussianPolicy& policy,
                                const ValueSurface& a2, const Market& market,
                                const InitialState& init, std::uint64_t seed,
                                std::uint64_t path = 0);

/// (1 - lambda/2) X_own - (lambda/2) X_other at every stored time.
std::vector<double> z_transform(const PathBundle& bundle, Investor who, const ModelParams& params);
double z_value(Investor who, double x1, double x2, const ModelParams& params) noexcept;

struct TerminalSample {
    double X1 = 0.0;
    double X2 = 0.0;
    double P = 0.0;
};

struct EnsembleSpec {
    TimeGrid grid;
    InitialState init;
    std::uint64_t seed = 0;
    std::size_t n_paths = 0;
    std::uint64_t first_path = 0;  ///< path indices run first_path, first_path+1, ...
    int threads = 1;
};

/// Terminal states of n_paths sampled-regime paths, in path order.
std::vector<TerminalSample> run_sampled_ensemble(const Market& market,
                                                 const GaussianPolicy& policy,
                                                 const ValueSurface& a2,
                                                 const EnsembleSpec& spec,
                                                 std::span<const double> frozen_actions = {});

std::vector<TerminalSample> run_exploratory_ensemble(const Market& market,
                                                     const GaussianPolicy& policy,
                                                     const ValueSurface& a2,
                                                     const EnsembleSpec& spec);

/// Draws one u1 sequence from the policy along an independent filter path.
std::vector<double> draw_action_sequence(const TimeGrid& grid, const GaussianPolicy& policy,
                                         const Market& market, double p0, std::uint64_t seed,
                                         std::uint64_t realization);

struct FilterExcursions {
    std::size_t steps = 0;
    std::size_t excursions = 0;  ///< steps ending outside [-eps, 1+eps]
    std::size_t unclamped_exits = 0;  ///< steps ending outside [0,1]
    double eps = 0.0;
};

/// Runs the filter without projection and counts boundary excursions.
FilterExcursions filter_excursion_diagnostic(const Market& market, const TimeGrid& grid,
                                             double p0, std::size_t n_paths, std::uint64_t seed);

namespace detail {

/**
 * Drives one filter path over the grid. For each SDE step the visitor gets
 * step(i, t, p, dt, dW, g) with g the common gain; at each grid node i it gets
 * node(i, t, p) before the interval's first step. The W-hat stream is consumed
 * one normal per step in step order.
 */
template <class Visitor>
void drive_filter(const Market& market, const TimeGrid& grid, double p0, std::uint64_t seed,
                  std::uint64_t path, Visitor&& visitor) {
    CounterRng noise(seed, path, Channel::filter);
    const auto& m = market.params();
    double p = p0;
    const int n = grid.n_intervals();
    for (int i = 0; i < n; ++i) {
        const double t0 = grid.nodes[static_cast<std::size_t>(i)];
        const double dt =
            (grid.nodes[static_cast<std::size_t>(i) + 1] - t0) / static_cast<double>(grid.substeps);
        const double sdt = std::sqrt(dt);
        visitor.node(i, t0, p);
        for (int k = 0; k < grid.substeps; ++k) {
            const double t = t0 + k * dt;
            const double dW = sdt * noise.normal();
            const double g = (market.theta_unchecked(p) - m.r) * dt + m.sigma * dW;
            visitor.step(i, t, p, dt, dW, g);
            p = std::clamp(p + market.beta_unchecked(p) * dW, 0.0, 1.0);
        }
    }
    visitor.finish(p);
}

}  // namespace detail

}  // namespace stackelberg
