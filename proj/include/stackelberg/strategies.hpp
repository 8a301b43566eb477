#pragma once

/**
 * @file strategies.hpp
 * @brief Closed-form equilibrium strategies.
 *
 * The follower responds to the leader's observed action u1 linearly,
 *   u2*(t,p) = Gamma(t,p) + kappa u1,
 * so that the aggregate (1-lambda2/2) u2* - (lambda2/2) u1 does not depend on
 * u1. The leader samples u1 from a Gaussian whose mean depends on (t,p) and
 * whose variance is the constant lambda0 / (gamma1 sigma^2 chi^2).
 *
 * Strategies depend on the state only through (t, p); wealth never enters.
 */

#include "stackelberg/market_model.hpp"
#include "stackelberg/pde_solver.hpp"
#include "stackelberg/rng.hpp"

#include <functional>
#include <memory>

namespace stackelberg {

struct FollowerResponse {
    double base = 0.0;   ///< u1-independent part, Gamma(t,p)
    double slope = 0.0;  ///< kappa

    double action(double u1) const noexcept { return base + slope * u1; }
};

FollowerResponse follower_response(double t, double p, const ValueSurface& a2,
                                   const Market& market);

/// (theta(p)-r)/(sigma^2 gamma2) - beta(p) d_p a2(t,p) / sigma.
double aggregate_control(double t, double p, const ValueSurface& a2, const Market& market);

/// Mean of the leader's equilibrium policy; well defined for any lambda0.
double leader_mean(double t, double p, const ValueSurface& a1, const ValueSurface& a2,
                   const Market& market);

class GaussianPolicy {
public:
    using MeanFunction = std::function<double(double t, double p)>;

    /// variance may be zero only in degenerate-limit harnesses.
    GaussianPolicy(MeanFunction mean, double variance);

    double mean(double t, double p) const { return mean_(t, p); }
    double variance() const noexcept { return variance_; }
    double stddev() const noexcept { return stddev_; }
    const MeanFunction& mean_function() const noexcept { return mean_; }

private:
    MeanFunction mean_;
    double variance_;
    double stddev_;
};

/// Leader's equilibrium policy. Throws DomainError if lambda0 <= 0.
GaussianPolicy leader_policy(const Market& market, const ValueSurface& a1,
                             const ValueSurface& a2);

/// lambda0 / (gamma1 sigma^2 chi^2).
double equilibrium_policy_variance(const Market& market);

/// mean(t,p) + sqrt(variance) z with z drawn from rng.
double sample_action(const GaussianPolicy& policy, double t, double p, CounterRng& rng);

/// Differential entropy 1/2 log(2 pi e variance) in nats; variance must be positive.
double gaussian_entropy(double variance);
double policy_entropy(const GaussianPolicy& policy);

}  // namespace stackelberg
