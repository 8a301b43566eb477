#include "stackelberg/strategies.hpp"

#include <cmath>
#include <numbers>

namespace stackelberg {

namespace {

void require_kind(const ValueSurface& s, SurfaceKind kind, const char* who) {
    if (s.kind() != kind) {
        throw DomainError(std::string(who) + ": expected a " + to_string(kind) + " surface, got " +
                          to_string(s.kind()));
    }
}

}  // namespace

FollowerResponse follower_response(double t, double p, const ValueSurface& a2,
                                   const Market& market) {
    require_kind(a2, SurfaceKind::a2, "follower_response");
    const double da2 = a2.interpolate(t, p, Field::dp);
    return {market.gamma_term(p, da2), market.constants().kappa};
}

double aggregate_control(double t, double p, const ValueSurface& a2, const Market& market) {
    require_kind(a2, SurfaceKind::a2, "aggregate_control");
    const auto& m = market.params();
    const double da2 = a2.interpolate(t, p, Field::dp);
    return (market.theta(p) - m.r) / (m.sigma * m.sigma * m.gamma2) -
           market.beta(p) * da2 / m.sigma;
}

double leader_mean(double t, double p, const ValueSurface& a1, const ValueSurface& a2,
                   const Market& market) {
    const auto& m = market.params();
    const auto& c = market.constants();
    const double da1 = a1.interpolate(t, p, Field::dp);
    const double da2 = a2.interpolate(t, p, Field::dp);
    return (market.theta(p) - m.r) * c.l / (m.sigma * m.sigma) -
           market.beta(p) / (c.chi * m.sigma) * (da1 + (1.0 - c.chi) * da2);
}

GaussianPolicy::GaussianPolicy(MeanFunction mean, double variance)
    : mean_(std::move(mean)), variance_(variance), stddev_(std::sqrt(variance)) {
    if (!mean_) throw DomainError("GaussianPolicy: empty mean function");
    if (!(variance >= 0.0) || !std::isfinite(variance)) {
        throw DomainError("GaussianPolicy: variance must be finite and nonnegative");
    }
}

double equilibrium_policy_variance(const Market& market) {
    const auto& m = market.params();
    const double chi = market.constants().chi;
    return m.lambda0 / (m.gamma1 * m.sigma * m.sigma * chi * chi);
}

GaussianPolicy leader_policy(const Market& market, const ValueSurface& a1,
                             const ValueSurface& a2) {
    require_kind(a1, SurfaceKind::a1, "leader_policy");
    require_kind(a2, SurfaceKind::a2, "leader_policy");
    if (!(market.params().lambda0 > 0.0)) {
        throw DomainError("leader_policy: lambda0 must be positive");
    }
    // The policy outlives the caller's surfaces, so it keeps its own copies.
    auto s1 = std::make_shared<const ValueSurface>(a1);
    auto s2 = std::make_shared<const ValueSurface>(a2);
    auto mk = std::make_shared<const Market>(market);
    auto mean = [s1, s2, mk](double t, double p) { return leader_mean(t, p, *s1, *s2, *mk); };
    return GaussianPolicy(std::move(mean), equilibrium_policy_variance(market));
}

double sample_action(const GaussianPolicy& policy, double t, double p, CounterRng& rng) {
    const double z = rng.normal();
    return policy.mean(t, p) + policy.stddev() * z;
}

double gaussian_entropy(double variance) {
    if (!(variance > 0.0)) throw DomainError("entropy requires a positive variance");
    return 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * variance);
}

double policy_entropy(const GaussianPolicy& policy) { return gaussian_entropy(policy.variance()); }

}  // namespace stackelberg
