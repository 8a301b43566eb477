#include "stackelberg/strategies.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace stackelberg;

namespace {

const PdeGridSpec kSmall{128, 63};

}  // namespace

TEST(Strategies, AggregateDoesNotSeeTheLeaderAction) {
    const Market mk(fixture::benchmark());
    const auto& a2 = fixture::benchmark_surfaces().a2;
    const double shrink = 1.0 - 0.5 * mk.params().lambda2;
    const double half = 0.5 * mk.params().lambda2;
    for (double t : {0.0, 0.37, 0.9}) {
        for (double p : {0.05, 0.5, 0.81}) {
            const auto resp = follower_response(t, p, a2, mk);
            const double agg = aggregate_control(t, p, a2, mk);
            for (double u1 : {-5.0, 0.0, 0.3, 12.0}) {
                EXPECT_NEAR(shrink * resp.action(u1) - half * u1, agg, 1e-12);
            }
        }
    }
}

TEST(Strategies, LeaderWealthLoadsChiOnOwnAction) {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> lam(0.0, 0.99);
    for (int k = 0; k < 1000; ++k) {
        ModelParams m;
        m.lambda1 = lam(gen);
        m.lambda2 = lam(gen);
        const auto c = derive_constants(m);
        // Z1 = (1-l1/2) X1 - (l1/2) X2, with the follower holding Gamma + kappa u1.
        EXPECT_NEAR((1.0 - 0.5 * m.lambda1) - 0.5 * m.lambda1 * c.kappa, c.chi, 1e-14);
    }
}

TEST(Strategies, NoRelativeConcernsGiveSingleInvestorRules) {
    ModelParams m = fixture::benchmark();
    m.lambda1 = m.lambda2 = 0.0;
    m.gamma1 = 1.5;
    m.gamma2 = 3.0;
    const Market mk(m);
    const auto s = solve_all(mk, kSmall);
    for (double t : {0.0, 0.5}) {
        for (double p : {0.2, 0.5, 0.7}) {
            const auto resp = follower_response(t, p, s.a2, mk);
            EXPECT_EQ(resp.slope, 0.0);
            const double th = mk.theta(p) - m.r;
            const double b = mk.beta(p);
            EXPECT_NEAR(resp.base,
                        th / (m.sigma * m.sigma * m.gamma2) -
                            b * s.a2.interpolate(t, p, Field::dp) / m.sigma,
                        1e-13);
            EXPECT_NEAR(leader_mean(t, p, s.a1, s.a2, mk),
                        th / (m.sigma * m.sigma * m.gamma1) -
                            b * s.a1.interpolate(t, p, Field::dp) / m.sigma,
                        1e-13);
        }
    }
}

TEST(Strategies, SymmetricPlayersWithoutConcernsAgree) {
    ModelParams m = fixture::benchmark();
    m.lambda1 = m.lambda2 = 0.0;
    const Market mk(m);
    const auto s = solve_all(mk, kSmall);
    for (double p : {0.1, 0.5, 0.9}) {
        EXPECT_NEAR(leader_mean(0.2, p, s.a1, s.a2, mk), follower_response(0.2, p, s.a2, mk).base,
                    1e-13);
    }
}

TEST(Strategies, LeaderMeanIgnoresEntropyWeight) {
    ModelParams m = fixture::benchmark();
    const auto& s = fixture::benchmark_surfaces();
    const Market mk(m);
    m.lambda0 = 0.7;
    const Market other(m);
    EXPECT_EQ(leader_mean(0.3, 0.4, s.a1, s.a2, mk), leader_mean(0.3, 0.4, s.a1, s.a2, other));
}

TEST(Strategies, BenchmarkPolicyVariance) {
    EXPECT_NEAR(equilibrium_policy_variance(Market(fixture::benchmark())), 2.8125, 1e-14);
    const auto& s = fixture::benchmark_surfaces();
    const auto pol = leader_policy(Market(fixture::benchmark()), s.a1, s.a2);
    EXPECT_NEAR(pol.variance(), 2.8125, 1e-14);
    EXPECT_NEAR(pol.stddev(), std::sqrt(2.8125), 1e-14);
}

TEST(Strategies, PolicyOutlivesItsSurfaces) {
    const Market mk(fixture::benchmark());
    double expected = 0.0;
    auto make = [&] {
        const auto s = solve_all(mk, kSmall);
        expected = leader_mean(0.1, 0.6, s.a1, s.a2, mk);
        return leader_policy(mk, s.a1, s.a2);
    };
    const auto pol = make();
    EXPECT_EQ(pol.mean(0.1, 0.6), expected);
}

TEST(Strategies, EntropyOfGaussian) {
    EXPECT_NEAR(gaussian_entropy(1.0), 0.5 * std::log(2 * std::numbers::pi * std::numbers::e), 1e-15);
    EXPECT_NEAR(gaussian_entropy(4.0) - gaussian_entropy(1.0), std::log(2.0), 1e-15);
    EXPECT_THROW(gaussian_entropy(0.0), DomainError);
    EXPECT_THROW(gaussian_entropy(-1.0), DomainError);
}

TEST(Strategies, SampledActionsHaveThePolicyMoments) {
    const GaussianPolicy pol([](double t, double p) { return 1.0 + t - p; }, 2.8125);
    CounterRng rng(17, 0, Channel::actions);
    const int n = 200000;
    double s = 0, ss = 0;
    for (int k = 0; k < n; ++k) {
        const double u = sample_action(pol, 0.5, 0.25, rng) - 1.25;
        s += u;
        ss += u * u;
    }
    EXPECT_NEAR(s / n, 0.0, 4 * std::sqrt(2.8125 / n));
    EXPECT_NEAR(ss / n, 2.8125, 4 * 2.8125 * std::sqrt(2.0 / n));
}

TEST(Strategies, ArgumentChecks) {
    const auto& s = fixture::benchmark_surfaces();
    const Market mk(fixture::benchmark());
    EXPECT_THROW(follower_response(0.0, 0.5, s.a1, mk), DomainError);
    EXPECT_THROW(aggregate_control(0.0, 0.5, s.A2, mk), DomainError);
    EXPECT_THROW(leader_policy(mk, s.a2, s.a2), DomainError);
    EXPECT_THROW(follower_response(0.0, 1.5, s.a2, mk), DomainError);
    EXPECT_THROW(GaussianPolicy({}, 1.0), DomainError);
    EXPECT_THROW(GaussianPolicy([](double, double) { return 0.0; }, -1.0), DomainError);
    ModelParams m = fixture::benchmark();
    m.lambda0 = 0.0;
    EXPECT_THROW(leader_policy(Market(m), s.a1, s.a2), DomainError);
}
