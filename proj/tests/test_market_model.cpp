#include "stackelberg/market_model.hpp"

#include <boost/rational.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace stackelberg;

namespace {

using Q = boost::rational<long long>;

double to_double(const Q& q) {
    return static_cast<double>(q.numerator()) / static_cast<double>(q.denominator());
}

}  // namespace

TEST(MarketModel, BenchmarkConstantsMatchExactFractions) {
    // gamma1 = gamma2 = 2, lambda1 = lambda2 = 1/2 in exact arithmetic.
    const Q g1(2), g2(2), l1(1, 2), l2(1, 2);
    const Q kappa = l2 / (Q(2) - l2);
    const Q chi = (Q(2) - l2 - l1) / (Q(2) - l2);
    const Q l = (Q(2) * g2 - l2 * g2 + l1 * g1) / ((Q(2) - l2 - l1) * g1 * g2);
    EXPECT_EQ(kappa, Q(1, 3));
    EXPECT_EQ(chi, Q(2, 3));
    EXPECT_EQ(l, Q(1));

    const auto c = derive_constants(ModelParams{});
    EXPECT_NEAR(c.kappa, to_double(kappa), 1e-16);
    EXPECT_NEAR(c.chi, to_double(chi), 1e-16);
    EXPECT_NEAR(c.l, to_double(l), 1e-15);
}

TEST(MarketModel, LeaderToleranceMatchesRawQuotientAtRandomPoints) {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> g(0.2, 8.0), lam(0.0, 0.99);
    for (int k = 0; k < 1000; ++k) {
        ModelParams m;
        m.gamma1 = g(gen);
        m.gamma2 = g(gen);
        m.lambda1 = lam(gen);
        m.lambda2 = lam(gen);
        const double raw = (2 * m.gamma2 - m.lambda2 * m.gamma2 + m.lambda1 * m.gamma1) /
                           ((2 - m.lambda2 - m.lambda1) * m.gamma1 * m.gamma2);
        EXPECT_NEAR(derive_constants(m).l, raw, 1e-12 * std::abs(raw));
    }
}

TEST(MarketModel, NoRelativeConcernGivesSingleInvestorConstants) {
    for (double g1 : {0.3, 1.0, 2.0, 3.7, 11.0}) {
        ModelParams m;
        m.gamma1 = g1;
        m.gamma2 = 5.3;
        m.lambda1 = 0.0;
        m.lambda2 = 0.0;
        const auto c = derive_constants(m);
        EXPECT_EQ(c.kappa, 0.0);
        EXPECT_EQ(c.chi, 1.0);
        EXPECT_EQ(c.l, 1.0 / g1);
    }
}

TEST(MarketModel, FilterCoefficients) {
    const Market mk(ModelParams{});
    EXPECT_DOUBLE_EQ(mk.theta(0.0), 0.02);
    EXPECT_DOUBLE_EQ(mk.theta(1.0), 0.10);
    EXPECT_DOUBLE_EQ(mk.theta(0.5), 0.06);
    EXPECT_EQ(mk.beta(0.0), 0.0);
    EXPECT_EQ(mk.beta(1.0), 0.0);
    EXPECT_DOUBLE_EQ(mk.beta(0.5), 0.1);
    EXPECT_DOUBLE_EQ(mk.beta_max(), 0.1);
    for (double p = 0.0; p <= 1.0; p += 0.01) EXPECT_LE(mk.beta(p), mk.beta_max() + 1e-17);
}

TEST(MarketModel, ProbabilityOutsideUnitIntervalThrows) {
    const Market mk(ModelParams{});
    EXPECT_THROW(mk.theta(-0.01), DomainError);
    EXPECT_THROW(mk.beta(1.01), DomainError);
    EXPECT_THROW(mk.gamma_term(std::nan(""), 0.0), DomainError);
}

TEST(MarketModel, GammaTermFormula) {
    const Market mk(ModelParams{});
    // (theta - r)/(sigma^2 gamma2 (3/4)) - beta da2 / (sigma (3/4)) at p = 1/2, da2 = 0.3.
    const double expect = 0.03 / (0.04 * 2.0 * 0.75) - 0.1 * 0.3 / (0.2 * 0.75);
    EXPECT_NEAR(mk.gamma_term(0.5, 0.3), expect, 1e-15);
}

TEST(MarketModel, ValidationRejectsEachConstraint) {
    auto bad = [](auto mutate) {
        ModelParams m;
        mutate(m);
        EXPECT_THROW(validate(m), DomainError);
        EXPECT_THROW(Market{m}, DomainError);
    };
    bad([](ModelParams& m) { m.mu2 = m.mu1; });
    bad([](ModelParams& m) { m.sigma = 0.0; });
    bad([](ModelParams& m) { m.T = -1.0; });
    bad([](ModelParams& m) { m.r = 0.0; });
    bad([](ModelParams& m) { m.gamma1 = 0.0; });
    bad([](ModelParams& m) { m.gamma2 = -2.0; });
    bad([](ModelParams& m) { m.lambda1 = 1.0; });
    bad([](ModelParams& m) { m.lambda2 = -0.1; });
    bad([](ModelParams& m) { m.lambda0 = -1e-3; });
    bad([](ModelParams& m) { m.mu1 = INFINITY; });
    EXPECT_NO_THROW(validate(ModelParams{}));
}

TEST(MarketModel, HarnessConstructorSkipsValidation) {
    ModelParams m;
    m.mu1 = m.mu2 = 0.05;
    const Market mk(m, Market::SkipValidation{});
    EXPECT_EQ(mk.beta(0.3), 0.0);
    EXPECT_DOUBLE_EQ(mk.theta(0.3), 0.05);
}
