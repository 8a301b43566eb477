#include "stackelberg/rng.hpp"

#include <boost/math/special_functions/erf.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

using namespace stackelberg;

TEST(Rng, InverseNormalMatchesErfcInverse) {
    double worst = 0.0;
    auto check = [&](double u) {
        const double exact = -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * u);
        const double got = inverse_normal_cdf(u);
        if (exact != 0.0) worst = std::max(worst, std::abs(got - exact) / std::abs(exact));
        else EXPECT_NEAR(got, 0.0, 1e-15);
    };
    for (int k = 1; k < 100000; ++k) check(k / 100000.0);
    for (double u = 1e-300; u < 1e-3; u *= 3.7) {
        check(u);
        if (1.0 - u < 1.0) check(1.0 - u);
    }
    EXPECT_LT(worst, 1.2e-9);
}

TEST(Rng, InverseNormalIsOddAndRejectsBoundary) {
    for (double u : {0.01, 0.2, 0.4, 0.49}) {
        EXPECT_NEAR(inverse_normal_cdf(u), -inverse_normal_cdf(1.0 - u), 1e-12);
    }
    EXPECT_THROW(inverse_normal_cdf(0.0), std::domain_error);
    EXPECT_THROW(inverse_normal_cdf(1.0), std::domain_error);
    EXPECT_THROW(inverse_normal_cdf(std::nan("")), std::domain_error);
}

TEST(Rng, StreamsAreReproducible) {
    CounterRng a(42, 7, Channel::filter), b(42, 7, Channel::filter);
    for (int k = 0; k < 1000; ++k) EXPECT_EQ(a.normal(), b.normal());
}

TEST(Rng, KeysSeparateStreams) {
    std::set<double> firsts;
    for (std::uint64_t seed : {1, 2}) {
        for (std::uint64_t path : {0, 1, 2}) {
            for (auto ch : {Channel::filter, Channel::exploration, Channel::actions, Channel::aux}) {
                firsts.insert(CounterRng(seed, path, ch).uniform());
            }
        }
    }
    EXPECT_EQ(firsts.size(), 24u);
}

TEST(Rng, SeekReplaysTheSameDraw) {
    CounterRng a(3, 0, Channel::actions);
    std::vector<double> draws;
    for (int k = 0; k < 50; ++k) draws.push_back(a.uniform());
    CounterRng b(3, 0, Channel::actions);
    b.seek(37);
    EXPECT_EQ(b.counter(), 37u);
    EXPECT_EQ(b.uniform(), draws[37]);
}

TEST(Rng, UniformStaysInsideOpenInterval) {
    CounterRng a(9, 9, Channel::aux);
    for (int k = 0; k < 100000; ++k) {
        const double u = a.uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
    a.seek(UINT64_MAX);
    EXPECT_THROW(a.uniform(), std::overflow_error);
}

TEST(Rng, NormalMomentsAndIndependence) {
    const int n = 400000;
    CounterRng a(11, 0, Channel::filter), b(11, 0, Channel::exploration);
    double s1 = 0, s2 = 0, s3 = 0, s4 = 0, cross = 0, lag = 0, prev = 0;
    for (int k = 0; k < n; ++k) {
        const double x = a.normal(), y = b.normal();
        s1 += x;
        s2 += x * x;
        s3 += x * x * x;
        s4 += x * x * x * x;
        cross += x * y;
        lag += x * prev;
        prev = x;
    }
    const double se = 1.0 / std::sqrt(n);
    EXPECT_NEAR(s1 / n, 0.0, 4 * se);
    EXPECT_NEAR(s2 / n, 1.0, 4 * std::sqrt(2.0) * se);
    EXPECT_NEAR(s3 / n, 0.0, 4 * std::sqrt(15.0) * se);
    EXPECT_NEAR(s4 / n, 3.0, 4 * std::sqrt(96.0) * se);
    EXPECT_NEAR(cross / n, 0.0, 4 * se);
    EXPECT_NEAR(lag / n, 0.0, 4 * se);
}

TEST(Rng, MixerIsInjectiveOnSample) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t k = 0; k < 100000; ++k) seen.insert(mix64(k));
    EXPECT_EQ(seen.size(), 100000u);
}
