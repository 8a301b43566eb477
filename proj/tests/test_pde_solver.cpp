#include "stackelberg/pde_solver.hpp"
#include "test_support.hpp"

#include <boost/math/tools/minima.hpp>
#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace stackelberg;

namespace {

double trace(const ModelParams& m, double mu, double gamma, double t) {
    return (mu - m.r) * (mu - m.r) * (m.T - t) / (m.sigma * m.sigma * gamma);
}

/// Market with mu1 = mu2, so beta vanishes and every equation is an ODE in t.
Market flat_market(double mu) {
    ModelParams m;
    m.mu1 = m.mu2 = mu;
    return Market(m, Market::SkipValidation{});
}

}  // namespace

TEST(PdeSolver, BoundaryColumnsMatchTraces) {
    const auto& m = fixture::benchmark();
    const auto& a2 = fixture::benchmark_surfaces().a2;
    for (int i = 0; i < a2.n_time(); ++i) {
        const double t = a2.time(i);
        EXPECT_NEAR(a2.value(i, 0), trace(m, m.mu2, m.gamma2, t), 1e-10);
        EXPECT_NEAR(a2.value(i, a2.n_nodes() - 1), trace(m, m.mu1, m.gamma2, t), 1e-10);
    }
}

TEST(PdeSolver, TerminalRowsVanish) {
    const auto& s = fixture::benchmark_surfaces();
    for (const auto* surf : {&s.a1, &s.a2, &s.A1, &s.A2}) {
        for (double v : surf->row(surf->n_time() - 1)) EXPECT_EQ(v, 0.0);
    }
}

TEST(PdeSolver, FlatFilterMatchesClosedFormEverywhere) {
    for (auto scheme : {Scheme::crank_nicolson, Scheme::explicit_euler}) {
        const double mu = 0.07;
        const Market mk = flat_market(mu);
        const auto& m = mk.params();
        PdeGridSpec grid{64, 31, scheme};
        const auto s = solve_all(mk, grid);
        const double c = entropy_source_constant(mk);
        const double q = (mu - m.r) * (mu - m.r) / (m.sigma * m.sigma);
        for (int i = 0; i < grid.n_time; ++i) {
            const double tau = m.T - s.a1.time(i);
            for (int j = 0; j < grid.n_nodes(); ++j) {
                EXPECT_NEAR(s.a1.value(i, j), q * tau / m.gamma1, 1e-8);
                EXPECT_NEAR(s.a2.value(i, j), q * tau / m.gamma2, 1e-8);
                EXPECT_NEAR(s.A2.value(i, j), q * tau / (2 * m.gamma2), 1e-8);
                EXPECT_NEAR(s.A1.value(i, j), (q / (2 * m.gamma1) + c) * tau, 1e-8);
                EXPECT_NEAR(s.a2.dp(i, j), 0.0, 1e-8);
            }
        }
    }
}

TEST(PdeSolver, CrankNicolsonConvergesAtSecondOrder) {
    const Market mk(fixture::benchmark());
    // p = 1/2 is a node on every grid below; time and space are refined together.
    auto at_half = [&](int n, SurfaceKind kind) {
        PdeGridSpec g{n + 1, n - 1, Scheme::crank_nicolson};
        const auto s = solve_all(mk, g);
        const ValueSurface* surf = kind == SurfaceKind::a2 ? &s.a2 : &s.A1;
        return surf->value(0, n / 2);
    };
    for (auto kind : {SurfaceKind::a2, SurfaceKind::A1}) {
        const double u1 = at_half(16, kind), u2 = at_half(32, kind), u3 = at_half(64, kind),
                     u4 = at_half(128, kind);
        const double order_coarse = std::log2(std::abs(u1 - u2) / std::abs(u2 - u3));
        const double order_fine = std::log2(std::abs(u2 - u3) / std::abs(u3 - u4));
        EXPECT_GE(order_coarse, 1.8) << to_string(kind);
        EXPECT_GE(order_fine, 1.8) << to_string(kind);
    }
}

TEST(PdeSolver, ExplicitAndCrankNicolsonAgree) {
    const Market mk(fixture::benchmark());
    const auto cn = solve_a2(mk, PdeGridSpec{2049, 63, Scheme::crank_nicolson});
    const auto ex = solve_a2(mk, PdeGridSpec{2049, 63, Scheme::explicit_euler});
    // The upwinded explicit scheme is first order in p and carries the larger error;
    // its truncation estimate is the change under halved spacing (and quartered step).
    const auto ex_fine = solve_a2(mk, PdeGridSpec{8193, 127, Scheme::explicit_euler});
    const auto cn_fine = solve_a2(mk, PdeGridSpec{2049, 127, Scheme::crank_nicolson});
    double truncation = 0.0, gap = 0.0, cn_change = 0.0;
    for (int j = 0; j < cn.n_nodes(); ++j) {
        truncation = std::max(truncation, std::abs(ex.value(0, j) - ex_fine.value(0, 2 * j)));
        cn_change = std::max(cn_change, std::abs(cn.value(0, j) - cn_fine.value(0, 2 * j)));
        gap = std::max(gap, std::abs(cn.value(0, j) - ex.value(0, j)));
    }
    EXPECT_LT(cn_change, truncation);
    EXPECT_LE(gap, 10.0 * truncation);
}

TEST(PdeSolver, ExplicitStepLimitIsEnforced) {
    const Market mk(fixture::benchmark());
    const PdeGridSpec ex{8, 255, Scheme::explicit_euler};
    EXPECT_THROW(solve_a2(mk, ex), NumericalError);
}

TEST(PdeSolver, EqualRiskAversionGivesIdenticalGains) {
    ModelParams m = fixture::benchmark();
    m.gamma1 = m.gamma2 = 1.3;
    const Market mk(m);
    const PdeGridSpec g{128, 63};
    const auto a1 = solve_a1(mk, g);
    const auto a2 = solve_a2(mk, g);
    for (int i = 0; i < g.n_time; ++i) {
        for (int j = 0; j < g.n_nodes(); ++j) {
            EXPECT_EQ(a1.value(i, j), a2.value(i, j));
            EXPECT_EQ(a1.dp(i, j), a2.dp(i, j));
        }
    }
}

TEST(PdeSolver, GainsAreNonnegativeAndGrowWithHorizon) {
    const auto& a2 = fixture::benchmark_surfaces().a2;
    for (int i = 0; i + 1 < a2.n_time(); ++i) {
        for (int j = 0; j < a2.n_nodes(); ++j) {
            EXPECT_GE(a2.value(i, j), 0.0);
            EXPECT_GE(a2.value(i, j), a2.value(i + 1, j) - 1e-15);
        }
    }
}

TEST(PdeSolver, EntropyConstantIsTheSupremumOverPolicyVariance) {
    const Market mk(fixture::benchmark());
    const auto& m = mk.params();
    const double chi = mk.constants().chi;
    const double k = m.gamma1 * m.sigma * m.sigma * chi * chi;
    // Entropy gain minus variance cost of a Gaussian policy with variance v.
    auto neg = [&](double v) {
        return -(-0.5 * k * v + m.lambda0 * 0.5 * std::log(2 * std::numbers::pi * std::numbers::e * v));
    };
    const auto best = boost::math::tools::brent_find_minima(neg, 1e-3, 100.0, 50);
    EXPECT_NEAR(entropy_source_constant(mk), -best.second, 1e-12);
    EXPECT_NEAR(best.first, m.lambda0 / k, 1e-6);
    EXPECT_NEAR(entropy_source_constant(mk), 0.14359, 1e-5);
}

TEST(PdeSolver, EntropyConstantVanishesAtCriticalWeight) {
    ModelParams m = fixture::benchmark();
    const double chi = derive_constants(m).chi;
    m.lambda0 = m.gamma1 * m.sigma * m.sigma * chi * chi / (2 * std::numbers::pi);
    EXPECT_NEAR(entropy_source_constant(Market(m)), 0.0, 1e-16);
    m.lambda0 = 0.0;
    EXPECT_THROW(entropy_source_constant(Market(m)), DomainError);
}

TEST(PdeSolver, SourceTermAtZeroDerivativeIsMyopicGain) {
    const Market mk(fixture::benchmark());
    const auto& m = mk.params();
    for (double p : {0.0, 0.3, 0.5, 1.0}) {
        const double th = mk.theta(p) - m.r;
        EXPECT_NEAR(source_R(mk, 2.0, p, 0.0), th * th / (2 * m.sigma * m.sigma * 2.0), 1e-15);
    }
}

TEST(PdeSolver, InterpolationIsExactAtNodesAndChecksRange) {
    const auto& a2 = fixture::benchmark_surfaces().a2;
    for (int i : {0, 17, a2.n_time() - 1}) {
        for (int j : {0, 100, a2.n_nodes() - 1}) {
            EXPECT_NEAR(a2.interpolate(a2.time(i), a2.node(j), Field::value), a2.value(i, j), 1e-15);
            EXPECT_NEAR(a2.interpolate(a2.time(i), a2.node(j), Field::dp), a2.dp(i, j), 1e-13);
        }
    }
    EXPECT_THROW(a2.interpolate(-0.1, 0.5, Field::value), DomainError);
    EXPECT_THROW(a2.interpolate(0.5, 1.2, Field::value), DomainError);
    EXPECT_THROW(fixture::benchmark_surfaces().A2.interpolate(0.5, 0.5, Field::dp), DomainError);
}

TEST(PdeSolver, KindAndGridChecks) {
    const Market mk(fixture::benchmark());
    const auto& s = fixture::benchmark_surfaces();
    EXPECT_THROW(solve_A2(mk, s.a1, PdeGridSpec{}), DomainError);
    EXPECT_THROW(solve_A1(mk, s.a2, PdeGridSpec{}), DomainError);
    EXPECT_THROW(solve_a2(mk, PdeGridSpec{1, 16}), DomainError);
    EXPECT_THROW(solve_a2(mk, PdeGridSpec{16, 2}), DomainError);
    EXPECT_THROW(scheme_from_string("implicit"), DomainError);
}

TEST(PdeSolver, CsvLayout) {
    const auto dir = std::filesystem::temp_directory_path() / "stackelberg_pde_csv";
    std::filesystem::remove_all(dir);
    const auto a2 = solve_a2(Market(fixture::benchmark()), PdeGridSpec{4, 3});
    a2.write_csv(dir);
    std::ifstream in(dir / "a2_4x3.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "t,0,0.25,0.5,0.75,1");
    int rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    EXPECT_EQ(rows, 4);
}

TEST(PdeSolver, DefaultGridSolveIsFast) {
    const Market mk(fixture::benchmark());
    const auto start = std::chrono::steady_clock::now();
    const auto s = solve_all(mk, PdeGridSpec{});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EXPECT_LT(secs, 5.0);
    EXPECT_GT(s.A1.value(0, 128), 0.0);
}
