#include "stackelberg/objectives.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace stackelberg;

namespace {

std::vector<double> normal_sample(std::size_t n, double mean, double sd, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> dist(mean, sd);
    std::vector<double> z(n);
    for (auto& x : z) x = dist(gen);
    return z;
}

double sd_of(const std::vector<double>& x) {
    double m = 0;
    for (double v : x) m += v;
    m /= x.size();
    double s = 0;
    for (double v : x) s += (v - m) * (v - m);
    return std::sqrt(s / (x.size() - 1));
}

}  // namespace

TEST(Objectives, HandComputedSample) {
    const std::vector<double> z{1, 2, 3, 4};
    const auto e = estimate_mean_variance(z, 2.0, 0.0, 0.0);
    EXPECT_DOUBLE_EQ(e.mean_term, 2.5);
    EXPECT_DOUBLE_EQ(e.variance_term, 5.0 / 3.0);
    EXPECT_DOUBLE_EQ(e.value, 2.5 - 5.0 / 3.0);
    EXPECT_EQ(e.n_paths, 4u);
    const auto w = estimate_mean_variance(z, 2.0, 0.1, 3.0);
    EXPECT_DOUBLE_EQ(w.value, e.value + 0.3);
    EXPECT_EQ(w.entropy_term, 3.0);
}

TEST(Objectives, DegenerateSampleHasNoError) {
    const std::vector<double> z(100, 1.7);
    const auto e = estimate_mean_variance(z, 3.0, 0.0, 0.0);
    EXPECT_NEAR(e.value, 1.7, 1e-14);
    EXPECT_NEAR(e.variance_term, 0.0, 1e-28);
    EXPECT_NEAR(e.std_error, 0.0, 1e-14);
    EXPECT_THROW(estimate_mean_variance(std::vector<double>{1.0}, 1.0, 0.0, 0.0), DomainError);
}

TEST(Objectives, TranslationShiftsOnlyTheMean) {
    auto z = normal_sample(5000, 0.0, 1.0, 1);
    const auto a = estimate_mean_variance(z, 2.0, 0.0, 0.0);
    for (auto& x : z) x += 10.0;
    const auto b = estimate_mean_variance(z, 2.0, 0.0, 0.0);
    EXPECT_NEAR(b.value - a.value, 10.0, 1e-10);
    EXPECT_NEAR(b.std_error, a.std_error, 1e-10);
}

TEST(Objectives, StdErrorMatchesNormalTheory) {
    // For normal data psi has variance s^2 + gamma^2 s^4 / 2.
    const double s = 1.3, gamma = 2.0;
    const std::size_t n = 200000;
    const auto e = estimate_mean_variance(normal_sample(n, 0.4, s, 2), gamma, 0.0, 0.0);
    const double theory = std::sqrt(s * s + gamma * gamma * std::pow(s, 4) / 2.0) / std::sqrt(n);
    EXPECT_NEAR(e.std_error / theory, 1.0, 0.02);
    EXPECT_NEAR(e.value, 0.4 - s * s, 4 * theory);
}

TEST(Objectives, StdErrorIsCalibratedAcrossReplications) {
    // Heavy-tailed input: the fourth moment matters for the variance term.
    std::mt19937_64 gen(3);
    std::student_t_distribution<double> t(8.0);
    std::vector<double> values, errors;
    for (int rep = 0; rep < 600; ++rep) {
        std::vector<double> z(800);
        for (auto& x : z) x = t(gen);
        const auto e = estimate_mean_variance(z, 1.0, 0.0, 0.0);
        values.push_back(e.value);
        errors.push_back(e.std_error);
    }
    double mean_err = 0;
    for (double x : errors) mean_err += x;
    mean_err /= errors.size();
    EXPECT_NEAR(sd_of(values) / mean_err, 1.0, 0.12);
}

TEST(Objectives, StdErrorScalesAsInverseRoot) {
    const auto big = normal_sample(160000, 0.0, 1.0, 4);
    const std::vector<double> small(big.begin(), big.begin() + 10000);
    const double ratio = estimate_mean_variance(small, 2.0, 0.0, 0.0).std_error /
                         estimate_mean_variance(big, 2.0, 0.0, 0.0).std_error;
    EXPECT_NEAR(ratio, 4.0, 0.2);
}

TEST(Objectives, InfluenceValues) {
    const std::vector<double> z{1, 2, 3, 4};
    const auto psi = influence(z, 2.0);
    double sum = 0;
    for (double x : psi) sum += x;
    // The unbiased variance leaves a residual gamma/2 v in the sum.
    EXPECT_NEAR(sum, 0.5 * 2.0 * 5.0 / 3.0, 1e-12);
    EXPECT_NEAR(psi[0], -1.5 - (2.25 - 5.0 / 3.0), 1e-12);
}

TEST(Objectives, PairedErrorOnCommonSamples) {
    const auto a = normal_sample(20000, 0.0, 1.0, 5);
    auto b = a;
    EXPECT_EQ(paired_std_error(a, b, 2.0), 0.0);
    for (auto& x : b) x += 0.5;
    EXPECT_NEAR(paired_std_error(a, b, 2.0), 0.0, 1e-10);
    const auto noise = normal_sample(20000, 0.0, 0.1, 6);
    for (std::size_t k = 0; k < b.size(); ++k) b[k] = a[k] + noise[k];
    const double paired = paired_std_error(a, b, 2.0);
    const double unpaired = std::hypot(estimate_mean_variance(a, 2.0, 0, 0).std_error,
                                       estimate_mean_variance(b, 2.0, 0, 0).std_error);
    EXPECT_LT(paired, 0.2 * unpaired);
    const auto pa = influence(a, 2.0), pb = influence(b, 2.0);
    std::vector<double> d(pa.size());
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = pb[k] - pa[k];
    EXPECT_NEAR(paired, sd_of(d) / std::sqrt(20000.0), 1e-12);
    EXPECT_THROW(paired_std_error(a, std::vector<double>(3, 0.0), 2.0), DomainError);
}

TEST(Objectives, EntropyIntegrals) {
    const double v = 2.8125;
    EXPECT_NEAR(entropy_integral(v, 1.0), 0.5 * std::log(2 * std::numbers::pi * std::numbers::e * v),
                1e-15);
    const std::vector<double> vars(64, v), widths(64, 1.0 / 64);
    EXPECT_NEAR(entropy_integral(vars, widths), entropy_integral(v, 1.0), 1e-13);
    const std::vector<double> mixed{2 * v, v}, w{0.25, 0.75};
    EXPECT_NEAR(entropy_integral(mixed, w), entropy_integral(v, 1.0) + 0.25 * 0.5 * std::log(2.0),
                1e-14);
    EXPECT_THROW(entropy_integral(mixed, std::vector<double>{1.0}), DomainError);
}

TEST(Objectives, LeaderObjectiveCarriesEntropy) {
    const auto& s = fixture::benchmark_surfaces();
    const Market mk(fixture::benchmark());
    const auto pol = leader_policy(mk, s.a1, s.a2);
    std::vector<TerminalSample> t{{1.0, 2.0, 0.5}, {2.0, 1.0, 0.5}, {1.5, 1.5, 0.5}};
    const auto e = estimate_leader_objective(t, pol, mk.params(), Regime::exploratory);
    EXPECT_NEAR(e.entropy_term, entropy_integral(2.8125, 1.0), 1e-15);
    EXPECT_EQ(e.who, Investor::leader);
    EXPECT_EQ(e.regime, Regime::exploratory);
    std::vector<double> z;
    for (const auto& x : t) z.push_back(z_value(Investor::leader, x.X1, x.X2, mk.params()));
    EXPECT_NEAR(e.value, estimate_mean_variance(z, 2.0, 0.1, e.entropy_term).value, 1e-15);

    const GaussianPolicy deterministic(pol.mean_function(), 0.0);
    EXPECT_THROW(estimate_leader_objective(t, deterministic, mk.params(), Regime::sampled), DomainError);
    ModelParams m = mk.params();
    m.lambda0 = 0.0;
    EXPECT_EQ(estimate_leader_objective(t, deterministic, m, Regime::sampled).entropy_term, 0.0);
}

TEST(Objectives, ValueFunctionAtHorizonIsRelativeWealth) {
    const auto& s = fixture::benchmark_surfaces();
    const ModelParams m = fixture::benchmark();
    EXPECT_NEAR(value_function(Investor::follower, 1.0, 2.0, 3.0, 0.3, s.A2, m),
                z_value(Investor::follower, 2.0, 3.0, m), 1e-15);
    EXPECT_NEAR(value_function(Investor::leader, 0.0, 1.0, 1.0, 0.5, s.A1, m),
                0.5 + s.A1.interpolate(0.0, 0.5, Field::value), 1e-15);
    EXPECT_THROW(value_function(Investor::leader, 0.0, 1.0, 1.0, 0.5, s.A2, m), DomainError);
    EXPECT_THROW(value_function(Investor::follower, 0.0, 1.0, 1.0, 1.5, s.A2, m), DomainError);
}

TEST(Objectives, FollowerEstimateClosesOnValueFunction) {
    const auto& s = fixture::benchmark_surfaces();
    const Market mk(fixture::benchmark());
    const auto pol = leader_policy(mk, s.a1, s.a2);
    const auto grid = TimeGrid::uniform_fine(1.0, 64);
    const auto u1 = draw_action_sequence(grid, pol, mk, 0.5, 21, 0);
    const auto out = run_sampled_ensemble(mk, pol, s.a2, EnsembleSpec{grid, {}, 21, 30000, 0, 8}, u1);
    const auto e = estimate_follower_objective(out, mk.params());
    const double v = value_function(Investor::follower, 0.0, 1.0, 1.0, 0.5, s.A2, mk.params());
    EXPECT_NEAR(e.value, v, 4 * e.std_error);
}

TEST(Objectives, ExploratoryLeaderEstimateClosesOnValueFunction) {
    const auto& s = fixture::benchmark_surfaces();
    const Market mk(fixture::benchmark());
    const auto pol = leader_policy(mk, s.a1, s.a2);
    const auto grid = TimeGrid::uniform_fine(1.0, 64);
    const auto out = run_exploratory_ensemble(mk, pol, s.a2, EnsembleSpec{grid, {}, 22, 30000, 0, 8});
    const auto e = estimate_leader_objective(out, pol, mk.params(), Regime::exploratory);
    const double v = value_function(Investor::leader, 0.0, 1.0, 1.0, 0.5, s.A1, mk.params());
    EXPECT_NEAR(e.value, v, 4 * e.std_error);
}

TEST(Objectives, BundleOverloadsAgreeWithTerminalSamples) {
    const auto& s = fixture::benchmark_surfaces();
    const Market mk(fixture::benchmark());
    const auto pol = leader_policy(mk, s.a1, s.a2);
    const auto grid = TimeGrid::uniform(1.0, 4, 4);
    std::vector<PathBundle> paths;
    for (std::uint64_t k = 0; k < 20; ++k) paths.push_back(simulate_exploratory(grid, pol, s.a2, mk, {}, 1, k));
    const auto t = run_exploratory_ensemble(mk, pol, s.a2, EnsembleSpec{grid, {}, 1, 20, 0, 1});
    EXPECT_EQ(estimate_leader_objective(paths, pol, mk.params()).value,
              estimate_leader_objective(t, pol, mk.params(), Regime::exploratory).value);
    EXPECT_EQ(estimate_follower_objective(paths, mk.params()).value,
              estimate_follower_objective(t, mk.params()).value);
}

TEST(Objectives, CsvRow) {
    std::ostringstream out;
    write_csv_header(out);
    ObjectiveEstimate e;
    e.value = 0.5;
    e.n_paths = 10;
    write_csv_row(out, e);
    const auto text = out.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
    EXPECT_NE(text.find("follower"), std::string::npos);
}
