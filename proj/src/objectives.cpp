#include "stackelberg/objectives.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace stackelberg {

namespace {

struct Moments {
    double mean = 0.0;
    double var = 0.0;  // unbiased
};

Moments moments(std::span<const double> z) {
    const auto n = static_cast<double>(z.size());
    double s = 0.0;
    for (double x : z) s += x;
    const double m = s / n;
    double ss = 0.0;
    double c = 0.0;
    for (double x : z) {
        ss += (x - m) * (x - m);
        c += x - m;
    }
    // Compensated two-pass variance.
    return {m, (ss - c * c / n) / (n - 1.0)};
}

double sample_sd(std::span<const double> x) { return std::sqrt(moments(x).var); }

std::vector<double> terminal_z(std::span<const TerminalSample> s, Investor who,
                               const ModelParams& params) {
    std::vector<double> z(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) z[k] = z_value(who, s[k].X1, s[k].X2, params);
    return z;
}

std::vector<TerminalSample> terminals(std::span<const PathBundle> paths) {
    if (paths.empty()) return {};
    std::vector<TerminalSample> out;
    out.reserve(paths.size());
    for (const auto& b : paths) {
        if (b.regime != paths.front().regime) throw DomainError("paths mix regimes");
        if (b.X1.empty() || b.X1.front() != paths.front().X1.front() ||
            b.X2.front() != paths.front().X2.front() || b.P.front() != paths.front().P.front()) {
            throw DomainError("paths do not share an initial state");
        }
        out.push_back({b.X1.back(), b.X2.back(), b.P.back()});
    }
    return out;
}

}  // namespace

void write_csv_header(std::ostream& out) {
    out << "who,regime,n_paths,mean_term,variance_term,entropy_term,value,std_error\n";
}

void write_csv_row(std::ostream& out, const ObjectiveEstimate& e) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  to_string(e.who).c_str(), to_string(e.regime).c_str(), e.n_paths, e.mean_term,
                  e.variance_term, e.entropy_term, e.value, e.std_error);
    out << buf;
}

std::vector<double> influence(std::span<const double> z, double gamma) {
    if (z.size() < 2) throw DomainError("need at least two samples");
    const auto mv = moments(z);
    std::vector<double> psi(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) {
        const double d = z[k] - mv.mean;
        psi[k] = d - 0.5 * gamma * (d * d - mv.var);
    }
    return psi;
}

ObjectiveEstimate estimate_mean_variance(std::span<const double> z, double gamma,
                                         double entropy_weight, double entropy_term) {
    if (z.size() < 2) throw DomainError("objective estimate needs at least two paths");
    const auto mv = moments(z);
    ObjectiveEstimate e;
    e.n_paths = z.size();
    e.mean_term = mv.mean;
    e.variance_term = mv.var;
    e.entropy_term = entropy_term;
    e.value = mv.mean - 0.5 * gamma * mv.var + entropy_weight * entropy_term;
    e.std_error = sample_sd(influence(z, gamma)) / std::sqrt(static_cast<double>(z.size()));
    return e;
}

ObjectiveEstimate estimate_follower_objective(std::span<const TerminalSample> samples,
                                              const ModelParams& params, Regime regime) {
    const auto z = terminal_z(samples, Investor::follower, params);
    auto e = estimate_mean_variance(z, params.gamma2, 0.0, 0.0);
    e.who = Investor::follower;
    e.regime = regime;
    return e;
}

ObjectiveEstimate estimate_follower_objective(std::span<const PathBundle> paths,
                                              const ModelParams& params) {
    const auto t = terminals(paths);
    if (t.size() < 2) throw DomainError("objective estimate needs at least two paths");
    return estimate_follower_objective(t, params, paths.front().regime);
}

double entropy_integral(double variance, double T) { return T * gaussian_entropy(variance); }

double entropy_integral(std::span<const double> variances, std::span<const double> widths) {
    if (variances.size() != widths.size()) throw DomainError("entropy schedule size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < variances.size(); ++i) s += widths[i] * gaussian_entropy(variances[i]);
    return s;
}

ObjectiveEstimate estimate_leader_objective(std::span<const TerminalSample> samples,
                                            const GaussianPolicy& policy,
                                            const ModelParams& params, Regime regime) {
    const auto z = terminal_z(samples, Investor::leader, params);
    double h = 0.0;
    if (policy.variance() > 0.0) {
        h = entropy_integral(policy.variance(), params.T);
    } else if (params.lambda0 > 0.0) {
        throw DomainError("a deterministic policy has no finite entropy");
    }
    auto e = estimate_mean_variance(z, params.gamma1, params.lambda0, h);
    e.who = Investor::leader;
    e.regime = regime;
    return e;
}

ObjectiveEstimate estimate_leader_objective(std::span<const PathBundle> paths,
                                            const GaussianPolicy& policy,
                                            const ModelParams& params) {
    const auto t = terminals(paths);
    if (t.size() < 2) throw DomainError("objective estimate needs at least two paths");
    return estimate_leader_objective(t, policy, params, paths.front().regime);
}

double paired_std_error(std::span<const double> z_a, std::span<const double> z_b, double gamma) {
    if (z_a.size() != z_b.size()) throw DomainError("paired samples differ in size");
    const auto pa = influence(z_a, gamma);
    const auto pb = influence(z_b, gamma);
    std::vector<double> d(pa.size());
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = pa[k] - pb[k];
    return sample_sd(d) / std::sqrt(static_cast<double>(d.size()));
}

double value_function(Investor who, double t, double x1, double x2, double p,
                      const ValueSurface& A, const ModelParams& params) {
    const SurfaceKind want = who == Investor::leader ? SurfaceKind::A1 : SurfaceKind::A2;
    if (A.kind() != want) {
        throw DomainError("value_function: " + to_string(who) + " needs an " + to_string(want) +
                          " surface");
    }
    return z_value(who, x1, x2, params) + A.interpolate(t, p, Field::value);
}

}  // namespace stackelberg
