#include "stackelberg/simulator.hpp"

#include "stackelberg/parallel.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace stackelberg {

void TimeGrid::validate(double T) const {
    if (nodes.size() < 2) throw DomainError("time grid needs at least two nodes");
    if (nodes.front() != 0.0) throw DomainError("time grid must start at 0");
    if (nodes.back() != T) throw DomainError("time grid must end at T");
    for (std::size_t i = 1; i < nodes.size(); ++i) {
        if (!(nodes[i] > nodes[i - 1])) throw DomainError("time grid must be strictly increasing");
    }
    if (substeps < 1) throw DomainError("substeps must be at least 1");
}

double TimeGrid::mesh() const {
    double h = 0.0;
    for (std::size_t i = 1; i < nodes.size(); ++i) h = std::max(h, nodes[i] - nodes[i - 1]);
    return h;
}

int TimeGrid::interval_of(double t) const {
    if (nodes.size() < 2) throw DomainError("empty time grid");
    if (t < nodes.front() || t > nodes.back()) throw DomainError("time outside the grid");
    const auto it = std::upper_bound(nodes.begin(), nodes.end(), t);
    const auto i = static_cast<int>(it - nodes.begin()) - 1;
    return std::min(i, n_intervals() - 1);
}

TimeGrid TimeGrid::uniform(double T, int n_intervals, int substeps) {
    if (n_intervals < 1) throw DomainError("need at least one grid interval");
    if (!(T > 0.0)) throw DomainError("horizon must be positive");
    TimeGrid grid;
    grid.substeps = substeps;
    grid.nodes.resize(static_cast<std::size_t>(n_intervals) + 1);
    for (int i = 0; i <= n_intervals; ++i) {
        grid.nodes[static_cast<std::size_t>(i)] = T * i / n_intervals;
    }
    grid.nodes.back() = T;
    grid.validate(T);
    return grid;
}

TimeGrid TimeGrid::uniform_fine(double T, int n_intervals, int fine_steps) {
    if (n_intervals < 1 || fine_steps < 1) throw DomainError("step counts must be positive");
    const int sub = (fine_steps + n_intervals - 1) / n_intervals;
    return uniform(T, n_intervals, std::max(sub, 1));
}

std::string to_string(Regime regime) {
    return regime == Regime::sampled ? "sampled" : "exploratory";
}

std::string to_string(Investor who) { return who == Investor::leader ? "leader" : "follower"; }

void PathBundle::write_csv(const std::filesystem::path& file) const {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot open " + file.string());
    out << "t,P,X1,X2,u1_active\n";
    char buf[128];
    for (std::size_t k = 0; k < times.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", times[k], P[k], X1[k],
                      X2[k], u1_active[k]);
        out << buf;
    }
}

double step_filter(double p, double dW, double dt, const Market& market) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("step_filter: p outside [0,1]");
    if (!(dt > 0.0)) throw DomainError("step_filter: dt must be positive");
    return std::clamp(p + market.beta_unchecked(p) * dW, 0.0, 1.0);
}

void InitialState::validate() const {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("p0 must lie in (0,1)");
    if (!std::isfinite(x1) || !std::isfinite(x2)) throw DomainError("initial wealth must be finite");
}

namespace {

void check_inputs(const TimeGrid& grid, const ValueSurface& a2, const Market& market,
                  const InitialState& init) {
    grid.validate(market.params().T);
    init.validate();
    if (a2.kind() != SurfaceKind::a2 || !a2.has_dp()) {
        throw DomainError("simulation needs the a2 surface with its p-derivative");
    }
    if (a2.params().T != market.params().T) throw DomainError("a2 surface horizon mismatch");
}

[[noreturn]] void report_nonfinite(std::uint64_t path, double t, double p, double x1, double x2) {
    std::ostringstream msg;
    msg << "non-finite wealth on path " << path << " at t=" << t << " (P=" << p << ", X1=" << x1
        << ", X2=" << x2 << ")";
    throw NumericalError(msg.str());
}

double gamma_at(const Market& market, const ValueSurface& a2, double t, double p) {
    return market.gamma_term_unchecked(p, a2.interpolate_unchecked(t, p, Field::dp));
}

/// Sampled-regime state; Record controls whether full paths are stored.
template <bool Record>
struct SampledVisitor {
    const Market& market;
    const GaussianPolicy& policy;
    const ValueSurface& a2;
    std::span<const double> frozen;
    CounterRng actions;
    std::uint64_t path;
    double kappa;
    double x1, x2;
    double u1 = 0.0;
    double p_end = 0.0;
    PathBundle* bundle = nullptr;

    void node(int i, double t, double p) {
        if (!frozen.empty()) {
            u1 = frozen[static_cast<std::size_t>(i)];
        } else {
            u1 = sample_action(policy, t, p, actions);
        }
        if constexpr (Record) bundle->u1_actions.push_back(u1);
    }

    void step(int, double t, double p, double, double dW, double g) {
        const double u2 = gamma_at(market, a2, t, p) + kappa * u1;
        x1 += u1 * g;
        x2 += u2 * g;
        if (!std::isfinite(x1) || !std::isfinite(x2)) report_nonfinite(path, t, p, x1, x2);
        if constexpr (Record) {
            bundle->What.push_back(dW);
            bundle->u1_active.push_back(u1);
        }
    }

    void finish(double p) { p_end = p; }
};

template <bool Record>
struct ExploratoryVisitor {
    const Market& market;
    const GaussianPolicy& policy;
    const ValueSurface& a2;
    CounterRng exploration;
    std::uint64_t path;
    double kappa;
    double sigma;
    double x1, x2;
    double p_end = 0.0;
    PathBundle* bundle = nullptr;

    void node(int, double, double) {}

    void step(int, double t, double p, double dt, double dW, double g) {
        const double b = policy.mean(t, p);
        const double gamma = gamma_at(market, a2, t, p);
        const double dWbar = std::sqrt(dt) * exploration.normal();
        const double extra = sigma * policy.stddev() * dWbar;
        x1 += b * g + extra;
        x2 += (gamma + kappa * b) * g + kappa * extra;
        if (!std::isfinite(x1) || !std::isfinite(x2)) report_nonfinite(path, t, p, x1, x2);
        if constexpr (Record) {
            bundle->What.push_back(dW);
            bundle->Wbar.push_back(dWbar);
            bundle->u1_active.push_back(b);
        }
    }

    void finish(double p) { p_end = p; }
};

/// Wraps a visitor to store times, P and wealth after every step.
template <class Inner>
struct Recorder {
    Inner& inner;
    PathBundle& bundle;

    void node(int i, double t, double p) { inner.node(i, t, p); }
    void step(int i, double t, double p, double dt, double dW, double g) {
        inner.step(i, t, p, dt, dW, g);
        bundle.times.push_back(t + dt);
        bundle.X1.push_back(inner.x1);
        bundle.X2.push_back(inner.x2);
    }
    void finish(double p) { inner.finish(p); }
};

void start_bundle(PathBundle& b, Regime regime, const TimeGrid& grid, const InitialState& init) {
    const auto steps = static_cast<std::size_t>(grid.total_steps());
    b.regime = regime;
    b.grid = grid;
    b.times.reserve(steps + 1);
    b.X1.reserve(steps + 1);
    b.X2.reserve(steps + 1);
    b.What.reserve(steps);
    b.u1_active.reserve(steps + 1);
    b.times.push_back(0.0);
    b.X1.push_back(init.x1);
    b.X2.push_back(init.x2);
}

/// Rebuilds P from the stored increments, matching the driver's arithmetic.
void finish_bundle(PathBundle& b, const Market& market, double p0) {
    b.P.resize(b.times.size());
    b.P[0] = p0;
    for (std::size_t k = 0; k < b.What.size(); ++k) {
        b.P[k + 1] = std::clamp(b.P[k] + market.beta_unchecked(b.P[k]) * b.What[k], 0.0, 1.0);
    }
    // Steps land on grid nodes only approximately; pin them to the exact grid times.
    const auto sub = static_cast<std::size_t>(b.grid.substeps);
    for (std::size_t i = 0; i < b.grid.nodes.size(); ++i) b.times[i * sub] = b.grid.nodes[i];
    if (!b.u1_active.empty()) b.u1_active.push_back(b.u1_active.back());
}

void check_frozen(const TimeGrid& grid, std::span<const double> frozen) {
    if (!frozen.empty() && frozen.size() != static_cast<std::size_t>(grid.n_intervals())) {
        throw DomainError("frozen action sequence needs one entry per grid interval");
    }
    for (double u : frozen) {
        if (!std::isfinite(u)) throw DomainError("frozen actions must be finite");
    }
}

}  // namespace

PathBundle simulate_sampled(const TimeGrid& grid, const GaussianPolicy& policy,
                            const ValueSurface& a2, const Market& market,
                            const InitialState& init, std::uint64_t seed, std::uint64_t path,
                            std::span<const double> frozen_actions) {
    check_inputs(grid, a2, market, init);
    check_frozen(grid, frozen_actions);
    PathBundle bundle;
    start_bundle(bundle, Regime::sampled, grid, init);
    SampledVisitor<true> v{market, policy, a2, frozen_actions,
                           CounterRng(seed, path, Channel::actions), path,
                           market.constants().kappa, init.x1, init.x2};
    v.bundle = &bundle;
    Recorder<SampledVisitor<true>> rec{v, bundle};
    detail::drive_filter(market, grid, init.p, seed, path, rec);
    finish_bundle(bundle, market, init.p);
    return bundle;
}

PathBundle simulate_exploratory(const TimeGrid& grid, const GaussianPolicy& policy,
                                const ValueSurface& a2, const Market& market,
                                const InitialState& init, std::uint64_t seed,
                                std::uint64_t path) {
    check_inputs(grid, a2, market, init);
    PathBundle bundle;
    start_bundle(bundle, Regime::exploratory, grid, init);
    bundle.Wbar.reserve(static_cast<std::size_t>(grid.total_steps()));
    ExploratoryVisitor<true> v{market,
                               policy,
                               a2,
                               CounterRng(seed, path, Channel::exploration),
                               path,
                               market.constants().kappa,
                               market.params().sigma,
                               init.x1,
                               init.x2};
    v.bundle = &bundle;
    Recorder<ExploratoryVisitor<true>> rec{v, bundle};
    detail::drive_filter(market, grid, init.p, seed, path, rec);
    finish_bundle(bundle, market, init.p);
    return bundle;
}

double z_value(Investor who, double x1, double x2, const ModelParams& params) noexcept {
    if (who == Investor::leader) {
        return (1.0 - 0.5 * params.lambda1) * x1 - 0.5 * params.lambda1 * x2;
    }
    return (1.0 - 0.5 * params.lambda2) * x2 - 0.5 * params.lambda2 * x1;
}

std::vector<double> z_transform(const PathBundle& bundle, Investor who, const ModelParams& params) {
    if (bundle.X1.size() != bundle.X2.size()) throw DomainError("incomplete path bundle");
    std::vector<double> z(bundle.X1.size());
    for (std::size_t k = 0; k < z.size(); ++k) z[k] = z_value(who, bundle.X1[k], bundle.X2[k], params);
    return z;
}

std::vector<TerminalSample> run_sampled_ensemble(const Market& market,
                                                 const GaussianPolicy& policy,
                                                 const ValueSurface& a2,
                                                 const EnsembleSpec& spec,
                                                 std::span<const double> frozen_actions) {
    check_inputs(spec.grid, a2, market, spec.init);
    check_frozen(spec.grid, frozen_actions);
    std::vector<TerminalSample> out(spec.n_paths);
    parallel_for(spec.n_paths, spec.threads, [&](std::size_t k) {
        const std::uint64_t path = spec.first_path + k;
        SampledVisitor<false> v{market, policy, a2, frozen_actions,
                                CounterRng(spec.seed, path, Channel::actions), path,
                                market.constants().kappa, spec.init.x1, spec.init.x2};
        detail::drive_filter(market, spec.grid, spec.init.p, spec.seed, path, v);
        out[k] = {v.x1, v.x2, v.p_end};
    });
    return out;
}

std::vector<TerminalSample> run_exploratory_ensemble(const Market& market,
                                                     const GaussianPolicy& policy,
                                                     const ValueSurface& a2,
                                                     const EnsembleSpec& spec) {
    check_inputs(spec.grid, a2, market, spec.init);
    std::vector<TerminalSample> out(spec.n_paths);
    parallel_for(spec.n_paths, spec.threads, [&](std::size_t k) {
        const std::uint64_t path = spec.first_path + k;
        ExploratoryVisitor<false> v{market,
                                    policy,
                                    a2,
                                    CounterRng(spec.seed, path, Channel::exploration),
                                    path,
                                    market.constants().kappa,
                                    market.params().sigma,
                                    spec.init.x1,
                                    spec.init.x2};
        detail::drive_filter(market, spec.grid, spec.init.p, spec.seed, path, v);
        out[k] = {v.x1, v.x2, v.p_end};
    });
    return out;
}

std::vector<double> draw_action_sequence(const TimeGrid& grid, const GaussianPolicy& policy,
                                         const Market& market, double p0, std::uint64_t seed,
                                         std::uint64_t realization) {
    grid.validate(market.params().T);
    if (!(p0 > 0.0 && p0 < 1.0)) throw DomainError("p0 must lie in (0,1)");
    // A path index range disjoint from any ensemble keeps these streams independent.
    const std::uint64_t path = (std::uint64_t{1} << 62) + realization;
    CounterRng actions(seed, path, Channel::actions);
    std::vector<double> seq;
    seq.reserve(static_cast<std::size_t>(grid.n_intervals()));
    struct {
        const GaussianPolicy& policy;
        CounterRng& actions;
        std::vector<double>& seq;
        void node(int, double t, double p) { seq.push_back(sample_action(policy, t, p, actions)); }
        void step(int, double, double, double, double, double) {}
        void finish(double) {}
    } v{policy, actions, seq};
    detail::drive_filter(market, grid, p0, seed, path, v);
    return seq;
}

FilterExcursions filter_excursion_diagnostic(const Market& market, const TimeGrid& grid, double p0,
                                             std::size_t n_paths, std::uint64_t seed) {
    grid.validate(market.params().T);
    FilterExcursions r;
    const double dt = grid.mesh() / grid.substeps;
    r.eps = 10.0 * std::sqrt(dt) * market.beta_max();
    for (std::size_t path = 0; path < n_paths; ++path) {
        CounterRng noise(seed, path, Channel::filter);
        double p = p0;
        for (int i = 0; i < grid.n_intervals(); ++i) {
            const double h = (grid.nodes[static_cast<std::size_t>(i) + 1] -
                              grid.nodes[static_cast<std::size_t>(i)]) /
                             grid.substeps;
            const double sdt = std::sqrt(h);
            for (int k = 0; k < grid.substeps; ++k) {
                p += market.beta_unchecked(p) * sdt * noise.normal();
                ++r.steps;
                if (p < 0.0 || p > 1.0) ++r.unclamped_exits;
                if (p < -r.eps || p > 1.0 + r.eps) ++r.excursions;
            }
        }
    }
    return r;
}

}  // namespace stackelberg
