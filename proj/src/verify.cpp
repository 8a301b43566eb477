#include "stackelberg/verify.hpp"

#include "stackelberg/parallel.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace stackelberg {

std::string to_string(PerturbationKind kind) {
    switch (kind) {
        case PerturbationKind::follower_constant: return "follower_constant";
        case PerturbationKind::leader_mean_shift: return "leader_mean_shift";
        case PerturbationKind::leader_variance_scale: return "leader_variance_scale";
    }
    return "?";
}

void PerturbationSpec::validate(double T) const {
    if (!(window > 0.0) || window > T) throw DomainError("perturbation window must lie in (0,T]");
    if (!std::isfinite(magnitude)) throw DomainError("perturbation magnitude must be finite");
    if (kind == PerturbationKind::leader_variance_scale && !(magnitude > 0.0)) {
        throw DomainError("variance scale must be positive");
    }
}

bool PerturbationSpec::is_null() const noexcept {
    return kind == PerturbationKind::leader_variance_scale ? magnitude == 1.0 : magnitude == 0.0;
}

double theoretical_slope(const PerturbationSpec& spec, const Market& market) {
    const auto& m = market.params();
    const double s2 = m.sigma * m.sigma;
    const double chi = market.constants().chi;
    const double x = spec.magnitude;
    switch (spec.kind) {
        case PerturbationKind::follower_constant: {
            const double w = 1.0 - 0.5 * m.lambda2;
            return -0.5 * m.gamma2 * s2 * w * w * x * x;
        }
        case PerturbationKind::leader_mean_shift: return -0.5 * m.gamma1 * s2 * chi * chi * x * x;
        case PerturbationKind::leader_variance_scale:
            return 0.5 * m.lambda0 * (1.0 - x + std::log(x));
    }
    return 0.0;
}

namespace {

/// Equilibrium coefficients at (t,p): the leader's mean b and the follower's Gamma.
struct Coefficients {
    const Market& market;
    const ValueSurface& a1;
    const ValueSurface& a2;
    double r, sigma, s2, l, chi;

    Coefficients(const Market& mk, const EquilibriumSurfaces& s)
        : market(mk),
          a1(s.a1),
          a2(s.a2),
          r(mk.params().r),
          sigma(mk.params().sigma),
          s2(sigma * sigma),
          l(mk.constants().l),
          chi(mk.constants().chi) {
        if (!a1.has_dp() || !a2.has_dp() || a1.kind() != SurfaceKind::a1 ||
            a2.kind() != SurfaceKind::a2) {
            throw DomainError("verification needs the a1 and a2 surfaces");
        }
    }

    void eval(double t, double p, double& b, double& gamma) const noexcept {
        const double da1 = a1.interpolate_unchecked(t, p, Field::dp);
        const double da2 = a2.interpolate_unchecked(t, p, Field::dp);
        const double th = market.theta_unchecked(p) - r;
        const double be = market.beta_unchecked(p);
        b = th * l / s2 - be / (chi * sigma) * (da1 + (1.0 - chi) * da2);
        gamma = market.gamma_term_unchecked(p, da2);
    }

    double gamma_only(double t, double p) const noexcept {
        return market.gamma_term_unchecked(p, a2.interpolate_unchecked(t, p, Field::dp));
    }
};

double mean_of(std::span<const double> x) {
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sd_of(std::span<const double> x) {
    const double m = mean_of(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double var_of(std::span<const double> x) {
    const double s = sd_of(x);
    return s * s;
}

double mv_value(std::span<const double> z, double gamma) {
    return mean_of(z) - 0.5 * gamma * var_of(z);
}

/// Per-path influence of J(zp) - J(z).
std::vector<double> influence_diff(std::span<const double> z, std::span<const double> zp,
                                   double gamma) {
    const auto a = influence(zp, gamma);
    const auto b = influence(z, gamma);
    std::vector<double> d(a.size());
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = a[k] - b[k];
    return d;
}

double unpaired_error(std::span<const double> z, std::span<const double> zp, double gamma) {
    const double n = static_cast<double>(z.size());
    const double a = sd_of(influence(z, gamma));
    const double b = sd_of(influence(zp, gamma));
    return std::sqrt((a * a + b * b) / n);
}

/// Index of the grid node equal to t, or DomainError.
int node_index(const TimeGrid& grid, double t) {
    for (std::size_t i = 1; i < grid.nodes.size(); ++i) {
        if (std::abs(grid.nodes[i] - t) <= 1e-12 * grid.nodes.back()) return static_cast<int>(i);
    }
    throw DomainError("perturbation window must be a whole number of grid intervals");
}

void check_paths(std::size_t n) {
    if (n < 2) throw DomainError("at least two paths are required");
}

/// Slope rows with the per-path influence of each row's estimate.
struct SlopeRun {
    std::vector<SlopeEstimate> rows;
    std::vector<std::vector<double>> psi;
};

void add_slope_row(SlopeRun& run, const PerturbationSpec& spec, const Market& market,
                   std::span<const double> z, std::span<const double> zp, double gamma,
                   double extra) {
    SlopeEstimate e;
    e.spec = spec;
    e.n_paths = z.size();
    const double h = spec.window;
    auto psi = influence_diff(z, zp, gamma);
    for (double& v : psi) v /= h;
    e.delta_hat = (mv_value(zp, gamma) + extra - mv_value(z, gamma)) / h;
    e.std_error = sd_of(psi) / std::sqrt(static_cast<double>(z.size()));
    e.unpaired_std_error = unpaired_error(z, zp, gamma) / h;
    e.theory = theoretical_slope(spec, market);
    run.rows.push_back(e);
    run.psi.push_back(std::move(psi));
}

SlopeRun follower_run(const Market& market, const EquilibriumSurfaces& surfaces,
                      const TimeGrid& grid, const std::vector<PerturbationSpec>& specs,
                      const std::vector<double>& frozen_u1, const InitialState& init,
                      std::size_t n_paths, std::uint64_t seed, int threads) {
    const auto& m = market.params();
    grid.validate(m.T);
    init.validate();
    check_paths(n_paths);
    if (frozen_u1.size() != static_cast<std::size_t>(grid.n_intervals())) {
        throw DomainError("frozen action sequence needs one entry per grid interval");
    }
    std::vector<int> ends;
    for (const auto& s : specs) {
        s.validate(m.T);
        if (s.kind != PerturbationKind::follower_constant) {
            throw DomainError("follower_slope_test takes follower perturbations");
        }
        ends.push_back(node_index(grid, s.window));
    }
    const Coefficients coef(market, surfaces);
    const double kappa = market.constants().kappa;
    const double gamma0 = coef.gamma_only(0.0, init.p);

    const std::size_t ns = specs.size();
    std::vector<double> z(n_paths);
    std::vector<double> zp(n_paths * ns);
    parallel_for(n_paths, threads, [&](std::size_t k) {
        struct Visitor {
            const Coefficients& coef;
            const std::vector<PerturbationSpec>& specs;
            const std::vector<int>& ends;
            const std::vector<double>& u1s;
            double kappa, gamma0;
            double x1, x2;
            double u1 = 0.0;
            std::vector<double> d;

            void node(int i, double, double) { u1 = u1s[static_cast<std::size_t>(i)]; }
            void step(int i, double t, double p, double, double, double g) {
                const double gamma = coef.gamma_only(t, p);
                x1 += u1 * g;
                x2 += (gamma + kappa * u1) * g;
                for (std::size_t j = 0; j < specs.size(); ++j) {
                    if (i < ends[j]) d[j] += (gamma0 + specs[j].magnitude - gamma) * g;
                }
            }
            void finish(double) {}
        } v{coef, specs, ends, frozen_u1, kappa, gamma0, init.x1, init.x2, 0.0,
            std::vector<double>(ns, 0.0)};
        detail::drive_filter(market, grid, init.p, seed, k, v);
        if (!std::isfinite(v.x1) || !std::isfinite(v.x2)) {
            throw NumericalError("non-finite wealth on path " + std::to_string(k));
        }
        z[k] = z_value(Investor::follower, v.x1, v.x2, m);
        for (std::size_t j = 0; j < ns; ++j) {
            zp[k * ns + j] = z_value(Investor::follower, v.x1, v.x2 + v.d[j], m);
        }
    });

    SlopeRun out;
    std::vector<double> col(n_paths);
    for (std::size_t j = 0; j < ns; ++j) {
        for (std::size_t k = 0; k < n_paths; ++k) col[k] = zp[k * ns + j];
        add_slope_row(out, specs[j], market, z, col, m.gamma2, 0.0);
    }
    return out;
}

SlopeRun leader_run(const Market& market, const EquilibriumSurfaces& surfaces,
                    const TimeGrid& grid, const std::vector<PerturbationSpec>& specs,
                    const InitialState& init, std::size_t n_paths, std::uint64_t seed,
                    int threads) {
    const auto& m = market.params();
    grid.validate(m.T);
    init.validate();
    check_paths(n_paths);
    if (!(m.lambda0 > 0.0)) throw DomainError("leader slope tests need lambda0 > 0");
    std::vector<int> ends;
    for (const auto& s : specs) {
        s.validate(m.T);
        if (s.kind == PerturbationKind::follower_constant) {
            throw DomainError("leader_slope_test takes leader perturbations");
        }
        ends.push_back(node_index(grid, s.window));
    }
    const Coefficients coef(market, surfaces);
    const double kappa = market.constants().kappa;
    const double s_tilde = std::sqrt(equilibrium_policy_variance(market));

    const std::size_t ns = specs.size();
    std::vector<double> z(n_paths);
    std::vector<double> zp(n_paths * ns);
    parallel_for(n_paths, threads, [&](std::size_t k) {
        struct Visitor {
            const Coefficients& coef;
            const std::vector<int>& ends;
            CounterRng exploration;
            double kappa, sigma, s_tilde;
            double x1, x2;
            std::vector<double> gain;  // sum of g over each window
            std::vector<double> wbar;  // W-bar increment over each window

            void node(int, double, double) {}
            void step(int i, double t, double p, double dt, double, double g) {
                double b = 0.0;
                double gamma = 0.0;
                coef.eval(t, p, b, gamma);
                const double dWbar = std::sqrt(dt) * exploration.normal();
                const double extra = sigma * s_tilde * dWbar;
                x1 += b * g + extra;
                x2 += (gamma + kappa * b) * g + kappa * extra;
                for (std::size_t j = 0; j < ends.size(); ++j) {
                    if (i < ends[j]) {
                        gain[j] += g;
                        wbar[j] += dWbar;
                    }
                }
            }
            void finish(double) {}
        } v{coef, ends, CounterRng(seed, k, Channel::exploration), kappa, m.sigma, s_tilde,
            init.x1, init.x2, std::vector<double>(ns, 0.0), std::vector<double>(ns, 0.0)};
        detail::drive_filter(market, grid, init.p, seed, k, v);
        if (!std::isfinite(v.x1) || !std::isfinite(v.x2)) {
            throw NumericalError("non-finite wealth on path " + std::to_string(k));
        }
        z[k] = z_value(Investor::leader, v.x1, v.x2, m);
        for (std::size_t j = 0; j < ns; ++j) {
            const auto& s = specs[j];
            double dx1 = 0.0;
            if (s.kind == PerturbationKind::leader_mean_shift) {
                dx1 = s.magnitude * v.gain[j];
            } else {
                dx1 = m.sigma * s_tilde * (std::sqrt(s.magnitude) - 1.0) * v.wbar[j];
            }
            zp[k * ns + j] = z_value(Investor::leader, v.x1 + dx1, v.x2 + kappa * dx1, m);
        }
    });

    const double variance = equilibrium_policy_variance(market);
    SlopeRun out;
    std::vector<double> col(n_paths);
    for (std::size_t j = 0; j < ns; ++j) {
        for (std::size_t k = 0; k < n_paths; ++k) col[k] = zp[k * ns + j];
        double extra = 0.0;
        if (specs[j].kind == PerturbationKind::leader_variance_scale) {
            const double h = specs[j].window;
            const double widths[] = {h, m.T - h};
            const double perturbed[] = {variance * specs[j].magnitude, variance};
            extra = m.lambda0 * (entropy_integral(perturbed, widths) - entropy_integral(variance, m.T));
        }
        add_slope_row(out, specs[j], market, z, col, m.gamma1, extra);
    }
    return out;
}

}  // namespace

std::vector<SlopeEstimate> follower_slope_tests(const Market& market,
                                                const EquilibriumSurfaces& surfaces,
                                                const TimeGrid& grid,
                                                const std::vector<PerturbationSpec>& specs,
                                                const std::vector<double>& frozen_u1,
                                                const InitialState& init, std::size_t n_paths,
                                                std::uint64_t seed, int threads) {
    return follower_run(market, surfaces, grid, specs, frozen_u1, init, n_paths, seed, threads)
        .rows;
}

std::vector<SlopeEstimate> leader_slope_tests(const Market& market,
                                              const EquilibriumSurfaces& surfaces,
                                              const TimeGrid& grid,
                                              const std::vector<PerturbationSpec>& specs,
                                              const InitialState& init, std::size_t n_paths,
                                              std::uint64_t seed, int threads) {
    return leader_run(market, surfaces, grid, specs, init, n_paths, seed, threads).rows;
}

SlopeEstimate follower_slope_test(const PerturbationSpec& spec, const Market& market,
                                  const EquilibriumSurfaces& surfaces, const TimeGrid& grid,
                                  const std::vector<double>& frozen_u1, const InitialState& init,
                                  std::size_t n_paths, std::uint64_t seed, int threads) {
    return follower_slope_tests(market, surfaces, grid, {spec}, frozen_u1, init, n_paths, seed,
                                threads)
        .front();
}

SlopeEstimate leader_slope_test(const PerturbationSpec& spec, const Market& market,
                                const EquilibriumSurfaces& surfaces, const TimeGrid& grid,
                                const InitialState& init, std::size_t n_paths,
                                std::uint64_t seed, int threads) {
    return leader_slope_tests(market, surfaces, grid, {spec}, init, n_paths, seed, threads)
        .front();
}

namespace {

/**
 * Linear fit of Delta(h) over the windows of one perturbation, evaluated at
 * h = 0. The intercept is a fixed linear combination of the rows, so its
 * error follows from the same combination of per-path influences.
 */
SlopeEstimate extrapolate(const SlopeRun& run, std::size_t first, std::size_t count) {
    SlopeEstimate e = run.rows[first];
    if (count == 1) return e;
    const auto n = static_cast<double>(count);
    double xbar = 0.0;
    for (std::size_t i = first; i < first + count; ++i) xbar += run.rows[i].spec.window / n;
    double sxx = 0.0;
    for (std::size_t i = first; i < first + count; ++i) {
        const double dx = run.rows[i].spec.window - xbar;
        sxx += dx * dx;
    }
    std::vector<double> psi(run.psi[first].size(), 0.0);
    e.delta_hat = 0.0;
    e.unpaired_std_error = 0.0;
    for (std::size_t i = first; i < first + count; ++i) {
        const auto& r = run.rows[i];
        const double w = 1.0 / n - xbar * (r.spec.window - xbar) / sxx;
        e.delta_hat += w * r.delta_hat;
        e.unpaired_std_error += std::abs(w) * r.unpaired_std_error;
        for (std::size_t k = 0; k < psi.size(); ++k) psi[k] += w * run.psi[i][k];
    }
    e.std_error = sd_of(psi) / std::sqrt(static_cast<double>(psi.size()));
    e.spec.window = 0.0;
    return e;
}

SlopeEstimate pool(const std::vector<SlopeEstimate>& rows) {
    SlopeEstimate e = rows.front();
    const auto n = static_cast<double>(rows.size());
    e.realization = -1;
    e.delta_hat = 0.0;
    double v = 0.0;
    double u = 0.0;
    std::size_t paths = 0;
    for (const auto& r : rows) {
        e.delta_hat += r.delta_hat / n;
        v += r.std_error * r.std_error;
        u += r.unpaired_std_error * r.unpaired_std_error;
        paths += r.n_paths;
    }
    e.std_error = std::sqrt(v) / n;
    e.unpaired_std_error = std::sqrt(u) / n;
    e.n_paths = paths;
    return e;
}

void judge(SlopeSuiteReport& rep, const SlopeEstimate& e, double z, bool pooled) {
    if (e.spec.is_null()) {
        if (pooled && std::abs(e.delta_hat) > z * e.std_error) rep.null_consistent = false;
        return;
    }
    if (e.delta_hat > z * e.std_error) rep.nonpositive = false;
}

std::vector<PerturbationSpec> expand(PerturbationKind kind, const std::vector<double>& mags,
                                     const std::vector<int>& windows, const TimeGrid& grid) {
    std::vector<PerturbationSpec> specs;
    for (double mag : mags) {
        for (int w : windows) {
            if (w < 1 || w > grid.n_intervals()) throw DomainError("window outside the grid");
            specs.push_back({kind, mag, grid.nodes[static_cast<std::size_t>(w)]});
        }
    }
    return specs;
}

}  // namespace

SlopeSuiteReport run_follower_suite(const Market& market, const EquilibriumSurfaces& surfaces,
                                    const SlopeSuiteConfig& config) {
    const auto& m = market.params();
    const auto grid = TimeGrid::uniform_fine(m.T, config.grid_intervals, config.fine_steps);
    const auto specs = expand(PerturbationKind::follower_constant, config.follower_offsets,
                              config.window_intervals, grid);
    const auto policy = leader_policy(market, surfaces.a1, surfaces.a2);
    const std::size_t nw = config.window_intervals.size();

    SlopeSuiteReport rep;
    std::vector<std::vector<SlopeEstimate>> by_spec(specs.size());
    std::vector<std::vector<SlopeEstimate>> extrap_by_mag(config.follower_offsets.size());
    for (int r = 0; r < config.realizations; ++r) {
        const auto u1 = draw_action_sequence(grid, policy, market, config.init.p, config.seed,
                                             static_cast<std::uint64_t>(r));
        // Each realization runs on its own filter paths so the pooled estimate averages
        // independent ensembles.
        const std::uint64_t seed = mix64(config.seed + 0x51ED270B27ULL * (r + 1));
        auto run = follower_run(market, surfaces, grid, specs, u1, config.init,
                                config.follower_paths, seed, config.threads);
        auto& rows = run.rows;
        for (std::size_t j = 0; j < rows.size(); ++j) {
            rows[j].realization = r;
            by_spec[j].push_back(rows[j]);
            rep.rows.push_back(rows[j]);
            judge(rep, rows[j], config.z_threshold, false);
            if (!rows[j].spec.is_null() && !(rows[j].std_error < rows[j].unpaired_std_error)) {
                rep.paired_tighter = false;
            }
        }
        for (std::size_t g = 0; g < config.follower_offsets.size(); ++g) {
            auto e = extrapolate(run, g * nw, nw);
            e.realization = r;
            rep.extrapolated.push_back(e);
            judge(rep, e, config.z_threshold, false);
            extrap_by_mag[g].push_back(e);
        }
    }
    for (const auto& cells : by_spec) {
        const auto e = pool(cells);
        rep.rows.push_back(e);
        judge(rep, e, config.z_threshold, true);
    }
    for (const auto& cells : extrap_by_mag) {
        const auto e = pool(cells);
        rep.extrapolated.push_back(e);
        judge(rep, e, config.z_threshold, true);
    }
    return rep;
}

SlopeSuiteReport run_leader_suite(const Market& market, const EquilibriumSurfaces& surfaces,
                                  const SlopeSuiteConfig& config) {
    const auto& m = market.params();
    const auto grid = TimeGrid::uniform_fine(m.T, config.grid_intervals, config.fine_steps);
    auto specs = expand(PerturbationKind::leader_mean_shift, config.leader_mean_shifts,
                        config.window_intervals, grid);
    const auto scales = expand(PerturbationKind::leader_variance_scale,
                               config.leader_variance_scales, config.window_intervals, grid);
    specs.insert(specs.end(), scales.begin(), scales.end());
    const std::size_t nw = config.window_intervals.size();

    SlopeSuiteReport rep;
    const auto run = leader_run(market, surfaces, grid, specs, config.init, config.leader_paths,
                                config.seed, config.threads);
    for (const auto& row : run.rows) {
        rep.rows.push_back(row);
        judge(rep, row, config.z_threshold, true);
        if (!row.spec.is_null() && !(row.std_error < row.unpaired_std_error)) {
            rep.paired_tighter = false;
        }
    }
    for (std::size_t first = 0; first < run.rows.size(); first += nw) {
        const auto e = extrapolate(run, first, nw);
        rep.extrapolated.push_back(e);
        judge(rep, e, config.z_threshold, true);
    }
    return rep;
}

namespace {

/**
 * Per-path conditional statistics of the leader's relative wealth Z1 under the
 * equilibrium, given the filter path, for several sampling meshes at once.
 *
 * Sampled regime on mesh m: Z1(T) = A_m + sum_i chi s xi_i G_i, where G_i is the
 * sum of gains g over interval i and s the policy standard deviation.
 * Q_m estimates the conditional variance sum_i chi^2 s^2 G_i^2 with the
 * zero-mean terms sigma^2 (dW_i^2 - dt_i) and 2 sigma (theta(P_i) - r) dt_i dW_i
 * removed. Y_m is the drift part of A_m - A~, whose martingale part has mean zero.
 */
struct RbPath {
    std::vector<double> A;
    std::vector<double> Q;
    std::vector<double> Y;
    double A_explore = 0.0;
    // First interval of the finest requested mesh (used by the certificate).
    double gain0 = 0.0;
    double drift0 = 0.0;
    double q0 = 0.0;
};

class RbKernel {
public:
    RbKernel(const Market& market, const EquilibriumSurfaces& surfaces,
             const std::vector<int>& intervals, int fine_steps, const InitialState& init)
        : market_(market),
          coef_(market, surfaces),
          intervals_(intervals),
          init_(init),
          fine_(TimeGrid::uniform(market.params().T, fine_steps, 1)) {
        for (int n : intervals) {
            if (n < 1 || fine_steps % n != 0) {
                throw DomainError("mesh T/" + std::to_string(n) + " must divide the SDE grid");
            }
            stride_.push_back(fine_steps / n);
        }
        const auto& m = market.params();
        half_l1_ = 0.5 * m.lambda1;
        chi_ = market.constants().chi;
        s_tilde_ = std::sqrt(equilibrium_policy_variance(market));
        z0_ = z_value(Investor::leader, init.x1, init.x2, m);
    }

    std::size_t n_meshes() const noexcept { return intervals_.size(); }

    /// certificate_mesh indexes the mesh whose first interval is reported.
    void run(std::uint64_t seed, std::uint64_t path, std::size_t certificate_mesh,
             RbPath& out) const {
        const std::size_t nm = intervals_.size();
        out.A.assign(nm, z0_);
        out.Q.assign(nm, 0.0);
        out.Y.assign(nm, 0.0);
        out.A_explore = z0_;
        struct Mesh {
            double b_node = 0.0, th_node = 0.0, gain = 0.0, drift = 0.0, dw = 0.0, len = 0.0;
        };
        std::vector<Mesh> st(nm);
        const auto& m = market_.params();
        const double sigma = m.sigma;
        const double r = m.r;
        const double cs2 = chi_ * chi_ * s_tilde_ * s_tilde_;
        const std::size_t cert = certificate_mesh;
        bool cert_done = false;

        auto close = [&](std::size_t j) {
            auto& s = st[j];
            const double q = sigma * sigma * s.len + s.drift * s.drift +
                             2.0 * sigma * (s.drift - s.th_node * s.len) * s.dw;
            out.Q[j] += cs2 * q;
            if (j == cert && !cert_done) {
                out.gain0 = s.gain;
                out.drift0 = s.drift;
                out.q0 = q;
                cert_done = true;
            }
        };

        struct Visitor {
            const RbKernel& k;
            std::vector<Mesh>& st;
            RbPath& out;
            decltype(close)& close_fn;
            double r, half_l1, chi;

            void node(int i, double t, double p) {
                double b = 0.0;
                double gamma = 0.0;
                k.coef_.eval(t, p, b, gamma);
                cur_b = b;
                cur_gamma = gamma;
                const double th = k.market_.theta_unchecked(p) - r;
                for (std::size_t j = 0; j < st.size(); ++j) {
                    if (i % k.stride_[j] == 0) {
                        if (i > 0) close_fn(j);
                        st[j] = {b, th, 0.0, 0.0, 0.0, 0.0};
                    }
                }
            }
            void step(int, double, double p, double dt, double dW, double g) {
                const double th = k.market_.theta_unchecked(p) - r;
                const double follower = half_l1 * cur_gamma * g;
                out.A_explore += chi * cur_b * g - follower;
                for (std::size_t j = 0; j < st.size(); ++j) {
                    auto& s = st[j];
                    out.A[j] += chi * s.b_node * g - follower;
                    out.Y[j] += chi * (s.b_node - cur_b) * th * dt;
                    s.gain += g;
                    s.drift += th * dt;
                    s.dw += dW;
                    s.len += dt;
                }
            }
            void finish(double) {
                for (std::size_t j = 0; j < st.size(); ++j) close_fn(j);
            }
            double cur_b = 0.0;
            double cur_gamma = 0.0;
        } v{*this, st, out, close, r, half_l1_, chi_};
        detail::drive_filter(market_, fine_, init_.p, seed, path, v);
        if (!std::isfinite(out.A_explore)) {
            throw NumericalError("non-finite wealth on path " + std::to_string(path));
        }
    }

    double chi() const noexcept { return chi_; }
    double s_tilde() const noexcept { return s_tilde_; }

private:
    const Market& market_;
    Coefficients coef_;
    std::vector<int> intervals_;
    std::vector<int> stride_;
    InitialState init_;
    TimeGrid fine_;
    double half_l1_ = 0.0;
    double chi_ = 1.0;
    double s_tilde_ = 0.0;
    double z0_ = 0.0;
};

struct GapEstimate {
    double gap = 0.0;
    double se = 0.0;
};

/// Sampled-minus-exploratory objective gap on mesh j from the per-path statistics.
GapEstimate rb_gap(const std::vector<RbPath>& paths, std::size_t j, double gamma, double q_explore) {
    const std::size_t n = paths.size();
    std::vector<double> A(n), At(n), Q(n), Y(n);
    for (std::size_t k = 0; k < n; ++k) {
        A[k] = paths[k].A[j];
        At[k] = paths[k].A_explore;
        Q[k] = paths[k].Q[j];
        Y[k] = paths[k].Y[j];
    }
    const double ma = mean_of(A), mt = mean_of(At), mq = mean_of(Q), my = mean_of(Y);
    const double va = var_of(A), vt = var_of(At);
    GapEstimate g;
    g.gap = my - 0.5 * gamma * (va - vt + mq - q_explore);
    std::vector<double> psi(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double da = A[k] - ma;
        const double dt = At[k] - mt;
        psi[k] = (Y[k] - my) - 0.5 * gamma * ((da * da - va) - (dt * dt - vt) + (Q[k] - mq));
    }
    g.se = sd_of(psi) / std::sqrt(static_cast<double>(n));
    return g;
}

std::vector<RbPath> run_rb(const RbKernel& kernel, std::size_t n_paths, std::uint64_t seed,
                           int threads, std::size_t cert_mesh) {
    check_paths(n_paths);
    std::vector<RbPath> paths(n_paths);
    parallel_for(n_paths, threads,
                 [&](std::size_t k) { kernel.run(seed, k, cert_mesh, paths[k]); });
    return paths;
}

/// Mean-variance objective (without entropy) of the sampled regime on mesh j.
double rb_sampled_objective(const std::vector<RbPath>& paths, std::size_t j, double gamma) {
    std::vector<double> A(paths.size()), Q(paths.size());
    for (std::size_t k = 0; k < paths.size(); ++k) {
        A[k] = paths[k].A[j];
        Q[k] = paths[k].Q[j];
    }
    return mean_of(A) - 0.5 * gamma * (var_of(A) + mean_of(Q));
}

double rb_exploratory_objective(const std::vector<RbPath>& paths, double gamma, double q) {
    std::vector<double> A(paths.size());
    for (std::size_t k = 0; k < paths.size(); ++k) A[k] = paths[k].A_explore;
    return mean_of(A) - 0.5 * gamma * (var_of(A) + q);
}

}  // namespace

ConvergenceReport convergence_study(const Market& market, const EquilibriumSurfaces& surfaces,
                                    const ConvergenceConfig& config) {
    const auto& m = market.params();
    config.init.validate();
    if (config.intervals.empty()) throw DomainError("convergence study needs meshes");
    for (std::size_t i = 1; i < config.intervals.size(); ++i) {
        if (config.intervals[i] <= config.intervals[i - 1]) {
            throw DomainError("meshes must be strictly decreasing");
        }
    }
    if (!(m.lambda0 > 0.0)) throw DomainError("convergence study needs lambda0 > 0");
    const RbKernel kernel(market, surfaces, config.intervals, config.fine_steps, config.init);
    const auto paths = run_rb(kernel, config.n_paths, config.seed, config.threads, 0);
    const double cs = kernel.chi() * kernel.s_tilde() * m.sigma;
    const double q_explore = cs * cs * m.T;
    const double entropy =
        m.lambda0 * entropy_integral(equilibrium_policy_variance(market), m.T);

    ConvergenceReport rep;
    rep.n_paths = config.n_paths;
    for (std::size_t j = 0; j < config.intervals.size(); ++j) {
        const auto g = rb_gap(paths, j, m.gamma1, q_explore);
        rep.meshes.push_back(m.T / config.intervals[j]);
        rep.signed_gaps.push_back(g.gap);
        rep.objective_gaps.push_back(std::abs(g.gap));
        rep.gap_std_errors.push_back(g.se);
        rep.sampled_objectives.push_back(rb_sampled_objective(paths, j, m.gamma1) + entropy);
    }
    rep.exploratory_objective = rb_exploratory_objective(paths, m.gamma1, q_explore) + entropy;
    rep.epsilon = rep.objective_gaps.back();

    rep.noise_limited = false;
    for (std::size_t j = 0; j < rep.meshes.size(); ++j) {
        if (!(rep.objective_gaps[j] >= 2.0 * rep.gap_std_errors[j])) rep.noise_limited = true;
    }
    rep.monotone = true;
    for (std::size_t j = 1; j < rep.meshes.size(); ++j) {
        const double tol = 2.0 * std::hypot(rep.gap_std_errors[j], rep.gap_std_errors[j - 1]);
        if (rep.objective_gaps[j] > rep.objective_gaps[j - 1] + tol) rep.monotone = false;
    }
    if (rep.meshes.size() >= 2) {
        bool positive = true;
        for (double g : rep.objective_gaps) positive = positive && g > 0.0;
        if (positive) {
            const auto n = static_cast<double>(rep.meshes.size());
            double mx = 0.0, my = 0.0;
            for (std::size_t j = 0; j < rep.meshes.size(); ++j) {
                mx += std::log(rep.meshes[j]) / n;
                my += std::log(rep.objective_gaps[j]) / n;
            }
            double sxy = 0.0, sxx = 0.0;
            for (std::size_t j = 0; j < rep.meshes.size(); ++j) {
                const double dx = std::log(rep.meshes[j]) - mx;
                sxx += dx * dx;
                sxy += dx * (std::log(rep.objective_gaps[j]) - my);
            }
            rep.fitted_order = sxy / sxx;
        }
    }
    if (rep.noise_limited) {
        const double ratio = 4.0 * rep.gap_std_errors.back() / std::max(rep.epsilon, 1e-300);
        rep.recommended_paths = static_cast<std::size_t>(
            std::ceil(static_cast<double>(config.n_paths) * std::min(ratio * ratio, 1e6)));
    }
    return rep;
}

CertificateReport stackelberg_certificate(const Market& market,
                                          const EquilibriumSurfaces& surfaces,
                                          const CertificateConfig& config) {
    const auto& m = market.params();
    config.init.validate();
    if (!(m.lambda0 > 0.0)) throw DomainError("certificate needs lambda0 > 0");
    if (config.deviations.empty()) throw DomainError("empty deviation grid");
    for (const auto& d : config.deviations) {
        if (!std::isfinite(d.mean_offset) || !(d.variance_scale > 0.0)) {
            throw DomainError("deviations need a finite offset and a positive variance scale");
        }
    }
    const RbKernel kernel(market, surfaces, {config.intervals}, config.fine_steps, config.init);
    const auto paths = run_rb(kernel, config.n_paths, config.seed, config.threads, 0);
    const std::size_t n = paths.size();
    const double gamma = m.gamma1;
    const double chi = kernel.chi();
    const double cs2 = chi * chi * kernel.s_tilde() * kernel.s_tilde();
    const double width = m.T / config.intervals;
    const double variance = equilibrium_policy_variance(market);

    CertificateReport rep;
    rep.intervals = config.intervals;
    if (config.epsilon) {
        rep.epsilon = *config.epsilon;
    } else {
        const double cs = chi * kernel.s_tilde() * m.sigma;
        const auto g = rb_gap(paths, 0, gamma, cs * cs * m.T);
        rep.epsilon = std::abs(g.gap);
        rep.epsilon_std_error = g.se;
    }

    std::vector<double> A(n), Q(n), Q0(n);
    for (std::size_t k = 0; k < n; ++k) {
        A[k] = paths[k].A[0];
        Q[k] = paths[k].Q[0];
        Q0[k] = paths[k].q0;
    }
    const double ma = mean_of(A), va = var_of(A), mq = mean_of(Q), mq0 = mean_of(Q0);
    std::vector<double> base_psi(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double da = A[k] - ma;
        base_psi[k] = da - 0.5 * gamma * (da * da - va + Q[k] - mq);
    }
    const double base_se = sd_of(base_psi) / std::sqrt(static_cast<double>(n));

    rep.max_improvement = -INFINITY;
    std::vector<double> Ap(n), Y(n), psi(n), dev_psi(n);
    for (const auto& d : config.deviations) {
        for (std::size_t k = 0; k < n; ++k) {
            Ap[k] = A[k] + chi * d.mean_offset * paths[k].gain0;
            Y[k] = chi * d.mean_offset * paths[k].drift0;
        }
        const double map = mean_of(Ap), vap = var_of(Ap), my = mean_of(Y);
        const double ds = d.variance_scale - 1.0;
        const double widths[] = {width, m.T - width};
        const double vars[] = {variance * d.variance_scale, variance};
        const double entropy_gain =
            m.lambda0 * (entropy_integral(vars, widths) - entropy_integral(variance, m.T));
        CertificateRow row;
        row.deviation = d;
        row.improvement = my - 0.5 * gamma * (vap - va + ds * cs2 * mq0) + entropy_gain;
        for (std::size_t k = 0; k < n; ++k) {
            const double dap = Ap[k] - map;
            const double da = A[k] - ma;
            psi[k] = (Y[k] - my) -
                     0.5 * gamma * ((dap * dap - vap) - (da * da - va) + ds * cs2 * (Q0[k] - mq0));
            dev_psi[k] = dap - 0.5 * gamma * (dap * dap - vap + Q[k] - mq + ds * cs2 * (Q0[k] - mq0));
        }
        row.std_error = sd_of(psi) / std::sqrt(static_cast<double>(n));
        const double dev_se = sd_of(dev_psi) / std::sqrt(static_cast<double>(n));
        row.unpaired_std_error = std::hypot(dev_se, base_se);
        if (row.improvement > rep.max_improvement) {
            rep.max_improvement = row.improvement;
            rep.max_std_error = row.std_error;
        }
        rep.rows.push_back(row);
    }
    rep.passed = rep.max_improvement <= rep.epsilon + 3.0 * rep.max_std_error;
    if (rep.passed) {
        rep.recommendation = "none";
    } else {
        rep.recommendation = "refine the sampling grid below T/" + std::to_string(config.intervals) +
                             " (e.g. T/" + std::to_string(2 * config.intervals) +
                             ") or raise n_paths";
    }
    return rep;
}

void write_slope_csv(const SlopeSuiteReport& report, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot open " + file.string());
    out << "kind,magnitude,window,realization,delta_hat,std_error,unpaired_std_error,theory,"
           "n_paths\n";
    char buf[320];
    auto emit = [&](const SlopeEstimate& e) {
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%d,%.17g,%.17g,%.17g,%.17g,%zu\n",
                      to_string(e.spec.kind).c_str(), e.spec.magnitude, e.spec.window,
                      e.realization, e.delta_hat, e.std_error, e.unpaired_std_error, e.theory,
                      e.n_paths);
        out << buf;
    };
    for (const auto& e : report.rows) emit(e);
    for (const auto& e : report.extrapolated) emit(e);
}

void write_convergence_csv(const ConvergenceReport& report, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot open " + file.string());
    out << "mesh,gap,signed_gap,std_error\n";
    char buf[160];
    for (std::size_t j = 0; j < report.meshes.size(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", report.meshes[j],
                      report.objective_gaps[j], report.signed_gaps[j], report.gap_std_errors[j]);
        out << buf;
    }
}

void write_certificate_csv(const CertificateReport& report, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot open " + file.string());
    out << "mean_offset,variance_scale,improvement,std_error,unpaired_std_error\n";
    char buf[160];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", r.deviation.mean_offset,
                      r.deviation.variance_scale, r.improvement, r.std_error,
                      r.unpaired_std_error);
        out << buf;
    }
}

}  // namespace stackelberg
