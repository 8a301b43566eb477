#include "stackelberg/pde_solver.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

namespace stackelberg {

void PdeGridSpec::validate() const {
    if (n_time < 2) throw DomainError("pde grid: n_time must be >= 2");
    if (n_space < 3) throw DomainError("pde grid: n_space must be >= 3");
}

std::string to_string(SurfaceKind kind) {
    switch (kind) {
        case SurfaceKind::a1: return "a1";
        case SurfaceKind::a2: return "a2";
        case SurfaceKind::A1: return "A1";
        case SurfaceKind::A2: return "A2";
    }
    return "?";
}

std::string to_string(Scheme scheme) {
    return scheme == Scheme::explicit_euler ? "explicit" : "crank_nicolson";
}

Scheme scheme_from_string(const std::string& name) {
    if (name == "explicit") return Scheme::explicit_euler;
    if (name == "crank_nicolson") return Scheme::crank_nicolson;
    throw DomainError("unknown pde scheme '" + name + "'");
}

// ---------------------------------------------------------------------------
// ValueSurface

ValueSurface::ValueSurface(SurfaceKind kind, const PdeGridSpec& grid, const ModelParams& params,
                           std::vector<double> values, std::vector<double> dp_values)
    : kind_(kind),
      grid_(grid),
      params_(params),
      dt_(grid.dt(params.T)),
      dp_(grid.dp()),
      values_(std::move(values)),
      dp_values_(std::move(dp_values)) {
    const auto expected = static_cast<std::size_t>(grid.n_time) * grid.n_nodes();
    if (values_.size() != expected) throw DomainError("surface: value matrix has wrong size");
    if (!dp_values_.empty() && dp_values_.size() != expected) {
        throw DomainError("surface: derivative matrix has wrong size");
    }
}

std::span<const double> ValueSurface::row(int level) const {
    return {values_.data() + index(level, 0), static_cast<std::size_t>(n_nodes())};
}

std::span<const double> ValueSurface::dp_row(int level) const {
    if (!has_dp()) throw DomainError("surface " + to_string(kind_) + " stores no p-derivative");
    return {dp_values_.data() + index(level, 0), static_cast<std::size_t>(n_nodes())};
}

double ValueSurface::interpolate(double t, double p, Field which) const {
    const double T = params_.T;
    const double slack = 1e-12 * T;
    if (!(t >= -slack && t <= T + slack)) {
        throw DomainError("surface interpolation: t outside [0,T]: " + std::to_string(t));
    }
    if (!(p >= 0.0 && p <= 1.0)) {
        throw DomainError("surface interpolation: p outside [0,1]: " + std::to_string(p));
    }
    if (which == Field::dp && !has_dp()) {
        throw DomainError("surface " + to_string(kind_) + " stores no p-derivative");
    }
    return interpolate_unchecked(std::clamp(t, 0.0, T), p, which);
}

double ValueSurface::interpolate_unchecked(double t, double p, Field which) const noexcept {
    const auto& data = which == Field::value ? values_ : dp_values_;
    const double ts = t / dt_;
    const double ps = p / dp_;
    int i = std::min(static_cast<int>(ts), grid_.n_time - 2);
    int j = std::min(static_cast<int>(ps), grid_.n_space);
    i = std::max(i, 0);
    j = std::max(j, 0);
    const double wt = ts - i;
    const double wp = ps - j;
    const std::size_t k = index(i, j);
    const std::size_t stride = static_cast<std::size_t>(n_nodes());
    const double lo = data[k] + wp * (data[k + 1] - data[k]);
    const double hi = data[k + stride] + wp * (data[k + stride + 1] - data[k + stride]);
    return lo + wt * (hi - lo);
}

std::string ValueSurface::csv_filename() const {
    return to_string(kind_) + "_" + std::to_string(grid_.n_time) + "x" +
           std::to_string(grid_.n_space) + ".csv";
}

void ValueSurface::write_csv(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    const auto path = dir / csv_filename();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out.precision(17);
    out << "t";
    for (int j = 0; j < n_nodes(); ++j) out << ',' << node(j);
    out << '\n';
    for (int i = 0; i < n_time(); ++i) {
        out << time(i);
        for (double v : row(i)) out << ',' << v;
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Solvers

namespace {

// u_tau = D(p) u_pp + V(p) u_p + S(t, p) marched backward from u(T, .) = 0.
struct LinearProblem {
    std::vector<double> diffusion;
    std::vector<double> advection;
    /// Fills the source at every node for time level `level`.
    std::function<void(int level, std::vector<double>& out)> source;
    /// Dirichlet traces at p = 0 and p = 1 as functions of t.
    std::function<double(double)> left;
    std::function<double(double)> right;
};

void thomas(std::vector<double>& lower, std::vector<double>& diag, std::vector<double>& upper,
            std::vector<double>& rhs) {
    const std::size_t n = diag.size();
    for (std::size_t i = 1; i < n; ++i) {
        const double w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) {
        rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
    }
}

void check_finite(const std::vector<double>& level_values, int level, SurfaceKind kind) {
    for (double v : level_values) {
        if (!std::isfinite(v)) {
            throw NumericalError("non-finite value in " + to_string(kind) +
                                 " sweep at time level " + std::to_string(level));
        }
    }
}

std::vector<double> march(const LinearProblem& prob, const PdeGridSpec& grid, double T,
                          SurfaceKind kind) {
    const int nt = grid.n_time;
    const int nn = grid.n_nodes();
    const int n = grid.n_space;
    const double dt = grid.dt(T);
    const double h = grid.dp();
    const double h2 = h * h;

    std::vector<double> out(static_cast<std::size_t>(nt) * nn, 0.0);
    std::vector<double> prev(nn, 0.0);  // level k+1
    std::vector<double> next(nn, 0.0);  // level k
    std::vector<double> src_prev(nn), src_next(nn);
    prob.source(nt - 1, src_prev);

    std::vector<double> lower(n), diag(n), upper(n), rhs(n);

    for (int k = nt - 2; k >= 0; --k) {
        const double t = k * dt;
        prob.source(k, src_next);
        next[0] = prob.left(t);
        next[nn - 1] = prob.right(t);

        if (grid.scheme == Scheme::crank_nicolson) {
            for (int j = 1; j <= n; ++j) {
                const double d = prob.diffusion[j] / h2;
                const double v = prob.advection[j] / (2.0 * h);
                const double cm = d - v;  // coefficient of u_{j-1} in L
                const double cp = d + v;  // coefficient of u_{j+1} in L
                const double lu = cm * prev[j - 1] - 2.0 * d * prev[j] + cp * prev[j + 1];
                const int r = j - 1;
                lower[r] = -0.5 * dt * cm;
                diag[r] = 1.0 + dt * d;
                upper[r] = -0.5 * dt * cp;
                rhs[r] = prev[j] + 0.5 * dt * lu + 0.5 * dt * (src_prev[j] + src_next[j]);
            }
            rhs[0] -= lower[0] * next[0];
            rhs[n - 1] -= upper[n - 1] * next[nn - 1];
            lower[0] = 0.0;
            upper[n - 1] = 0.0;
            thomas(lower, diag, upper, rhs);
            for (int j = 1; j <= n; ++j) next[j] = rhs[j - 1];
        } else {
            for (int j = 1; j <= n; ++j) {
                const double d = prob.diffusion[j] / h2;
                const double v = prob.advection[j];
                const double upwind = v > 0.0 ? v * (prev[j + 1] - prev[j]) / h
                                              : v * (prev[j] - prev[j - 1]) / h;
                next[j] = prev[j] +
                          dt * (d * (prev[j + 1] - 2.0 * prev[j] + prev[j - 1]) + upwind +
                                src_prev[j]);
            }
        }

        check_finite(next, k, kind);
        std::copy(next.begin(), next.end(), out.begin() + static_cast<std::ptrdiff_t>(k) * nn);
        prev.swap(next);
        src_prev.swap(src_next);
    }
    return out;
}

std::vector<double> differentiate(const std::vector<double>& values, const PdeGridSpec& grid) {
    const int nt = grid.n_time;
    const int nn = grid.n_nodes();
    const double h = grid.dp();
    std::vector<double> d(values.size());
    for (int i = 0; i < nt; ++i) {
        const double* u = values.data() + static_cast<std::size_t>(i) * nn;
        double* du = d.data() + static_cast<std::size_t>(i) * nn;
        du[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
        for (int j = 1; j < nn - 1; ++j) du[j] = (u[j + 1] - u[j - 1]) / (2.0 * h);
        du[nn - 1] = (3.0 * u[nn - 1] - 4.0 * u[nn - 2] + u[nn - 3]) / (2.0 * h);
    }
    return d;
}

// Positivity of the explicit update: dt (beta^2/dp^2 + |advection|/dp) <= 1 at every node,
// with the a-equation's advection beta |theta - r| / sigma as the bound for both problems.
void check_explicit_stability(const Market& market, const PdeGridSpec& grid) {
    if (grid.scheme != Scheme::explicit_euler) return;
    const auto& m = market.params();
    const double dt = grid.dt(m.T);
    const double h = grid.dp();
    double rate = 0.0;
    for (int j = 0; j < grid.n_nodes(); ++j) {
        const double p = j * h;
        const double b = market.beta_unchecked(p);
        const double v = b * std::abs(market.theta_unchecked(p) - m.r) / m.sigma;
        rate = std::max(rate, b * b / (h * h) + v / h);
    }
    if (rate > 0.0 && dt * rate > 1.0) {
        std::ostringstream msg;
        msg << "explicit scheme unstable: dt=" << dt << " exceeds the limit " << 1.0 / rate
            << "; increase n_time or use crank_nicolson";
        throw NumericalError(msg.str());
    }
}

std::vector<double> node_diffusion(const Market& market, const PdeGridSpec& grid) {
    std::vector<double> d(grid.n_nodes());
    for (int j = 0; j < grid.n_nodes(); ++j) {
        const double b = market.beta_unchecked(j * grid.dp());
        d[j] = 0.5 * b * b;
    }
    return d;
}

// Shared by both A problems: the source is R(p, d_p a) + c on the given a.
ValueSurface solve_big_A(const Market& market, const ValueSurface& a, const PdeGridSpec& grid,
                         double gamma, double constant, SurfaceKind kind) {
    grid.validate();
    check_explicit_stability(market, grid);
    const auto& m = market.params();
    const double T = m.T;
    const double dt = grid.dt(T);

    std::vector<double> nodes(grid.n_nodes());
    for (int j = 0; j < grid.n_nodes(); ++j) nodes[j] = j * grid.dp();
    const bool same_grid = a.grid().n_time == grid.n_time && a.grid().n_space == grid.n_space;

    LinearProblem prob;
    prob.diffusion = node_diffusion(market, grid);
    prob.advection.assign(grid.n_nodes(), 0.0);
    prob.source = [&](int level, std::vector<double>& out) {
        const double t = level * dt;
        for (int j = 0; j < grid.n_nodes(); ++j) {
            const double da = same_grid ? a.dp(level, j)
                                        : a.interpolate(std::min(t, T), nodes[j], Field::dp);
            out[j] = source_R(market, gamma, nodes[j], da) + constant;
        }
    };
    const double s2g = m.sigma * m.sigma * gamma;
    const double left_rate = (m.mu2 - m.r) * (m.mu2 - m.r) / (2.0 * s2g) + constant;
    const double right_rate = (m.mu1 - m.r) * (m.mu1 - m.r) / (2.0 * s2g) + constant;
    prob.left = [=](double t) { return left_rate * (T - t); };
    prob.right = [=](double t) { return right_rate * (T - t); };

    auto values = march(prob, grid, T, kind);
    return ValueSurface(kind, grid, m, std::move(values), {});
}

}  // namespace

ValueSurface solve_a(const Market& market, double gamma, const PdeGridSpec& grid,
                     SurfaceKind kind) {
    grid.validate();
    if (kind != SurfaceKind::a1 && kind != SurfaceKind::a2) {
        throw DomainError("solve_a: kind must be a1 or a2");
    }
    if (!(gamma > 0.0)) throw DomainError("solve_a: gamma must be positive");
    check_explicit_stability(market, grid);

    const auto& m = market.params();
    const double T = m.T;
    const double s = m.sigma;

    LinearProblem prob;
    prob.diffusion = node_diffusion(market, grid);
    prob.advection.resize(grid.n_nodes());
    std::vector<double> src(grid.n_nodes());
    for (int j = 0; j < grid.n_nodes(); ++j) {
        const double p = j * grid.dp();
        const double excess = market.theta_unchecked(p) - m.r;
        prob.advection[j] = -market.beta_unchecked(p) * excess / s;
        src[j] = excess * excess / (s * s * gamma);
    }
    prob.source = [&src](int, std::vector<double>& out) { out = src; };
    const double left_rate = (m.mu2 - m.r) * (m.mu2 - m.r) / (s * s * gamma);
    const double right_rate = (m.mu1 - m.r) * (m.mu1 - m.r) / (s * s * gamma);
    prob.left = [=](double t) { return left_rate * (T - t); };
    prob.right = [=](double t) { return right_rate * (T - t); };

    auto values = march(prob, grid, T, kind);
    auto dp = differentiate(values, grid);
    return ValueSurface(kind, grid, m, std::move(values), std::move(dp));
}

ValueSurface solve_a1(const Market& market, const PdeGridSpec& grid) {
    return solve_a(market, market.params().gamma1, grid, SurfaceKind::a1);
}

ValueSurface solve_a2(const Market& market, const PdeGridSpec& grid) {
    return solve_a(market, market.params().gamma2, grid, SurfaceKind::a2);
}

double source_R(const Market& market, double gamma, double p, double da) {
    const auto& m = market.params();
    const double s = m.sigma;
    const double excess = market.theta_unchecked(p) - m.r;
    const double b = market.beta_unchecked(p);
    const double mopt = excess / (s * s * gamma) - b * da / s;
    return excess * mopt - 0.5 * gamma * s * s * mopt * mopt - 0.5 * gamma * b * b * da * da -
           gamma * s * b * da * mopt;
}

double entropy_source_constant(const Market& market) {
    const auto& m = market.params();
    if (!(m.lambda0 > 0.0)) {
        throw DomainError("A1 requires lambda0 > 0 (entropy constant diverges at 0)");
    }
    const double chi = market.constants().chi;
    return 0.5 * m.lambda0 *
           std::log(2.0 * std::numbers::pi * m.lambda0 / (m.gamma1 * m.sigma * m.sigma * chi * chi));
}

ValueSurface solve_A2(const Market& market, const ValueSurface& a2, const PdeGridSpec& grid) {
    if (a2.kind() != SurfaceKind::a2) throw DomainError("solve_A2 needs an a2 surface");
    return solve_big_A(market, a2, grid, market.params().gamma2, 0.0, SurfaceKind::A2);
}

ValueSurface solve_A1(const Market& market, const ValueSurface& a1, const PdeGridSpec& grid) {
    if (a1.kind() != SurfaceKind::a1) throw DomainError("solve_A1 needs an a1 surface");
    const double c = entropy_source_constant(market);
    return solve_big_A(market, a1, grid, market.params().gamma1, c, SurfaceKind::A1);
}

EquilibriumSurfaces solve_all(const Market& market, const PdeGridSpec& grid) {
    auto a1 = solve_a1(market, grid);
    auto a2 = solve_a2(market, grid);
    auto A1 = solve_A1(market, a1, grid);
    auto A2 = solve_A2(market, a2, grid);
    return {std::move(a1), std::move(a2), std::move(A1), std::move(A2)};
}

}  // namespace stackelberg
