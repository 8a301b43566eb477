#include "stackelberg/cli.hpp"

#include "stackelberg/objectives.hpp"
#include "stackelberg/strategies.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>

namespace stackelberg {

using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "1.0.0";

std::ofstream open_out(const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot open " + file.string());
    return out;
}

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void plot_row(std::ostream& out, double x, double y, const std::string& series) {
    out << fmt(x) << ',' << fmt(y) << ',' << series << '\n';
}

}  // namespace

void emit_plot_data(const ValueSurface& surface, const std::filesystem::path& file) {
    auto out = open_out(file);
    out << "x,y,series\n";
    for (int k = 1; k <= 9; ++k) {
        const double p = 0.1 * k;
        char series[32];
        std::snprintf(series, sizeof series, "p=%.1f", p);
        for (int i = 0; i < surface.n_time(); ++i) {
            const double t = surface.time(i);
            plot_row(out, t, surface.interpolate(t, p, Field::value), series);
        }
    }
}

void emit_plot_data(const ConvergenceReport& report, const std::filesystem::path& file) {
    auto out = open_out(file);
    out << "x,y,series\n";
    for (std::size_t j = 0; j < report.meshes.size(); ++j) {
        if (report.objective_gaps[j] > 0.0) {
            plot_row(out, std::log10(report.meshes[j]), std::log10(report.objective_gaps[j]), "gap");
        }
    }
    // First-order reference line through the finest measured gap.
    if (!report.meshes.empty() && report.epsilon > 0.0) {
        const double h0 = report.meshes.back();
        for (double h : report.meshes) {
            plot_row(out, std::log10(h), std::log10(report.epsilon * h / h0), "order_one");
        }
    }
}

void emit_leader_mean_overlay(const Market& market, const PdeGridSpec& grid,
                              const std::filesystem::path& file) {
    const auto a1 = solve_a1(market, grid);
    const auto a2 = solve_a2(market, grid);
    ModelParams single = market.params();
    single.lambda1 = 0.0;
    single.lambda2 = 0.0;
    const Market alone(single);
    const auto b1 = solve_a1(alone, grid);
    const auto b2 = solve_a2(alone, grid);
    auto out = open_out(file);
    out << "x,y,series\n";
    for (int j = 0; j < a1.n_nodes(); ++j) {
        const double p = a1.node(j);
        plot_row(out, p, leader_mean(0.0, p, a1, a2, market), "leader_mean");
    }
    for (int j = 0; j < b1.n_nodes(); ++j) {
        const double p = b1.node(j);
        plot_row(out, p, leader_mean(0.0, p, b1, b2, alone), "single_investor_mean");
    }
}

std::vector<ClaimResult> reduction_checks(const ModelParams& base, const PdeGridSpec& grid) {
    std::vector<ClaimResult> out;
    auto add = [&](const std::string& name, double err, double tol) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "max_error=%.3e tol=%.1e", err, tol);
        out.push_back({name, err <= tol, buf});
    };

    // Follower without relative concern: u2* is the single-investor strategy.
    {
        ModelParams p = base;
        p.lambda2 = 0.0;
        const Market mk(p);
        const auto a2 = solve_a2(mk, grid);
        const auto single = solve_a(mk, p.gamma2, grid, SurfaceKind::a2);
        double err = 0.0;
        for (int i = 0; i < a2.n_time(); ++i) {
            for (int j = 0; j < a2.n_nodes(); ++j) {
                const double t = a2.time(i);
                const double x = a2.node(j);
                const auto resp = follower_response(t, x, a2, mk);
                for (double u1 : {-1.0, 0.0, 2.0}) {
                    const double direct = (mk.theta(x) - p.r) / (p.sigma * p.sigma * p.gamma2) -
                                          mk.beta(x) * single.dp(i, j) / p.sigma;
                    err = std::max(err, std::abs(resp.action(u1) - direct));
                }
            }
        }
        add("follower_single_investor", err, 1e-12);
    }
    // No relative concerns at all: the leader mean is the single-investor strategy.
    {
        ModelParams p = base;
        p.lambda1 = 0.0;
        p.lambda2 = 0.0;
        const Market mk(p);
        const auto a1 = solve_a1(mk, grid);
        const auto a2 = solve_a2(mk, grid);
        const auto single = solve_a(mk, p.gamma1, grid, SurfaceKind::a1);
        double err = 0.0;
        for (int i = 0; i < a1.n_time(); ++i) {
            for (int j = 0; j < a1.n_nodes(); ++j) {
                const double t = a1.time(i);
                const double x = a1.node(j);
                const double direct = (mk.theta(x) - p.r) / (p.sigma * p.sigma * p.gamma1) -
                                      mk.beta(x) * single.dp(i, j) / p.sigma;
                err = std::max(err, std::abs(leader_mean(t, x, a1, a2, mk) - direct));
            }
        }
        add("leader_single_investor", err, 1e-12);
        add("l_equals_inverse_gamma1", std::abs(mk.constants().l - 1.0 / p.gamma1), 0.0);
    }
    // Equal risk aversions give identical anticipated gains.
    {
        ModelParams p = base;
        p.gamma2 = p.gamma1;
        const Market mk(p);
        const auto a1 = solve_a1(mk, grid);
        const auto a2 = solve_a2(mk, grid);
        double err = 0.0;
        for (int i = 0; i < a1.n_time(); ++i) {
            for (int j = 0; j < a1.n_nodes(); ++j) {
                err = std::max(err, std::abs(a1.value(i, j) - a2.value(i, j)));
                err = std::max(err, std::abs(a1.dp(i, j) - a2.dp(i, j)));
            }
        }
        add("a1_equals_a2_for_equal_gamma", err, 0.0);
    }
    // The aggregate (1 - lambda2/2) u2* - (lambda2/2) u1 ignores u1.
    {
        const Market mk(base);
        const auto a2 = solve_a2(mk, grid);
        const double w = 1.0 - 0.5 * base.lambda2;
        double err = 0.0;
        CounterRng rng(12345, 0, Channel::aux);
        for (int k = 0; k < 10000; ++k) {
            const double t = base.T * rng.uniform();
            const double x = rng.uniform();
            const double u1 = 10.0 * (rng.uniform() - 0.5);
            const auto resp = follower_response(t, x, a2, mk);
            const double agg = w * resp.action(u1) - 0.5 * base.lambda2 * u1;
            err = std::max(err, std::abs(agg - aggregate_control(t, x, a2, mk)));
        }
        add("aggregate_independent_of_u1", err, 1e-12);
    }
    return out;
}

namespace {

struct Context {
    const ExperimentConfig& config;
    const RunOptions& options;
    std::filesystem::path dir;
    std::uint64_t seed;
    std::vector<ClaimResult> claims;
    json summary = json::object();
};

InitialState initial_state(const ExperimentConfig& c) {
    return {c.simulation.x1_0, c.simulation.x2_0, c.simulation.p0};
}

void write_estimates(const std::filesystem::path& file, const std::vector<ObjectiveEstimate>& rows) {
    auto out = open_out(file);
    write_csv_header(out);
    for (const auto& e : rows) write_csv_row(out, e);
}

void exp_solve(Context& ctx, const Market& mk) {
    const auto s = solve_all(mk, ctx.config.pde);
    for (const auto* surf : {&s.a1, &s.a2, &s.A1, &s.A2}) surf->write_csv(ctx.dir);
    emit_plot_data(s.A2, ctx.dir / "plot_A2_slices.csv");
    emit_plot_data(s.A1, ctx.dir / "plot_A1_slices.csv");
    emit_leader_mean_overlay(mk, ctx.config.pde, ctx.dir / "plot_leader_mean_overlay.csv");
    ctx.summary["A1_0_p0"] = s.A1.interpolate(0.0, ctx.config.simulation.p0, Field::value);
    ctx.summary["A2_0_p0"] = s.A2.interpolate(0.0, ctx.config.simulation.p0, Field::value);
}

void exp_simulate(Context& ctx, const Market& mk) {
    const auto& c = ctx.config;
    const auto s = solve_all(mk, c.pde);
    const auto policy = leader_policy(mk, s.a1, s.a2);
    const auto grid = simulation_grid(c);
    const auto init = initial_state(c);
    EnsembleSpec spec{grid, init, ctx.seed, c.simulation.n_paths, 0, ctx.options.threads};

    const auto u1 = draw_action_sequence(grid, policy, mk, init.p, ctx.seed, 0);
    const auto sampled = run_sampled_ensemble(mk, policy, s.a2, spec, u1);
    const auto explore = run_exploratory_ensemble(mk, policy, s.a2, spec);
    const auto free_sampled = run_sampled_ensemble(mk, policy, s.a2, spec);

    const auto follower = estimate_follower_objective(sampled, c.model);
    const auto leader_x = estimate_leader_objective(explore, policy, c.model, Regime::exploratory);
    const auto leader_s =
        estimate_leader_objective(free_sampled, policy, c.model, Regime::sampled);
    write_estimates(ctx.dir / "objectives.csv", {follower, leader_x, leader_s});

    const double v2 = value_function(Investor::follower, 0.0, init.x1, init.x2, init.p, s.A2, c.model);
    const double v1 = value_function(Investor::leader, 0.0, init.x1, init.x2, init.p, s.A1, c.model);
    auto check = [&](const std::string& name, const ObjectiveEstimate& e, double v) {
        const double z = (e.value - v) / e.std_error;
        char buf[128];
        std::snprintf(buf, sizeof buf, "estimate=%.8f value_function=%.8f z=%.2f", e.value, v, z);
        ctx.claims.push_back({name, std::abs(z) <= 4.0, buf});
    };
    check("follower_value_closure", follower, v2);
    check("leader_value_closure", leader_x, v1);
    ctx.summary["leader_sampled_objective"] = leader_s.value;

    if (ctx.options.dump_paths) {
        const auto pdir = ctx.dir / "paths";
        std::filesystem::create_directories(pdir);
        const std::size_t n = std::min<std::size_t>(c.simulation.n_paths, 16);
        for (std::size_t k = 0; k < n; ++k) {
            simulate_sampled(grid, policy, s.a2, mk, init, ctx.seed, k, u1)
                .write_csv(pdir / ("sampled_" + std::to_string(k) + ".csv"));
            simulate_exploratory(grid, policy, s.a2, mk, init, ctx.seed, k)
                .write_csv(pdir / ("exploratory_" + std::to_string(k) + ".csv"));
        }
    }
}

SlopeSuiteConfig suite_config(const Context& ctx) {
    const auto& v = ctx.config.verify;
    SlopeSuiteConfig s;
    s.grid_intervals = v.grid_intervals;
    s.fine_steps = v.fine_steps;
    s.window_intervals = v.window_intervals;
    s.follower_offsets = v.follower_offsets;
    s.leader_mean_shifts = v.leader_mean_shifts;
    s.leader_variance_scales = v.leader_variance_scales;
    s.realizations = v.realizations;
    s.follower_paths = v.follower_paths;
    s.leader_paths = v.leader_paths;
    s.seed = ctx.seed;
    s.threads = ctx.options.threads;
    s.init = initial_state(ctx.config);
    return s;
}

void record_suite(Context& ctx, const std::string& who, const SlopeSuiteReport& r) {
    write_slope_csv(r, ctx.dir / (who + "_slopes.csv"));
    ctx.claims.push_back({who + "_slopes_nonpositive", r.nonpositive, ""});
    ctx.claims.push_back({who + "_null_perturbation_zero", r.null_consistent, ""});
    ctx.claims.push_back({who + "_paired_error_smaller", r.paired_tighter, ""});
}

void exp_convergence(Context& ctx, const Market& mk) {
    const auto s = solve_all(mk, ctx.config.pde);
    ConvergenceConfig cc;
    cc.intervals = ctx.config.verify.convergence_intervals;
    cc.fine_steps = ctx.config.verify.fine_steps;
    cc.n_paths = ctx.config.verify.convergence_paths;
    cc.seed = ctx.seed;
    cc.threads = ctx.options.threads;
    cc.init = initial_state(ctx.config);
    const auto r = convergence_study(mk, s, cc);
    write_convergence_csv(r, ctx.dir / "convergence.csv");
    emit_plot_data(r, ctx.dir / "plot_convergence.csv");
    ctx.summary["fitted_order"] = r.fitted_order;
    ctx.summary["epsilon"] = r.epsilon;
    ctx.summary["noise_limited"] = r.noise_limited;
    if (r.noise_limited) ctx.summary["recommended_paths"] = r.recommended_paths;
    char buf[96];
    std::snprintf(buf, sizeof buf, "fitted_order=%.3f", r.fitted_order);
    ctx.claims.push_back({"first_order_convergence", r.passed(), buf});
    ctx.claims.push_back({"gaps_monotone", r.monotone, ""});
}

void exp_certificate(Context& ctx, const Market& mk) {
    const auto s = solve_all(mk, ctx.config.pde);
    const auto& v = ctx.config.verify;
    CertificateConfig cc;
    cc.intervals = v.certificate_intervals;
    cc.fine_steps = v.fine_steps;
    cc.n_paths = v.certificate_paths;
    cc.seed = ctx.seed;
    cc.threads = ctx.options.threads;
    cc.init = initial_state(ctx.config);
    cc.deviations = {{0.0, 1.0}};
    for (double o : v.certificate_offsets) cc.deviations.push_back({o, 1.0});
    for (double sc : v.certificate_scales) cc.deviations.push_back({0.0, sc});
    const auto r = stackelberg_certificate(mk, s, cc);
    write_certificate_csv(r, ctx.dir / "certificate.csv");
    ctx.summary["max_improvement"] = r.max_improvement;
    ctx.summary["epsilon"] = r.epsilon;
    ctx.summary["recommendation"] = r.recommendation;
    ctx.claims.push_back({"epsilon_certificate", r.passed, r.recommendation});
}

void write_manifest(const Context& ctx) {
    auto out = open_out(ctx.dir / "manifest.txt");
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    const json compact = json::parse(serialize_config(ctx.config));
    out << "tool=stackelberg_cli\n";
    out << "tool_version=" << kToolVersion << '\n';
    out << "experiment=" << to_string(ctx.config.experiment) << '\n';
    out << "config_hash=" << config_hash(ctx.config) << '\n';
    out << "seed=" << ctx.seed << '\n';
    out << "config=" << compact.dump() << '\n';
    out << "timestamp=" << stamp << '\n';
}

}  // namespace

RunResult run(const ExperimentConfig& requested, const RunOptions& options) {
    validate(requested);
    // Overrides are folded in so the manifest describes what actually ran.
    ExperimentConfig config = requested;
    if (options.output_dir) config.output_dir = *options.output_dir;
    if (options.seed) config.simulation.seed = *options.seed;
    Context ctx{config, options, config.output_dir, config.simulation.seed, {}};
    std::filesystem::create_directories(ctx.dir);
    const Market mk(config.model);

    switch (config.experiment) {
        case Experiment::solve_surfaces: exp_solve(ctx, mk); break;
        case Experiment::simulate: exp_simulate(ctx, mk); break;
        case Experiment::verify_follower: {
            const auto s = solve_all(mk, config.pde);
            record_suite(ctx, "follower", run_follower_suite(mk, s, suite_config(ctx)));
            break;
        }
        case Experiment::verify_leader: {
            const auto s = solve_all(mk, config.pde);
            record_suite(ctx, "leader", run_leader_suite(mk, s, suite_config(ctx)));
            break;
        }
        case Experiment::convergence: exp_convergence(ctx, mk); break;
        case Experiment::certificate: exp_certificate(ctx, mk); break;
        case Experiment::reduce_checks: ctx.claims = reduction_checks(config.model, config.pde); break;
    }

    RunResult result;
    result.output_dir = ctx.dir;
    result.claims = ctx.claims;
    bool all = true;
    json claims = json::object();
    for (const auto& c : ctx.claims) {
        claims[c.name] = {{"pass", c.passed}, {"detail", c.detail}};
        all = all && c.passed;
    }
    ctx.summary["experiment"] = to_string(config.experiment);
    ctx.summary["claims"] = claims;
    ctx.summary["all_passed"] = all;
    open_out(ctx.dir / "summary.json") << ctx.summary.dump(2) << '\n';
    write_manifest(ctx);
    result.exit_code = all ? 0 : 2;
    return result;
}

int run_main(const std::filesystem::path& config_path, const RunOptions& options) {
    try {
        const auto config = load_config(config_path);
        const auto r = run(config, options);
        for (const auto& c : r.claims) {
            std::cout << (c.passed ? "PASS " : "FAIL ") << c.name;
            if (!c.detail.empty()) std::cout << "  " << c.detail;
            std::cout << '\n';
        }
        std::cout << "artifacts: " << r.output_dir.string() << '\n';
        return r.exit_code;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
    }
    return 1;
}

}  // namespace stackelberg
