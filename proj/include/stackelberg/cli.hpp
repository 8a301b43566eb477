#pragma once

/**
 * @file cli.hpp
 * @brief Configuration-driven experiment runner.
 *
 * A JSON config names one experiment; run() writes its CSV artifacts, a
 * summary.json with one pass flag per claim, and a key=value manifest from
 * which the run can be repeated. Exit status: 0 when every claim passes,
 * 2 when a claim check fails, 1 on errors.
 */

#include "stackelberg/market_model.hpp"
#include "stackelberg/pde_solver.hpp"
#include "stackelberg/verify.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace stackelberg {

/// Invalid configuration; the message starts with the offending field path.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Experiment {
    solve_surfaces,
    simulate,
    verify_follower,
    verify_leader,
    convergence,
    certificate,
    reduce_checks,
};

std::string to_string(Experiment e);
Experiment experiment_from_string(const std::string& name);

struct SimulationConfig {
    std::vector<double> time_grid;  ///< explicit nodes; empty means uniform n_intervals
    int n_intervals = 64;
    int substeps = 0;  ///< 0 picks the smallest count with an SDE step <= T/2048
    std::size_t n_paths = 10000;
    double x1_0 = 1.0;
    double x2_0 = 1.0;
    double p0 = 0.5;
    std::uint64_t seed = 0;

    bool operator==(const SimulationConfig&) const = default;
};

struct VerifyConfig {
    int grid_intervals = 256;
    int fine_steps = 2048;
    std::vector<int> window_intervals{4, 2, 1};
    std::vector<double> follower_offsets{-1.0, 0.0, 1.0};
    std::vector<double> leader_mean_shifts{-1.0, 0.0, 1.0};
    std::vector<double> leader_variance_scales{0.5, 2.0};
    int realizations = 8;
    std::size_t follower_paths = 20000;
    std::size_t leader_paths = 100000;
    std::vector<int> convergence_intervals{8, 16, 32, 64};
    std::size_t convergence_paths = 20000;
    int certificate_intervals = 64;
    std::vector<double> certificate_offsets{-1.0, -0.5, 0.5, 1.0};
    std::vector<double> certificate_scales{0.5, 2.0};
    std::size_t certificate_paths = 20000;

    bool operator==(const VerifyConfig&) const = default;
};

struct ExperimentConfig {
    ModelParams model;
    PdeGridSpec pde;
    SimulationConfig simulation;
    VerifyConfig verify;
    Experiment experiment = Experiment::solve_surfaces;
    std::string output_dir = "out";

    bool operator==(const ExperimentConfig&) const = default;
};

/// Parses JSON text; throws ConfigError naming the field path on any problem.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& file);
/// Canonical JSON (sorted keys, full precision); parse_config inverts it.
std::string serialize_config(const ExperimentConfig& config);
/// Throws ConfigError for values outside their domains.
void validate(const ExperimentConfig& config);

/// 64-bit FNV-1a of the canonical serialization, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

TimeGrid simulation_grid(const ExperimentConfig& config);

struct RunOptions {
    std::optional<std::string> output_dir;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    bool dump_paths = false;
};

struct ClaimResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct RunResult {
    int exit_code = 0;
    std::filesystem::path output_dir;
    std::vector<ClaimResult> claims;
};

/// Runs the configured experiment. Config and numerical errors propagate as exceptions.
RunResult run(const ExperimentConfig& config, const RunOptions& options);

/// Maps exceptions to exit code 1 with a message on stderr.
int run_main(const std::filesystem::path& config_path, const RunOptions& options);

/// Long-format plot tables with columns x,y,series.
void emit_plot_data(const ValueSurface& surface, const std::filesystem::path& file);
void emit_plot_data(const ConvergenceReport& report, const std::filesystem::path& file);
/// Leader mean at t = 0 against the single-investor mean (relative concerns switched off).
void emit_leader_mean_overlay(const Market& market, const PdeGridSpec& grid,
                              const std::filesystem::path& file);

/// Strategy identities under parameter degeneration, each with its largest deviation.
std::vector<ClaimResult> reduction_checks(const ModelParams& base, const PdeGridSpec& grid);

}  // namespace stackelberg
