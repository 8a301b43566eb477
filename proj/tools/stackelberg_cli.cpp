#include "stackelberg/cli.hpp"
#include "stackelberg/parallel.hpp"

#include <CLI11.hpp>

int main(int argc, char** argv) {
    CLI::App app{"Two-investor Stackelberg mean-variance experiments"};
    std::string config;
    stackelberg::RunOptions opts;
    opts.threads = stackelberg::default_threads();
    std::string out;
    std::uint64_t seed = 0;
    app.add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    auto* out_opt = app.add_option("--out", out, "output directory (overrides output_dir)");
    auto* seed_opt = app.add_option("--seed", seed, "master seed override");
    app.add_option("--threads", opts.threads, "worker threads")->check(CLI::PositiveNumber);
    app.add_flag("--dump-paths", opts.dump_paths, "write per-path CSVs (simulate)");
    CLI11_PARSE(app, argc, argv);
    if (*out_opt) opts.output_dir = out;
    if (*seed_opt) opts.seed = seed;
    return stackelberg::run_main(config, opts);
}
