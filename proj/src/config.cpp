#include "stackelberg/cli.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace stackelberg {

using nlohmann::json;

std::string to_string(Experiment e) {
    switch (e) {
        case Experiment::solve_surfaces: return "solve_surfaces";
        case Experiment::simulate: return "simulate";
        case Experiment::verify_follower: return "verify_follower";
        case Experiment::verify_leader: return "verify_leader";
        case Experiment::convergence: return "convergence";
        case Experiment::certificate: return "certificate";
        case Experiment::reduce_checks: return "reduce_checks";
    }
    return "?";
}

Experiment experiment_from_string(const std::string& name) {
    for (auto e : {Experiment::solve_surfaces, Experiment::simulate, Experiment::verify_follower,
                   Experiment::verify_leader, Experiment::convergence, Experiment::certificate,
                   Experiment::reduce_checks}) {
        if (to_string(e) == name) return e;
    }
    throw ConfigError("experiment: unknown experiment '" + name + "'");
}

namespace {

/// Reads typed fields from one JSON object and rejects unknown keys.
class Block {
public:
    Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where("") + "expected an object");
    }

    template <class T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const json& v = j_.at(key);
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw ConfigError(where(key) + "expected a number");
                out = v.get<double>();
            } else if constexpr (std::is_same_v<T, int>) {
                if (!v.is_number_integer()) throw ConfigError(where(key) + "expected an integer");
                out = v.get<int>();
            } else if constexpr (std::is_same_v<T, std::size_t> ||
                                 std::is_same_v<T, std::uint64_t>) {
                if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
                    throw ConfigError(where(key) + "expected a nonnegative integer");
                }
                out = v.get<T>();
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError(where(key) + "expected a string");
                out = v.get<std::string>();
            } else {
                if (!v.is_array()) throw ConfigError(where(key) + "expected an array");
                out = v.get<T>();
            }
        } catch (const json::exception& e) {
            throw ConfigError(where(key) + e.what());
        }
    }

    bool has(const char* key) const { return j_.contains(key); }
    void known(const char* key) { seen_.insert(key); }

    /// Throws for keys that no read() asked for.
    void finish() const {
        for (const auto& [key, _] : j_.items()) {
            if (!seen_.count(key)) throw ConfigError(where(key) + "unknown field");
        }
    }

    std::string where(const std::string& key) const {
        std::string p = path_;
        if (!key.empty()) p += p.empty() ? key : "." + key;
        return (p.empty() ? std::string("config") : p) + ": ";
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void require(bool ok, const std::string& field, const std::string& what) {
    if (!ok) throw ConfigError(field + ": " + what);
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    ExperimentConfig c;
    Block top(root, "");
    std::string experiment;
    top.read("experiment", experiment);
    if (!top.has("experiment")) throw ConfigError("experiment: missing");
    c.experiment = experiment_from_string(experiment);
    top.read("output_dir", c.output_dir);

    static const json empty = json::object();
    auto sub = [&](const char* key) -> const json& {
        return root.contains(key) ? root.at(key) : empty;
    };
    for (const char* key : {"model", "pde", "simulation", "verify"}) top.known(key);

    Block model(sub("model"), "model");
    auto& m = c.model;
    model.read("mu1", m.mu1);
    model.read("mu2", m.mu2);
    model.read("sigma", m.sigma);
    model.read("r", m.r);
    model.read("T", m.T);
    model.read("gamma1", m.gamma1);
    model.read("gamma2", m.gamma2);
    model.read("lambda1", m.lambda1);
    model.read("lambda2", m.lambda2);
    model.read("lambda0", m.lambda0);
    model.finish();

    Block pde(sub("pde"), "pde");
    pde.read("n_time", c.pde.n_time);
    pde.read("n_space", c.pde.n_space);
    std::string scheme = to_string(c.pde.scheme);
    pde.read("scheme", scheme);
    try {
        c.pde.scheme = scheme_from_string(scheme);
    } catch (const DomainError& e) {
        throw ConfigError(std::string("pde.scheme: ") + e.what());
    }
    pde.finish();

    Block sim(sub("simulation"), "simulation");
    auto& s = c.simulation;
    sim.read("time_grid", s.time_grid);
    sim.read("n_intervals", s.n_intervals);
    sim.read("substeps", s.substeps);
    sim.read("n_paths", s.n_paths);
    sim.read("x1_0", s.x1_0);
    sim.read("x2_0", s.x2_0);
    sim.read("p0", s.p0);
    if (!sim.has("seed")) throw ConfigError("simulation.seed: missing (seeds are never drawn from the clock)");
    sim.read("seed", s.seed);
    sim.finish();

    Block ver(sub("verify"), "verify");
    auto& v = c.verify;
    ver.read("grid_intervals", v.grid_intervals);
    ver.read("fine_steps", v.fine_steps);
    ver.read("window_intervals", v.window_intervals);
    ver.read("follower_offsets", v.follower_offsets);
    ver.read("leader_mean_shifts", v.leader_mean_shifts);
    ver.read("leader_variance_scales", v.leader_variance_scales);
    ver.read("realizations", v.realizations);
    ver.read("follower_paths", v.follower_paths);
    ver.read("leader_paths", v.leader_paths);
    ver.read("convergence_intervals", v.convergence_intervals);
    ver.read("convergence_paths", v.convergence_paths);
    ver.read("certificate_intervals", v.certificate_intervals);
    ver.read("certificate_offsets", v.certificate_offsets);
    ver.read("certificate_scales", v.certificate_scales);
    ver.read("certificate_paths", v.certificate_paths);
    ver.finish();

    top.finish();
    validate(c);
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("config: cannot read " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
    const auto& m = c.model;
    const auto& s = c.simulation;
    const auto& v = c.verify;
    json j;
    j["experiment"] = to_string(c.experiment);
    j["output_dir"] = c.output_dir;
    j["model"] = {{"mu1", m.mu1},         {"mu2", m.mu2},         {"sigma", m.sigma},
                  {"r", m.r},             {"T", m.T},             {"gamma1", m.gamma1},
                  {"gamma2", m.gamma2},   {"lambda1", m.lambda1}, {"lambda2", m.lambda2},
                  {"lambda0", m.lambda0}};
    j["pde"] = {{"n_time", c.pde.n_time},
                {"n_space", c.pde.n_space},
                {"scheme", to_string(c.pde.scheme)}};
    j["simulation"] = {{"time_grid", s.time_grid}, {"n_intervals", s.n_intervals},
                       {"substeps", s.substeps},   {"n_paths", s.n_paths},
                       {"x1_0", s.x1_0},           {"x2_0", s.x2_0},
                       {"p0", s.p0},               {"seed", s.seed}};
    j["verify"] = {{"grid_intervals", v.grid_intervals},
                   {"fine_steps", v.fine_steps},
                   {"window_intervals", v.window_intervals},
                   {"follower_offsets", v.follower_offsets},
                   {"leader_mean_shifts", v.leader_mean_shifts},
                   {"leader_variance_scales", v.leader_variance_scales},
                   {"realizations", v.realizations},
                   {"follower_paths", v.follower_paths},
                   {"leader_paths", v.leader_paths},
                   {"convergence_intervals", v.convergence_intervals},
                   {"convergence_paths", v.convergence_paths},
                   {"certificate_intervals", v.certificate_intervals},
                   {"certificate_offsets", v.certificate_offsets},
                   {"certificate_scales", v.certificate_scales},
                   {"certificate_paths", v.certificate_paths}};
    return j.dump(2);
}

void validate(const ExperimentConfig& c) {
    try {
        validate(c.model);
    } catch (const DomainError& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    try {
        c.pde.validate();
    } catch (const DomainError& e) {
        throw ConfigError(std::string("pde: ") + e.what());
    }
    const auto& s = c.simulation;
    require(s.p0 > 0.0 && s.p0 < 1.0, "simulation.p0", "must lie in (0,1)");
    require(std::isfinite(s.x1_0) && std::isfinite(s.x2_0), "simulation.x1_0", "wealth must be finite");
    require(s.substeps >= 0, "simulation.substeps", "must be nonnegative");
    require(s.n_paths >= 2, "simulation.n_paths", "must be at least 2");
    if (s.time_grid.empty()) {
        require(s.n_intervals >= 1, "simulation.n_intervals", "must be positive");
    } else {
        TimeGrid g{s.time_grid, 1};
        try {
            g.validate(c.model.T);
        } catch (const DomainError& e) {
            throw ConfigError(std::string("simulation.time_grid: ") + e.what());
        }
    }
    const auto& v = c.verify;
    require(v.fine_steps >= 1, "verify.fine_steps", "must be positive");
    require(v.grid_intervals >= 1, "verify.grid_intervals", "must be positive");
    require(!v.window_intervals.empty(), "verify.window_intervals", "must not be empty");
    for (int w : v.window_intervals) {
        require(w >= 1 && w <= v.grid_intervals, "verify.window_intervals",
                "entries must lie in [1, grid_intervals]");
    }
    for (double sc : v.leader_variance_scales) {
        require(sc > 0.0, "verify.leader_variance_scales", "entries must be positive");
    }
    for (double sc : v.certificate_scales) {
        require(sc > 0.0, "verify.certificate_scales", "entries must be positive");
    }
    require(v.realizations >= 1, "verify.realizations", "must be positive");
    require(v.follower_paths >= 2 && v.leader_paths >= 2 && v.convergence_paths >= 2 &&
                v.certificate_paths >= 2,
            "verify", "path counts must be at least 2");
    for (int n : v.convergence_intervals) {
        require(n >= 1 && v.fine_steps % n == 0, "verify.convergence_intervals",
                "each entry must divide fine_steps");
    }
    require(v.certificate_intervals >= 1 && v.fine_steps % v.certificate_intervals == 0,
            "verify.certificate_intervals", "must divide fine_steps");
}

std::string config_hash(const ExperimentConfig& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : serialize_config(config)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

TimeGrid simulation_grid(const ExperimentConfig& config) {
    const auto& s = config.simulation;
    const double T = config.model.T;
    TimeGrid g;
    if (s.time_grid.empty()) {
        g = s.substeps > 0 ? TimeGrid::uniform(T, s.n_intervals, s.substeps)
                           : TimeGrid::uniform_fine(T, s.n_intervals, config.verify.fine_steps);
    } else {
        g.nodes = s.time_grid;
        if (s.substeps > 0) {
            g.substeps = s.substeps;
        } else {
            const double target = T / config.verify.fine_steps;
            g.substeps = std::max(1, static_cast<int>(std::ceil(g.mesh() / target - 1e-9)));
        }
    }
    g.validate(T);
    return g;
}

}  // namespace stackelberg
