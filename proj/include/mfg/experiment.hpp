#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mfg/dpi.hpp"
#include "mfg/error.hpp"
#include "mfg/fdsolver.hpp"
#include "mfg/grid.hpp"
#include "mfg/io.hpp"
#include "mfg/metrics.hpp"
#include "mfg/problem.hpp"

namespace mfg {

inline constexpr const char* kVersion = "1.0.0";

/// A parsed flat key=value experiment configuration.  `raw` preserves the
/// file's keys in order for the manifest echo; typed fields hold the
/// interpreted values.  Optional fields fall back to per-problem defaults.
struct ExperimentConfig {
    std::vector<std::pair<std::string, std::string>> raw;

    std::string problem = "lq";
    std::string solver = "dpi";  // dpi | pi_fd | fixed_point
    int dim = -1;
    std::optional<double> gamma, nu;
    bool clamp_rho0 = false;
    double policy_clamp = 1e3;

    // finite-difference solvers
    int grid_I = 200, grid_N = 200;
    FDConfig fd;

    // deep policy iteration
    std::optional<int> iters, batch_interior, batch_boundary, inner_steps, eval_every;
    std::optional<double> lr, weight_decay, skip_weight;
    std::optional<std::vector<int>> rho_hidden, phi_hidden, q_hidden;
    std::optional<std::string> rho_activation, phi_activation, q_activation, rho_head;

    std::string reference = "none";  // none | analytic | fixed_point
    int ref_I = 50, ref_N = 50;      // fixed-point reference grid
    int eval_I = 100, eval_N = 99;   // evaluation grid (100 x 100 nodes by default)

    std::string out_dir = "out";
    std::uint64_t seed = 1;
    bool deterministic = false;
    int threads = 0;  // 0: resolve from MFG_THREADS, default 1
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
    }
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        unsigned long long r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + v + "'");
    }
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
}

inline std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(to_int(key, trim(tok)));
    if (out.empty()) throw ConfigError("config key '" + key + "': expected comma-separated widths");
    return out;
}

} // namespace detail

/// Parses a flat key=value configuration.  Blank lines and lines starting
/// with '#' are ignored; unknown keys are rejected so typos surface early.
inline ExperimentConfig parse_config_text(const std::string& text) {
    using detail::to_bool;
    using detail::to_double;
    using detail::to_int;
    using detail::to_int_list;
    using detail::to_u64;
    ExperimentConfig c;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#') continue;
        auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line is not key=value: '" + s + "'");
        std::string key = detail::trim(s.substr(0, eq));
        std::string val = detail::trim(s.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line has empty key: '" + s + "'");
        c.raw.emplace_back(key, val);

        if (key == "problem") c.problem = val;
        else if (key == "solver") c.solver = val;
        else if (key == "dim") c.dim = to_int(key, val);
        else if (key == "gamma") c.gamma = to_double(key, val);
        else if (key == "nu") c.nu = to_double(key, val);
        else if (key == "clamp_rho0") c.clamp_rho0 = to_bool(key, val);
        else if (key == "policy_clamp") c.policy_clamp = to_double(key, val);
        else if (key == "grid_I") c.grid_I = to_int(key, val);
        else if (key == "grid_N") c.grid_N = to_int(key, val);
        else if (key == "pi_iters") c.fd.K = to_int(key, val);
        else if (key == "linear_tol") c.fd.linear_tol = to_double(key, val);
        else if (key == "max_linear_iters") c.fd.max_linear_iters = to_int(key, val);
        else if (key == "fp_damping") c.fd.fp_damping = to_double(key, val);
        else if (key == "fp_tol") c.fd.fp_tol = to_double(key, val);
        else if (key == "fp_max_iters") c.fd.fp_max_iters = to_int(key, val);
        else if (key == "iters") c.iters = to_int(key, val);
        else if (key == "batch_interior") c.batch_interior = to_int(key, val);
        else if (key == "batch_boundary") c.batch_boundary = to_int(key, val);
        else if (key == "inner_steps") c.inner_steps = to_int(key, val);
        else if (key == "lr") c.lr = to_double(key, val);
        else if (key == "weight_decay") c.weight_decay = to_double(key, val);
        else if (key == "skip_weight") c.skip_weight = to_double(key, val);
        else if (key == "eval_every") c.eval_every = to_int(key, val);
        else if (key == "rho_hidden") c.rho_hidden = to_int_list(key, val);
        else if (key == "phi_hidden") c.phi_hidden = to_int_list(key, val);
        else if (key == "q_hidden") c.q_hidden = to_int_list(key, val);
        else if (key == "rho_activation") c.rho_activation = val;
        else if (key == "phi_activation") c.phi_activation = val;
        else if (key == "q_activation") c.q_activation = val;
        else if (key == "rho_head") c.rho_head = val;
        else if (key == "reference") c.reference = val;
        else if (key == "ref_I") c.ref_I = to_int(key, val);
        else if (key == "ref_N") c.ref_N = to_int(key, val);
        else if (key == "eval_I") c.eval_I = to_int(key, val);
        else if (key == "eval_N") c.eval_N = to_int(key, val);
        else if (key == "out_dir") c.out_dir = val;
        else if (key == "seed") c.seed = to_u64(key, val);
        else if (key == "deterministic") c.deterministic = to_bool(key, val);
        else if (key == "threads") c.threads = to_int(key, val);
        else throw ConfigError("unknown config key '" + key + "'");
    }
    return c;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_config_text(buf.str());
}

/// Text table of the problem presets.
inline std::string list_problems_table() {
    std::ostringstream os;
    os << "name      kind         default_d  domain            T    nu\n";
    os << "lq        SeparableLQ  1          [-2,2]^d          1    1\n";
    os << "example1  Congestion1  2          [0,1]^d           1    0.3\n";
    os << "example2  Congestion2  2          [0,1]^d           1    0.3\n";
    os << "traffic   TrafficFlow  1          [0,1] periodic    1    0.1\n";
    return os.str();
}

namespace detail {

inline int resolve_threads(const ExperimentConfig& c) {
    if (c.deterministic) return 1;
    if (c.threads > 0) return c.threads;
    if (const char* env = std::getenv("MFG_THREADS")) {
        std::string v(env);
        try {
            std::size_t pos = 0;
            int t = std::stoi(v, &pos);
            if (pos != v.size() || t < 1) throw std::invalid_argument("");
            return t;
        } catch (...) {
            throw ConfigError("MFG_THREADS must be a positive integer, got '" + v + "'");
        }
    }
    return 1;
}

inline MFGProblem build_problem(const ExperimentConfig& c) {
    MFGProblem pb = make_problem(c.problem, c.dim);
    if (c.gamma) pb.gamma = *c.gamma;
    if (c.nu) pb.nu = *c.nu;
    pb.clamp_rho0 = c.clamp_rho0;
    pb.policy_clamp = c.policy_clamp;
    return pb;
}

inline TrainConfig build_train_config(const ExperimentConfig& c, const MFGProblem& pb,
                                      int threads) {
    TrainConfig t = default_train_config(pb);
    if (c.iters) t.outer_iters = *c.iters;
    if (c.batch_interior) t.interior_batch = *c.batch_interior;
    if (c.batch_boundary) t.boundary_batch = *c.batch_boundary;
    if (c.inner_steps) t.inner_steps = *c.inner_steps;
    if (c.lr) t.lr = *c.lr;
    if (c.weight_decay) t.weight_decay = *c.weight_decay;
    if (c.eval_every) t.eval_every = *c.eval_every;
    if (c.rho_hidden) t.density_spec.hidden = *c.rho_hidden;
    if (c.phi_hidden) t.value_spec.hidden = *c.phi_hidden;
    if (c.q_hidden) t.policy_spec.hidden = *c.q_hidden;
    if (c.rho_activation) t.density_spec.activation = activation_from_name(*c.rho_activation);
    if (c.phi_activation) t.value_spec.activation = activation_from_name(*c.phi_activation);
    if (c.q_activation) t.policy_spec.activation = activation_from_name(*c.q_activation);
    if (c.rho_head) {
        if (*c.rho_head == "softplus") t.density_spec.output_transform = OutputTransform::Softplus;
        else if (*c.rho_head == "identity") t.density_spec.output_transform = OutputTransform::Identity;
        else throw ConfigError("rho_head must be softplus|identity");
    }
    if (c.skip_weight) {
        t.density_spec.skip_weight = *c.skip_weight;
        t.value_spec.skip_weight = *c.skip_weight;
        t.policy_spec.skip_weight = *c.skip_weight;
    }
    t.seed = c.seed;
    t.threads = threads;
    return t;
}

inline void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& c,
                           const MFGProblem& pb, int threads, double wall_seconds,
                           const std::vector<std::string>& artifacts) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto& [k, v] : c.raw) cfg[k] = v;
    j["config"] = cfg;
    j["problem"] = {{"name", pb.name},
                    {"kind", kind_name(pb.kind)},
                    {"d", pb.d},
                    {"nu", pb.nu},
                    {"gamma", pb.gamma},
                    {"domain", {pb.lo, pb.hi}},
                    {"T", pb.T}};
    j["solver"] = c.solver;
    j["seed"] = c.seed;
    j["deterministic"] = c.deterministic;
    j["threads"] = threads;
    j["versions"] = {{"mfgsolve", kVersion},
                     {"compiler", __VERSION__},
                     {"cxx_standard", static_cast<int>(__cplusplus)}};
    j["wall_time_seconds"] = wall_seconds;
    j["artifacts"] = artifacts;
    j["status"] = "ok";
    std::ofstream f(dir / "manifest.json");
    if (!f) throw ConfigError("cannot open for writing: " + (dir / "manifest.json").string());
    f << j.dump(2) << "\n";
}

} // namespace detail

/// Runs one experiment end to end and writes history.csv, solution.csv and
/// manifest.json (plus network checkpoints for DPI runs) into out_dir.
/// Throws ConfigError on invalid configuration (exit code 1 at the CLI) and
/// SolverError on numerical failure (exit code 2).
inline void run_experiment(const ExperimentConfig& c) {
    auto t0 = std::chrono::steady_clock::now();
    if (c.grid_I < 2 || c.grid_N < 1 || c.eval_I < 2 || c.eval_N < 1 || c.ref_I < 2 ||
        c.ref_N < 1)
        throw ConfigError("grid sizes must satisfy I >= 2 and N >= 1");
    MFGProblem pb = detail::build_problem(c);
    const int threads = detail::resolve_threads(c);

    std::filesystem::path dir(c.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + c.out_dir + "': " + ec.message());

    std::vector<HistoryRow> rows;
    std::vector<std::string> artifacts = {"history.csv", "solution.csv", "manifest.json"};

    if (c.solver == "pi_fd" || c.solver == "fixed_point") {
        if (pb.d > 2)
            throw ConfigError(c.solver + " supports d <= 2 only (got d=" + std::to_string(pb.d) + ")");
        pb.boundary = Boundary::Periodic;  // the FD stencils are periodic
        SpaceTimeGrid g = uniform_grid(pb.d, pb.lo, pb.hi, pb.T, c.grid_I, c.grid_N,
                                       Boundary::Periodic);
        Solution sol;
        if (c.solver == "pi_fd") {
            GridField q0(g, g.d, 0.0);
            Solution ref;
            const Solution* refp = nullptr;
            if (c.reference == "analytic") {
                ref = sample_analytic(pb, g);
                refp = &ref;
            } else if (c.reference == "fixed_point") {
                ref = run_fixed_point(pb, g, c.fd);
                refp = &ref;
            } else if (c.reference != "none") {
                throw ConfigError("reference must be none|analytic|fixed_point");
            }
            PIResult r = run_policy_iteration(pb, g, c.fd, q0, refp);
            sol = std::move(r.solution);
            for (std::size_t k = 0; k < r.history.change_rho.size(); ++k) {
                HistoryRow row;
                row.iter = static_cast<long>(k);
                if (refp) {
                    row.linf_rho = r.history.ref_rho[k];
                    row.linf_phi = r.history.ref_phi[k];
                    row.linf_q = r.history.ref_q[k];
                } else {
                    row.linf_rho = r.history.change_rho[k];
                    row.linf_phi = r.history.change_phi[k];
                    row.linf_q = r.history.change_q[k];
                }
                rows.push_back(row);
            }
        } else {
            std::vector<double> changes;
            sol = run_fixed_point(pb, g, c.fd, &changes);
            for (std::size_t k = 0; k < changes.size(); ++k) {
                HistoryRow row;
                row.iter = static_cast<long>(k);
                row.linf_rho = changes[k];
                rows.push_back(row);
            }
        }
        write_history_csv((dir / "history.csv").string(), rows);
        write_solution_csv((dir / "solution.csv").string(), sol);
    } else if (c.solver == "dpi") {
        TrainConfig tc = detail::build_train_config(c, pb, threads);
        DPIReference ref;
        Solution fd_ref;
        if (c.reference == "analytic") {
            if (pb.kind != HamiltonianKind::SeparableLQ)
                throw ConfigError("analytic reference exists only for the lq problem");
            if (pb.d > 2)
                throw ConfigError("analytic reference evaluation grid supports d <= 2");
            ref.kind = DPIReference::Kind::Analytic;
            ref.eval_grid = uniform_grid(pb.d, pb.lo, pb.hi, pb.T, c.eval_I, c.eval_N,
                                         Boundary::SampledBox);
        } else if (c.reference == "fixed_point") {
            if (pb.d > 2) throw ConfigError("fixed_point reference supports d <= 2");
            SpaceTimeGrid rg = uniform_grid(pb.d, pb.lo, pb.hi, pb.T, c.ref_I, c.ref_N,
                                            Boundary::Periodic);
            MFGProblem fd_pb = pb;
            fd_pb.boundary = Boundary::Periodic;
            fd_ref = run_fixed_point(fd_pb, rg, c.fd);
            ref.kind = DPIReference::Kind::FixedPoint;
            ref.fd = &fd_ref;
        } else if (c.reference != "none") {
            throw ConfigError("reference must be none|analytic|fixed_point");
        }

        auto [state, hist] = dpi_train(pb, tc, ref);

        std::size_t e = 0;
        for (std::size_t i = 0; i < hist.loss_fp.size(); ++i) {
            HistoryRow row;
            row.iter = static_cast<long>(i);
            row.loss_fp = hist.loss_fp[i];
            row.loss_hjb = hist.loss_hjb[i];
            row.loss_policy = hist.loss_policy[i];
            if (e < hist.eval_iters.size() && hist.eval_iters[e] == static_cast<long>(i)) {
                row.linf_rho = hist.linf_rho[e];
                row.linf_phi = hist.linf_phi[e];
                row.linf_q = hist.linf_q[e];
                row.relerr_rho = hist.relerr_rho[e];
                row.relerr_phi = hist.relerr_phi[e];
                ++e;
            }
            rows.push_back(row);
        }
        write_history_csv((dir / "history.csv").string(), rows);

        // sample the trained networks for the solution dump (kept to d <= 2;
        // a dense grid dump is not meaningful in high dimension)
        if (pb.d <= 2) {
            SpaceTimeGrid out_grid =
                ref.kind == DPIReference::Kind::FixedPoint
                    ? ref.fd->rho.grid()
                    : uniform_grid(pb.d, pb.lo, pb.hi, pb.T, pb.d == 1 ? c.eval_I : 50,
                                   pb.d == 1 ? c.eval_N : 50, Boundary::SampledBox);
            Solution net = sample_networks(state, out_grid);
            write_solution_csv((dir / "solution.csv").string(), net);

            if (ref.kind == DPIReference::Kind::Analytic) {
                Solution net_eval = sample_networks(state, ref.eval_grid);
                Solution exact = sample_analytic(pb, ref.eval_grid);
                auto sr = relative_error_per_slice(net_eval.rho, exact.rho);
                auto sp = relative_error_per_slice(net_eval.phi, exact.phi);
                std::ofstream sf(dir / "relerr_slices.csv");
                sf << "t,relerr_rho,relerr_phi\n";
                for (std::size_t n = 0; n < sr.size(); ++n)
                    sf << fmt17(ref.eval_grid.time_node(static_cast<int>(n))) << ',' << fmt17(sr[n])
                       << ',' << fmt17(sp[n]) << "\n";
                artifacts.push_back("relerr_slices.csv");
            }
        } else {
            artifacts.erase(std::find(artifacts.begin(), artifacts.end(), "solution.csv"));
        }

        save_checkpoint((dir / "checkpoint_rho.txt").string(), state.density_spec,
                        state.density_params);
        save_checkpoint((dir / "checkpoint_phi.txt").string(), state.value_spec,
                        state.value_params);
        save_checkpoint((dir / "checkpoint_q.txt").string(), state.policy_spec,
                        state.policy_params);
        artifacts.push_back("checkpoint_rho.txt");
        artifacts.push_back("checkpoint_phi.txt");
        artifacts.push_back("checkpoint_q.txt");
    } else {
        throw ConfigError("unknown solver '" + c.solver + "' (expected dpi|pi_fd|fixed_point)");
    }

    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    detail::write_manifest(dir, c, pb, threads, wall, artifacts);
}

} // namespace mfg
