#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfg/error.hpp"
#include "mfg/grid.hpp"
#include "mfg/net.hpp"

namespace mfg {

/// Full-precision decimal encoding: 17 significant digits round-trip any
/// double exactly.
inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// One history.csv row; NaN marks an absent metric (written as an empty cell).
struct HistoryRow {
    long iter = 0;
    double loss_fp = std::nan("");
    double loss_hjb = std::nan("");
    double loss_policy = std::nan("");
    double linf_rho = std::nan("");
    double linf_phi = std::nan("");
    double linf_q = std::nan("");
    double relerr_rho = std::nan("");
    double relerr_phi = std::nan("");
};

inline const char* history_header() {
    return "iter,loss_fp,loss_hjb,loss_policy,linf_rho,linf_phi,linf_q,relerr_rho,relerr_phi";
}

inline void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot open for writing: " + path);
    f << history_header() << "\n";
    auto cell = [](double v) { return std::isfinite(v) ? fmt17(v) : std::string(); };
    for (const HistoryRow& r : rows) {
        f << r.iter << ',' << cell(r.loss_fp) << ',' << cell(r.loss_hjb) << ','
          << cell(r.loss_policy) << ',' << cell(r.linf_rho) << ',' << cell(r.linf_phi) << ','
          << cell(r.linf_q) << ',' << cell(r.relerr_rho) << ',' << cell(r.relerr_phi) << "\n";
    }
    if (!f) throw ConfigError("write failed: " + path);
}

/// Generic CSV ingestion for plotting: numeric cells, empty cells become NaN.
/// Lines starting with '#' are skipped.
struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return static_cast<int>(i);
        return -1;
    }
};

inline CsvTable read_csv_table(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open: " + path);
    CsvTable t;
    std::string line;
    bool have_header = false;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::string cur;
        std::stringstream ss(line);
        while (std::getline(ss, cur, ',')) cells.push_back(cur);
        if (line.back() == ',') cells.push_back("");
        if (!have_header) {
            t.columns = cells;
            have_header = true;
            continue;
        }
        std::vector<double> row(t.columns.size(), std::nan(""));
        for (std::size_t i = 0; i < cells.size() && i < row.size(); ++i) {
            if (cells[i].empty()) continue;
            try {
                row[i] = std::stod(cells[i]);
            } catch (...) {
                throw ConfigError("non-numeric cell '" + cells[i] + "' in " + path);
            }
        }
        t.rows.push_back(std::move(row));
    }
    if (!have_header) throw ConfigError("empty CSV: " + path);
    return t;
}

/// solution.csv: a commented grid-metadata line, a column header, then one
/// row per (time node, space node) in storage order.
inline void write_solution_csv(const std::string& path, const Solution& sol) {
    const SpaceTimeGrid& g = sol.rho.grid();
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot open for writing: " + path);
    f << "# grid d=" << g.d << " lo=" << fmt17(g.lo) << " hi=" << fmt17(g.hi) << " I=" << g.I
      << " N=" << g.N << " T=" << fmt17(g.T)
      << " boundary=" << (g.boundary == Boundary::Periodic ? "periodic" : "box") << "\n";
    f << "t";
    for (int k = 0; k < g.d; ++k) f << ",x" << k;
    f << ",rho,phi";
    for (int k = 0; k < g.d; ++k) f << ",q" << k;
    f << "\n";
    std::vector<double> x(g.d);
    for (int n = 0; n <= g.N; ++n) {
        for (std::int64_t i = 0; i < g.space_nodes(); ++i) {
            node_coords(g, i, x);
            f << fmt17(g.time_node(n));
            for (int k = 0; k < g.d; ++k) f << ',' << fmt17(x[k]);
            f << ',' << fmt17(sol.rho(n, i)) << ',' << fmt17(sol.phi(n, i));
            for (int k = 0; k < g.d; ++k) f << ',' << fmt17(sol.q(n, i, k));
            f << "\n";
        }
    }
    if (!f) throw ConfigError("write failed: " + path);
}

inline Solution read_solution_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("# grid ", 0) != 0)
        throw ConfigError("solution CSV missing grid metadata line: " + path);

    int d = 0, I = 0, N = 0;
    double lo = 0, hi = 0, T = 0;
    std::string boundary = "periodic";
    {
        std::stringstream ss(line.substr(7));
        std::string tok;
        while (ss >> tok) {
            auto eq = tok.find('=');
            if (eq == std::string::npos) continue;
            std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
            if (key == "d") d = std::stoi(val);
            else if (key == "lo") lo = std::stod(val);
            else if (key == "hi") hi = std::stod(val);
            else if (key == "I") I = std::stoi(val);
            else if (key == "N") N = std::stoi(val);
            else if (key == "T") T = std::stod(val);
            else if (key == "boundary") boundary = val;
        }
    }
    SpaceTimeGrid g = uniform_grid(d, lo, hi, T, I, N,
                                   boundary == "periodic" ? Boundary::Periodic
                                                          : Boundary::SampledBox);
    if (!std::getline(f, line)) throw ConfigError("solution CSV missing header: " + path);

    Solution sol;
    sol.rho = GridField(g, 1);
    sol.phi = GridField(g, 1);
    sol.q = GridField(g, g.d);
    for (int n = 0; n <= g.N; ++n) {
        for (std::int64_t i = 0; i < g.space_nodes(); ++i) {
            if (!std::getline(f, line)) throw ConfigError("solution CSV truncated: " + path);
            std::stringstream ss(line);
            std::string cell;
            std::vector<double> vals;
            while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
            std::size_t expect = 1 + g.d + 2 + g.d;
            if (vals.size() != expect) throw ConfigError("solution CSV bad row width: " + path);
            sol.rho(n, i) = vals[1 + g.d];
            sol.phi(n, i) = vals[2 + g.d];
            for (int k = 0; k < g.d; ++k) sol.q(n, i, k) = vals[3 + g.d + k];
        }
    }
    return sol;
}

inline nlohmann::ordered_json spec_to_json(const NetworkSpec& s) {
    nlohmann::ordered_json j;
    j["input_dim"] = s.input_dim;
    j["output_dim"] = s.output_dim;
    j["hidden"] = s.hidden;
    j["activation"] = activation_name(s.activation);
    j["skip_weight"] = s.skip_weight;
    j["output_transform"] = s.output_transform == OutputTransform::Softplus ? "softplus" : "identity";
    return j;
}

inline Activation activation_from_name(const std::string& name) {
    if (name == "tanh") return Activation::Tanh;
    if (name == "softplus") return Activation::Softplus;
    if (name == "sin") return Activation::Sin;
    if (name == "gelu") return Activation::Gelu;
    throw ConfigError("unknown activation '" + name + "'");
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
    NetworkSpec s;
    s.input_dim = j.at("input_dim").get<int>();
    s.output_dim = j.at("output_dim").get<int>();
    s.hidden = j.at("hidden").get<std::vector<int>>();
    s.activation = activation_from_name(j.at("activation").get<std::string>());
    s.skip_weight = j.at("skip_weight").get<double>();
    s.output_transform = j.at("output_transform").get<std::string>() == "softplus"
                             ? OutputTransform::Softplus
                             : OutputTransform::Identity;
    return s;
}

/// Checkpoint: a JSON header line with the architecture, then one parameter
/// per line in full precision.  Round-trips exactly.
inline void save_checkpoint(const std::string& path, const NetworkSpec& spec,
                            std::span<const double> params) {
    if (params.size() != parameter_count(spec))
        throw std::invalid_argument("save_checkpoint: parameter count mismatch");
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot open for writing: " + path);
    f << spec_to_json(spec).dump() << "\n";
    for (double p : params) f << fmt17(p) << "\n";
    if (!f) throw ConfigError("write failed: " + path);
}

inline std::pair<NetworkSpec, std::vector<double>> load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line)) throw ConfigError("checkpoint missing header: " + path);
    NetworkSpec spec;
    try {
        spec = spec_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("checkpoint header unreadable: " + std::string(e.what()));
    }
    std::vector<double> params;
    params.reserve(parameter_count(spec));
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        params.push_back(std::stod(line));
    }
    if (params.size() != parameter_count(spec))
        throw ConfigError("checkpoint parameter count mismatch: " + path);
    return {spec, std::move(params)};
}

} // namespace mfg
