// Artifact formats, configuration parsing, the experiment runner, SVG plot
// emission, and the installed command-line binary (exercised through
// std::system with exit-code checks).

#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <json.hpp>

#include "mfg/error.hpp"
#include "mfg/experiment.hpp"
#include "mfg/io.hpp"
#include "mfg/svgplot.hpp"

using namespace mfg;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("mfg_io_cli_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
}

int run_cmd(const std::string& cmd) {
    int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    REQUIRE(WIFEXITED(rc));
    return WEXITSTATUS(rc);
}

} // namespace

TEST_CASE("seventeen significant digits round-trip doubles exactly") {
    std::mt19937_64 gen(3);
    std::vector<double> vals = {0.0, 1.0 / 3.0, -0.1, 1e-300, 6.02214076e23, -1.0000000000000002};
    for (int i = 0; i < 50; ++i)
        vals.push_back(std::ldexp(static_cast<double>(gen() >> 11) * 0x1.0p-53 - 0.5,
                                  static_cast<int>(gen() % 40) - 20));
    for (double v : vals) REQUIRE(std::stod(fmt17(v)) == v);
}

TEST_CASE("history files write absent metrics as empty cells") {
    fs::path dir = fresh_dir("history");
    std::vector<HistoryRow> rows(3);
    rows[0].iter = 0;
    rows[0].loss_fp = 0.5;
    rows[0].relerr_rho = 0.25;
    rows[1].iter = 1;
    rows[1].loss_fp = 0.375;
    rows[2].iter = 2;
    rows[2].loss_fp = 0.25;
    rows[2].linf_q = 1.5;
    write_history_csv((dir / "h.csv").string(), rows);

    std::string text = slurp(dir / "h.csv");
    REQUIRE(text.rfind("iter,loss_fp,loss_hjb,loss_policy,linf_rho,linf_phi,linf_q,"
                       "relerr_rho,relerr_phi\n",
                       0) == 0);
    REQUIRE(text.find("\n1,0.375,,,,,,,\n") != std::string::npos);

    CsvTable t = read_csv_table((dir / "h.csv").string());
    REQUIRE(t.columns.size() == 9);
    REQUIRE(t.rows.size() == 3);
    REQUIRE(t.rows[0][t.column("relerr_rho")] == 0.25);
    REQUIRE(std::isnan(t.rows[1][t.column("relerr_rho")]));
    REQUIRE(t.rows[2][t.column("linf_q")] == 1.5);
}

TEST_CASE("CSV ingestion rejects junk") {
    fs::path dir = fresh_dir("csv");
    REQUIRE_THROWS_AS(read_csv_table((dir / "absent.csv").string()), ConfigError);
    spit(dir / "empty.csv", "");
    REQUIRE_THROWS_AS(read_csv_table((dir / "empty.csv").string()), ConfigError);
    spit(dir / "bad.csv", "a,b\n1,two\n");
    REQUIRE_THROWS_AS(read_csv_table((dir / "bad.csv").string()), ConfigError);
    spit(dir / "ok.csv", "# comment\na,b\n\n1,2\n");
    CsvTable t = read_csv_table((dir / "ok.csv").string());
    REQUIRE(t.rows.size() == 1);
    REQUIRE(t.rows[0][1] == 2.0);
}

TEST_CASE("solution files round-trip bitwise") {
    fs::path dir = fresh_dir("solution");
    SpaceTimeGrid g = uniform_grid(2, -1.0, 1.0, 0.5, 4, 3, Boundary::Periodic);
    Solution s;
    s.rho = GridField(g, 1);
    s.phi = GridField(g, 1);
    s.q = GridField(g, 2);
    std::mt19937_64 gen(8);
    auto rnd = [&] { return static_cast<double>(gen() >> 11) * 0x1.0p-53 - 0.5; };
    for (int n = 0; n <= g.N; ++n)
        for (std::int64_t i = 0; i < g.space_nodes(); ++i) {
            s.rho(n, i) = rnd();
            s.phi(n, i) = rnd();
            s.q(n, i, 0) = rnd();
            s.q(n, i, 1) = rnd();
        }
    write_solution_csv((dir / "s.csv").string(), s);

    std::string head;
    {
        std::ifstream f(dir / "s.csv");
        std::getline(f, head);
    }
    REQUIRE(head == "# grid d=2 lo=-1 hi=1 I=4 N=3 T=0.5 boundary=periodic");

    Solution r = read_solution_csv((dir / "s.csv").string());
    REQUIRE(r.rho.grid().I == 4);
    REQUIRE(r.rho.grid().boundary == Boundary::Periodic);
    for (int n = 0; n <= g.N; ++n)
        for (std::int64_t i = 0; i < g.space_nodes(); ++i) {
            REQUIRE(r.rho(n, i) == s.rho(n, i));
            REQUIRE(r.phi(n, i) == s.phi(n, i));
            REQUIRE(r.q(n, i, 0) == s.q(n, i, 0));
            REQUIRE(r.q(n, i, 1) == s.q(n, i, 1));
        }

    spit(dir / "trunc.csv", slurp(dir / "s.csv").substr(0, 200));
    REQUIRE_THROWS_AS(read_solution_csv((dir / "trunc.csv").string()), ConfigError);
    spit(dir / "nohdr.csv", "t,x0,rho,phi,q0\n");
    REQUIRE_THROWS_AS(read_solution_csv((dir / "nohdr.csv").string()), ConfigError);
}

TEST_CASE("checkpoints restore the architecture and every parameter") {
    fs::path dir = fresh_dir("ckpt");
    NetworkSpec spec;
    spec.input_dim = 3;
    spec.hidden = {5, 5};
    spec.output_dim = 2;
    spec.activation = Activation::Gelu;
    spec.skip_weight = 0.25;
    spec.output_transform = OutputTransform::Softplus;
    std::vector<double> params = init_network(spec, 77);
    params[3] = -1.0 / 3.0;
    save_checkpoint((dir / "c.txt").string(), spec, params);

    auto [spec2, params2] = load_checkpoint((dir / "c.txt").string());
    REQUIRE(spec2.input_dim == 3);
    REQUIRE(spec2.hidden == std::vector<int>{5, 5});
    REQUIRE(spec2.output_dim == 2);
    REQUIRE(spec2.activation == Activation::Gelu);
    REQUIRE(spec2.skip_weight == 0.25);
    REQUIRE(spec2.output_transform == OutputTransform::Softplus);
    REQUIRE(params2 == params);

    std::vector<double> wrong(parameter_count(spec) - 1, 0.0);
    REQUIRE_THROWS_AS(save_checkpoint((dir / "w.txt").string(), spec, wrong),
                      std::invalid_argument);
    spit(dir / "hdr.txt", "not json\n");
    REQUIRE_THROWS_AS(load_checkpoint((dir / "hdr.txt").string()), ConfigError);
    REQUIRE_THROWS_AS(activation_from_name("relu"), ConfigError);
}

TEST_CASE("flat key=value configs parse with strict keys and types") {
    const std::string text = R"(# an experiment
problem = traffic
solver = pi_fd
grid_I = 64
grid_N = 32
pi_iters = 12
linear_tol = 1e-11
reference = fixed_point
fp_damping = 0.4
seed = 11
deterministic = yes
rho_hidden = 100, 50
clamp_rho0 = off
)";
    ExperimentConfig c = parse_config_text(text);
    REQUIRE(c.problem == "traffic");
    REQUIRE(c.solver == "pi_fd");
    REQUIRE(c.grid_I == 64);
    REQUIRE(c.grid_N == 32);
    REQUIRE(c.fd.K == 12);
    REQUIRE(c.fd.linear_tol == 1e-11);
    REQUIRE(c.fd.fp_damping == 0.4);
    REQUIRE(c.reference == "fixed_point");
    REQUIRE(c.seed == 11);
    REQUIRE(c.deterministic);
    REQUIRE_FALSE(c.clamp_rho0);
    REQUIRE(c.rho_hidden == std::vector<int>{100, 50});
    REQUIRE(c.raw.size() == 12);
    REQUIRE(c.raw[0] == std::pair<std::string, std::string>{"problem", "traffic"});

    REQUIRE_THROWS_AS(parse_config_text("typo_key = 3\n"), ConfigError);
    REQUIRE_THROWS_AS(parse_config_text("grid_I = many\n"), ConfigError);
    REQUIRE_THROWS_AS(parse_config_text("deterministic = maybe\n"), ConfigError);
    REQUIRE_THROWS_AS(parse_config_text("lr = fast\n"), ConfigError);
    REQUIRE_THROWS_AS(parse_config_text("just a line\n"), ConfigError);
    REQUIRE_THROWS_AS(parse_config_text("= 3\n"), ConfigError);
    REQUIRE_THROWS_AS(parse_config_text("rho_hidden = \n"), ConfigError);
    REQUIRE_THROWS_AS(parse_config_file("/nonexistent/config.txt"), ConfigError);
}

TEST_CASE("the problem table lists every preset") {
    std::string t = list_problems_table();
    for (const char* name : {"lq", "example1", "example2", "traffic"})
        REQUIRE(t.find(name) != std::string::npos);
}

TEST_CASE("thread resolution prefers determinism, then config, then the environment") {
    ExperimentConfig c;
    c.deterministic = true;
    c.threads = 8;
    REQUIRE(mfg::detail::resolve_threads(c) == 1);
    c.deterministic = false;
    REQUIRE(mfg::detail::resolve_threads(c) == 8);
    c.threads = 0;
    unsetenv("MFG_THREADS");
    REQUIRE(mfg::detail::resolve_threads(c) == 1);
    setenv("MFG_THREADS", "3", 1);
    REQUIRE(mfg::detail::resolve_threads(c) == 3);
    setenv("MFG_THREADS", "abc", 1);
    REQUIRE_THROWS_AS(mfg::detail::resolve_threads(c), ConfigError);
    setenv("MFG_THREADS", "0", 1);
    REQUIRE_THROWS_AS(mfg::detail::resolve_threads(c), ConfigError);
    unsetenv("MFG_THREADS");
}

namespace {

ExperimentConfig tiny_dpi_config(const fs::path& out) {
    ExperimentConfig c = parse_config_text(R"(problem = lq
dim = 1
solver = dpi
iters = 6
eval_every = 3
batch_interior = 8
batch_boundary = 8
rho_hidden = 8
phi_hidden = 8
q_hidden = 8
reference = analytic
eval_I = 8
eval_N = 4
seed = 2
deterministic = true
)");
    c.out_dir = out.string();
    return c;
}

} // namespace

TEST_CASE("the experiment runner produces the full artifact set") {
    fs::path dir = fresh_dir("run_dpi");
    run_experiment(tiny_dpi_config(dir));

    for (const char* f : {"history.csv", "solution.csv", "manifest.json", "checkpoint_rho.txt",
                          "checkpoint_phi.txt", "checkpoint_q.txt", "relerr_slices.csv"})
        REQUIRE(fs::exists(dir / f));

    CsvTable h = read_csv_table((dir / "history.csv").string());
    REQUIRE(h.rows.size() == 6);
    REQUIRE(h.columns.size() == 9);
    int cr = h.column("relerr_rho");
    REQUIRE(std::isfinite(h.rows[0][cr]));   // eval at 0, 3 and the final iteration
    REQUIRE(std::isnan(h.rows[1][cr]));
    REQUIRE(std::isfinite(h.rows[3][cr]));
    REQUIRE(std::isfinite(h.rows[5][cr]));
    for (auto& row : h.rows) REQUIRE(std::isfinite(row[h.column("loss_fp")]));

    nlohmann::json m = nlohmann::json::parse(slurp(dir / "manifest.json"));
    REQUIRE(m["status"] == "ok");
    REQUIRE(m["problem"]["name"] == "lq");
    REQUIRE(m["problem"]["d"] == 1);
    REQUIRE(m["seed"] == 2);
    REQUIRE(m["deterministic"] == true);
    REQUIRE(m["threads"] == 1);
    REQUIRE(m["config"]["iters"] == "6");
    REQUIRE(m["versions"]["mfgsolve"] == kVersion);
    auto arts = m["artifacts"].get<std::vector<std::string>>();
    REQUIRE(std::find(arts.begin(), arts.end(), "relerr_slices.csv") != arts.end());

    auto [rspec, rparams] = load_checkpoint((dir / "checkpoint_rho.txt").string());
    REQUIRE(rspec.hidden == std::vector<int>{8});
    REQUIRE(rparams.size() == parameter_count(rspec));

    Solution sol = read_solution_csv((dir / "solution.csv").string());
    REQUIRE(sol.rho.grid().I == 8);
    REQUIRE(sol.rho.grid().N == 4);
    REQUIRE(sol.rho.grid().boundary == Boundary::SampledBox);

    CsvTable slices = read_csv_table((dir / "relerr_slices.csv").string());
    REQUIRE(slices.rows.size() == 5);
    for (auto& row : slices.rows) REQUIRE(std::isfinite(row[1]));

    SECTION("deterministic reruns reproduce history.csv byte for byte") {
        fs::path dir2 = fresh_dir("run_dpi_again");
        run_experiment(tiny_dpi_config(dir2));
        REQUIRE(slurp(dir / "history.csv") == slurp(dir2 / "history.csv"));
        REQUIRE(slurp(dir / "checkpoint_rho.txt") == slurp(dir2 / "checkpoint_rho.txt"));
    }
}

TEST_CASE("finite-difference experiments write sweep histories") {
    fs::path dir = fresh_dir("run_pi");
    ExperimentConfig c = parse_config_text(R"(problem = traffic
solver = pi_fd
grid_I = 16
grid_N = 10
pi_iters = 6
reference = fixed_point
)");
    c.out_dir = dir.string();
    run_experiment(c);

    CsvTable h = read_csv_table((dir / "history.csv").string());
    REQUIRE(h.rows.size() == 6);
    // with a reference configured the distance columns track it, and on this
    // tiny grid six sweeps already land close
    double last = h.rows.back()[h.column("linf_rho")];
    REQUIRE(std::isfinite(last));
    REQUIRE(last < 1e-3);
    REQUIRE(std::isnan(h.rows[0][h.column("loss_fp")]));

    Solution sol = read_solution_csv((dir / "solution.csv").string());
    REQUIRE(sol.rho.grid().boundary == Boundary::Periodic);
    double mass0 = 0.0, massN = 0.0;
    for (std::int64_t i = 0; i < sol.rho.grid().space_nodes(); ++i) {
        mass0 += sol.rho(0, i);
        massN += sol.rho(sol.rho.grid().N, i);
    }
    REQUIRE(massN == Approx(mass0).margin(1e-8));

    SECTION("the damped fixed-point solver is available standalone") {
        fs::path dir2 = fresh_dir("run_fp");
        ExperimentConfig c2 = parse_config_text(R"(problem = traffic
solver = fixed_point
grid_I = 16
grid_N = 10
)");
        c2.out_dir = dir2.string();
        run_experiment(c2);
        CsvTable h2 = read_csv_table((dir2 / "history.csv").string());
        REQUIRE(h2.rows.size() >= 1);
        REQUIRE(h2.rows.back()[h2.column("linf_rho")] < 1e-8);
        Solution fp = read_solution_csv((dir2 / "solution.csv").string());
        REQUIRE(linf_distance(fp.rho, sol.rho) < 1e-3);
    }
}

TEST_CASE("the experiment runner rejects inconsistent requests") {
    ExperimentConfig c;
    c.solver = "magic";
    REQUIRE_THROWS_AS(run_experiment(c), ConfigError);

    c = ExperimentConfig{};
    c.solver = "pi_fd";
    c.problem = "lq";
    c.dim = 3;
    REQUIRE_THROWS_AS(run_experiment(c), ConfigError);  // FD solvers stop at d = 2

    c = ExperimentConfig{};
    c.grid_I = 1;
    REQUIRE_THROWS_AS(run_experiment(c), ConfigError);

    c = ExperimentConfig{};
    c.problem = "traffic";
    c.solver = "dpi";
    c.reference = "analytic";  // no closed form for traffic
    REQUIRE_THROWS_AS(run_experiment(c), ConfigError);

    c = ExperimentConfig{};
    c.problem = "lq";
    c.dim = 10;
    c.solver = "dpi";
    c.reference = "fixed_point";  // reference solver cannot reach d = 10
    REQUIRE_THROWS_AS(run_experiment(c), ConfigError);

    c = ExperimentConfig{};
    c.reference = "sorcery";
    REQUIRE_THROWS_AS(run_experiment(c), ConfigError);
}

TEST_CASE("plots render from experiment artifacts") {
    fs::path dir = fresh_dir("plots");
    run_experiment(tiny_dpi_config(dir));

    emit_plot((dir / "history.csv").string(), "loss", (dir / "loss.svg").string());
    std::string svg = slurp(dir / "loss.svg");
    REQUIRE(svg.find("<svg") != std::string::npos);
    REQUIRE(svg.find("loss_hjb") != std::string::npos);

    emit_plot((dir / "history.csv").string(), "linf", (dir / "linf.svg").string());
    REQUIRE(slurp(dir / "linf.svg").find("linf_rho") != std::string::npos);

    PlotOptions sl;
    sl.time = 0.5;
    emit_plot((dir / "solution.csv").string(), "slice", (dir / "slice.svg").string(), sl);
    REQUIRE(slurp(dir / "slice.svg").find("rho") != std::string::npos);

    SECTION("plot errors surface as configuration errors") {
        REQUIRE_THROWS_AS(
            emit_plot((dir / "history.csv").string(), "mystery", (dir / "x.svg").string()),
            ConfigError);
        PlotOptions wide;
        wide.smooth_window = 11;  // the six-row history cannot fill this window
        REQUIRE_THROWS_AS(emit_plot((dir / "history.csv").string(), "loss",
                                    (dir / "x.svg").string(), wide),
                          ConfigError);

        SpaceTimeGrid g2 = uniform_grid(2, 0.0, 1.0, 1.0, 3, 2, Boundary::SampledBox);
        Solution s2;
        s2.rho = GridField(g2, 1, 0.5);
        s2.phi = GridField(g2, 1, 0.5);
        s2.q = GridField(g2, 2, 0.5);
        write_solution_csv((dir / "s2.csv").string(), s2);
        REQUIRE_THROWS_AS(
            emit_plot((dir / "s2.csv").string(), "slice", (dir / "x.svg").string()),
            ConfigError);  // slice plots are one-dimensional
    }
}

TEST_CASE("the command-line binary maps outcomes to exit codes") {
    const std::string bin = std::string("\"") + MFG_BIN + "\"";
    fs::path dir = fresh_dir("cli");

    SECTION("help and listing succeed") {
        REQUIRE(run_cmd(bin + " --help > " + (dir / "help.txt").string() + " 2>&1") == 0);
        REQUIRE(run_cmd(bin + " list-problems > " + (dir / "list.txt").string() + " 2>&1") == 0);
        std::string listing = slurp(dir / "list.txt");
        REQUIRE(listing.find("traffic") != std::string::npos);
        REQUIRE(listing.find("example2") != std::string::npos);
    }

    SECTION("a full run honours --out, --seed and --deterministic") {
        spit(dir / "exp.cfg", R"(problem = lq
solver = dpi
iters = 4
eval_every = 2
batch_interior = 6
batch_boundary = 6
rho_hidden = 6
phi_hidden = 6
q_hidden = 6
reference = analytic
eval_I = 6
eval_N = 3
threads = 3
)");
        fs::path out = dir / "result";
        REQUIRE(run_cmd(bin + " run --config " + (dir / "exp.cfg").string() + " --out " +
                        out.string() + " --seed 7 --deterministic > " +
                        (dir / "run.log").string() + " 2>&1") == 0);
        nlohmann::json m = nlohmann::json::parse(slurp(out / "manifest.json"));
        REQUIRE(m["seed"] == 7);
        REQUIRE(m["deterministic"] == true);
        REQUIRE(m["threads"] == 1);  // determinism overrides the thread request
        REQUIRE(fs::exists(out / "history.csv"));

        REQUIRE(run_cmd(bin + " plot --input " + (out / "history.csv").string() +
                        " --kind loss --out " + (dir / "cli_loss.svg").string() + " > " +
                        (dir / "plot.log").string() + " 2>&1") == 0);
        REQUIRE(slurp(dir / "cli_loss.svg").find("<svg") != std::string::npos);
    }

    SECTION("configuration mistakes exit with code 1") {
        REQUIRE(run_cmd(bin + " run --config " + (dir / "absent.cfg").string() + " > " +
                        (dir / "e1.log").string() + " 2>&1") == 1);
        spit(dir / "bad.cfg", "problem = lq\nwibble = 3\n");
        REQUIRE(run_cmd(bin + " run --config " + (dir / "bad.cfg").string() + " > " +
                        (dir / "e2.log").string() + " 2>&1") == 1);
        REQUIRE(slurp(dir / "e2.log").find("config error") != std::string::npos);

        spit(dir / "env.cfg", "problem = lq\nsolver = fixed_point\ngrid_I = 8\ngrid_N = 4\n");
        REQUIRE(run_cmd("MFG_THREADS=abc " + bin + " run --config " +
                        (dir / "env.cfg").string() + " --out " + (dir / "envout").string() +
                        " > " + (dir / "e3.log").string() + " 2>&1") == 1);
        REQUIRE(slurp(dir / "e3.log").find("MFG_THREADS") != std::string::npos);

        spit(dir / "h.csv", "iter,loss_fp\n0,1\n");
        REQUIRE(run_cmd(bin + " plot --input " + (dir / "h.csv").string() +
                        " --kind mystery --out " + (dir / "x.svg").string() + " > " +
                        (dir / "e4.log").string() + " 2>&1") == 1);
    }
}
