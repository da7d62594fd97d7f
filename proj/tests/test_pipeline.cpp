#include "qasian/pipeline.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace qasian;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& tag) {
    fs::path d = fs::temp_directory_path() / ("qasian_test_" + tag);
    fs::remove_all(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

RunConfig smoke() { return load_config(std::string(QASIAN_SOURCE_DIR) + "/presets/smoke.json"); }

void check_stage_fields(const json& summary) {
    for (const char* s : {"build", "solve", "extract", "price", "compare"}) {
        REQUIRE(summary["stages"].contains(s));
        CHECK(summary["stages"][s].contains("err_bound"));
        CHECK(summary["stages"][s].contains("status"));
    }
}

}  // namespace

TEST_CASE("config round trip and defaults") {
    RunConfig c;
    c.name = "rt";
    c.n_eta = 6;
    c.params.kind = OptionKind::avg_strike_put;
    c.params.sigma = 0.45;
    c.extraction.M_eta = 7;
    c.extraction.eta_lo = -1.25;
    c.extraction.est.mode = AEMode::stochastic;
    c.extraction.est.eps_prime = 3e-4;
    c.oracle.mc_seed = 99;
    c.inversion = InversionMode::qpe;
    c.closure = TimeClosure::pinned;
    json j = config_to_json(c);
    RunConfig back = config_from_json(j);
    CHECK(config_to_json(back).dump() == j.dump());
    CHECK(back.params.kind == OptionKind::avg_strike_put);
    CHECK(back.extraction.est.mode == AEMode::stochastic);
    CHECK(back.extraction.eta_lo == -1.25);

    // defaults spell every field out and read back unchanged
    json d = defaults_json();
    CHECK(config_to_json(config_from_json(d)).dump() == d.dump());
    for (const char* k : {"params", "n_eta", "eps_target", "extraction", "oracle", "out_dir", "inversion", "dense_cap"})
        CHECK(d.contains(k));

    json bad = {{"n_eta", 4}, {"bogus", 1}};
    CHECK_THROWS_AS(config_from_json(bad), ValidationError);
    json bad_type = {{"n_eta", "four"}};
    CHECK_THROWS(config_from_json(bad_type));
}

TEST_CASE("validation happens before any compute") {
    RunConfig c = smoke();
    c.n_eta = 1;  // 2 cells, not divisible by 4
    CHECK_THROWS_AS(c.validate(), ValidationError);
    fs::path d = scratch("invalid");
    c.out_dir = d.string();
    CHECK_THROWS_AS(run_pipeline(c), ValidationError);
    json s = json::parse(slurp(d / "summary.json"));
    CHECK(s["failed_stage"] == "build");
    CHECK(!fs::exists(d / "grid.json"));
    check_stage_fields(s);

    RunConfig m = smoke();
    m.extraction.M_eta = 1;
    CHECK_THROWS_AS(m.validate(), ValidationError);
    RunConfig k = smoke();
    k.study = "kink";
    k.kink_levels = {4};
    CHECK_THROWS_AS(k.validate(), ValidationError);
}

TEST_CASE("smoke preset end to end") {
    RunConfig c = smoke();
    fs::path d = scratch("smoke");
    c.out_dir = d.string();
    PipelineReport rep = run_pipeline(c);
    CHECK(rep.spec.n_eta == 3);
    CHECK(rep.solve.rel_residual < 1e-9);
    CHECK(rep.summary["failed_stage"].is_null());
    check_stage_fields(rep.summary);
    for (const char* s : {"build", "solve", "extract", "price", "compare"})
        CHECK(rep.summary["stages"][s]["status"] == "ok");
    for (const char* f : {"config.json", "grid.json", "condition.json", "psi_lattice.csv", "nodes.csv", "surface.csv",
                          "quotes.csv", "summary.json"})
        CHECK(fs::exists(d / f));
    json disk = json::parse(slurp(d / "summary.json"));
    CHECK(disk.dump() == rep.summary.dump());
    CHECK(rep.mc_price.stderr_ > 0);
    CHECK(std::isfinite(rep.pipeline_price.value));
    CHECK(rep.price_tolerance >= 3 * rep.mc_price.stderr_);
}

TEST_CASE("partial artifacts on a late failure") {
    RunConfig c = smoke();
    // two cells in the window, four nodes asked for
    c.extraction.eta_lo = -0.5;
    c.extraction.eta_hi = 0.5;
    fs::path d = scratch("late");
    c.out_dir = d.string();
    CHECK_THROWS_AS(run_pipeline(c), ValidationError);
    json s = json::parse(slurp(d / "summary.json"));
    CHECK(s["failed_stage"] == "extract");
    CHECK(s["stages"]["solve"]["status"] == "ok");
    CHECK(s["stages"]["extract"]["status"] == "failed");
    CHECK(s["stages"]["compare"]["status"] == "pending");
    CHECK(s["error"].get<std::string>().find("collision") != std::string::npos);
    CHECK(fs::exists(d / "psi_lattice.csv"));
    check_stage_fields(s);
}

TEST_CASE("identical config gives identical files") {
    RunConfig c = smoke();
    c.extraction.est.mode = AEMode::stochastic;
    c.extraction.est.eps_prime = 1e-3;
    c.extraction.est.seed = 12;
    fs::path a = scratch("det_a"), b = scratch("det_b");
    c.out_dir = a.string();
    run_pipeline(c);
    c.out_dir = b.string();
    run_pipeline(c);
    for (const char* f : {"psi_lattice.csv", "nodes.csv", "surface.csv", "quotes.csv"})
        CHECK(slurp(a / f) == slurp(b / f));

    c.extraction.est.seed = 13;
    fs::path e = scratch("det_c");
    c.out_dir = e.string();
    run_pipeline(c);
    CHECK(slurp(a / "nodes.csv") != slurp(e / "nodes.csv"));
}

TEST_CASE("stages stop where asked") {
    RunConfig c = smoke();
    c.out_dir = scratch("stages").string();
    PipelineReport r = run_pipeline(c, Stage::solve, false);
    CHECK(r.summary["stages"]["solve"]["status"] == "ok");
    CHECK(r.summary["stages"]["extract"]["status"] == "pending");
    CHECK(!fs::exists(c.out_dir));
}

TEST_CASE("convergence sweeps") {
    RunConfig c = smoke();
    CHECK_THROWS_AS(run_convergence(c, 1), ValidationError);
    CHECK_THROWS_AS(run_convergence(c, 2), ValidationError);

    c.n_eta = 5;
    ConvergenceTable p = run_convergence(c, 3, ConvergenceMode::planted);
    REQUIRE(p.rows.size() == 3);
    CHECK(p.error_monotone);
    for (size_t i = 1; i < 3; ++i) {
        CHECK(p.rows[i].error < p.rows[i - 1].error);
        CHECK(p.rows[i].cost > p.rows[i - 1].cost);
        CHECK(p.rows[i].n_eta == p.rows[i - 1].n_eta + 1);
    }
    // solver sweep on the smooth side of the surface
    RunConfig sv = smoke();
    sv.n_eta = 4;
    sv.extraction.M_eta = 4;
    sv.extraction.M_tau1 = 3;
    sv.extraction.eta_lo = 0.5;
    sv.extraction.eta_hi = 2.0;
    ConvergenceTable t = run_convergence(sv, 3, ConvergenceMode::solver);
    CHECK(t.error_monotone);
    CHECK(t.rows[1].M_eta == 6);
    CHECK(t.rows[2].M_tau1 == 5);
    MESSAGE("solver sweep errors " << t.rows[0].error << " " << t.rows[1].error << " " << t.rows[2].error);

    fs::path d = scratch("conv");
    fs::create_directories(d);
    write_convergence_csv((d / "c.csv").string(), p);
    std::string csv = slurp(d / "c.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("polynomial fit quality") {
    std::vector<double> x{1, 2, 3, 4, 5}, y;
    for (double v : x) y.push_back(2 * v * v - v + 3);
    CHECK(poly_fit_r2(x, y, 2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(poly_fit_r2(x, y, 1) < 1.0);
    std::vector<double> flat{2, 2, 2, 2, 2};
    CHECK(poly_fit_r2(x, flat, 1) == doctest::Approx(1.0));
    CHECK_THROWS_AS(poly_fit_r2({1.0}, {1.0}, 1), ValidationError);
}

#ifdef QASIAN_CLI_PATH
TEST_CASE("command line exit codes") {
    const std::string cli = QASIAN_CLI_PATH;
    fs::path d = scratch("cli");
    auto run = [&](const std::string& args) {
        const int rc = std::system((cli + " " + args + " > " + (d / "log.txt").string() + " 2>&1").c_str());
        return WEXITSTATUS(rc);
    };
    fs::create_directories(d);
    CHECK(run("build --n-eta 3 --sigma 1 --eps 0.01 --M-eta 4 --M-tau1 2 -o " + (d / "b").string()) == 0);
    CHECK(fs::exists(d / "b" / "condition.json"));
    CHECK(run("build --n-eta 1 -o " + (d / "bad").string()) == 2);
    CHECK(run("solve --n-eta 3 --sigma 1 --eps 0.01 --kind nonsense -o " + (d / "bad").string()) == 2);
    CHECK(run("bogus-command") == 2);
    CHECK(run("defaults -o " + (d / "defaults.json").string()) == 0);
    CHECK(json::parse(slurp(d / "defaults.json")).dump() == defaults_json().dump());
    CHECK(run("dump-encoding --n-eta 2 --n-tau1 2 --sigma 1 --M-eta 4 --M-tau1 4 -o " + (d / "enc").string()) == 0);
    CHECK(fs::exists(d / "enc" / "encoding.json"));
}
#endif
