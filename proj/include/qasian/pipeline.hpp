#pragma once

#include "qasian/extraction.hpp"
#include "qasian/grid.hpp"
#include "qasian/inversion.hpp"
#include "qasian/io.hpp"
#include "qasian/oracle.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace qasian {

struct ExtractionSettings {
    int M_eta = 8;
    int M_tau1 = 8;
    double Delta = -1;  // < 0: grid default
    double eta_lo = -std::numeric_limits<double>::infinity();
    double eta_hi = std::numeric_limits<double>::infinity();
    double kappa_ceiling = 1e6;
    AmplitudeEstimator est;
    int surface_eta = 41, surface_tau = 21;
};

struct OracleSettings {
    double S0 = 1.0;
    double t = -1;   // < 0: one time step after inception (tau1 = last node)
    double I0 = -1;  // < 0: S0 * t
    long long mc_paths = 100000;
    int mc_steps = 256;
    std::uint64_t mc_seed = 1;
    bool run_cn = true;
    int cn_nx = 2048;
    int cn_nt = 2048;
};

struct RunConfig {
    std::string name = "run";
    MarketParams params;
    int n_eta = 5;
    double eps_target = 0.01;
    int n_tau1 = 0;  // 0: from make_grid
    GridConfig grid;
    ExtractionSettings extraction;
    OracleSettings oracle;
    std::string out_dir = "out";
    InversionMode inversion = InversionMode::exact;
    TimeClosure closure = TimeClosure::extrapolated;
    long long dense_cap = kDenseCap;
    long long report_cap = 1024;  // dense condition report only up to this dimension
    std::string study;            // "kink": on-node vs off-node comparison instead of pricing
    std::vector<int> kink_levels{4, 5, 6, 7};

    GridSpec make_spec() const;
    // throws ValidationError before any compute
    void validate() const;
};

json config_to_json(const RunConfig& c);
RunConfig config_from_json(const json& j, RunConfig base = {});
RunConfig load_config(const std::string& path);
json defaults_json();

struct KinkOptions {
    std::vector<int> levels{4, 5, 6, 7};
    double eps_target = 0.1;
    double eta_lo_frac = -0.5, eta_hi_frac = 0.0;  // error window in units of eta_max
    double tau_min_frac = 0.25;
    int cn_nx = 4096, cn_nt = 4096;
};
struct KinkLevel {
    int n_eta = 0, n_tau1 = 0;
    double delta_hat = 0;
    double error = 0;
};
struct KinkStudy {
    std::vector<KinkLevel> off_node, on_node;
    double order_off = 0, order_on = 0;
    double degradation = 0;
};
// error of the system solve against a fine CN oracle with kinks off-node and forced onto a node
KinkStudy run_kink_study(const MarketParams& p, const KinkOptions& opt = {});
double fitted_order(const std::vector<KinkLevel>& lv);

enum class Stage { build, solve, extract, price, compare };
std::string to_string(Stage s);

struct PipelineReport {
    json summary;
    GridSpec spec;
    std::optional<PreconditionReport> condition;
    PricingSolve solve;
    Extraction extraction;
    double eta0 = 0, tau0 = 0, t = 0, I0 = 0;
    double psi_extracted = 0, psi_direct = 0;
    PriceQuote pipeline_price, direct_price, mc_price, cn_price;
    double price_tolerance = 0;
    bool price_ok = false;
    std::optional<KinkStudy> kink;
};

// stages up to `last`; artifacts under cfg.out_dir when write is set
PipelineReport run_pipeline(const RunConfig& cfg, Stage last = Stage::compare, bool write = true);

// psi^2 density from the solution, used as truth for extraction checks
RMat direct_psi(const PricingSolve& s);

StateVector plant_separable(const GridSpec& g, const std::function<double(double)>& f_eta,
                            const std::function<double(double)>& f_tau, double* scale);

struct ConvergenceRow {
    int level = 0;
    int n_eta = 0, n_tau1 = 0;
    long long dim = 0;
    int M_eta = 0, M_tau1 = 0;
    double eps_prime = 0;
    long long calls = 0;
    double cost = 0;
    double error = 0;
    double log_inv_error = 0;
};

struct ConvergenceTable {
    std::string mode;
    std::vector<ConvergenceRow> rows;
    int poly_degree = 0;  // smallest degree <= 3 reaching R^2 >= 0.95, else 3
    double poly_r2 = 0;
    double loglog_slope = 0;  // d log(cost) / d log(log(1/error)), the polylog exponent
    bool error_monotone = false;
};

enum class ConvergenceMode { solver, planted };
std::string to_string(ConvergenceMode m);
ConvergenceMode convergence_mode_from_string(const std::string& s);

// least squares R^2 of y against a degree-d polynomial in x
double poly_fit_r2(const std::vector<double>& x, const std::vector<double>& y, int degree);

ConvergenceTable run_convergence(const RunConfig& cfg, int levels, ConvergenceMode mode = ConvergenceMode::solver);
void write_convergence_csv(const std::string& path, const ConvergenceTable& t);

}  // namespace qasian
