#include "qasian/circuits.hpp"
#include "qasian/io.hpp"
#include "qasian/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

using namespace qasian;

namespace {

struct Overrides {
    std::string config;
    std::optional<std::string> name, out, kind, ae_mode, inversion, closure, study;
    std::optional<int> n_eta, n_tau1, M_eta, M_tau1, mc_steps, cn_nx, cn_nt;
    std::optional<double> eps, sigma, r, q, T, K, eta_max, ic_shift, Delta, eta_lo, eta_hi, ae_eps, S0, t, I0;
    std::optional<long long> mc_paths, dense_cap, shots;
    std::optional<std::uint64_t> seed, mc_seed;
    bool no_cn = false;
};

void add_flags(CLI::App* a, Overrides& o) {
    a->add_option("-c,--config", o.config, "run config JSON");
    a->add_option("--name", o.name);
    a->add_option("-o,--out", o.out, "output directory");
    a->add_option("--n-eta", o.n_eta);
    a->add_option("--n-tau1", o.n_tau1, "explicit time qubits (skips the scale relation)");
    a->add_option("--eps", o.eps, "target error");
    a->add_option("--sigma", o.sigma);
    a->add_option("--r", o.r);
    a->add_option("--q", o.q);
    a->add_option("--T", o.T);
    a->add_option("--K", o.K);
    a->add_option("--eta-max", o.eta_max);
    a->add_option("--kind", o.kind, "avg_rate_call | avg_rate_put | avg_strike_call | avg_strike_put");
    a->add_option("--ic-shift", o.ic_shift);
    a->add_option("--M-eta", o.M_eta);
    a->add_option("--M-tau1", o.M_tau1);
    a->add_option("--Delta", o.Delta);
    a->add_option("--eta-lo", o.eta_lo);
    a->add_option("--eta-hi", o.eta_hi);
    a->add_option("--ae-mode", o.ae_mode, "exact | stochastic | adversarial | shots");
    a->add_option("--ae-eps", o.ae_eps);
    a->add_option("--shots", o.shots);
    a->add_option("--seed", o.seed, "estimator seed");
    a->add_option("--S0", o.S0);
    a->add_option("--t", o.t, "pricing time");
    a->add_option("--I0", o.I0, "running integral at the pricing time");
    a->add_option("--mc-paths", o.mc_paths);
    a->add_option("--mc-steps", o.mc_steps);
    a->add_option("--mc-seed", o.mc_seed);
    a->add_option("--cn-nx", o.cn_nx);
    a->add_option("--cn-nt", o.cn_nt);
    a->add_flag("--no-cn", o.no_cn, "skip the Crank-Nicolson cross-check");
    a->add_option("--inversion", o.inversion, "exact | qpe");
    a->add_option("--closure", o.closure, "pinned | extrapolated");
    a->add_option("--dense-cap", o.dense_cap);
    a->add_option("--study", o.study, "kink");
}

RunConfig resolve(const Overrides& o) {
    RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
    auto set = [](auto& dst, const auto& src) {
        if (src) dst = *src;
    };
    set(c.name, o.name);
    set(c.out_dir, o.out);
    set(c.n_eta, o.n_eta);
    set(c.n_tau1, o.n_tau1);
    set(c.eps_target, o.eps);
    set(c.params.sigma, o.sigma);
    set(c.params.r, o.r);
    set(c.params.q, o.q);
    set(c.params.T, o.T);
    set(c.params.K, o.K);
    set(c.params.eta_max, o.eta_max);
    set(c.params.ic_shift, o.ic_shift);
    if (o.kind) c.params.kind = kind_from_string(*o.kind);
    set(c.extraction.M_eta, o.M_eta);
    set(c.extraction.M_tau1, o.M_tau1);
    set(c.extraction.Delta, o.Delta);
    set(c.extraction.eta_lo, o.eta_lo);
    set(c.extraction.eta_hi, o.eta_hi);
    if (o.ae_mode) c.extraction.est.mode = ae_mode_from_string(*o.ae_mode);
    set(c.extraction.est.eps_prime, o.ae_eps);
    set(c.extraction.est.shots, o.shots);
    set(c.extraction.est.seed, o.seed);
    set(c.oracle.S0, o.S0);
    set(c.oracle.t, o.t);
    set(c.oracle.I0, o.I0);
    set(c.oracle.mc_paths, o.mc_paths);
    set(c.oracle.mc_steps, o.mc_steps);
    set(c.oracle.mc_seed, o.mc_seed);
    set(c.oracle.cn_nx, o.cn_nx);
    set(c.oracle.cn_nt, o.cn_nt);
    if (o.no_cn) c.oracle.run_cn = false;
    if (o.inversion) c.inversion = inversion_from_string(*o.inversion);
    if (o.closure) c.closure = closure_from_string(*o.closure);
    set(c.dense_cap, o.dense_cap);
    set(c.study, o.study);
    return c;
}

void print_stage(const PipelineReport& rep, Stage s) {
    const json& st = rep.summary["stages"][to_string(s)];
    std::cout << to_string(s) << ": " << st.dump() << "\n";
}

int run_stage(const Overrides& o, Stage last) {
    RunConfig c = resolve(o);
    PipelineReport rep = run_pipeline(c, last, true);
    std::cout << "grid: " << rep.summary["grid"].dump() << "\n";
    if (rep.kink) {
        std::cout << "kink_study: " << rep.summary["kink_study"].dump() << "\n";
    } else {
        for (Stage s : {Stage::build, Stage::solve, Stage::extract, Stage::price, Stage::compare}) {
            print_stage(rep, s);
            if (s == last) break;
        }
    }
    std::cout << "artifacts in " << c.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Asian option pricing through a preconditioned linear system and amplitude extraction"};
    app.require_subcommand(1);
    std::string defaults_path;
    app.add_option("--write-defaults", defaults_path, "write every config default to this JSON file and exit");

    Overrides o;
    int levels = 4;
    std::string conv_mode = "solver";

    struct Sub {
        const char* name;
        const char* help;
        Stage stage;
    };
    const Sub subs[] = {{"build", "grid, operators and the condition report", Stage::build},
                        {"solve", "preconditioned solve of the pricing system", Stage::solve},
                        {"extract", "interpolant recovery of psi from the solution state", Stage::extract},
                        {"price", "option price from the extracted surface", Stage::price},
                        {"compare", "price against Monte Carlo and Crank-Nicolson", Stage::compare}};
    std::vector<std::pair<CLI::App*, Stage>> stage_cmds;
    for (const auto& s : subs) {
        CLI::App* a = app.add_subcommand(s.name, s.help);
        add_flags(a, o);
        stage_cmds.emplace_back(a, s.stage);
    }
    CLI::App* conv = app.add_subcommand("converge", "error and accounted cost over refinement levels");
    add_flags(conv, o);
    conv->add_option("--levels", levels, "number of levels (>= 3)");
    conv->add_option("--mode", conv_mode, "solver | planted");
    CLI::App* dump = app.add_subcommand("dump-encoding", "block-encoding descriptors and projected blocks");
    add_flags(dump, o);
    CLI::App* defaults = app.add_subcommand("defaults", "write defaults.json");
    std::string defaults_out = "defaults.json";
    defaults->add_option("-o,--out", defaults_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (!defaults_path.empty()) {
            write_text(defaults_path, defaults_json().dump(2) + "\n");
            return 0;
        }
        if (defaults->parsed()) {
            write_text(defaults_out, defaults_json().dump(2) + "\n");
            std::cout << "wrote " << defaults_out << "\n";
            return 0;
        }
        for (auto& [a, st] : stage_cmds)
            if (a->parsed()) return run_stage(o, st);
        if (conv->parsed()) {
            RunConfig c = resolve(o);
            ConvergenceTable t = run_convergence(c, levels, convergence_mode_from_string(conv_mode));
            ensure_dir(c.out_dir);
            write_convergence_csv(c.out_dir + "/convergence.csv", t);
            std::cout << "level n_eta n_tau1 dim M eps' calls cost error\n";
            for (const auto& r : t.rows)
                std::cout << r.level << ' ' << r.n_eta << ' ' << r.n_tau1 << ' ' << r.dim << ' ' << r.M_eta << ' '
                          << r.eps_prime << ' ' << r.calls << ' ' << r.cost << ' ' << r.error << "\n";
            std::cout << "error monotone: " << (t.error_monotone ? "yes" : "no") << ", cost ~ poly(log 1/err) degree "
                      << t.poly_degree << " R^2 " << t.poly_r2 << ", d log cost / d log log(1/err) "
                      << t.loglog_slope << "\n";
            return 0;
        }
        if (dump->parsed()) {
            RunConfig c = resolve(o);
            c.validate();
            GridSpec g = c.make_spec();
            ensure_dir(c.out_dir);
            BOperatorEncoding b = build_B_encoding(g, c.params, c.closure);
            BlockEncoding ct = build_ctau1_encoding(g);
            json j;
            j["B"] = encoding_descriptor(b.be, b.anc, g);
            j["C_tau1"] = {{"sys_dim", ct.sys_dim}, {"n_anc", ct.n_anc}, {"alpha", ct.alpha}, {"err", ct.err}};
            write_text(c.out_dir + "/encoding.json", j.dump(2) + "\n");
            if (ct.total_dim() <= 4096) write_matrix_csv(c.out_dir + "/C_tau1_projected.csv", ct.projected(), 1e-14);
            if (b.be.total_dim() <= 4096) write_matrix_csv(c.out_dir + "/B_projected.csv", b.be.projected(), 1e-14);
            std::cout << j.dump(2) << "\n";
            return 0;
        }
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
