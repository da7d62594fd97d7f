#include "qasian/io.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace qasian {

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write '" + path + "'");
    f << text;
}

std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot read '" + path + "'");
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ValidationError("cannot create directory '" + dir + "': " + ec.message());
}

json to_json(const MarketParams& p) {
    return {{"sigma", p.sigma}, {"r", p.r},           {"q", p.q},
            {"T", p.T},         {"K", p.K},           {"eta_max", p.eta_max},
            {"kind", to_string(p.kind)}, {"ic_shift", p.ic_shift}};
}

MarketParams params_from_json(const json& j, MarketParams p) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "sigma") p.sigma = it->get<double>();
        else if (k == "r") p.r = it->get<double>();
        else if (k == "q") p.q = it->get<double>();
        else if (k == "T") p.T = it->get<double>();
        else if (k == "K") p.K = it->get<double>();
        else if (k == "eta_max") p.eta_max = it->get<double>();
        else if (k == "kind") p.kind = kind_from_string(it->get<std::string>());
        else if (k == "ic_shift") p.ic_shift = it->get<double>();
        else throw ValidationError("unknown params key '" + k + "'");
    }
    return p;
}

json to_json(const GridSpec& g) {
    return {{"n_eta", g.n_eta},
            {"n_tau1", g.n_tau1},
            {"N_eta", g.N_eta()},
            {"N_tau1", g.N_tau()},
            {"dim", g.dim()},
            {"delta_eta_hat", g.delta_eta_hat},
            {"delta_eta", g.delta_eta},
            {"delta_tau1", g.delta_tau1},
            {"Delta", g.Delta},
            {"eps_target", g.eps_target},
            {"eta_max", g.eta_max},
            {"T", g.T}};
}

json to_json(const GridConfig& g) {
    return {{"scale_c", g.scale_c},
            {"c_smooth", g.c_smooth},
            {"band", g.band},
            {"n_tau1_cap", g.n_tau1_cap},
            {"Delta_frac", g.Delta_frac}};
}

GridConfig grid_config_from_json(const json& j, GridConfig g) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "scale_c") g.scale_c = it->get<double>();
        else if (k == "c_smooth") g.c_smooth = it->get<double>();
        else if (k == "band") g.band = it->get<double>();
        else if (k == "n_tau1_cap") g.n_tau1_cap = it->get<int>();
        else if (k == "Delta_frac") g.Delta_frac = it->get<double>();
        else throw ValidationError("unknown grid key '" + k + "'");
    }
    return g;
}

json to_json(const PreconditionReport& r) {
    return {{"kappa_raw", r.kappa_raw},   {"kappa_W", r.kappa_W},       {"C_AB", r.C_AB},
            {"C_AB_prime", r.C_AB_prime}, {"norm_B", r.norm_B},         {"norm_Ainv", r.norm_Ainv},
            {"norm_ABinv", r.norm_ABinv}, {"norm_Winv", r.norm_Winv},   {"bound_satisfied", r.bound_satisfied}};
}

json to_json(const AmplitudeEstimator& e) {
    return {{"mode", to_string(e.mode)}, {"eps", e.eps_prime}, {"seed", e.seed}, {"shots", e.shots}};
}

AmplitudeEstimator estimator_from_json(const json& j, AmplitudeEstimator e) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "mode") e.mode = ae_mode_from_string(it->get<std::string>());
        else if (k == "eps") e.eps_prime = it->get<double>();
        else if (k == "seed") e.seed = it->get<std::uint64_t>();
        else if (k == "shots") e.shots = it->get<long long>();
        else throw ValidationError("unknown estimator key '" + k + "'");
    }
    return e;
}

json to_json(const TableIIAccount& a) {
    return {{"C_tau1", a.ctau1}, {"D_eta1", a.d_eta1}, {"D_eta2", a.d_eta2}, {"A1_inv", a.a1_inv},
            {"top_level", a.top_level}};
}

void write_matrix_csv(const std::string& path, const CMat& m, double tol) {
    std::ostringstream os;
    os << "row,col,re,im\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            if (std::abs(m(i, j)) > tol)
                os << i << ',' << j << ',' << fmt(m(i, j).real()) << ',' << fmt(m(i, j).imag()) << '\n';
    write_text(path, os.str());
}

void write_lattice_csv(const std::string& path, const GridSpec& g, const RMat& psi) {
    std::ostringstream os;
    os << "t,x,tau1,eta,psi\n";
    for (int t = 0; t < psi.rows(); ++t)
        for (int x = 0; x < psi.cols(); ++x)
            os << t << ',' << x << ',' << fmt(g.tau(t)) << ',' << fmt(g.eta(x)) << ',' << fmt(psi(t, x)) << '\n';
    write_text(path, os.str());
}

void write_nodes_csv(const std::string& path, const Extraction& ex) {
    std::ostringstream os;
    os << "k,l,edge_eta,edge_tau1,s_eta,s_tau1,raw,err_bound,calls,cost\n";
    for (const auto& n : ex.nodes)
        os << n.k << ',' << n.l << ',' << n.e_eta << ',' << n.e_tau << ',' << fmt(n.s_eta) << ','
           << fmt(n.s_tau) << ',' << fmt(n.raw) << ',' << fmt(n.err_bound) << ',' << n.calls << ','
           << fmt(n.cost) << '\n';
    write_text(path, os.str());
}

void write_surface_csv(const std::string& path, const Extraction& ex, int n_eta_pts, int n_tau_pts) {
    if (n_eta_pts < 2 || n_tau_pts < 2) throw ValidationError("surface grid needs >= 2 points per axis");
    const auto& ip = ex.Psi;
    // cell centres at the window ends
    const double e0 = ip.eta_lo + ex.spec.delta_eta / 2, e1 = ip.eta_lo + ip.eta_width - ex.spec.delta_eta / 2;
    const double t0 = ip.tau_lo + ex.spec.delta_tau1 / 2, t1 = ip.tau_lo + ip.tau_width - ex.spec.delta_tau1 / 2;
    std::ostringstream os;
    os << "tau1,eta,psi,dpsi_deta,dpsi_dtau1\n";
    for (int j = 0; j < n_tau_pts; ++j) {
        const double t = t0 + (t1 - t0) * j / (n_tau_pts - 1);
        for (int i = 0; i < n_eta_pts; ++i) {
            const double e = e0 + (e1 - e0) * i / (n_eta_pts - 1);
            os << fmt(t) << ',' << fmt(e) << ',' << fmt(ex.psi(e, t)) << ',' << fmt(ex.dpsi_deta(e, t)) << ','
               << fmt(ex.dpsi_dtau(e, t)) << '\n';
        }
        os << '\n';  // gnuplot block separator
    }
    write_text(path, os.str());
}

void write_quotes_csv(const std::string& path, const std::vector<PriceQuote>& q) {
    std::ostringstream os;
    os << "method,value,stderr\n";
    for (const auto& x : q) os << x.method << ',' << fmt(x.value) << ',' << fmt(x.stderr_) << '\n';
    write_text(path, os.str());
}

json encoding_descriptor(const BlockEncoding& be, const TableIIAccount& anc, const GridSpec& g) {
    return {{"grid", to_json(g)},
            {"sys_dim", be.sys_dim},
            {"n_anc", be.n_anc},
            {"alpha", be.alpha},
            {"err", be.err},
            {"ancillas", to_json(anc)}};
}

}  // namespace qasian
