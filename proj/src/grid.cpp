#include "qasian/grid.hpp"

#include <cblas.h>
#include <lapacke.h>

#include <algorithm>
#include <bit>
#include <cmath>

namespace qasian {

RVec singular_values(const CMat& a) {
    CMat work = a;
    const lapack_int m = static_cast<lapack_int>(a.rows());
    const lapack_int n = static_cast<lapack_int>(a.cols());
    RVec s(std::min(m, n));
    lapack_int info = LAPACKE_zgesdd(LAPACK_COL_MAJOR, 'N', m, n,
                                     reinterpret_cast<lapack_complex_double*>(work.data()), m,
                                     s.data(), nullptr, 1, nullptr, 1);
    if (info != 0) throw NumericalError("zgesdd failed, info=" + std::to_string(info));
    return s;
}

namespace {

// eigenvalues il..iu (1-based, ascending) of a^H a
RVec gram_eigenvalues(const CMat& a, lapack_int il, lapack_int iu) {
    const lapack_int m = static_cast<lapack_int>(a.rows());
    const lapack_int n = static_cast<lapack_int>(a.cols());
    CMat g(n, n);
    cblas_zherk(CblasColMajor, CblasUpper, CblasConjTrans, n, m, 1.0, a.data(), m, 0.0, g.data(), n);
    RVec w(n);
    lapack_int found = 0;
    std::vector<lapack_int> supp(2 * n);
    const char range = (il == 1 && iu == n) ? 'A' : 'I';
    lapack_int info = LAPACKE_zheevr(LAPACK_COL_MAJOR, 'N', range, 'U', n,
                                     reinterpret_cast<lapack_complex_double*>(g.data()), n, 0.0, 0.0, il, iu,
                                     0.0, &found, w.data(), nullptr, 1, supp.data());
    if (info != 0 || found != iu - il + 1) throw NumericalError("zheevr failed, info=" + std::to_string(info));
    return w.head(found);
}

constexpr Eigen::Index kGramMin = 256;

}  // namespace

double spectral_norm(const CMat& a) {
    if (a.size() == 0) return 0.0;
    if (a.cols() < kGramMin) return singular_values(a)(0);
    const lapack_int n = static_cast<lapack_int>(a.cols());
    return std::sqrt(std::max(gram_eigenvalues(a, n, n)(0), 0.0));
}

std::pair<double, double> singular_extremes(const CMat& a) {
    if (a.rows() < a.cols() || a.cols() < kGramMin) {
        RVec s = singular_values(a);
        return {s(0), s(s.size() - 1)};
    }
    // reduction to tridiagonal is about half the work of a bidiagonal SVD;
    // squaring loses digits at the bottom, so large kappa goes back to gesdd
    RVec w = gram_eigenvalues(a, 1, static_cast<lapack_int>(a.cols()));
    const double hi = w(w.size() - 1), lo = w(0);
    if (!(hi > 0) || lo < 1e-10 * hi) {
        RVec s = singular_values(a);
        return {s(0), s(s.size() - 1)};
    }
    return {std::sqrt(hi), std::sqrt(lo)};
}

double cond2(const CMat& a) {
    RVec s = singular_values(a);
    double smin = s(s.size() - 1);
    if (smin == 0.0) return std::numeric_limits<double>::infinity();
    return s(0) / smin;
}

std::string to_string(OptionKind k) {
    switch (k) {
        case OptionKind::avg_rate_call: return "avg_rate_call";
        case OptionKind::avg_rate_put: return "avg_rate_put";
        case OptionKind::avg_strike_call: return "avg_strike_call";
        case OptionKind::avg_strike_put: return "avg_strike_put";
    }
    return "?";
}

OptionKind kind_from_string(const std::string& s) {
    if (s == "avg_rate_call") return OptionKind::avg_rate_call;
    if (s == "avg_rate_put") return OptionKind::avg_rate_put;
    if (s == "avg_strike_call") return OptionKind::avg_strike_call;
    if (s == "avg_strike_put") return OptionKind::avg_strike_put;
    throw ValidationError("unknown option kind '" + s + "'");
}

std::string to_string(TimeClosure c) {
    return c == TimeClosure::pinned ? "pinned" : "extrapolated";
}

TimeClosure closure_from_string(const std::string& s) {
    if (s == "pinned") return TimeClosure::pinned;
    if (s == "extrapolated") return TimeClosure::extrapolated;
    throw ValidationError("unknown time closure '" + s + "'");
}

void MarketParams::validate() const {
    if (!(sigma > 0)) throw ValidationError("sigma must be > 0");
    if (!(T > 0)) throw ValidationError("T must be > 0");
    if (!(eta_max > 0)) throw ValidationError("eta_max must be > 0");
    if (!std::isfinite(r) || !std::isfinite(q) || !std::isfinite(K))
        throw ValidationError("r, q, K must be finite");
}

static void check_n_eta(int n_eta) {
    if (n_eta < 2 || n_eta > 14)
        throw ValidationError("n_eta must be in [2,14] so that 2^n_eta is divisible by 4");
}

static GridSpec fill(const MarketParams& p, int n_eta, int n_tau1, double eps, const GridConfig& cfg) {
    GridSpec g;
    g.n_eta = n_eta;
    g.n_tau1 = n_tau1;
    g.delta_eta_hat = 2.0 / static_cast<double>(1 << n_eta);
    g.delta_eta = 2.0 * p.eta_max / static_cast<double>(1 << n_eta);
    g.delta_tau1 = p.T / (static_cast<double>(1 << n_tau1) + 1.0);
    g.Delta = cfg.Delta_frac * p.T;
    g.eps_target = eps;
    g.eta_max = p.eta_max;
    g.T = p.T;
    return g;
}

GridSpec make_grid(const MarketParams& p, int n_eta, double eps_target, const GridConfig& cfg) {
    p.validate();
    check_n_eta(n_eta);
    if (!(eps_target > 0 && eps_target < 1))
        throw ValidationError("infeasible scale: eps_target must lie in (0,1)");
    const double dhat = 2.0 / static_cast<double>(1 << n_eta);
    const double L = std::log(1.0 / eps_target);
    const double target = cfg.scale_c * dhat * dhat * L / (p.sigma * p.sigma);
    const double Neta = static_cast<double>(1 << n_eta);
    for (int nt = 1; nt <= cfg.n_tau1_cap; ++nt) {
        const double dt = p.T / (std::ldexp(1.0, nt) + 1.0);
        const bool in_band = dt >= target / cfg.band && dt <= target * cfg.band;
        const bool smooth = p.T * p.sigma * p.sigma * Neta * Neta / std::ldexp(1.0, nt) >= cfg.c_smooth * L;
        if (in_band && smooth) return fill(p, n_eta, nt, eps_target, cfg);
    }
    throw ValidationError("infeasible scale: no n_tau1 <= " + std::to_string(cfg.n_tau1_cap) +
                          " satisfies the dtau band and the smoothing inequality");
}

GridSpec grid_from_counts(const MarketParams& p, int n_eta, int n_tau1, double eps_target,
                          const GridConfig& cfg) {
    p.validate();
    if (n_eta < 1 || n_eta > 14) throw ValidationError("n_eta out of range");
    if (n_tau1 < 1 || n_tau1 > 20) throw ValidationError("n_tau1 out of range");
    return fill(p, n_eta, n_tau1, eps_target, cfg);
}

CVec PauliDiag::reconstruct() const {
    const int N = 1 << n;
    CVec d = CVec::Zero(N);
    for (const auto& [mask, c] : terms)
        for (int x = 0; x < N; ++x) d(x) += (std::popcount(static_cast<std::uint32_t>(x) & mask) & 1) ? -c : c;
    return d;
}

PauliDiag pauli_expand(const CVec& diag, int n, double tol) {
    const int N = 1 << n;
    if (diag.size() != N) throw ValidationError("pauli_expand: size mismatch");
    // Walsh-Hadamard transform
    CVec w = diag;
    for (int h = 1; h < N; h <<= 1)
        for (int i = 0; i < N; i += 2 * h)
            for (int j = i; j < i + h; ++j) {
                cplx a = w(j), b = w(j + h);
                w(j) = a + b;
                w(j + h) = a - b;
            }
    w /= static_cast<double>(N);
    PauliDiag out;
    out.n = n;
    const double scale = std::max(1.0, diag.cwiseAbs().maxCoeff());
    for (int m = 0; m < N; ++m)
        if (std::abs(w(m)) > tol * scale) out.terms.emplace_back(static_cast<std::uint32_t>(m), w(m));
    return out;
}

RVec eta_hat_diag(int n) {
    const int N = 1 << n;
    const double dh = 2.0 / N;
    RVec d(N);
    for (int x = 0; x < N; ++x) d(x) = -1.0 + dh / 2 + x * dh;
    return d;
}

std::pair<RVec, PauliDiag> build_eta_operator(const GridSpec& spec) {
    RVec d = eta_hat_diag(spec.n_eta);
    PauliDiag pd;
    pd.n = spec.n_eta;
    for (int j = 0; j < spec.n_eta; ++j)
        pd.terms.emplace_back(1u << j, cplx(-spec.delta_eta_hat / 2 * std::ldexp(1.0, j), 0.0));
    return {d, pd};
}

CMat build_centered_dft(int n) {
    if (n < 1) throw ValidationError("centered DFT needs n >= 1");
    const int N = 1 << n;
    CMat F(N, N);
    const double s = 1.0 / std::sqrt(static_cast<double>(N));
    for (int a = 0; a < N; ++a) {
        const double k = a - (N - 1) / 2.0;
        for (int b = 0; b < N; ++b) {
            const double j = b - (N - 1) / 2.0;
            // reduce k*j mod N before the trig call; k*j is a quarter-integer
            double ph = std::fmod(k * j, static_cast<double>(N));
            F(a, b) = s * std::polar(1.0, -2.0 * kPi * ph / N);
        }
    }
    return F;
}

RMat build_time_derivative(const GridSpec& spec) {
    const int N = spec.N_tau();
    RMat C = RMat::Zero(N, N);
    const double h = 1.0 / (2.0 * spec.delta_tau1);
    for (int i = 0; i + 1 < N; ++i) {
        C(i, i + 1) = h;
        C(i + 1, i) = -h;
    }
    return C;
}

static CMat conj_diag(const CMat& F, const RVec& d) {
    return F.adjoint() * d.cast<cplx>().asDiagonal() * F;
}

CMat build_D_eta1(const GridSpec& spec) {
    CMat F = build_centered_dft(spec.n_eta);
    return conj_diag(F, eta_hat_diag(spec.n_eta));
}

CMat build_spectral_derivative(const GridSpec& spec) {
    const cplx c(0.0, kPi / (spec.delta_eta_hat * spec.eta_max));
    return c * build_D_eta1(spec);
}

CMat build_C_eta1(const GridSpec& spec, const MarketParams& p) {
    RVec a1 = build_A1_diag(spec, p);
    return a1.cast<cplx>().asDiagonal() * build_A2(spec);
}

CVec build_D_eta2_diag(const GridSpec& spec, const MarketParams& p) {
    // expanded drift: (r-q) etahat - 1/(eta_max T), finite at r = q
    RVec eh = eta_hat_diag(spec.n_eta);
    const cplx pref(0.0, spec.delta_tau1 * kPi / spec.delta_eta_hat);
    CVec d(eh.size());
    for (int x = 0; x < eh.size(); ++x)
        d(x) = pref * ((p.r - p.q) * eh(x) - 1.0 / (p.eta_max * p.T));
    return d;
}

CMat build_C_eta2(const GridSpec& spec, const MarketParams& p) {
    return build_D_eta2_diag(spec, p).asDiagonal() * build_D_eta1(spec);
}

RVec build_A1_diag(const GridSpec& spec, const MarketParams& p) {
    RVec eh = eta_hat_diag(spec.n_eta);
    return (spec.delta_tau1 * kPi * kPi * p.sigma * p.sigma / 2.0) * eh.array().square().matrix();
}

CMat build_A2(const GridSpec& spec) {
    CMat F = build_centered_dft(spec.n_eta);
    RVec e2 = eta_hat_diag(spec.n_eta).array().square().matrix();
    return conj_diag(F, e2) / (spec.delta_eta_hat * spec.delta_eta_hat);
}

RMat closure_correction(int n_tau1, TimeClosure c) {
    const int N = 1 << n_tau1;
    RMat E = RMat::Zero(N, N);
    if (c == TimeClosure::extrapolated) {
        // last row becomes psi_N - psi_{N-1} after the dtau scaling
        E(N - 1, N - 1) = 1.0;
        if (N >= 2) E(N - 1, N - 2) = -0.5;
    }
    return E;
}

static double tri(double x) { return std::max(0.0, 1.0 - std::abs(x)); }

double psi0(const MarketParams& p, double eta) {
    const double e = eta - p.ic_shift;
    switch (p.kind) {
        case OptionKind::avg_rate_call:
            return p.eta_max / 2 * tri(2 * e / p.eta_max - 1.0);
        case OptionKind::avg_rate_put: return std::max(-e, 0.0);
        case OptionKind::avg_strike_call: return std::max(1.0 - e, 0.0);
        case OptionKind::avg_strike_put: return std::max(e - 1.0, 0.0);
    }
    return 0.0;
}

RhsResult build_rhs(const GridSpec& spec, const MarketParams& p, TimeClosure c) {
    const int N = spec.N_eta(), M = spec.N_tau();
    CVec b = CVec::Zero(spec.dim());
    for (int x = 0; x < N; ++x) {
        const double v = psi0(p, spec.eta(x)) / (2.0 * spec.delta_tau1) * spec.delta_tau1;
        b(x) += v;
        if (c == TimeClosure::pinned) b(static_cast<long long>(M - 1) * N + x) -= v;
    }
    RhsResult out;
    out.norm_b = b.squaredNorm();
    if (out.norm_b == 0.0) throw NumericalError("right-hand side vanishes");
    out.rhs_hat = b / std::sqrt(out.norm_b);
    return out;
}

OperatorSet build_operators(const GridSpec& spec, const MarketParams& p, TimeClosure c) {
    OperatorSet o;
    o.kind = c;
    o.C_tau1 = build_time_derivative(spec) * spec.delta_tau1;
    o.closure = closure_correction(spec.n_tau1, c);
    o.A1 = build_A1_diag(spec, p);
    o.A2 = build_A2(spec);
    o.C_eta1 = o.A1.cast<cplx>().asDiagonal() * o.A2;
    o.C_eta2 = build_C_eta2(spec, p);
    RhsResult r = build_rhs(spec, p, c);
    o.rhs_hat = std::move(r.rhs_hat);
    o.norm_b = r.norm_b;
    return o;
}

CMat kron(const CMat& a, const CMat& b) {
    CMat out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

LinearSystem assemble_system(const GridSpec& spec, const MarketParams& p, TimeClosure c,
                             long long dense_cap) {
    if (spec.dim() > dense_cap)
        throw ValidationError("dimension " + std::to_string(spec.dim()) + " exceeds the dense cap " +
                              std::to_string(dense_cap));
    OperatorSet o = build_operators(spec, p, c);
    const int N = spec.N_eta(), M = spec.N_tau();
    CMat It = CMat::Identity(M, M), Ie = CMat::Identity(N, N);
    CMat Ct = o.time_operator().cast<cplx>();
    LinearSystem s;
    s.M = kron(Ct, Ie) + kron(It, o.C_eta1) + kron(It, o.C_eta2);
    s.b_hat = o.rhs_hat;
    s.norm_b = o.norm_b;
    CMat A1inv = o.A1.cwiseInverse().cast<cplx>().asDiagonal();
    s.A = kron(It, o.A2);
    s.B = kron(Ct, A1inv) + kron(It, A1inv * o.C_eta2);
    return s;
}

}  // namespace qasian
