#include "qasian/inversion.hpp"

#include <lapacke.h>
#include <omp.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>

namespace qasian {

void QPEConfig::validate() const {
    if (T_HHL < 2 || !is_pow2(T_HHL)) throw ValidationError("T_HHL must be a power of two >= 2");
    if (!(t0 > 0)) throw ValidationError("t0 must be > 0");
    if (!(C > 0 && C < 1)) throw ValidationError("rotation constant C must lie in (0,1)");
    if (!(p_fail > 0 && p_fail < 1)) throw ValidationError("p_fail must lie in (0,1)");
    if (T_HHL < c_window / std::sqrt(p_fail)) throw ValidationError("T_HHL below c/sqrt(p_fail)");
}

QPEConfig make_qpe_config(double t0, double kappa_hat, double p_fail) {
    QPEConfig c;
    c.t0 = t0;
    c.p_fail = p_fail;
    c.C = 0.5 / kappa_hat;
    double need = std::max({t0, c.c_window / std::sqrt(p_fail), 2.0});
    long long T = 2;
    while (T < need) T <<= 1;
    c.T_HHL = static_cast<int>(T);
    return c;
}

RVec window_state(int T) {
    if (T < 1) throw ValidationError("T_HHL must be >= 1");
    RVec w(T);
    const double s = std::sqrt(2.0 / T);
    for (int t = 0; t < T; ++t) w(t) = s * std::sin(kPi * (t + 0.5) / T);
    return w;
}

namespace {

// sum_{tau<T} e^{i tau x}
cplx geom(double x, int T) {
    double xr = std::remainder(x, 2 * kPi);
    if (std::abs(xr) < 1e-12) return cplx(T, 0);
    return (1.0 - std::polar(1.0, T * x)) / (1.0 - std::polar(1.0, x));
}

// alpha_{k|j} for phase phi = lambda_hat * t0
cplx alpha_k(double phi, int k, int T) {
    const double th = (phi - 2 * kPi * k) / T;
    const double a = kPi / T;
    const cplx i(0, 1);
    cplx s = (std::polar(1.0, a / 2) * geom(th + a, T) - std::polar(1.0, -a / 2) * geom(th - a, T)) / (2.0 * i);
    return s * std::sqrt(2.0 / T) / std::sqrt(static_cast<double>(T));
}

struct One {
    double inv_hat;
    double prob;
    int bin;
};

One qpe_one(double lam_hat, const QPEConfig& cfg) {
    const int T = cfg.T_HHL;
    const double phi = lam_hat * cfg.t0;
    const int kc = static_cast<int>(std::lround(phi / (2 * kPi)));
    int best = -1;
    double bp = -1;
    for (int k = std::max(0, kc - 2); k <= std::min(T - 1, kc + 2); ++k) {
        double p = std::norm(alpha_k(phi, k, T));
        if (p > bp) {
            bp = p;
            best = k;
        }
    }
    if (best <= 0) throw NumericalError("eigenvalue below the phase resolution 2*pi/t0");
    double prob = 0;
    for (int k = 0; k < T; ++k) {
        double lp = 2 * kPi * k / cfg.t0;
        double amp = (k == 0) ? 1.0 : std::min(1.0, cfg.C / lp);
        prob += std::norm(alpha_k(phi, k, T)) * amp * amp;
    }
    return {cfg.t0 / (2 * kPi * best), prob, best};
}

void qpe_check(const RVec& ev, const QPEConfig& cfg, double& nA) {
    cfg.validate();
    if (ev.size() == 0) throw ValidationError("no eigenvalues");
    if (nA <= 0) nA = ev.cwiseAbs().maxCoeff();
    for (Eigen::Index j = 0; j < ev.size(); ++j)
        if (ev(j) == 0.0) throw ValidationError("zero eigenvalue");
    if (ev.cwiseAbs().maxCoeff() / nA * cfg.t0 / (2 * kPi) >= cfg.T_HHL)
        throw NumericalError("aliasing: max|lambda_hat| t0 / 2pi >= T_HHL");
}

}  // namespace

QPEResult qpe_invert_serial(const RVec& ev, const QPEConfig& cfg, double nA) {
    qpe_check(ev, cfg, nA);
    QPEResult r;
    r.inv_estimates.resize(ev.size());
    r.success_probs.resize(ev.size());
    r.bins.resize(ev.size());
    for (Eigen::Index j = 0; j < ev.size(); ++j) {
        One o = qpe_one(std::abs(ev(j)) / nA, cfg);
        r.inv_estimates(j) = (ev(j) < 0 ? -1.0 : 1.0) * o.inv_hat / nA;
        r.success_probs(j) = o.prob;
        r.bins[j] = o.bin;
    }
    return r;
}

QPEResult qpe_invert(const RVec& ev, const QPEConfig& cfg, double nA) {
    qpe_check(ev, cfg, nA);
    QPEResult r;
    const Eigen::Index n = ev.size();
    r.inv_estimates.resize(n);
    r.success_probs.resize(n);
    r.bins.resize(n);
    bool failed = false;
#pragma omp parallel for schedule(dynamic)
    for (Eigen::Index j = 0; j < n; ++j) {
        try {
            One o = qpe_one(std::abs(ev(j)) / nA, cfg);
            r.inv_estimates(j) = (ev(j) < 0 ? -1.0 : 1.0) * o.inv_hat / nA;
            r.success_probs(j) = o.prob;
            r.bins[j] = o.bin;
        } catch (...) {
#pragma omp atomic write
            failed = true;
        }
    }
    if (failed) throw NumericalError("eigenvalue below the phase resolution 2*pi/t0");
    return r;
}

RVec factor_eigenvalues(Factor kind, const GridSpec& spec, const MarketParams& p) {
    if (kind == Factor::A1) return build_A1_diag(spec, p);
    RVec e = eta_hat_diag(spec.n_eta);
    return e.array().square().matrix() / (spec.delta_eta_hat * spec.delta_eta_hat);
}

static CMat rebuild(Factor kind, const GridSpec& spec, const RVec& inv) {
    if (kind == Factor::A1) return inv.cast<cplx>().asDiagonal();
    CMat F = build_centered_dft(spec.n_eta);
    return F.adjoint() * inv.cast<cplx>().asDiagonal() * F;
}

CMat fast_invert_exact(Factor kind, const GridSpec& spec, const MarketParams& p, double floor) {
    RVec ev = factor_eigenvalues(kind, spec, p);
    for (Eigen::Index j = 0; j < ev.size(); ++j)
        if (std::abs(ev(j)) < floor) throw NumericalError("singular factor: eigenvalue below floor");
    return rebuild(kind, spec, ev.cwiseInverse());
}

CMat fast_invert_qpe(Factor kind, const GridSpec& spec, const MarketParams& p, const QPEConfig& cfg) {
    RVec ev = factor_eigenvalues(kind, spec, p);
    return rebuild(kind, spec, qpe_invert(ev, cfg).inv_estimates);
}

PreconditionReport splitting_report(const CMat& A, const CMat& B) {
    PreconditionReport r;
    const long long n = A.rows();
    CMat Ainv = A.partialPivLu().inverse();
    CMat W = CMat::Identity(n, n) + Ainv * B;
    RVec sAB = singular_values(A + B);
    RVec sW = singular_values(W);
    r.norm_B = spectral_norm(B);
    r.norm_Ainv = spectral_norm(Ainv);
    r.norm_ABinv = 1.0 / sAB(sAB.size() - 1);
    r.kappa_raw = sAB(0) / sAB(sAB.size() - 1);
    r.kappa_W = sW(0) / sW(sW.size() - 1);
    r.norm_Winv = 1.0 / sW(sW.size() - 1);
    r.C_AB = 1.0 + r.norm_ABinv * r.norm_B;
    r.C_AB_prime = 1.0 + r.norm_Ainv * r.norm_B;
    r.bound_satisfied = r.kappa_W <= r.C_AB * r.C_AB_prime * (1.0 + 1e-10);
    return r;
}

PreconditionResult precondition(const GridSpec& spec, const MarketParams& p, const PreconditionOptions& opt) {
    LinearSystem s = assemble_system(spec, p, opt.closure, opt.dense_cap);
    const int M = spec.N_tau();
    CMat A1inv = fast_invert_exact(Factor::A1, spec, p);
    CMat A2inv = fast_invert_exact(Factor::A2, spec, p);
    CMat B = opt.zero_B ? CMat::Zero(s.B.rows(), s.B.cols()) : s.B;
    // I (x) A2^-1 is block diagonal, apply it one time block at a time
    const int N = spec.N_eta();
    PreconditionResult out;
    out.W = CMat::Identity(spec.dim(), spec.dim());
    out.rhs_pre.resize(spec.dim());
    for (int t = 0; t < M; ++t) {
        out.W.middleRows(t * N, N).noalias() += A2inv * B.middleRows(t * N, N);
        out.rhs_pre.segment(t * N, N) = A2inv * (A1inv * s.b_hat.segment(t * N, N));
    }
    out.alpha_A1inv = A1inv.cwiseAbs().diagonal().maxCoeff();
    out.alpha_Ainv = spectral_norm(A2inv);
    if (opt.compute_report) {
        PreconditionReport& r = out.report;
        const auto [ab_hi, ab_lo] = singular_extremes(s.A + B);
        const auto [w_hi, w_lo] = singular_extremes(out.W);
        r.norm_B = opt.zero_B ? 0.0 : spectral_norm(B);
        r.norm_Ainv = out.alpha_Ainv;
        r.norm_ABinv = 1.0 / ab_lo;
        r.kappa_raw = ab_hi / ab_lo;
        r.kappa_W = w_hi / w_lo;
        r.norm_Winv = 1.0 / w_lo;
        r.C_AB = 1.0 + r.norm_ABinv * r.norm_B;
        r.C_AB_prime = 1.0 + r.norm_Ainv * r.norm_B;
        r.bound_satisfied = r.kappa_W <= r.C_AB * r.C_AB_prime * (1.0 + 1e-10);
    }
    return out;
}

SolveResult solve_system(const CMat& W, const CVec& rhs, double tol) {
    if (W.rows() != W.cols() || W.rows() != rhs.size()) throw ValidationError("solve_system: shape mismatch");
    Eigen::PartialPivLU<CMat> lu(W);
    SolveResult r;
    r.method = "dense-lu";
    r.x = lu.solve(rhs);
    CVec res = rhs - W * r.x;
    r.x += lu.solve(res);
    res = rhs - W * r.x;
    const double nb = rhs.norm();
    r.rel_residual = nb > 0 ? res.norm() / nb : res.norm();
    if (!std::isfinite(r.rel_residual) || r.rel_residual > tol)
        throw NumericalError("solve_system: relative residual " + std::to_string(r.rel_residual));
    return r;
}

namespace {

// X (M x N) from x with x(t*N+i) = X(t,i)
CMat as_mat(const CVec& x, long long M, long long N) {
    CMat X(M, N);
    for (long long t = 0; t < M; ++t)
        for (long long i = 0; i < N; ++i) X(t, i) = x(t * N + i);
    return X;
}

CVec as_vec(const CMat& X) {
    CVec x(X.size());
    for (long long t = 0; t < X.rows(); ++t)
        for (long long i = 0; i < X.cols(); ++i) x(t * X.cols() + i) = X(t, i);
    return x;
}

void tridiag_solve(const RMat& Ct, cplx mu, CVec& rhs) {
    const lapack_int M = static_cast<lapack_int>(Ct.rows());
    std::vector<cplx> dl(std::max(M - 1, 1)), d(M), du(std::max(M - 1, 1));
    for (lapack_int i = 0; i < M; ++i) d[i] = Ct(i, i) + mu;
    for (lapack_int i = 0; i + 1 < M; ++i) {
        dl[i] = Ct(i + 1, i);
        du[i] = Ct(i, i + 1);
    }
    lapack_int info = LAPACKE_zgtsv(LAPACK_COL_MAJOR, M, 1, reinterpret_cast<lapack_complex_double*>(dl.data()),
                                    reinterpret_cast<lapack_complex_double*>(d.data()),
                                    reinterpret_cast<lapack_complex_double*>(du.data()),
                                    reinterpret_cast<lapack_complex_double*>(rhs.data()), M);
    if (info != 0) throw NumericalError("tridiagonal block singular (zgtsv info=" + std::to_string(info) + ")");
}

void check_tridiagonal(const RMat& Ct) {
    const long long M = Ct.rows();
    for (long long i = 0; i < M; ++i)
        for (long long j = 0; j < M; ++j)
            if (std::abs(i - j) > 1 && Ct(i, j) != 0.0) throw ValidationError("time operator is not tridiagonal");
}

}  // namespace

KronSolver::KronSolver(const RMat& Ct, const CMat& L) : Ct_(Ct), L_(L) {
    check_tridiagonal(Ct_);
    if (Ct_.rows() != Ct_.cols() || L_.rows() != L_.cols()) throw ValidationError("KronSolver: square factors only");
    Eigen::ComplexSchur<CMat> schur(L_);
    Q_ = schur.matrixU();
    T_ = schur.matrixT();
}

// Ct X + X L^T = B; with L = Q T Q^H and Y = X conj(Q): Ct Y + Y T^T = B conj(Q)
CVec KronSolver::core(const CVec& b) const {
    const long long M = Ct_.rows(), N = L_.rows();
    CMat Bh = as_mat(b, M, N) * Q_.conjugate();
    CMat Y = CMat::Zero(M, N);
    for (long long k = N - 1; k >= 0; --k) {
        CVec rhs = Bh.col(k);
        if (k + 1 < N) rhs.noalias() -= Y.rightCols(N - 1 - k) * T_.row(k).tail(N - 1 - k).transpose();
        tridiag_solve(Ct_, T_(k, k), rhs);
        Y.col(k) = rhs;
    }
    return as_vec(Y * Q_.transpose());
}

// Ct^T X + X conj(L) = B; Y = X conj(Q): Ct^T Y + Y conj(T) = B conj(Q), forward in k
CVec KronSolver::core_adjoint(const CVec& b) const {
    const long long M = Ct_.rows(), N = L_.rows();
    RMat CtT = Ct_.transpose();
    CMat Bh = as_mat(b, M, N) * Q_.conjugate();
    CMat Y = CMat::Zero(M, N);
    for (long long k = 0; k < N; ++k) {
        CVec rhs = Bh.col(k);
        if (k > 0) rhs.noalias() -= Y.leftCols(k) * T_.col(k).head(k).conjugate();
        tridiag_solve(CtT, std::conj(T_(k, k)), rhs);
        Y.col(k) = rhs;
    }
    return as_vec(Y * Q_.transpose());
}

CVec KronSolver::apply(const CVec& x) const { return apply_kron(Ct_, L_, x); }

CVec KronSolver::apply_adjoint(const CVec& x) const {
    const long long M = Ct_.rows(), N = L_.rows();
    CMat X = as_mat(x, M, N);
    CMat R = Ct_.transpose().cast<cplx>() * X + X * L_.conjugate();
    return as_vec(R);
}

SolveResult KronSolver::solve(const CVec& b, double tol) const {
    if (b.size() != Ct_.rows() * L_.rows()) throw ValidationError("solve_kron: size mismatch");
    SolveResult r;
    r.method = "kron-schur";
    r.x = core(b);
    r.x += core(b - apply(r.x));
    r.rel_residual = (b - apply(r.x)).norm() / b.norm();
    if (!std::isfinite(r.rel_residual) || r.rel_residual > tol)
        throw NumericalError("solve_kron: relative residual " + std::to_string(r.rel_residual));
    return r;
}

SolveResult KronSolver::solve_adjoint(const CVec& b, double tol) const {
    if (b.size() != Ct_.rows() * L_.rows()) throw ValidationError("solve_kron: size mismatch");
    SolveResult r;
    r.method = "kron-schur";
    r.x = core_adjoint(b);
    r.x += core_adjoint(b - apply_adjoint(r.x));
    r.rel_residual = (b - apply_adjoint(r.x)).norm() / b.norm();
    if (!std::isfinite(r.rel_residual) || r.rel_residual > tol)
        throw NumericalError("solve_kron_adjoint: relative residual " + std::to_string(r.rel_residual));
    return r;
}

CVec apply_kron(const RMat& Ct, const CMat& L, const CVec& x) {
    const long long M = Ct.rows(), N = L.rows();
    CMat X = as_mat(x, M, N);
    CMat R = Ct.cast<cplx>() * X + X * L.transpose();
    return as_vec(R);
}

SolveResult solve_kron(const RMat& Ct, const CMat& L, const CVec& b, double tol) {
    if (b.size() != Ct.rows() * L.rows()) throw ValidationError("solve_kron: size mismatch");
    return KronSolver(Ct, L).solve(b, tol);
}

SolveResult solve_kron_adjoint(const RMat& Ct, const CMat& L, const CVec& b, double tol) {
    if (b.size() != Ct.rows() * L.rows()) throw ValidationError("solve_kron: size mismatch");
    return KronSolver(Ct, L).solve_adjoint(b, tol);
}

std::string to_string(InversionMode m) { return m == InversionMode::exact ? "exact" : "qpe"; }

InversionMode inversion_from_string(const std::string& s) {
    if (s == "exact" || s == "exact-inversion") return InversionMode::exact;
    if (s == "qpe" || s == "qpe-inversion") return InversionMode::qpe;
    throw ValidationError("unknown inversion mode '" + s + "'");
}

PricingSolve solve_pricing(const GridSpec& spec, const MarketParams& p, const PricingSolveOptions& opt) {
    OperatorSet o = build_operators(spec, p, opt.closure);
    const long long N = spec.N_eta(), M = spec.N_tau();
    CMat A1inv, A2inv;
    if (opt.inversion == InversionMode::exact) {
        A1inv = fast_invert_exact(Factor::A1, spec, p);
        A2inv = fast_invert_exact(Factor::A2, spec, p);
    } else {
        RVec e1 = factor_eigenvalues(Factor::A1, spec, p), e2 = factor_eigenvalues(Factor::A2, spec, p);
        double k1 = e1.maxCoeff() / e1.minCoeff(), k2 = e2.maxCoeff() / e2.minCoeff();
        double t0a = opt.qpe_t0 > 0 ? opt.qpe_t0 : 64.0 * 2 * kPi * k1;
        double t0b = opt.qpe_t0 > 0 ? opt.qpe_t0 : 64.0 * 2 * kPi * k2;
        A1inv = fast_invert_qpe(Factor::A1, spec, p, make_qpe_config(t0a, k1));
        A2inv = fast_invert_qpe(Factor::A2, spec, p, make_qpe_config(t0b, k2));
    }
    // applied preconditioner P = A2^-1 A1^-1; the solved system is Ct (x) I + I (x) (P^-1 + C_eta2)
    CMat P = A2inv * A1inv;
    CMat Pinv = P.partialPivLu().inverse();
    CMat L = Pinv + o.C_eta2;
    RMat Ct = o.time_operator();

    PricingSolve out;
    out.norm_b = o.norm_b;
    out.alpha_A1inv = A1inv.cwiseAbs().maxCoeff();
    out.alpha_Ainv = spectral_norm(A2inv);

    CVec rhs_pre = CVec::Zero(spec.dim());
    for (long long t = 0; t < M; ++t) rhs_pre.segment(t * N, N) = P * o.rhs_hat.segment(t * N, N);
    auto apply_W = [&](const CVec& x) {
        CVec y = apply_kron(Ct, L, x);
        for (long long t = 0; t < M; ++t) y.segment(t * N, N) = P * y.segment(t * N, N);
        return y;
    };

    if (spec.dim() <= opt.dense_cap) {
        CMat It = CMat::Identity(M, M);
        CMat Wd = kron(Ct.cast<cplx>(), CMat::Identity(N, N)) + kron(It, L);
        for (long long t = 0; t < M; ++t) Wd.middleRows(t * N, N) = P * Wd.middleRows(t * N, N);
        SolveResult s = solve_system(Wd, rhs_pre);
        out.x = s.x;
        out.method = s.method;
    }
    KronSolver ks(Ct, L);
    if (spec.dim() > opt.dense_cap) {
        SolveResult s = ks.solve(o.rhs_hat);
        out.x = s.x;
        out.method = s.method;
    }
    // ||W^-1||: power iteration on W^-H W^-1 with W = (I (x) P) K
    {
        CMat PinvH = Pinv.adjoint();
        CVec v = CVec::Ones(spec.dim()).normalized();
        double lam = 0;
        for (int it = 0; it < opt.power_iters; ++it) {
            CVec w = v;
            for (long long t = 0; t < M; ++t) w.segment(t * N, N) = Pinv * w.segment(t * N, N);
            w = ks.solve(w, 1e-8).x;
            w = ks.solve_adjoint(w, 1e-8).x;
            for (long long t = 0; t < M; ++t) w.segment(t * N, N) = PinvH * w.segment(t * N, N);
            lam = w.norm();
            v = w / lam;
        }
        out.alpha_Winv = std::sqrt(lam);
    }
    CVec res = rhs_pre - apply_W(out.x);
    out.rel_residual = res.norm() / rhs_pre.norm();
    if (!(out.rel_residual < 1e-10))
        throw NumericalError("pricing solve residual " + std::to_string(out.rel_residual));
    const double ap = out.alpha_A1inv * out.alpha_Ainv * out.alpha_Winv;
    out.success_prob = out.x.squaredNorm() / (ap * ap);
    out.psi.resize(M, N);
    const double s = std::sqrt(o.norm_b);
    for (long long t = 0; t < M; ++t)
        for (long long i = 0; i < N; ++i) out.psi(t, i) = s * out.x(t * N + i).real();
    return out;
}

}  // namespace qasian
