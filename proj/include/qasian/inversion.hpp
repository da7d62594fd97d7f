#pragma once

#include "qasian/grid.hpp"

#include <string>
#include <vector>

namespace qasian {

struct QPEConfig {
    int T_HHL = 256;
    double t0 = 256.0;
    double C = 0.5;  // rotation constant, < 1
    double p_fail = 0.1;
    double c_window = 1.0;  // T_HHL >= c_window / sqrt(p_fail)

    void validate() const;
};

// T_HHL = smallest power of two >= max(t0, c/sqrt(p_fail), 2)
QPEConfig make_qpe_config(double t0, double kappa_hat, double p_fail = 0.1);

RVec window_state(int T_HHL);

struct QPEResult {
    RVec inv_estimates;  // estimates of 1/lambda_j in the original units
    RVec success_probs;
    std::vector<int> bins;
};
// norm_A <= 0 means max |lambda|
QPEResult qpe_invert(const RVec& eigenvalues, const QPEConfig& cfg, double norm_A = 0.0);
QPEResult qpe_invert_serial(const RVec& eigenvalues, const QPEConfig& cfg, double norm_A = 0.0);

enum class Factor { A1, A2 };
CMat fast_invert_exact(Factor kind, const GridSpec& spec, const MarketParams& p, double floor = 1e-300);
// eigenvalues of A1 (position basis) or A2 (centered-Fourier basis), ascending index order
RVec factor_eigenvalues(Factor kind, const GridSpec& spec, const MarketParams& p);
// inverse rebuilt from QPE estimates of the factor eigenvalues
CMat fast_invert_qpe(Factor kind, const GridSpec& spec, const MarketParams& p, const QPEConfig& cfg);

struct PreconditionReport {
    double kappa_raw = 0;
    double kappa_W = 0;
    double C_AB = 0;
    double C_AB_prime = 0;
    double norm_B = 0;
    double norm_Ainv = 0;
    double norm_ABinv = 0;
    double norm_Winv = 0;
    bool bound_satisfied = false;
};
// condition quantities of the A + B splitting for arbitrary A, B
PreconditionReport splitting_report(const CMat& A, const CMat& B);

struct PreconditionResult {
    CMat W;
    CVec rhs_pre;
    PreconditionReport report;
    double alpha_A1inv = 0;
    double alpha_Ainv = 0;
};
struct PreconditionOptions {
    TimeClosure closure = TimeClosure::pinned;
    bool zero_B = false;
    bool compute_report = true;
    long long dense_cap = kDenseCap;
};
PreconditionResult precondition(const GridSpec& spec, const MarketParams& p, const PreconditionOptions& opt = {});

struct SolveResult {
    CVec x;
    double rel_residual = 0;
    std::string method;
};
// dense LU with one refinement step
SolveResult solve_system(const CMat& W, const CVec& rhs, double tol = 1e-10);

// (Ct (x) I + I (x) L) x = b, Ct tridiagonal M x M; x indexed t*N + i
SolveResult solve_kron(const RMat& Ct, const CMat& L, const CVec& b, double tol = 1e-10);
SolveResult solve_kron_adjoint(const RMat& Ct, const CMat& L, const CVec& b, double tol = 1e-10);
CVec apply_kron(const RMat& Ct, const CMat& L, const CVec& x);

// Schur factor of L kept for repeated solves
class KronSolver {
public:
    KronSolver(const RMat& Ct, const CMat& L);
    SolveResult solve(const CVec& b, double tol = 1e-10) const;
    SolveResult solve_adjoint(const CVec& b, double tol = 1e-10) const;
    CVec apply(const CVec& x) const;
    CVec apply_adjoint(const CVec& x) const;

private:
    CVec core(const CVec& b) const;
    CVec core_adjoint(const CVec& b) const;
    RMat Ct_;
    CMat L_, Q_, T_;
};

enum class InversionMode { exact, qpe };
std::string to_string(InversionMode m);
InversionMode inversion_from_string(const std::string& s);

struct PricingSolve {
    CVec x;         // solution for the unit right-hand side |b-hat>
    RMat psi;       // sqrt(N_b) * Re x, shaped (N_tau, N_eta)
    double norm_b = 0;
    double rel_residual = 0;  // of the preconditioned system
    double alpha_A1inv = 0, alpha_Ainv = 0, alpha_Winv = 0;
    double success_prob = 0;  // ||x||^2 / (alpha product)^2
    std::string method;
};
struct PricingSolveOptions {
    TimeClosure closure = TimeClosure::extrapolated;
    InversionMode inversion = InversionMode::exact;
    double qpe_t0 = 0;  // 0: chosen from the factor condition numbers
    long long dense_cap = kDenseCap;
    int power_iters = 30;
};
PricingSolve solve_pricing(const GridSpec& spec, const MarketParams& p, const PricingSolveOptions& opt = {});

}  // namespace qasian
