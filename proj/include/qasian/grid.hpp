#pragma once

#include "qasian/common.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace qasian {

enum class OptionKind { avg_rate_call, avg_rate_put, avg_strike_call, avg_strike_put };

std::string to_string(OptionKind k);
OptionKind kind_from_string(const std::string& s);

struct MarketParams {
    double sigma = 0.3;
    double r = 0.05;
    double q = 0.0;
    double T = 1.0;
    double K = 1.0;
    double eta_max = 3.0;
    OptionKind kind = OptionKind::avg_rate_call;
    // translates psi0 along eta; only used to push a kink onto a node
    double ic_shift = 0.0;

    void validate() const;
};

struct GridConfig {
    double scale_c = 1.0;   // constant inside the dtau ~ dhat^2 log(1/eps)/sigma^2 relation
    double c_smooth = 1.0;  // smoothing inequality constant
    double band = 1.4142135623730951;
    int n_tau1_cap = 20;
    double Delta_frac = 0.25;  // extraction start as a fraction of T
};

struct GridSpec {
    int n_eta = 0;
    int n_tau1 = 0;
    double delta_eta_hat = 0;
    double delta_eta = 0;
    double delta_tau1 = 0;
    double Delta = 0;
    double eps_target = 0;
    double eta_max = 0;
    double T = 0;

    int N_eta() const { return 1 << n_eta; }
    int N_tau() const { return 1 << n_tau1; }
    long long dim() const { return static_cast<long long>(N_eta()) * N_tau(); }
    // node positions: eta_x = eta_max * etahat_x, tau_t = (t+1) dtau
    double eta(int x) const { return eta_max * (-1.0 + delta_eta_hat / 2 + x * delta_eta_hat); }
    double tau(int t) const { return (t + 1) * delta_tau1; }
};

// smallest n_tau1 inside the scale band that also meets the smoothing inequality
GridSpec make_grid(const MarketParams& p, int n_eta, double eps_target, const GridConfig& cfg = {});
// explicit qubit counts, no scale relation enforced (tests, dumps)
GridSpec grid_from_counts(const MarketParams& p, int n_eta, int n_tau1, double eps_target = 0.1,
                          const GridConfig& cfg = {});

enum class TimeClosure {
    pinned,        // psi(T) = psi0 on the far boundary
    extrapolated,  // one-sided last row, no far-boundary data
};
std::string to_string(TimeClosure c);
TimeClosure closure_from_string(const std::string& s);

// Z-string expansion of a diagonal: diag = sum_mask c_mask prod_{j in mask} Z_j
struct PauliDiag {
    int n = 0;
    std::vector<std::pair<std::uint32_t, cplx>> terms;  // nonzero terms only
    CVec reconstruct() const;
};
PauliDiag pauli_expand(const CVec& diag, int n, double tol = 1e-14);

RVec eta_hat_diag(int n);
std::pair<RVec, PauliDiag> build_eta_operator(const GridSpec& spec);

CMat build_centered_dft(int n);
RMat build_time_derivative(const GridSpec& spec);
// d/deta on the antiperiodic centered-Fourier basis
CMat build_spectral_derivative(const GridSpec& spec);

CMat build_C_eta1(const GridSpec& spec, const MarketParams& p);
CMat build_C_eta2(const GridSpec& spec, const MarketParams& p);
// D_eta1 = F^dag etahat F, D_eta2 = diagonal prefactor; C_eta2 = D_eta2 * D_eta1
CMat build_D_eta1(const GridSpec& spec);
CVec build_D_eta2_diag(const GridSpec& spec, const MarketParams& p);
RVec build_A1_diag(const GridSpec& spec, const MarketParams& p);
CMat build_A2(const GridSpec& spec);

// dtau-scaled correction added to C_tau1 by the closure
RMat closure_correction(int n_tau1, TimeClosure c);

double psi0(const MarketParams& p, double eta);

struct RhsResult {
    CVec rhs_hat;
    double norm_b = 0;
};
RhsResult build_rhs(const GridSpec& spec, const MarketParams& p, TimeClosure c = TimeClosure::pinned);

struct OperatorSet {
    RMat C_tau1;  // dtau-scaled Eq-25 matrix: +-1/2 off the diagonal
    RMat closure;  // zero for the pinned closure
    CMat C_eta1;
    CMat C_eta2;
    RVec A1;
    CMat A2;
    CVec rhs_hat;
    double norm_b = 0;
    TimeClosure kind = TimeClosure::pinned;

    RMat time_operator() const { return C_tau1 + closure; }
    CMat space_operator() const { return C_eta1 + C_eta2; }
};
OperatorSet build_operators(const GridSpec& spec, const MarketParams& p,
                            TimeClosure c = TimeClosure::pinned);

struct LinearSystem {
    CMat M;
    CVec b_hat;
    CMat A;
    CMat B;
    double norm_b = 0;
};
constexpr long long kDenseCap = 4096;
LinearSystem assemble_system(const GridSpec& spec, const MarketParams& p,
                             TimeClosure c = TimeClosure::pinned, long long dense_cap = kDenseCap);

CMat kron(const CMat& a, const CMat& b);

}  // namespace qasian
