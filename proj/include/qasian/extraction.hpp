#pragma once

#include "qasian/circuits.hpp"
#include "qasian/grid.hpp"

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace qasian {

struct Segment {
    long long shift = 0;
    int m = 0;  // measured (top) qubits; block size 2^(n-m)
    long long size(int n) const { return 1LL << (n - m); }
};

struct SegmentationPlan {
    std::vector<Segment> segments;
    long long covered = 0;
    int n = 0;
};

SegmentationPlan plan_segments(long long x_i, long long x_f, int n);

enum class AEMode { exact, stochastic, adversarial, shots };
std::string to_string(AEMode m);
AEMode ae_mode_from_string(const std::string& s);

struct AmplitudeEstimator {
    AEMode mode = AEMode::exact;
    double eps_prime = 1e-4;
    std::uint64_t seed = 1;
    long long shots = 1000;

    void validate() const;
    // estimate of sqrt(q); key picks an independent random stream
    double estimate_sqrt(double q, std::uint64_t key) const;
    // accounted cost of one call
    double call_cost() const;
    // |sqrt(q~) - sqrt(q)| bound for one call (0 in exact mode, statistical for shots)
    double amp_bound(double q) const;
};

std::uint64_t mix_key(std::uint64_t a, std::uint64_t b);

struct WindowEstimate {
    double value = 0;      // sum / 2^n
    double err_bound = 0;  // on value
    int calls = 0;
    double cost = 0;
    std::vector<std::string> warnings;
};

// probability that `reg` lies in [w, w + size) mod 2^width, marginal over the rest
double block_probability(const StateVector& s, const Register& reg, long long w, long long size);
double block_probability_serial(const StateVector& s, const Register& reg, long long w, long long size);
// literal route: copy, shift by -w, read all-zeros on the top m qubits
double segment_probability_by_shift(const StateVector& s, const std::string& reg, long long w, int m);
// joint probability of two register blocks
double block_probability_2d(const StateVector& s, const Register& ra, long long wa, long long sa,
                            const Register& rb, long long wb, long long sb);

WindowEstimate estimate_window_integral(const StateVector& s, long long x_i, long long x_f,
                                        const AmplitudeEstimator& est, const std::string& reg = "",
                                        std::uint64_t key = 0);

enum class Placement { centers, edges };

struct NodeSet {
    std::vector<long long> index;  // grid index (centers) or edge count (edges)
    RVec s_exact;
    RVec s_snapped;
    long long N = 0;  // number of cells
    Placement placement = Placement::centers;
    int fallbacks = 0;
    double max_offset = 0;  // max |s - s'|

    int M() const { return static_cast<int>(index.size()); }
};

RVec chebyshev_nodes(int M);
// grid s' values: cell centers -1 + (2i+1)/N, or edges -1 + 2e/N (N+1 points)
NodeSet mock_cheb_nodes(int M, long long N, long long lo, long long hi,
                        Placement pl = Placement::centers);

// V(k, j) = u_j(s_k), u_0 = sqrt(1/M) T_0, u_j = sqrt(2/M) T_j
RMat cheb_vandermonde(const RVec& s, int M);
double cond_2(const RMat& V);
RVec fit_interpolant(const RVec& samples, const RVec& s_nodes, double kappa_ceiling = 1e6);

// evaluation in the u basis
double interp_eval(const RVec& a, double s);
// sum a_j u_j'(s) via dT_n/ds = n U_{n-1}(s)
double interp_deriv(const RVec& a, double s);
// d^k/ds^k via Chebyshev coefficient recurrence
double interp_deriv_k(const RVec& a, double s, int k);
// u-basis values and first derivatives at s
RVec basis_values(int M, double s);
RVec basis_derivs(int M, double s);

struct DerivativeEvaluator {
    RVec a;
    double operator()(double s) const { return interp_deriv(a, s); }
};
DerivativeEvaluator differentiate_interpolant(const RVec& a);

struct ShiftedSqrt {
    RVec values;
    double shift = 0;
};
ShiftedSqrt positive_shift_sqrt(const RVec& values, double eps_shift);

// tensor Chebyshev interpolant on a physical rectangle; coeffs(j_tau, j_eta)
struct Interpolant2D {
    RMat coeffs;
    NodeSet nodes_eta, nodes_tau;
    // physical coordinate -> s: s = -1 + 2 (x - lo) / width
    double eta_lo = -1, eta_width = 2, tau_lo = -1, tau_width = 2;

    double s_eta(double eta) const { return -1.0 + 2.0 * (eta - eta_lo) / eta_width; }
    double s_tau(double tau) const { return -1.0 + 2.0 * (tau - tau_lo) / tau_width; }
    bool in_domain(double eta, double tau, double tol = 1e-12) const;
    // derivative orders in s_eta, s_tau, converted to physical units
    double eval(double eta, double tau, int d_eta = 0, int d_tau = 0) const;
};
// samples(l, k): value at tau node l, eta node k
Interpolant2D fit_interpolant_2d(const RMat& samples, const NodeSet& nodes_eta, const NodeSet& nodes_tau,
                                 double eta_lo, double eta_width, double tau_lo, double tau_width,
                                 double kappa_ceiling = 1e6);

struct ExtractConfig {
    int M_eta = 8;
    int M_tau1 = 8;
    double Delta = -1;  // < 0: spec.Delta
    double eta_lo = -std::numeric_limits<double>::infinity();
    double eta_hi = std::numeric_limits<double>::infinity();
    double eps_shift = -1;  // < 0: propagated density bound
    double kappa_ceiling = 1e6;
    // psi^2 = scale * |amp|^2 at a node
    double scale = 1.0;
    std::string eta_reg = "eta";
    std::string tau_reg = "tau1";
};

struct NodeRecord {
    int k = 0, l = 0;
    long long e_eta = 0, e_tau = 0;
    double s_eta = 0, s_tau = 0;
    double raw = 0;
    double err_bound = 0;
    int calls = 0;
    double cost = 0;
};

struct Extraction {
    // interpolant of the prefix probability in edge units
    Interpolant2D Psi;
    GridSpec spec;
    long long x_lo = 0, x_hi = 0, t_lo = 0, t_hi = 0;
    double scale = 1;
    double shift = 0;
    double density_bound = 0;  // on |amp|^2 per cell
    double psi_bound = 0;
    double min_density = 0;
    double total_cost = 0;
    long long total_calls = 0;
    double kappa_eta = 1, kappa_tau = 1;
    std::vector<NodeRecord> nodes;
    std::vector<std::string> warnings;

    // |amp|^2 per cell from the interpolant
    double density(double eta, double tau) const;
    double psi(double eta, double tau) const;
    double dpsi_deta(double eta, double tau) const;
    double dpsi_dtau(double eta, double tau) const;
    bool in_domain(double eta, double tau) const;
};

Extraction extract_psi_2d(const StateVector& s, const GridSpec& spec, const ExtractConfig& cfg,
                          const AmplitudeEstimator& est);

struct Greeks {
    double delta_like = 0;  // d psi / d eta
    double theta_like = 0;  // d psi / d tau1
};
Greeks greeks(const Interpolant2D& interp, const MarketParams& p, double eta, double tau);
Greeks greeks(const Extraction& ex, const MarketParams& p, double eta, double tau);

struct ContractGreeks {
    double delta = 0;  // dV/dS
    double theta = 0;  // dV/dt
};
// chain rule through V = S e^{-q(T-t)} psi(eta(S,I), T-t)
ContractGreeks contract_greeks(const Greeks& g, double psi_val, const MarketParams& p, double S, double I,
                               double t);

}  // namespace qasian
