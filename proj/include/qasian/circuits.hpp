#pragma once

#include "qasian/grid.hpp"

#include <memory>
#include <string>
#include <vector>

namespace qasian {

struct Register {
    std::string name;
    int offset = 0;  // lowest qubit
    int width = 0;
};

class StateVector {
public:
    StateVector() = default;
    StateVector(CVec amp, std::vector<Register> layout);

    static StateVector basis(int n_qubits, long long index);
    // solution vector laid out tau-major: index = t * N_eta + x
    static StateVector from_grid_vector(const CVec& v, const GridSpec& spec);

    int n_qubits() const { return n_; }
    const CVec& amplitudes() const { return amp_; }
    CVec& amplitudes() { return amp_; }
    const std::vector<Register>& layout() const { return layout_; }
    const Register& reg(const std::string& name) const;

    double norm() const { return amp_.norm(); }
    void normalize();
    // |..x..> -> |..x+w mod 2^width..> on one register
    void shift(const std::string& reg_name, long long w);

private:
    CVec amp_;
    std::vector<Register> layout_;
    int n_ = 0;
};

RMat cyclic_shift(int n, long long w);
// in-place permutation action on a bare vector of length 2^n
void cyclic_shift_apply(CVec& v, long long w);

// operator applied to a vector of size 2^n_anc * sys_dim; ancilla index is the
// most significant part: idx = anc * sys_dim + sys
class EncNode {
public:
    virtual ~EncNode() = default;
    virtual void apply(CVec& v) const = 0;
    virtual void apply_adjoint(CVec& v) const = 0;
};

struct BlockEncoding {
    std::shared_ptr<const EncNode> node;
    long long sys_dim = 0;
    int n_anc = 0;
    double alpha = 1.0;
    double err = 0.0;

    long long total_dim() const { return sys_dim << n_anc; }
    CVec apply(const CVec& v) const;
    // alpha * (<0| (x) I) U (|0> (x) I)
    CMat projected() const;
    // <0|U|0> without the alpha factor
    CMat block() const;
    CMat dense_unitary() const;  // total_dim <= 2^12 only
    // max deviation from unitarity; exact for small encodings, sampled otherwise
    double unitarity_defect(int samples = 4, unsigned seed = 7) const;
};

BlockEncoding identity_encoding(long long sys_dim);
BlockEncoding unitary_encoding(const CMat& U);
// one-ancilla dilation; alpha defaults to ||A||_2
BlockEncoding dilation_encoding(const CMat& A, double alpha = 0.0);
// LCU of unitaries; ancilla register sized for max(#terms, min_slots) slots
BlockEncoding lcu_encoding(const std::vector<cplx>& coeffs, const std::vector<CMat>& unitaries,
                           int min_slots = 1);

BlockEncoding build_ctau1_encoding(const GridSpec& spec);
// first two terms only with dtau = T / 2^n_tau1
BlockEncoding build_ctau1_periodic_encoding(const GridSpec& spec);
// the four unitaries of the Dirichlet construction, in LCU order
std::vector<CMat> ctau1_terms(int n_tau1);
std::vector<cplx> ctau1_coefficients(double delta_tau1);

BlockEncoding encode_diagonal(const CMat& op, int n, bool reserve_identity = true);
BlockEncoding encode_diagonal(const CVec& diag, int n, bool reserve_identity = true);
BlockEncoding encode_spectral(const GridSpec& spec);
BlockEncoding encode_D_eta2(const GridSpec& spec, const MarketParams& p);

BlockEncoding be_product(const BlockEncoding& u, const BlockEncoding& v);
BlockEncoding be_lincomb(cplx d1, const BlockEncoding& u, cplx d2, const BlockEncoding& v);
// I_left (x) A (x) I_right
BlockEncoding be_tensor_identity(const BlockEncoding& u, long long left_dim, long long right_dim);

struct ApplyResult {
    StateVector state;
    double success_prob = 0;
    std::vector<std::string> warnings;
};
ApplyResult be_apply(const BlockEncoding& be, const StateVector& s, double starvation_floor = 1e-12);

struct TableIIAccount {
    int ctau1 = 0, d_eta1 = 0, d_eta2 = 0, a1_inv = 0, top_level = 0;
};
// B = C_tau1 (x) A1^-1 + I (x) A1^-1 C_eta2 assembled from block-encodings
struct BOperatorEncoding {
    BlockEncoding be;
    TableIIAccount anc;
};
BOperatorEncoding build_B_encoding(const GridSpec& spec, const MarketParams& p,
                                   TimeClosure c = TimeClosure::pinned);

}  // namespace qasian
