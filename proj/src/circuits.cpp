#include "qasian/circuits.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>

namespace qasian {

// ---------- state vectors ----------

StateVector::StateVector(CVec amp, std::vector<Register> layout) : amp_(std::move(amp)), layout_(std::move(layout)) {
    if (!is_pow2(amp_.size())) throw ValidationError("state length must be a power of two");
    n_ = std::countr_zero(static_cast<unsigned long long>(amp_.size()));
    for (const auto& r : layout_)
        if (r.offset < 0 || r.width < 0 || r.offset + r.width > n_)
            throw ValidationError("register '" + r.name + "' outside the state");
}

StateVector StateVector::basis(int n_qubits, long long index) {
    CVec a = CVec::Zero(1LL << n_qubits);
    a(index) = 1.0;
    return StateVector(a, {{"q", 0, n_qubits}});
}

StateVector StateVector::from_grid_vector(const CVec& v, const GridSpec& spec) {
    if (v.size() != spec.dim()) throw ValidationError("grid vector has wrong length");
    StateVector s(v, {{"eta", 0, spec.n_eta}, {"tau1", spec.n_eta, spec.n_tau1}});
    s.normalize();
    return s;
}

const Register& StateVector::reg(const std::string& name) const {
    for (const auto& r : layout_)
        if (r.name == name) return r;
    throw ValidationError("no register named '" + name + "'");
}

void StateVector::normalize() {
    double n = amp_.norm();
    if (n == 0.0) throw NumericalError("cannot normalize a zero state");
    amp_ /= n;
}

void StateVector::shift(const std::string& reg_name, long long w) {
    const Register& r = reg(reg_name);
    const long long size = 1LL << r.width;
    const long long mask = size - 1;
    const long long ww = ((w % size) + size) % size;
    CVec out(amp_.size());
    for (long long i = 0; i < amp_.size(); ++i) {
        long long f = (i >> r.offset) & mask;
        long long g = (f + ww) & mask;
        out((i & ~(mask << r.offset)) | (g << r.offset)) = amp_(i);
    }
    amp_.swap(out);
}

RMat cyclic_shift(int n, long long w) {
    const long long N = 1LL << n;
    if (std::llabs(w) >= N) throw ValidationError("shift out of range");
    RMat S = RMat::Zero(N, N);
    for (long long x = 0; x < N; ++x) S(((x + w) % N + N) % N, x) = 1.0;
    return S;
}

void cyclic_shift_apply(CVec& v, long long w) {
    const long long N = v.size();
    const long long ww = ((w % N) + N) % N;
    CVec out(N);
    for (long long x = 0; x < N; ++x) out((x + ww) % N) = v(x);
    v.swap(out);
}

// ---------- encoding nodes ----------

namespace {

// run node on the (anc, sys) sub-vector found at base + ia*stride_a + s*stride_s
void apply_strided(const EncNode& node, CVec& v, long long base, long long n_anc_states, long long stride_a,
                   long long d, long long stride_s, bool adjoint) {
    CVec tmp(n_anc_states * d);
    for (long long a = 0; a < n_anc_states; ++a)
        for (long long s = 0; s < d; ++s) tmp(a * d + s) = v(base + a * stride_a + s * stride_s);
    if (adjoint)
        node.apply_adjoint(tmp);
    else
        node.apply(tmp);
    for (long long a = 0; a < n_anc_states; ++a)
        for (long long s = 0; s < d; ++s) v(base + a * stride_a + s * stride_s) = tmp(a * d + s);
}

class DenseNode : public EncNode {
public:
    explicit DenseNode(CMat U) : U_(std::move(U)) {}
    void apply(CVec& v) const override { v = U_ * v; }
    void apply_adjoint(CVec& v) const override { v = U_.adjoint() * v; }

private:
    CMat U_;
};

class IdentityNode : public EncNode {
public:
    void apply(CVec&) const override {}
    void apply_adjoint(CVec&) const override {}
};

// Householder reflection mapping e0 -> p (p real, unit, nonnegative)
CMat prep_unitary(const RVec& p) {
    const long long n = p.size();
    CMat H = CMat::Identity(n, n);
    RVec w = -p;
    w(0) += 1.0;
    double nw = w.squaredNorm();
    if (nw < 1e-300) return H;
    H -= (2.0 / nw) * (w * w.transpose()).cast<cplx>();
    return H;
}

void apply_on_anc(const CMat& P, CVec& v, long long d) {
    const long long na = P.rows();
    CVec tmp(na);
    for (long long s = 0; s < d; ++s) {
        for (long long a = 0; a < na; ++a) tmp(a) = v(a * d + s);
        tmp = P * tmp;
        for (long long a = 0; a < na; ++a) v(a * d + s) = tmp(a);
    }
}

class LcuNode : public EncNode {
public:
    LcuNode(CMat prep, std::vector<CMat> units, long long d) : prep_(std::move(prep)), units_(std::move(units)), d_(d) {}
    void apply(CVec& v) const override {
        apply_on_anc(prep_, v, d_);
        for (size_t j = 0; j < units_.size(); ++j) v.segment(j * d_, d_) = units_[j] * v.segment(j * d_, d_);
        apply_on_anc(prep_.adjoint(), v, d_);
    }
    void apply_adjoint(CVec& v) const override {
        apply_on_anc(prep_, v, d_);
        for (size_t j = 0; j < units_.size(); ++j)
            v.segment(j * d_, d_) = units_[j].adjoint() * v.segment(j * d_, d_);
        apply_on_anc(prep_.adjoint(), v, d_);
    }

private:
    CMat prep_;
    std::vector<CMat> units_;  // phases folded in; missing slots act as identity
    long long d_;
};

// layout [b | a | sys]; U on (a, sys), V on (b, sys); V acts first
class ProductNode : public EncNode {
public:
    ProductNode(std::shared_ptr<const EncNode> u, int a, std::shared_ptr<const EncNode> v, int b, long long d)
        : u_(std::move(u)), v_(std::move(v)), a_(a), b_(b), d_(d) {}
    void apply(CVec& x) const override {
        apply_v(x, false);
        apply_u(x, false);
    }
    void apply_adjoint(CVec& x) const override {
        apply_u(x, true);
        apply_v(x, true);
    }

private:
    void apply_u(CVec& x, bool adj) const {
        const long long chunk = (1LL << a_) * d_;
        for (long long ib = 0; ib < (1LL << b_); ++ib) {
            CVec seg = x.segment(ib * chunk, chunk);
            adj ? u_->apply_adjoint(seg) : u_->apply(seg);
            x.segment(ib * chunk, chunk) = seg;
        }
    }
    void apply_v(CVec& x, bool adj) const {
        for (long long ia = 0; ia < (1LL << a_); ++ia)
            apply_strided(*v_, x, ia * d_, 1LL << b_, (1LL << a_) * d_, d_, 1, adj);
    }
    std::shared_ptr<const EncNode> u_, v_;
    int a_, b_;
    long long d_;
};

// layout [sel | b | a | sys]
class LincombNode : public EncNode {
public:
    LincombNode(CMat prep, cplx ph0, cplx ph1, std::shared_ptr<const EncNode> u, int a,
                std::shared_ptr<const EncNode> v, int b, long long d)
        : prep_(std::move(prep)), ph0_(ph0), ph1_(ph1), u_(std::move(u)), v_(std::move(v)), a_(a), b_(b), d_(d) {}
    void apply(CVec& x) const override { run(x, false); }
    void apply_adjoint(CVec& x) const override { run(x, true); }

private:
    void run(CVec& x, bool adj) const {
        const long long half = (1LL << (a_ + b_)) * d_;
        apply_on_anc(prep_, x, half);
        const long long chunk = (1LL << a_) * d_;
        for (long long ib = 0; ib < (1LL << b_); ++ib) {
            CVec seg = x.segment(ib * chunk, chunk);
            adj ? u_->apply_adjoint(seg) : u_->apply(seg);
            x.segment(ib * chunk, chunk) = (adj ? std::conj(ph0_) : ph0_) * seg;
        }
        for (long long ia = 0; ia < (1LL << a_); ++ia)
            apply_strided(*v_, x, half + ia * d_, 1LL << b_, (1LL << a_) * d_, d_, 1, adj);
        x.segment(half, half) *= adj ? std::conj(ph1_) : ph1_;
        apply_on_anc(prep_.adjoint(), x, half);
    }
    CMat prep_;
    cplx ph0_, ph1_;
    std::shared_ptr<const EncNode> u_, v_;
    int a_, b_;
    long long d_;
};

// inner acts on (anc, S) of a system L (x) S (x) R
class TensorNode : public EncNode {
public:
    TensorNode(std::shared_ptr<const EncNode> inner, int a, long long d, long long L, long long R)
        : in_(std::move(inner)), a_(a), d_(d), L_(L), R_(R) {}
    void apply(CVec& x) const override { run(x, false); }
    void apply_adjoint(CVec& x) const override { run(x, true); }

private:
    void run(CVec& x, bool adj) const {
        const long long sys = L_ * d_ * R_;
        for (long long l = 0; l < L_; ++l)
            for (long long r = 0; r < R_; ++r) apply_strided(*in_, x, l * d_ * R_ + r, 1LL << a_, sys, d_, R_, adj);
    }
    std::shared_ptr<const EncNode> in_;
    int a_;
    long long d_, L_, R_;
};

// (I (x) F^dag) U (I (x) F)
class ConjNode : public EncNode {
public:
    ConjNode(std::shared_ptr<const EncNode> inner, CMat F, int a) : in_(std::move(inner)), F_(std::move(F)), a_(a) {}
    void apply(CVec& x) const override {
        side(x, F_);
        in_->apply(x);
        side(x, F_.adjoint());
    }
    void apply_adjoint(CVec& x) const override {
        side(x, F_);
        in_->apply_adjoint(x);
        side(x, F_.adjoint());
    }

private:
    void side(CVec& x, const CMat& G) const {
        const long long d = G.rows();
        for (long long ia = 0; ia < (1LL << a_); ++ia) x.segment(ia * d, d) = G * x.segment(ia * d, d);
    }
    std::shared_ptr<const EncNode> in_;
    CMat F_;
    int a_;
};

int ceil_log2(long long n) {
    int k = 0;
    while ((1LL << k) < n) ++k;
    return k;
}

}  // namespace

// ---------- BlockEncoding ----------

CVec BlockEncoding::apply(const CVec& v) const {
    if (v.size() != total_dim()) throw ValidationError("vector size does not match encoding");
    CVec x = v;
    node->apply(x);
    return x;
}

CMat BlockEncoding::block() const {
    CMat out(sys_dim, sys_dim);
    CVec e = CVec::Zero(total_dim());
    for (long long i = 0; i < sys_dim; ++i) {
        e.setZero();
        e(i) = 1.0;
        node->apply(e);
        out.col(i) = e.head(sys_dim);
    }
    return out;
}

CMat BlockEncoding::projected() const { return alpha * block(); }

CMat BlockEncoding::dense_unitary() const {
    if (total_dim() > 4096) throw ValidationError("encoding too large to materialize");
    const long long n = total_dim();
    CMat U(n, n);
    CVec e(n);
    for (long long i = 0; i < n; ++i) {
        e.setZero();
        e(i) = 1.0;
        node->apply(e);
        U.col(i) = e;
    }
    return U;
}

double BlockEncoding::unitarity_defect(int samples, unsigned seed) const {
    if (total_dim() <= 1024) {
        CMat U = dense_unitary();
        return (U.adjoint() * U - CMat::Identity(U.rows(), U.cols())).cwiseAbs().maxCoeff();
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    double worst = 0;
    for (int k = 0; k < samples; ++k) {
        CVec v(total_dim());
        for (long long i = 0; i < v.size(); ++i) v(i) = cplx(nd(rng), nd(rng));
        v.normalize();
        CVec w = v;
        node->apply(w);
        worst = std::max(worst, std::abs(w.norm() - 1.0));
        node->apply_adjoint(w);
        worst = std::max(worst, (w - v).cwiseAbs().maxCoeff());
    }
    return worst;
}

BlockEncoding identity_encoding(long long sys_dim) {
    BlockEncoding b;
    b.node = std::make_shared<IdentityNode>();
    b.sys_dim = sys_dim;
    return b;
}

BlockEncoding unitary_encoding(const CMat& U) {
    if (U.rows() != U.cols()) throw ValidationError("unitary must be square");
    BlockEncoding b;
    b.node = std::make_shared<DenseNode>(U);
    b.sys_dim = U.rows();
    return b;
}

BlockEncoding dilation_encoding(const CMat& A, double alpha) {
    if (A.rows() != A.cols()) throw ValidationError("dilation needs a square operator");
    const long long d = A.rows();
    double nrm = spectral_norm(A);
    if (alpha == 0.0) alpha = nrm > 0 ? nrm : 1.0;
    if (nrm > alpha * (1 + 1e-12)) throw ValidationError("alpha below the operator norm");
    CMat Bm = A / alpha;
    Eigen::JacobiSVD<CMat> svd(Bm, Eigen::ComputeFullU | Eigen::ComputeFullV);
    RVec s = svd.singularValues();
    RVec c = (1.0 - s.array().square().min(1.0)).max(0.0).sqrt().matrix();
    const CMat& W = svd.matrixU();
    const CMat& V = svd.matrixV();
    CMat U(2 * d, 2 * d);
    U.topLeftCorner(d, d) = Bm;
    U.topRightCorner(d, d) = W * c.cast<cplx>().asDiagonal() * W.adjoint();
    U.bottomLeftCorner(d, d) = V * c.cast<cplx>().asDiagonal() * V.adjoint();
    U.bottomRightCorner(d, d) = -Bm.adjoint();
    BlockEncoding b;
    b.node = std::make_shared<DenseNode>(U);
    b.sys_dim = d;
    b.n_anc = 1;
    b.alpha = alpha;
    return b;
}

BlockEncoding lcu_encoding(const std::vector<cplx>& coeffs, const std::vector<CMat>& unitaries, int min_slots) {
    if (coeffs.size() != unitaries.size() || coeffs.empty()) throw ValidationError("lcu: bad term lists");
    const long long d = unitaries[0].rows();
    double alpha = 0;
    for (auto c : coeffs) alpha += std::abs(c);
    if (alpha == 0.0) throw ValidationError("lcu: all coefficients vanish");
    const long long slots = std::max<long long>(static_cast<long long>(coeffs.size()), min_slots);
    const int a = ceil_log2(slots);
    RVec p = RVec::Zero(1LL << a);
    std::vector<CMat> units;
    for (size_t j = 0; j < coeffs.size(); ++j) {
        if (unitaries[j].rows() != d) throw ValidationError("lcu: dimension mismatch");
        p(j) = std::sqrt(std::abs(coeffs[j]) / alpha);
        cplx ph = std::abs(coeffs[j]) > 0 ? coeffs[j] / std::abs(coeffs[j]) : cplx(1.0);
        units.push_back(ph * unitaries[j]);
    }
    BlockEncoding b;
    b.sys_dim = d;
    b.n_anc = a;
    b.alpha = alpha;
    if (a == 0)
        b.node = std::make_shared<DenseNode>(units[0]);
    else
        b.node = std::make_shared<LcuNode>(prep_unitary(p), std::move(units), d);
    return b;
}

std::vector<CMat> ctau1_terms(int n) {
    const long long d = 1LL << n;
    CMat Y(2, 2);
    Y << 0, cplx(0, -1), cplx(0, 1), 0;
    CMat T1 = CMat::Zero(d, d);
    for (long long k = 0; k < d; k += 2) T1.block(k, k, 2, 2) = Y;
    CMat CY = CMat::Identity(d, d), CmY = CMat::Identity(d, d);
    CY.block(d - 2, d - 2, 2, 2) = Y;
    CmY.block(d - 2, d - 2, 2, 2) = -Y;
    CMat S = cyclic_shift(n, 1).cast<cplx>();
    return {T1, S * T1 * S.adjoint(), S * CY * S.adjoint(), S * CmY * S.adjoint()};
}

std::vector<cplx> ctau1_coefficients(double dt) {
    const cplx i(0, 1);
    // corner pair: minus on C(Y), plus on C(-Y); this cancels the wrap-around of term 2
    return {i / (2 * dt), i / (2 * dt), -i / (4 * dt), i / (4 * dt)};
}

BlockEncoding build_ctau1_encoding(const GridSpec& spec) {
    if (spec.n_tau1 < 1) throw ValidationError("n_tau1 must be >= 1");
    return lcu_encoding(ctau1_coefficients(spec.delta_tau1), ctau1_terms(spec.n_tau1));
}

BlockEncoding build_ctau1_periodic_encoding(const GridSpec& spec) {
    const double dpbc = spec.T / std::ldexp(1.0, spec.n_tau1);
    auto terms = ctau1_terms(spec.n_tau1);
    auto c = ctau1_coefficients(dpbc);
    return lcu_encoding({c[0], c[1]}, {terms[0], terms[1]});
}

BlockEncoding encode_diagonal(const CVec& diag, int n, bool reserve_identity) {
    PauliDiag pd = pauli_expand(diag, n);
    const long long d = 1LL << n;
    if (pd.terms.empty()) return dilation_encoding(CMat::Zero(d, d), 1.0);
    std::vector<cplx> c;
    std::vector<CMat> u;
    bool has_id = false;
    for (const auto& [mask, coef] : pd.terms) {
        if (mask == 0) has_id = true;
        CVec z(d);
        for (long long x = 0; x < d; ++x) z(x) = (std::popcount(static_cast<std::uint32_t>(x) & mask) & 1) ? -1.0 : 1.0;
        c.push_back(coef);
        u.push_back(z.asDiagonal());
    }
    int slots = static_cast<int>(c.size());
    const bool scalar = (c.size() == 1 && has_id);
    if (reserve_identity && !has_id && !scalar) slots += 1;
    return lcu_encoding(c, u, slots);
}

BlockEncoding encode_diagonal(const CMat& op, int n, bool reserve_identity) {
    if (op.rows() != op.cols() || op.rows() != (1LL << n)) throw ValidationError("encode_diagonal: bad shape");
    CMat off = op;
    off.diagonal().setZero();
    if (off.cwiseAbs().maxCoeff() > 0.0) throw ValidationError("encode_diagonal: operator is not diagonal");
    return encode_diagonal(CVec(op.diagonal()), n, reserve_identity);
}

BlockEncoding encode_spectral(const GridSpec& spec) {
    BlockEncoding inner = encode_diagonal(CVec(eta_hat_diag(spec.n_eta).cast<cplx>()), spec.n_eta);
    BlockEncoding b = inner;
    b.node = std::make_shared<ConjNode>(inner.node, build_centered_dft(spec.n_eta), inner.n_anc);
    return b;
}

BlockEncoding encode_D_eta2(const GridSpec& spec, const MarketParams& p) {
    return encode_diagonal(build_D_eta2_diag(spec, p), spec.n_eta);
}

BlockEncoding be_product(const BlockEncoding& u, const BlockEncoding& v) {
    if (u.sys_dim != v.sys_dim) throw ValidationError("be_product: dimension mismatch");
    BlockEncoding b;
    b.sys_dim = u.sys_dim;
    b.n_anc = u.n_anc + v.n_anc;
    b.alpha = u.alpha * v.alpha;
    b.err = u.alpha * v.err + v.alpha * u.err;
    b.node = std::make_shared<ProductNode>(u.node, u.n_anc, v.node, v.n_anc, u.sys_dim);
    return b;
}

BlockEncoding be_lincomb(cplx d1, const BlockEncoding& u, cplx d2, const BlockEncoding& v) {
    if (u.sys_dim != v.sys_dim) throw ValidationError("be_lincomb: dimension mismatch");
    const double w0 = std::abs(d1) * u.alpha, w1 = std::abs(d2) * v.alpha;
    const double s = w0 + w1;
    if (s == 0.0) throw ValidationError("be_lincomb: both weights vanish");
    RVec p(2);
    p << std::sqrt(w0 / s), std::sqrt(w1 / s);
    auto phase = [](cplx z) { return std::abs(z) > 0 ? z / std::abs(z) : cplx(1.0); };
    BlockEncoding b;
    b.sys_dim = u.sys_dim;
    b.n_anc = u.n_anc + v.n_anc + 1;
    b.alpha = s;
    b.err = std::abs(d1) * u.err + std::abs(d2) * v.err;
    b.node = std::make_shared<LincombNode>(prep_unitary(p), phase(d1), phase(d2), u.node, u.n_anc, v.node, v.n_anc,
                                           u.sys_dim);
    return b;
}

BlockEncoding be_tensor_identity(const BlockEncoding& u, long long L, long long R) {
    if (L < 1 || R < 1) throw ValidationError("be_tensor_identity: bad identity sizes");
    BlockEncoding b = u;
    b.sys_dim = L * u.sys_dim * R;
    if (L * R > 1) b.node = std::make_shared<TensorNode>(u.node, u.n_anc, u.sys_dim, L, R);
    return b;
}

ApplyResult be_apply(const BlockEncoding& be, const StateVector& s, double floor) {
    if (s.amplitudes().size() != be.sys_dim) throw ValidationError("be_apply: state is not on the system register");
    CVec v = CVec::Zero(be.total_dim());
    v.head(be.sys_dim) = s.amplitudes();
    be.node->apply(v);
    CVec phi = v.head(be.sys_dim);
    ApplyResult r;
    r.success_prob = phi.squaredNorm();
    if (r.success_prob < floor) {
        r.warnings.push_back("post-selection starvation: success probability " + std::to_string(r.success_prob));
        r.state = StateVector(s.amplitudes(), s.layout());
        return r;
    }
    phi /= std::sqrt(r.success_prob);
    r.state = StateVector(phi, s.layout());
    return r;
}

static BlockEncoding scaled(BlockEncoding b, double c) {
    b.alpha *= c;
    b.err *= c;
    return b;
}

BOperatorEncoding build_B_encoding(const GridSpec& spec, const MarketParams& p, TimeClosure c) {
    const long long N = spec.N_eta(), M = spec.N_tau();
    BlockEncoding ct = build_ctau1_encoding(spec);
    BlockEncoding time_op = scaled(ct, spec.delta_tau1);
    if (c == TimeClosure::extrapolated)
        time_op = be_lincomb(1.0, time_op, 1.0, dilation_encoding(closure_correction(spec.n_tau1, c).cast<cplx>()));
    RVec a1 = build_A1_diag(spec, p);
    BlockEncoding a1inv = dilation_encoding(CMat(a1.cwiseInverse().cast<cplx>().asDiagonal()));
    BlockEncoding d1 = encode_spectral(spec);
    BlockEncoding d2 = encode_D_eta2(spec, p);

    BlockEncoding left = be_product(be_tensor_identity(time_op, 1, N), be_tensor_identity(a1inv, M, 1));
    BlockEncoding right = be_tensor_identity(be_product(a1inv, be_product(d2, d1)), M, 1);
    BOperatorEncoding out;
    out.be = be_lincomb(1.0, left, 1.0, right);
    out.anc.ctau1 = ct.n_anc;
    out.anc.d_eta1 = d1.n_anc;
    out.anc.d_eta2 = d2.n_anc;
    out.anc.a1_inv = a1inv.n_anc;
    out.anc.top_level = out.be.n_anc - left.n_anc - right.n_anc;
    return out;
}

}  // namespace qasian
