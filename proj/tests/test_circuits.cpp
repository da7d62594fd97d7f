#include "qasian/circuits.hpp"
#include "qasian/grid.hpp"

#include <doctest.h>

#include <Eigen/QR>

#include <cmath>
#include <random>

using namespace qasian;

namespace {

double max_abs(const CMat& m) { return m.cwiseAbs().maxCoeff(); }

CMat random_unitary(int d, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    CMat a(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) a(i, j) = cplx(g(rng), g(rng));
    Eigen::HouseholderQR<CMat> qr(a);
    return qr.householderQ() * CMat::Identity(d, d);
}

CVec random_state(long long n, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    CVec v(n);
    for (long long i = 0; i < n; ++i) v(i) = cplx(g(rng), g(rng));
    return v.normalized();
}

int ceil_log2(int v) {
    int k = 0;
    while ((1 << k) < v) ++k;
    return k;
}

}  // namespace

TEST_CASE("cyclic shift") {
    RMat s = cyclic_shift(2, 1);
    for (int x = 0; x < 4; ++x) CHECK(s((x + 1) % 4, x) == 1.0);
    CHECK(s.sum() == 4.0);
    for (int n = 1; n <= 6; ++n)
        for (long long w = 0; w < (1LL << n); ++w) {
            RMat p = cyclic_shift(n, w) * cyclic_shift(n, -w);
            CHECK((p - RMat::Identity(1 << n, 1 << n)).cwiseAbs().maxCoeff() == 0.0);
        }
    CHECK((cyclic_shift(3, 0) - RMat::Identity(8, 8)).cwiseAbs().maxCoeff() == 0.0);

    // in-place action agrees with the matrix
    std::mt19937_64 rng(3);
    for (long long w : {1LL, 5LL, -3LL}) {
        CVec v = random_state(32, rng), u = v;
        cyclic_shift_apply(u, w);
        CHECK((u - cyclic_shift(5, w).cast<cplx>() * v).norm() < 1e-15);
    }
}

TEST_CASE("register shift on a two-register state") {
    MarketParams p;
    GridSpec g = grid_from_counts(p, 3, 2);
    std::mt19937_64 rng(11);
    CVec v = random_state(g.dim(), rng);
    StateVector s = StateVector::from_grid_vector(v, g);
    CHECK(s.n_qubits() == 5);
    CHECK(s.reg("eta").offset == 0);
    CHECK(s.reg("tau1").offset == 3);
    StateVector t = s;
    t.shift("eta", 3);
    for (int tt = 0; tt < 4; ++tt)
        for (int x = 0; x < 8; ++x) CHECK(t.amplitudes()(tt * 8 + (x + 3) % 8) == v(tt * 8 + x));
    t.shift("eta", -3);
    t.shift("tau1", 1);
    for (int tt = 0; tt < 4; ++tt)
        for (int x = 0; x < 8; ++x) CHECK(t.amplitudes()(((tt + 1) % 4) * 8 + x) == v(tt * 8 + x));
    CHECK(t.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(s.reg("nope"), ValidationError);
}

TEST_CASE("C_tau1 from the four-term LCU equals the central difference") {
    MarketParams p;
    for (int n = 1; n <= 4; ++n) {
        GridSpec g = grid_from_counts(p, 2, n);
        BlockEncoding be = build_ctau1_encoding(g);
        CMat proj = be.projected();
        RMat want = build_time_derivative(g);
        CHECK(max_abs(proj - want.cast<cplx>()) < 1e-12);
        const long long d = 1LL << n;
        if (d > 2) {
            CHECK(std::abs(proj(0, d - 1)) == doctest::Approx(0.0));
            CHECK(std::abs(proj(d - 1, 0)) == doctest::Approx(0.0));
        }
        CHECK(be.n_anc == 2);
        CHECK(be.alpha == doctest::Approx(1.5 / g.delta_tau1));  // 1/2 + 1/2 + 1/4 + 1/4 over dtau
        CHECK(be.unitarity_defect() < 1e-10);
    }
    GridSpec g = grid_from_counts(p, 2, 3);
    BlockEncoding per = build_ctau1_periodic_encoding(g);
    CMat pp = per.projected();
    const double dp = g.T / 8;
    CHECK(pp(0, 7).real() == doctest::Approx(-1.0 / (2 * dp)));
    CHECK(pp(7, 0).real() == doctest::Approx(1.0 / (2 * dp)));
    CHECK(pp(0, 1).real() == doctest::Approx(1.0 / (2 * dp)));
}

TEST_CASE("diagonal encodings") {
    BlockEncoding eh = encode_diagonal(CVec(eta_hat_diag(1).cast<cplx>()), 1, false);
    CHECK(eh.alpha == doctest::Approx(0.5));
    CHECK(max_abs(eh.projected() - CMat(eta_hat_diag(1).cast<cplx>().asDiagonal())) < 1e-15);

    BlockEncoding id = encode_diagonal(CMat(CMat::Identity(4, 4)), 2);
    CHECK(id.alpha == doctest::Approx(1.0));
    CHECK(max_abs(id.projected() - CMat::Identity(4, 4)) < 1e-15);

    CMat nd = CMat::Identity(4, 4);
    nd(0, 1) = 0.1;
    CHECK_THROWS_AS(encode_diagonal(nd, 2), ValidationError);

    MarketParams p;
    p.sigma = 1.0;
    GridSpec g = make_grid(p, 3, 1e-2);
    CVec d2 = build_D_eta2_diag(g, p);
    BlockEncoding e2 = encode_D_eta2(g, p);
    PauliDiag pd = pauli_expand(d2, 3);
    double c0 = 0, l1 = 0;
    for (auto& [m, c] : pd.terms) {
        l1 += std::abs(c);
        if (m == 0) c0 = std::abs(c);
    }
    CHECK(e2.alpha == doctest::Approx(l1));
    CHECK(e2.alpha <= 1.0 + c0);
    CHECK(max_abs(e2.projected() - CMat(d2.asDiagonal())) < 1e-12);
    CHECK(e2.n_anc == ceil_log2(g.n_eta + 1));
}

TEST_CASE("spectral encoding") {
    MarketParams p;
    for (int n = 2; n <= 5; ++n) {
        GridSpec g = grid_from_counts(p, n, 1);
        BlockEncoding d1 = encode_spectral(g);
        BlockEncoding inner = encode_diagonal(CVec(eta_hat_diag(n).cast<cplx>()), n);
        CHECK(d1.alpha == doctest::Approx(inner.alpha));
        CHECK(d1.n_anc == ceil_log2(n + 1));
        CMat want = build_spectral_derivative(g) / cplx(0, kPi / (g.delta_eta_hat * g.eta_max));
        CHECK(max_abs(d1.projected() - want) < 1e-12);
        CHECK(max_abs(d1.projected() - build_D_eta1(g)) < 1e-12);
    }
}

TEST_CASE("product of encodings") {
    std::mt19937_64 rng(5);
    CMat U = random_unitary(4, rng), V = random_unitary(4, rng);
    BlockEncoding prod = be_product(unitary_encoding(U), unitary_encoding(V));
    CHECK(max_abs(prod.projected() - U * V) < 1e-12);
    CHECK(prod.alpha == doctest::Approx(1.0));

    BlockEncoding a = dilation_encoding(U * 2.0, 2.0);
    a.err = 0.1;
    BlockEncoding b = dilation_encoding(V * 3.0, 3.0);
    b.err = 0.2;
    BlockEncoding ab = be_product(a, b);
    CHECK(ab.alpha == doctest::Approx(6.0));
    CHECK(ab.err == doctest::Approx(2 * 0.2 + 3 * 0.1));
    CHECK(ab.n_anc == a.n_anc + b.n_anc);
    CHECK(max_abs(ab.projected() - 6.0 * U * V) < 1e-12);

    BlockEncoding with_id = be_product(a, identity_encoding(4));
    CHECK(with_id.alpha == doctest::Approx(a.alpha));
    CHECK(with_id.err == doctest::Approx(a.err));
    CHECK(max_abs(with_id.projected() - a.projected()) < 1e-12);

    CHECK_THROWS_AS(be_product(identity_encoding(4), identity_encoding(8)), ValidationError);
}

TEST_CASE("linear combination of encodings") {
    std::mt19937_64 rng(9);
    CMat U = random_unitary(4, rng), V = random_unitary(4, rng);
    BlockEncoding u = unitary_encoding(U), v = unitary_encoding(V);
    BlockEncoding only_u = be_lincomb(1.0, u, 0.0, v);
    CHECK(only_u.alpha == doctest::Approx(1.0));
    CHECK(max_abs(only_u.projected() - U) < 1e-12);

    BlockEncoding half = be_lincomb(0.5, identity_encoding(4), 0.5, identity_encoding(4));
    CHECK(half.alpha == doctest::Approx(1.0));
    CHECK(max_abs(half.projected() - CMat::Identity(4, 4)) < 1e-12);

    const cplx d1(0.3, -0.4), d2(-1.2, 0.5);
    BlockEncoding mix = be_lincomb(d1, dilation_encoding(2.0 * U, 2.0), d2, v);
    CHECK(mix.alpha == doctest::Approx(std::abs(d1) * 2 + std::abs(d2)));
    CHECK(mix.n_anc == 1 + 0 + 1);
    CHECK(max_abs(mix.projected() - (d1 * 2.0 * U + d2 * V)) < 1e-12);
    CHECK(mix.unitarity_defect() < 1e-10);
}

TEST_CASE("B operator assembled from encodings") {
    MarketParams p;
    p.sigma = 1.0;
    GridSpec g = grid_from_counts(p, 2, 2, 0.01);
    for (TimeClosure c : {TimeClosure::pinned, TimeClosure::extrapolated}) {
        BOperatorEncoding b = build_B_encoding(g, p, c);
        LinearSystem sys = assemble_system(g, p, c);
        CMat proj = b.be.projected();
        CHECK(max_abs(proj - sys.B) < 1e-10 * (1 + max_abs(sys.B)));
        CHECK(max_abs(proj - sys.B) <= b.be.err + 1e-10 * (1 + max_abs(sys.B)));
        CHECK(b.anc.ctau1 == 2);
        CHECK(b.anc.d_eta1 == ceil_log2(g.n_eta + 1));
        CHECK(b.anc.d_eta2 == ceil_log2(g.n_eta + 1));
        CHECK(b.anc.top_level == 1);
        CHECK(b.be.unitarity_defect() < 1e-10);
    }
}

TEST_CASE("post-selected application") {
    StateVector s(CVec::Constant(2, 1.0 / std::sqrt(2.0)), {{"q", 0, 1}});
    ApplyResult id = be_apply(identity_encoding(2), s);
    CHECK(id.success_prob == doctest::Approx(1.0));
    CHECK((id.state.amplitudes() - s.amplitudes()).norm() < 1e-15);

    BlockEncoding eh = encode_diagonal(CVec(eta_hat_diag(1).cast<cplx>()), 1, false);
    ApplyResult r = be_apply(eh, s);
    // ||etahat |+>||^2 = 1/4, alpha = 1/2
    CHECK(r.success_prob == doctest::Approx(1.0));
    CHECK(r.warnings.empty());

    BlockEncoding zero = dilation_encoding(CMat::Zero(2, 2), 1.0);
    ApplyResult z = be_apply(zero, s);
    CHECK(z.success_prob == doctest::Approx(0.0));
    CHECK(z.warnings.size() == 1);

    // norm preserved by the full unitary
    std::mt19937_64 rng(2);
    MarketParams p;
    GridSpec g = grid_from_counts(p, 2, 2);
    BlockEncoding b = build_B_encoding(g, p).be;
    CVec v = CVec::Zero(b.total_dim());
    v.head(b.sys_dim) = random_state(b.sys_dim, rng);
    CVec w = b.apply(v);
    CHECK(w.norm() == doctest::Approx(1.0).epsilon(1e-10));
}
