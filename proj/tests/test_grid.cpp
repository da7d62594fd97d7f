#include "qasian/grid.hpp"
#include "qasian/inversion.hpp"
#include "qasian/oracle.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace qasian;

namespace {

MarketParams unit_sigma() {
    MarketParams p;
    p.sigma = 1.0;
    return p;
}

double max_abs(const CMat& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("make_grid picks n_tau1 from the scale band") {
    MarketParams p = unit_sigma();
    GridSpec g = make_grid(p, 4, 1e-3);
    CHECK(g.n_tau1 == 3);
    CHECK(g.delta_tau1 == doctest::Approx(1.0 / 9.0));
    CHECK(g.delta_eta_hat == doctest::Approx(2.0 / 16));
    CHECK(g.delta_eta == doctest::Approx(3.0 * 2.0 / 16));
    CHECK(g.N_eta() % 4 == 0);

    // one qubit fewer breaks the band or the smoothing inequality
    GridConfig cfg;
    for (int n = 3; n <= 7; ++n) {
        GridSpec h = make_grid(p, n, 1e-2, cfg);
        if (h.n_tau1 == 1) continue;
        const double d = p.T / ((1 << (h.n_tau1 - 1)) + 1);
        const double target = h.delta_eta_hat * h.delta_eta_hat * std::log(100.0);
        const bool band = d >= target / cfg.band && d <= target * cfg.band;
        const bool smooth = p.T * h.N_eta() * h.N_eta() / double(1 << (h.n_tau1 - 1)) >= std::log(100.0);
        CHECK_FALSE((band && smooth));
    }
}

TEST_CASE("make_grid band and smoothing inequality hold") {
    MarketParams p = unit_sigma();
    GridConfig cfg;
    for (int n = 2; n <= 7; ++n) {
        GridSpec g;
        try {
            g = make_grid(p, n, 1e-2, cfg);
        } catch (const ValidationError&) {
            continue;
        }
        const double target = cfg.scale_c * g.delta_eta_hat * g.delta_eta_hat * std::log(100.0) / (p.sigma * p.sigma);
        CHECK(g.delta_tau1 >= target / cfg.band - 1e-15);
        CHECK(g.delta_tau1 <= target * cfg.band + 1e-15);
        CHECK(p.T * p.sigma * p.sigma * g.N_eta() * g.N_eta() / g.N_tau() >= cfg.c_smooth * std::log(100.0));
        CHECK(g.delta_tau1 == doctest::Approx(p.T / (g.N_tau() + 1)));
    }
}

TEST_CASE("make_grid rejects bad requests") {
    MarketParams p = unit_sigma();
    CHECK_NOTHROW(make_grid(p, 3, 0.01));
    CHECK_THROWS_AS(make_grid(p, 1, 0.01), ValidationError);
    CHECK_THROWS_AS(make_grid(p, 4, 1.0), ValidationError);
    CHECK_THROWS_AS(make_grid(p, 4, 0.0), ValidationError);
    MarketParams bad = p;
    bad.sigma = -1;
    CHECK_THROWS_AS(make_grid(bad, 4, 0.01), ValidationError);
}

TEST_CASE("time derivative is the Dirichlet central difference") {
    MarketParams p = unit_sigma();
    GridSpec g1 = grid_from_counts(p, 2, 1);
    RMat c1 = build_time_derivative(g1);
    CHECK(g1.delta_tau1 == doctest::Approx(1.0 / 3));
    CHECK(c1(0, 1) == doctest::Approx(1.5));
    CHECK(c1(1, 0) == doctest::Approx(-1.5));
    CHECK(c1(0, 0) == 0.0);

    GridSpec g2 = grid_from_counts(p, 2, 2);
    RMat c2 = build_time_derivative(g2);
    CHECK(c2(0, 1) == doctest::Approx(2.5));
    CHECK(c2(0, 3) == 0.0);
    CHECK(c2(3, 0) == 0.0);
    for (int n = 1; n <= 5; ++n) {
        RMat c = build_time_derivative(grid_from_counts(p, 2, n));
        CHECK((c + c.transpose()).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("eta operator and its Z-string expansion") {
    MarketParams p = unit_sigma();
    RVec d1 = eta_hat_diag(1);
    CHECK(d1(0) == doctest::Approx(-0.5));
    CHECK(d1(1) == doctest::Approx(0.5));
    RVec d2 = eta_hat_diag(2);
    const double want[] = {-0.75, -0.25, 0.25, 0.75};
    for (int i = 0; i < 4; ++i) CHECK(d2(i) == doctest::Approx(want[i]));

    for (int n = 1; n <= 6; ++n) {
        auto [diag, pauli] = build_eta_operator(grid_from_counts(p, std::max(n, 2), 1));
        CHECK(std::abs(diag.sum()) < 1e-12);
        CHECK((pauli.reconstruct().real() - diag).cwiseAbs().maxCoeff() < 1e-14);
        // only single-Z terms, -(dhat/2) 2^j
        const double dhat = 2.0 / diag.size();
        for (auto& [mask, c] : pauli.terms) {
            CHECK(__builtin_popcount(mask) == 1);
            const int j = __builtin_ctz(mask);
            CHECK(c.real() == doctest::Approx(-dhat / 2 * (1 << j)));
        }
    }
    PauliDiag one = pauli_expand(eta_hat_diag(1).cast<cplx>(), 1);
    REQUIRE(one.terms.size() == 1);
    CHECK(one.terms[0].first == 1u);
    CHECK(one.terms[0].second.real() == doctest::Approx(-0.5));
}

TEST_CASE("centered DFT") {
    CMat f1 = build_centered_dft(1);
    const cplx m = std::polar(1.0 / std::sqrt(2.0), -kPi / 4), pl = std::polar(1.0 / std::sqrt(2.0), kPi / 4);
    CHECK(std::abs(f1(0, 0) - m) < 1e-15);
    CHECK(std::abs(f1(0, 1) - pl) < 1e-15);
    CHECK(std::abs(f1(1, 0) - pl) < 1e-15);
    CHECK(std::abs(f1(1, 1) - m) < 1e-15);
    for (int n = 1; n <= 8; ++n) {
        CMat f = build_centered_dft(n);
        CHECK(max_abs(f.adjoint() * f - CMat::Identity(f.rows(), f.rows())) < 1e-12);
    }
    // e^{i pi k etahat} with half-integer k is one frequency bin
    const int n = 3, N = 8;
    CVec v(N);
    RVec eh = eta_hat_diag(n);
    for (int x = 0; x < N; ++x) v(x) = std::polar(1.0, kPi * 1.5 * eh(x));
    CVec w = build_centered_dft(n) * v;
    RVec mass = w.cwiseAbs2();
    CHECK(mass.maxCoeff() == doctest::Approx(1.0 * N).epsilon(1e-12));
}

TEST_CASE("spectral derivative") {
    MarketParams p = unit_sigma();
    for (int n = 2; n <= 6; ++n) {
        CMat d = build_spectral_derivative(grid_from_counts(p, n, 1));
        CHECK(max_abs(d + d.adjoint()) < 1e-12);
    }
    // sin(pi eta / (2 eta_max)) is in the antiperiodic basis, so exact
    GridSpec g = grid_from_counts(p, 5, 1);
    CMat d = build_spectral_derivative(g);
    CVec f(g.N_eta());
    RVec df(g.N_eta());
    const double k = kPi / (2 * g.eta_max);
    for (int x = 0; x < g.N_eta(); ++x) {
        f(x) = std::sin(k * g.eta(x));
        df(x) = k * std::cos(k * g.eta(x));
    }
    CHECK(((d * f).real() - df).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((d * f).imag().cwiseAbs().maxCoeff() < 1e-12);
    // periodic sin(pi eta/eta_max) is not band-limited here
    for (int x = 0; x < g.N_eta(); ++x) f(x) = std::sin(2 * k * g.eta(x));
    double err = 0;
    for (int x = 0; x < g.N_eta(); ++x)
        err = std::max(err, std::abs((d * f)(x).real() - 2 * k * std::cos(2 * k * g.eta(x))));
    CHECK(err > 1e-2);
    // constant vector: nonzero response from the half-integer frequencies
    CVec ones = CVec::Ones(g.N_eta());
    CHECK((d * ones).cwiseAbs().maxCoeff() > 1.0);
}

TEST_CASE("C_eta1 factorization and C_eta2") {
    MarketParams p = unit_sigma();
    GridSpec g = make_grid(p, 4, 1e-3);
    CMat c1 = build_C_eta1(g, p);
    RVec a1 = build_A1_diag(g, p);
    CMat a2 = build_A2(g);
    CHECK(max_abs(a1.cast<cplx>().asDiagonal() * a2 - c1) < 1e-12 * (1 + max_abs(c1)));

    // explicit formula
    RVec eh = eta_hat_diag(g.n_eta);
    CMat F = build_centered_dft(g.n_eta);
    CMat E2 = eh.array().square().matrix().cast<cplx>().asDiagonal();
    CMat want = g.delta_tau1 * (kPi * kPi * p.sigma * p.sigma / (2 * g.delta_eta_hat * g.delta_eta_hat)) * E2 *
                F.adjoint() * E2 * F;
    CHECK(max_abs(c1 - want) < 1e-12 * max_abs(want));

    MarketParams flat = p;
    flat.sigma = 0.0;
    CHECK(max_abs(build_C_eta1(g, flat)) == 0.0);

    // r = q stays finite
    MarketParams rq = p;
    rq.q = rq.r;
    CMat c2 = build_C_eta2(g, rq);
    CHECK(c2.allFinite());
    CHECK(max_abs(c2) > 0);
    c2 = build_C_eta2(g, p);

    // D_eta2 norm: <= 1 at eps = 1e-2, but the scale relation alone does not force it
    CVec d2 = build_D_eta2_diag(g, p);
    CHECK(d2.cwiseAbs().maxCoeff() == doctest::Approx(1.0617).epsilon(1e-4));
    CHECK(build_D_eta2_diag(make_grid(p, 4, 1e-2), p).cwiseAbs().maxCoeff() <= 1.0);
    CHECK(max_abs(d2.asDiagonal() * build_D_eta1(g) - build_C_eta2(g, p)) < 1e-12 * (1 + max_abs(c2)));
}

TEST_CASE("right-hand side") {
    MarketParams p = unit_sigma();
    GridSpec g = make_grid(p, 3, 0.01);
    for (TimeClosure c : {TimeClosure::pinned, TimeClosure::extrapolated}) {
        RhsResult r = build_rhs(g, p, c);
        CHECK(r.rhs_hat.norm() == doctest::Approx(1.0).epsilon(1e-14));
        int nz = 0;
        for (long long i = 0; i < r.rhs_hat.size(); ++i)
            if (r.rhs_hat(i) != 0.0) ++nz;
        CHECK(nz <= (c == TimeClosure::pinned ? 2 : 1) * g.N_eta());
        double brute = 0;
        for (int x = 0; x < g.N_eta(); ++x) brute += std::pow(psi0(p, g.eta(x)) / 2, 2);
        if (c == TimeClosure::pinned) brute *= 2;
        CHECK(std::abs(r.norm_b - brute) < 1e-12);
    }
    // frozen from tests/oracles/gen_oracles.py
    CHECK(build_rhs(g, p, TimeClosure::extrapolated).norm_b == doctest::Approx(7.03125e-01).epsilon(1e-14));
    CHECK(build_rhs(g, p, TimeClosure::pinned).norm_b == doctest::Approx(1.40625).epsilon(1e-14));
}

TEST_CASE("triangular continuation of the average-rate call") {
    MarketParams p;
    CHECK(psi0(p, p.eta_max / 2) == doctest::Approx(p.eta_max / 2));
    CHECK(psi0(p, -0.3) == 0.0);
    CHECK(psi0(p, 0.4) == doctest::Approx(0.4));
    CHECK(psi0(p, p.eta_max) == doctest::Approx(0.0));
    // kinks at 0, eta_max/2, eta_max stay between nodes when N/4 is an integer
    for (int n = 2; n <= 8; ++n) {
        GridSpec g = grid_from_counts(p, n, 1);
        for (int x = 0; x < g.N_eta(); ++x)
            for (double kink : {0.0, p.eta_max / 2, p.eta_max}) CHECK(std::abs(g.eta(x) - kink) > 1e-9);
    }
    MarketParams put = p;
    put.kind = OptionKind::avg_rate_put;
    CHECK(psi0(put, -0.5) == doctest::Approx(0.5));
    MarketParams sc = p;
    sc.kind = OptionKind::avg_strike_call;
    CHECK(psi0(sc, 0.25) == doctest::Approx(0.75));
    MarketParams sp = p;
    sp.kind = OptionKind::avg_strike_put;
    CHECK(psi0(sp, 1.5) == doctest::Approx(0.5));
}

TEST_CASE("assembled system and Kronecker identities") {
    MarketParams p = unit_sigma();
    GridSpec g = grid_from_counts(p, 2, 2);
    LinearSystem s = assemble_system(g, p);
    OperatorSet o = build_operators(g, p);
    const int N = g.N_eta(), M = g.N_tau();
    CMat IN = CMat::Identity(N, N), IM = CMat::Identity(M, M);
    CMat sum = kron(o.C_tau1.cast<cplx>(), IN) + kron(IM, o.C_eta1) + kron(IM, o.C_eta2);
    CHECK(max_abs(s.M - sum) == 0.0);
    for (int t = 0; t < M; ++t)
        for (int x = 0; x < N; ++x) {
            CVec e = CVec::Zero(N * M);
            e(t * N + x) = 1;
            CVec lhs = kron(o.C_tau1.cast<cplx>(), IN) * e;
            CVec rhs = kron(o.C_tau1.cast<cplx>().col(t), IN.col(x));
            CHECK((lhs - rhs).norm() == 0.0);
        }
    CMat A1 = o.A1.cast<cplx>().asDiagonal();
    CHECK(max_abs(kron(IM, A1) * (s.A + s.B) - s.M) < 1e-12 * max_abs(s.M));
    CHECK_THROWS_AS(assemble_system(make_grid(p, 7, 1e-2), p, TimeClosure::pinned, 4096), ValidationError);
}

TEST_CASE("dense solve matches the numpy reference") {
    // frozen from tests/oracles/gen_oracles.py (smoke grid)
    const double ext0[] = {-2.326204551759925e-01, -8.218673789194506e-02, -1.961230140680805e-03,
                           1.814411918475402e-01,  6.710948484399984e-01,  9.220170274161464e-01,
                           7.704498699816106e-01,  4.752978352594933e-01};
    const double ext1[] = {-2.125060227351870e-01, -3.878136962261153e-02, 1.088475648903976e-01,
                           3.726909185754061e-01,  7.651115884445290e-01,  8.034951797026626e-01,
                           6.381480277216089e-01,  4.201579255626645e-01};
    const double pap1[] = {-5.502891559269264e-01, -2.902865446413816e-01, 1.936973195869580e-01,
                           9.217641772391585e-01,  1.165518692793805e+00,  8.221243780231458e-01,
                           7.088161395722465e-01,  6.785310236744900e-01};
    MarketParams p = unit_sigma();
    GridSpec g = make_grid(p, 3, 0.01);
    REQUIRE(g.n_tau1 == 1);
    for (TimeClosure c : {TimeClosure::extrapolated, TimeClosure::pinned}) {
        PricingSolveOptions o;
        o.closure = c;
        PricingSolve s = solve_pricing(g, p, o);
        for (int x = 0; x < 8; ++x) {
            if (c == TimeClosure::extrapolated) {
                CHECK(s.psi(0, x) == doctest::Approx(ext0[x]).epsilon(1e-10));
                CHECK(s.psi(1, x) == doctest::Approx(ext1[x]).epsilon(1e-10));
            } else {
                CHECK(s.psi(1, x) == doctest::Approx(pap1[x]).epsilon(1e-10));
            }
        }
    }

    const double row7[] = {-2.649083948967870e-01, -1.802160666729382e-01, -9.859523218035915e-02,
                           -1.860427823101031e-02, 6.777041863987024e-02,  1.797502032338016e-01,
                           3.696118648210869e-01,  6.485316547840939e-01,  8.148749205047459e-01,
                           8.160117187972075e-01,  7.723531390231149e-01,  7.021719966998682e-01,
                           6.186048849378409e-01,  5.308104106559992e-01,  4.415910453117919e-01,
                           3.528006404166824e-01};
    GridSpec g4 = make_grid(p, 4, 1e-3);
    PricingSolve s4 = solve_pricing(g4, p);
    for (int x = 0; x < 16; ++x) CHECK(s4.psi(7, x) == doctest::Approx(row7[x]).epsilon(1e-10));
    CHECK(s4.norm_b == doctest::Approx(1.4765625).epsilon(1e-14));
}

TEST_CASE("solve against Crank-Nicolson on the interior") {
    // error window away from the antiperiodic wrap; bound C * dhat^(1/2) * max|psi|
    MarketParams p = unit_sigma();
    p.sigma = 0.5;
    CNSolution cn = crank_nicolson_solve(p, 2048, 2048);
    std::vector<double> errs;
    for (int n : {4, 5, 6}) {
        GridSpec g = make_grid(p, n, 0.1);
        PricingSolve s = solve_pricing(g, p);
        double worst = 0, top = 0;
        for (int t = 0; t < g.N_tau(); ++t)
            for (int x = 0; x < g.N_eta(); ++x) {
                top = std::max(top, std::abs(s.psi(t, x)));
                if (g.tau(t) < 0.25 || std::abs(g.eta(x) + 0.75) > 0.75) continue;
                worst = std::max(worst, std::abs(s.psi(t, x) - cn.value(g.eta(x), g.tau(t))));
            }
        CHECK(worst <= std::sqrt(g.delta_eta_hat) * top);
        errs.push_back(worst);
    }
    CHECK(errs[2] < errs[0]);
}

TEST_CASE("singular value extremes agree with gesdd") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    CMat a(300, 300);
    for (auto& v : a.reshaped()) v = cplx(g(rng), g(rng));
    a += 40.0 * CMat::Identity(300, 300);
    RVec s = singular_values(a);
    auto [hi, lo] = singular_extremes(a);
    CHECK(hi == doctest::Approx(s(0)).epsilon(1e-12));
    CHECK(lo == doctest::Approx(s(299)).epsilon(1e-10));
    CHECK(spectral_norm(a) == doctest::Approx(s(0)).epsilon(1e-12));

    // kappa ~ 1e8 goes back to the full SVD
    CMat u = a.householderQr().householderQ();
    RVec d = (RVec::LinSpaced(300, 0.0, -8.0) * std::log(10.0)).array().exp();
    CMat b = u * d.cast<cplx>().asDiagonal() * u.adjoint();
    auto [bh, bl] = singular_extremes(b);
    CHECK(bh / bl == doctest::Approx(1e8).epsilon(1e-6));

    CMat small = a.topLeftCorner(20, 20);
    RVec ss = singular_values(small);
    CHECK(singular_extremes(small).second == ss(19));
}
