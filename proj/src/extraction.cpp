#include "qasian/extraction.hpp"

#include <omp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace qasian {

SegmentationPlan plan_segments(long long x_i, long long x_f, int n) {
    if (n < 1 || n > 62) throw ValidationError("plan_segments: n out of range");
    if (x_i < 0 || x_f < x_i || x_f >= (1LL << n))
        throw ValidationError("plan_segments: need 0 <= x_i <= x_f < 2^n");
    SegmentationPlan plan;
    plan.n = n;
    long long left = x_f - x_i + 1;
    long long w = x_i;
    while (left > 0) {
        int k = 63 - std::countl_zero(static_cast<unsigned long long>(left));  // floor(log2)
        Segment sg{w, n - k};
        plan.segments.push_back(sg);
        w += 1LL << k;
        left -= 1LL << k;
        plan.covered += 1LL << k;
    }
    return plan;
}

std::string to_string(AEMode m) {
    switch (m) {
        case AEMode::exact: return "exact";
        case AEMode::stochastic: return "stochastic";
        case AEMode::adversarial: return "adversarial";
        case AEMode::shots: return "shots";
    }
    return "?";
}

AEMode ae_mode_from_string(const std::string& s) {
    if (s == "exact") return AEMode::exact;
    if (s == "stochastic") return AEMode::stochastic;
    if (s == "adversarial") return AEMode::adversarial;
    if (s == "shots") return AEMode::shots;
    throw ValidationError("unknown amplitude-estimation mode '" + s + "'");
}

std::uint64_t mix_key(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over a combined word
    std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void AmplitudeEstimator::validate() const {
    if (mode != AEMode::exact && !(eps_prime > 0 && eps_prime < 1))
        throw ValidationError("eps_prime must lie in (0,1)");
    if (mode == AEMode::shots && shots < 1) throw ValidationError("shots must be >= 1");
}

double AmplitudeEstimator::estimate_sqrt(double q, std::uint64_t key) const {
    q = std::clamp(q, 0.0, 1.0);
    const double a = std::sqrt(q);
    switch (mode) {
        case AEMode::exact: return a;
        case AEMode::adversarial: return std::min(1.0, a + eps_prime);
        case AEMode::stochastic: {
            std::mt19937_64 g(mix_key(seed, key));
            std::uniform_real_distribution<double> u(-eps_prime, eps_prime);
            return std::clamp(a + u(g), 0.0, 1.0);
        }
        case AEMode::shots: {
            std::mt19937_64 g(mix_key(seed, key));
            std::binomial_distribution<long long> b(shots, q);
            return std::sqrt(static_cast<double>(b(g)) / static_cast<double>(shots));
        }
    }
    return a;
}

double AmplitudeEstimator::call_cost() const {
    if (mode == AEMode::shots) return static_cast<double>(shots);
    return eps_prime > 0 ? 1.0 / eps_prime : 1.0;
}

double AmplitudeEstimator::amp_bound(double) const {
    switch (mode) {
        case AEMode::exact: return 0.0;
        case AEMode::stochastic:
        case AEMode::adversarial: return eps_prime;
        case AEMode::shots: return 3.0 / (2.0 * std::sqrt(static_cast<double>(shots)));
    }
    return 0.0;
}

namespace {

// fields of every qubit not in the given registers
std::uint64_t rest_mask(int n, std::initializer_list<const Register*> regs) {
    std::uint64_t m = (n >= 64) ? ~0ULL : ((1ULL << n) - 1);
    for (auto* r : regs) m &= ~(((1ULL << r->width) - 1) << r->offset);
    return m;
}

template <class F>
void for_each_submask(std::uint64_t mask, F&& f) {
    std::uint64_t sub = 0;
    do {
        f(sub);
        sub = (sub - mask) & mask;
    } while (sub != 0);
}

double block_row(const CVec& amp, const Register& r, long long f, std::uint64_t rest) {
    double acc = 0;
    for_each_submask(rest, [&](std::uint64_t sub) {
        acc += std::norm(amp(static_cast<long long>(sub | (static_cast<std::uint64_t>(f) << r.offset))));
    });
    return acc;
}

constexpr long long kChunk = 64;

}  // namespace

double block_probability_serial(const StateVector& s, const Register& reg, long long w, long long size) {
    const long long mod = 1LL << reg.width;
    const std::uint64_t rest = rest_mask(s.n_qubits(), {&reg});
    double acc = 0;
    for (long long j = 0; j < size; ++j) acc += block_row(s.amplitudes(), reg, ((w + j) % mod + mod) % mod, rest);
    return acc;
}

double block_probability(const StateVector& s, const Register& reg, long long w, long long size) {
    const long long mod = 1LL << reg.width;
    const std::uint64_t rest = rest_mask(s.n_qubits(), {&reg});
    const long long nchunk = (size + kChunk - 1) / kChunk;
    if (nchunk <= 1) return block_probability_serial(s, reg, w, size);
    // fixed chunking so the sum does not depend on the thread count
    std::vector<double> part(nchunk, 0.0);
#pragma omp parallel for schedule(static)
    for (long long c = 0; c < nchunk; ++c) {
        double acc = 0;
        const long long end = std::min(size, (c + 1) * kChunk);
        for (long long j = c * kChunk; j < end; ++j)
            acc += block_row(s.amplitudes(), reg, ((w + j) % mod + mod) % mod, rest);
        part[c] = acc;
    }
    double acc = 0;
    for (double v : part) acc += v;
    return acc;
}

double segment_probability_by_shift(const StateVector& s, const std::string& reg, long long w, int m) {
    StateVector t = s;
    t.shift(reg, -w);
    const Register& r = t.reg(reg);
    const long long size = 1LL << (r.width - m);
    const long long mask = (1LL << r.width) - 1;
    double acc = 0;
    for (long long i = 0; i < t.amplitudes().size(); ++i)
        if (((i >> r.offset) & mask) < size) acc += std::norm(t.amplitudes()(i));
    return acc;
}

double block_probability_2d(const StateVector& s, const Register& ra, long long wa, long long sa,
                            const Register& rb, long long wb, long long sb) {
    const long long moda = 1LL << ra.width, modb = 1LL << rb.width;
    const std::uint64_t rest = rest_mask(s.n_qubits(), {&ra, &rb});
    const CVec& amp = s.amplitudes();
    double acc = 0;
    for (long long j = 0; j < sb; ++j) {
        const std::uint64_t fb = static_cast<std::uint64_t>(((wb + j) % modb + modb) % modb) << rb.offset;
        for (long long i = 0; i < sa; ++i) {
            const std::uint64_t fa = static_cast<std::uint64_t>(((wa + i) % moda + moda) % moda) << ra.offset;
            for_each_submask(rest, [&](std::uint64_t sub) {
                acc += std::norm(amp(static_cast<long long>(sub | fa | fb)));
            });
        }
    }
    return acc;
}

WindowEstimate estimate_window_integral(const StateVector& s, long long x_i, long long x_f,
                                        const AmplitudeEstimator& est, const std::string& reg,
                                        std::uint64_t key) {
    est.validate();
    Register r = reg.empty() ? Register{"all", 0, s.n_qubits()} : s.reg(reg);
    if (reg.empty() && !s.layout().empty() && s.layout().size() == 1) r = s.layout()[0];
    const int n = r.width;
    SegmentationPlan plan = plan_segments(x_i, x_f, n);
    WindowEstimate out;
    double sum = 0, bound = 0;
    for (size_t j = 0; j < plan.segments.size(); ++j) {
        const Segment& sg = plan.segments[j];
        const double q = block_probability(s, r, sg.shift, sg.size(n));
        const double a = est.estimate_sqrt(q, mix_key(key, j));
        const double e = est.amp_bound(q);
        sum += a * a;
        bound += e * (2 * a + e);
        ++out.calls;
        if (est.mode != AEMode::exact && q < est.eps_prime * est.eps_prime) {
            std::ostringstream os;
            os << "segment [" << sg.shift << ", " << sg.shift + sg.size(n) - 1 << "] probability " << q
               << " below eps'^2; square-root noise dominates";
            out.warnings.push_back(os.str());
        }
    }
    const double scale = std::ldexp(1.0, -n);
    out.value = sum * scale;
    out.err_bound = bound * scale;
    out.cost = out.calls * est.call_cost();
    return out;
}

RVec chebyshev_nodes(int M) {
    RVec s(M);
    for (int k = 1; k <= M; ++k) s(k - 1) = std::cos((2.0 * k - 1) * kPi / (2.0 * M));
    return s;
}

NodeSet mock_cheb_nodes(int M, long long N, long long lo, long long hi, Placement pl) {
    if (M < 1) throw ValidationError("mock_cheb_nodes: M must be >= 1");
    if (N < 1 || hi - lo + 1 != N) throw ValidationError("mock_cheb_nodes: need hi - lo + 1 = N");
    const long long npts = (pl == Placement::centers) ? N : N + 1;
    if (M > npts) throw ValidationError("mock_cheb_nodes: more nodes than grid points (collision)");
    auto grid_s = [&](long long j) {
        return pl == Placement::centers ? -1.0 + (2.0 * j + 1.0) / N : -1.0 + 2.0 * j / N;
    };
    NodeSet ns;
    ns.N = N;
    ns.placement = pl;
    ns.s_exact = chebyshev_nodes(M);
    ns.s_snapped.resize(M);
    std::vector<long long> used;
    for (int k = 0; k < M; ++k) {
        const double s = ns.s_exact(k);
        // nearest point, ties toward the centre; used points skipped
        auto better = [&](long long i, long long j) {
            double di = std::abs(grid_s(i) - s), dj = std::abs(grid_s(j) - s);
            if (std::abs(di - dj) > 1e-15) return di < dj;
            return std::abs(grid_s(i)) < std::abs(grid_s(j));
        };
        long long best = -1, nearest = -1;
        for (long long j = 0; j < npts; ++j) {
            if (nearest < 0 || better(j, nearest)) nearest = j;
            if (std::find(used.begin(), used.end(), j) != used.end()) continue;
            if (best < 0 || better(j, best)) best = j;
        }
        const bool fell_back = best != nearest;
        const double bd = std::abs(grid_s(best) - s);
        if (fell_back) ++ns.fallbacks;
        used.push_back(best);
        ns.index.push_back(lo + best);
        ns.s_snapped(k) = grid_s(best);
        ns.max_offset = std::max(ns.max_offset, bd);
    }
    return ns;
}

RMat cheb_vandermonde(const RVec& s, int M) {
    RMat V(s.size(), M);
    for (int k = 0; k < s.size(); ++k) V.row(k) = basis_values(M, s(k)).transpose();
    return V;
}

double cond_2(const RMat& V) {
    Eigen::JacobiSVD<RMat> svd(V);
    const RVec& sv = svd.singularValues();
    if (sv(sv.size() - 1) == 0.0) return std::numeric_limits<double>::infinity();
    return sv(0) / sv(sv.size() - 1);
}

RVec fit_interpolant(const RVec& samples, const RVec& s_nodes, double kappa_ceiling) {
    const int M = static_cast<int>(s_nodes.size());
    if (samples.size() != M || M < 1) throw ValidationError("fit_interpolant: need one sample per node");
    RMat V = cheb_vandermonde(s_nodes, M);
    const double k = cond_2(V);
    if (!(k <= kappa_ceiling)) {
        std::ostringstream os;
        os << "fit_interpolant: kappa(V) = " << k << " exceeds ceiling " << kappa_ceiling;
        throw NumericalError(os.str());
    }
    return V.partialPivLu().solve(samples);
}

namespace {

double weight(int j, int M) { return j == 0 ? std::sqrt(1.0 / M) : std::sqrt(2.0 / M); }

// T_n^{(k)}(s) for n < M
RVec cheb_T_deriv(int M, double s, int k) {
    RVec prev = RVec::Zero(M);  // order k-1
    RVec cur(M);
    for (int n = 0; n < M; ++n) cur(n) = n == 0 ? 1.0 : (n == 1 ? s : 2 * s * cur(n - 1) - cur(n - 2));
    for (int d = 1; d <= k; ++d) {
        prev = cur;
        cur.setZero();
        for (int n = 1; n < M; ++n) {
            if (n == 1)
                cur(1) = d == 1 ? 1.0 : 0.0;
            else
                cur(n) = 2 * s * cur(n - 1) + 2 * d * prev(n - 1) - cur(n - 2);
        }
    }
    return cur;
}

}  // namespace

RVec basis_values(int M, double s) {
    RVec t = cheb_T_deriv(M, s, 0);
    for (int j = 0; j < M; ++j) t(j) *= weight(j, M);
    return t;
}

RVec basis_derivs(int M, double s) {
    // dT_n/ds = n U_{n-1}(s)
    RVec d(M);
    double u_prev = 0, u = 1;  // U_{-1}, U_0
    for (int n = 0; n < M; ++n) {
        if (n == 0) {
            d(0) = 0;
            continue;
        }
        d(n) = n * u * weight(n, M);
        double nxt = 2 * s * u - u_prev;
        u_prev = u;
        u = nxt;
    }
    return d;
}

double interp_eval(const RVec& a, double s) { return basis_values(static_cast<int>(a.size()), s).dot(a); }

double interp_deriv(const RVec& a, double s) { return basis_derivs(static_cast<int>(a.size()), s).dot(a); }

double interp_deriv_k(const RVec& a, double s, int k) {
    const int M = static_cast<int>(a.size());
    RVec t = cheb_T_deriv(M, s, k);
    double acc = 0;
    for (int j = 0; j < M; ++j) acc += a(j) * weight(j, M) * t(j);
    return acc;
}

DerivativeEvaluator differentiate_interpolant(const RVec& a) { return {a}; }

ShiftedSqrt positive_shift_sqrt(const RVec& values, double eps_shift) {
    if (!(eps_shift >= 0)) throw ValidationError("positive_shift_sqrt: eps_shift must be >= 0");
    ShiftedSqrt out;
    const double mn = values.size() ? values.minCoeff() : 1.0;
    if (mn <= 0) {
        double need = -mn;
        need = need > 0 ? std::nextafter(need, 2 * need + 1) : std::numeric_limits<double>::min();
        out.shift = std::max(eps_shift, need);
        if (out.shift + mn <= 0) out.shift = std::nextafter(-mn, 1e300);
    }
    out.values = (values.array() + out.shift).sqrt();
    return out;
}

bool Interpolant2D::in_domain(double eta, double tau, double tol) const {
    const double a = s_eta(eta), b = s_tau(tau);
    return a >= -1 - tol && a <= 1 + tol && b >= -1 - tol && b <= 1 + tol;
}

namespace {

RVec basis_k(int M, double s, int k) {
    if (k == 0) return basis_values(M, s);
    if (k == 1) return basis_derivs(M, s);
    RVec t = cheb_T_deriv(M, s, k);
    for (int j = 0; j < M; ++j) t(j) *= weight(j, M);
    return t;
}

}  // namespace

double Interpolant2D::eval(double eta, double tau, int d_eta, int d_tau) const {
    RVec be = basis_k(static_cast<int>(coeffs.cols()), s_eta(eta), d_eta);
    RVec bt = basis_k(static_cast<int>(coeffs.rows()), s_tau(tau), d_tau);
    double v = bt.dot(coeffs * be);
    return v * std::pow(2.0 / eta_width, d_eta) * std::pow(2.0 / tau_width, d_tau);
}

Interpolant2D fit_interpolant_2d(const RMat& samples, const NodeSet& nodes_eta, const NodeSet& nodes_tau,
                                 double eta_lo, double eta_width, double tau_lo, double tau_width,
                                 double kappa_ceiling) {
    const int Me = nodes_eta.M(), Mt = nodes_tau.M();
    if (samples.rows() != Mt || samples.cols() != Me) throw ValidationError("fit_interpolant_2d: sample shape");
    Interpolant2D ip;
    ip.nodes_eta = nodes_eta;
    ip.nodes_tau = nodes_tau;
    ip.eta_lo = eta_lo;
    ip.eta_width = eta_width;
    ip.tau_lo = tau_lo;
    ip.tau_width = tau_width;
    // along eta for every tau node, then along tau
    RMat C(Mt, Me);
    for (int l = 0; l < Mt; ++l)
        C.row(l) = fit_interpolant(samples.row(l).transpose(), nodes_eta.s_snapped, kappa_ceiling).transpose();
    ip.coeffs.resize(Mt, Me);
    for (int j = 0; j < Me; ++j) ip.coeffs.col(j) = fit_interpolant(C.col(j), nodes_tau.s_snapped, kappa_ceiling);
    return ip;
}

bool Extraction::in_domain(double eta, double tau) const { return Psi.in_domain(eta, tau); }

double Extraction::density(double eta, double tau) const {
    return Psi.eval(eta, tau, 1, 1) * spec.delta_eta * spec.delta_tau1;
}

double Extraction::psi(double eta, double tau) const {
    return std::sqrt(scale * std::max(0.0, density(eta, tau) + shift));
}

double Extraction::dpsi_deta(double eta, double tau) const {
    const double p = psi(eta, tau);
    if (p == 0) return 0;
    return scale * Psi.eval(eta, tau, 2, 1) * spec.delta_eta * spec.delta_tau1 / (2 * p);
}

double Extraction::dpsi_dtau(double eta, double tau) const {
    const double p = psi(eta, tau);
    if (p == 0) return 0;
    return scale * Psi.eval(eta, tau, 1, 2) * spec.delta_eta * spec.delta_tau1 / (2 * p);
}

Extraction extract_psi_2d(const StateVector& s, const GridSpec& spec, const ExtractConfig& cfg,
                          const AmplitudeEstimator& est) {
    est.validate();
    if (cfg.M_eta < 2 || cfg.M_tau1 < 2)
        throw ValidationError("extract_psi_2d: prefix interpolation needs M >= 2 per axis");
    if (!(cfg.scale > 0)) throw ValidationError("extract_psi_2d: scale must be positive");
    const Register& re = s.reg(cfg.eta_reg);
    const Register& rt = s.reg(cfg.tau_reg);
    if (re.width != spec.n_eta || rt.width != spec.n_tau1)
        throw ValidationError("extract_psi_2d: register widths do not match the grid");

    Extraction ex;
    ex.spec = spec;
    ex.scale = cfg.scale;
    const double Delta = cfg.Delta < 0 ? spec.Delta : cfg.Delta;
    const int Nx = spec.N_eta(), Nt = spec.N_tau();
    ex.x_lo = -1;
    ex.x_hi = -1;
    for (int x = 0; x < Nx; ++x) {
        const double e = spec.eta(x);
        if (e >= cfg.eta_lo - 1e-12 && e <= cfg.eta_hi + 1e-12) {
            if (ex.x_lo < 0) ex.x_lo = x;
            ex.x_hi = x;
        }
    }
    ex.t_lo = -1;
    ex.t_hi = Nt - 1;
    for (int t = 0; t < Nt; ++t)
        if (spec.tau(t) >= Delta - 1e-12) {
            ex.t_lo = t;
            break;
        }
    if (ex.x_lo < 0 || ex.t_lo < 0) throw ValidationError("extract_psi_2d: empty extraction window");
    const long long wx = ex.x_hi - ex.x_lo + 1, wt = ex.t_hi - ex.t_lo + 1;

    NodeSet ne = mock_cheb_nodes(cfg.M_eta, wx, ex.x_lo, ex.x_hi, Placement::edges);
    NodeSet nt = mock_cheb_nodes(cfg.M_tau1, wt, ex.t_lo, ex.t_hi, Placement::edges);
    for (auto* ns : {&ne, &nt})
        if (ns->fallbacks > 0) {
            std::ostringstream os;
            os << "node snapping fell back " << ns->fallbacks << " time(s); max |s - s'| = " << ns->max_offset;
            ex.warnings.push_back(os.str());
        }

    const int Me = cfg.M_eta, Mt = cfg.M_tau1;
    const int npairs = Me * Mt;
    RMat raw(Mt, Me), err(Mt, Me);
    ex.nodes.resize(npairs);
    std::vector<int> starved(npairs, 0);

#pragma omp parallel for schedule(dynamic)
    for (int p = 0; p < npairs; ++p) {
        const int l = p / Me, k = p % Me;
        NodeRecord rec;
        rec.k = k;
        rec.l = l;
        rec.e_eta = ne.index[k] - ex.x_lo;
        rec.e_tau = nt.index[l] - ex.t_lo;
        rec.s_eta = ne.s_snapped(k);
        rec.s_tau = nt.s_snapped(l);
        if (rec.e_eta > 0 && rec.e_tau > 0) {
            SegmentationPlan pa = plan_segments(ex.x_lo, ex.x_lo + rec.e_eta - 1, re.width);
            SegmentationPlan pb = plan_segments(ex.t_lo, ex.t_lo + rec.e_tau - 1, rt.width);
            const std::uint64_t base = mix_key(static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(l));
            for (size_t i = 0; i < pa.segments.size(); ++i)
                for (size_t j = 0; j < pb.segments.size(); ++j) {
                    const Segment& sa = pa.segments[i];
                    const Segment& sb = pb.segments[j];
                    const double q = block_probability_2d(s, re, sa.shift, sa.size(re.width), rt, sb.shift,
                                                          sb.size(rt.width));
                    const double a = est.estimate_sqrt(q, mix_key(base, i * 64 + j));
                    const double e = est.amp_bound(q);
                    rec.raw += a * a;
                    rec.err_bound += e * (2 * a + e);
                    ++rec.calls;
                    if (est.mode != AEMode::exact && q < est.eps_prime * est.eps_prime) ++starved[p];
                }
        }
        rec.cost = rec.calls * est.call_cost();
        raw(l, k) = rec.raw;
        err(l, k) = rec.err_bound;
        ex.nodes[p] = rec;
    }
    int nstarved = 0;
    for (int p = 0; p < npairs; ++p) {
        ex.total_calls += ex.nodes[p].calls;
        ex.total_cost += ex.nodes[p].cost;
        nstarved += starved[p];
    }
    if (nstarved > 0)
        ex.warnings.push_back(std::to_string(nstarved) +
                              " segment probabilities below eps'^2; square-root noise dominates there");

    const double eta_edge = spec.eta(static_cast<int>(ex.x_lo)) - spec.delta_eta / 2;
    const double tau_edge = spec.tau(static_cast<int>(ex.t_lo)) - spec.delta_tau1 / 2;
    ex.Psi = fit_interpolant_2d(raw, ne, nt, eta_edge, wx * spec.delta_eta, tau_edge, wt * spec.delta_tau1,
                                cfg.kappa_ceiling);
    RMat Ve = cheb_vandermonde(ne.s_snapped, Me), Vt = cheb_vandermonde(nt.s_snapped, Mt);
    ex.kappa_eta = cond_2(Ve);
    ex.kappa_tau = cond_2(Vt);

    // density perturbation from the per-sample bounds
    {
        Eigen::JacobiSVD<RMat> se(Ve), st(Vt);
        const double inv_e = 1.0 / se.singularValues()(Me - 1), inv_t = 1.0 / st.singularValues()(Mt - 1);
        const double de = basis_derivs(Me, 1.0).norm() * 2.0 / wx;
        const double dt = basis_derivs(Mt, 1.0).norm() * 2.0 / wt;
        ex.density_bound = de * dt * inv_e * inv_t * err.norm();
    }

    // shift over every window cell
    RMat Be(wx, Me), Bt(wt, Mt);
    for (long long x = 0; x < wx; ++x) Be.row(x) = basis_derivs(Me, -1.0 + (2.0 * x + 1) / wx).transpose();
    for (long long t = 0; t < wt; ++t) Bt.row(t) = basis_derivs(Mt, -1.0 + (2.0 * t + 1) / wt).transpose();
    RMat D = Bt * ex.Psi.coeffs * Be.transpose() * (4.0 / (static_cast<double>(wx) * wt));
    RVec flat = Eigen::Map<const RVec>(D.data(), D.size());
    const double eps_shift = cfg.eps_shift < 0 ? ex.density_bound : cfg.eps_shift;
    ShiftedSqrt ss = positive_shift_sqrt(flat, eps_shift);
    ex.shift = ss.shift;
    ex.min_density = flat.minCoeff();
    const double dm = ex.min_density + ex.shift;
    const double tot = ex.density_bound + ex.shift;
    ex.psi_bound = tot > 0 ? std::sqrt(ex.scale) * std::min(tot / std::sqrt(dm), std::sqrt(tot)) : 0.0;
    if (ex.shift > 0) {
        std::ostringstream os;
        os << "density shifted by " << ex.shift << " (min " << ex.min_density << ")";
        ex.warnings.push_back(os.str());
    }
    return ex;
}

Greeks greeks(const Interpolant2D& ip, const MarketParams&, double eta, double tau) {
    if (!ip.in_domain(eta, tau)) throw ValidationError("greeks: point outside the interpolation domain");
    return {ip.eval(eta, tau, 1, 0), ip.eval(eta, tau, 0, 1)};
}

Greeks greeks(const Extraction& ex, const MarketParams&, double eta, double tau) {
    if (!ex.in_domain(eta, tau)) throw ValidationError("greeks: point outside the interpolation domain");
    return {ex.dpsi_deta(eta, tau), ex.dpsi_dtau(eta, tau)};
}

ContractGreeks contract_greeks(const Greeks& g, double psi_val, const MarketParams& p, double S, double I,
                               double t) {
    if (!(S > 0)) throw ValidationError("contract_greeks: S must be positive");
    const double tau = p.T - t;
    const double disc = std::exp(-p.q * tau);
    const bool rate = p.kind == OptionKind::avg_rate_call || p.kind == OptionKind::avg_rate_put;
    const double eta = rate ? (I - p.K * p.T) / (S * p.T) : I / (S * p.T);
    ContractGreeks c;
    // d eta / dS = -eta / S in both maps
    c.delta = disc * (psi_val - eta * g.delta_like);
    // I held fixed; tau = T - t
    c.theta = S * disc * (p.q * psi_val - g.theta_like);
    return c;
}

}  // namespace qasian
