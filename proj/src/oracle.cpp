#include "qasian/oracle.hpp"

#include "qasian/extraction.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace qasian {

namespace {

// one theta-scheme step on interior nodes; edges frozen
void theta_step(const RVec& a, const RVec& b, double h, double dt, double theta, RVec& u) {
    const int n = static_cast<int>(u.size());
    const int m = n - 2;
    std::vector<double> dl(m - 1), d(m), du(m - 1), rhs(m);
    for (int i = 1; i <= n - 2; ++i) {
        const double lo = a(i) / (h * h) - b(i) / (2 * h);
        const double di = -2 * a(i) / (h * h);
        const double up = a(i) / (h * h) + b(i) / (2 * h);
        const double Lu = lo * u(i - 1) + di * u(i) + up * u(i + 1);
        double r = u(i) + (1 - theta) * dt * Lu;
        const int k = i - 1;
        d[k] = 1 - theta * dt * di;
        if (k > 0) dl[k - 1] = -theta * dt * lo;
        else r += theta * dt * lo * u(0);
        if (k < m - 1) du[k] = -theta * dt * up;
        else r += theta * dt * up * u(n - 1);
        rhs[k] = r;
    }
    if (LAPACKE_dgtsv(LAPACK_COL_MAJOR, m, 1, dl.data(), d.data(), du.data(), rhs.data(), m) != 0)
        throw NumericalError("crank_nicolson_solve: singular tridiagonal system");
    for (int k = 0; k < m; ++k) u(k + 1) = rhs[k];
}

}  // namespace

CNSolution crank_nicolson_solve(const MarketParams& p, int n_x, int n_t, const CNOptions& opt) {
    p.validate();
    if (n_x < 4 || n_t < 1) throw ValidationError("crank_nicolson_solve: need n_x >= 4, n_t >= 1");
    CNSolution s;
    s.eta = RVec::LinSpaced(n_x + 1, -p.eta_max, p.eta_max);
    s.tau = RVec::LinSpaced(n_t + 1, 0.0, p.T);
    s.psi.resize(n_t + 1, n_x + 1);
    const double h = s.eta(1) - s.eta(0), dt = p.T / n_t;
    RVec a = 0.5 * p.sigma * p.sigma * s.eta.array().square();
    RVec b = (1.0 / p.T - (p.r - p.q) * s.eta.array()).matrix();
    RVec u(n_x + 1);
    for (int i = 0; i <= n_x; ++i) u(i) = psi0(p, s.eta(i));
    s.psi.row(0) = u.transpose();
    const double cap = opt.blowup * (1.0 + u.cwiseAbs().maxCoeff());
    for (int k = 1; k <= n_t; ++k) {
        if (k <= opt.rannacher_steps) {
            theta_step(a, b, h, dt / 2, 1.0, u);
            theta_step(a, b, h, dt / 2, 1.0, u);
        } else {
            theta_step(a, b, h, dt, 0.5, u);
        }
        if (!u.allFinite() || u.cwiseAbs().maxCoeff() > cap)
            throw NumericalError("crank_nicolson_solve: solution blew up at step " + std::to_string(k));
        s.psi.row(k) = u.transpose();
    }
    return s;
}

double CNSolution::value(double e, double t) const {
    const int nx = static_cast<int>(eta.size()), nt = static_cast<int>(tau.size());
    if (e < eta(0) - 1e-12 || e > eta(nx - 1) + 1e-12 || t < -1e-12 || t > tau(nt - 1) + 1e-12)
        throw ValidationError("CNSolution::value: point outside the lattice");
    const double h = eta(1) - eta(0), dt = tau(1) - tau(0);
    auto row_value = [&](int k) {
        double fx = (e - eta(0)) / h;
        int i = std::clamp(static_cast<int>(std::floor(fx)), 1, nx - 3);
        double x = fx - i;  // offset from node i, nodes i-1..i+2
        double w[4] = {-x * (x - 1) * (x - 2) / 6, (x + 1) * (x - 1) * (x - 2) / 2, -(x + 1) * x * (x - 2) / 2,
                       (x + 1) * x * (x - 1) / 6};
        double v = 0;
        for (int j = 0; j < 4; ++j) v += w[j] * psi(k, i - 1 + j);
        return v;
    };
    double ft = t / dt;
    int k = std::clamp(static_cast<int>(std::floor(ft)), 0, nt - 2);
    double f = ft - k;
    if (std::abs(f) < 1e-9) return row_value(k);
    if (std::abs(f - 1) < 1e-9) return row_value(k + 1);
    return (1 - f) * row_value(k) + f * row_value(k + 1);
}

double payoff(const MarketParams& p, double S_T, double I_T) {
    const double A = I_T / p.T;
    switch (p.kind) {
        case OptionKind::avg_rate_call: return std::max(A - p.K, 0.0);
        case OptionKind::avg_rate_put: return std::max(p.K - A, 0.0);
        case OptionKind::avg_strike_call: return std::max(S_T - A, 0.0);
        case OptionKind::avg_strike_put: return std::max(A - S_T, 0.0);
    }
    return 0.0;
}

namespace {

// Welford accumulator
struct BatchSum {
    long long n = 0;
    double mean = 0, m2 = 0;

    void add(double v) {
        ++n;
        const double d = v - mean;
        mean += d / n;
        m2 += d * (v - mean);
    }
};

BatchSum run_batch(const MarketParams& p, double S0, long long paths, int n_steps, std::uint64_t seed,
                   const MCOptions& opt) {
    std::mt19937_64 g(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    const double horizon = p.T - opt.t0;
    const double dt = horizon / n_steps;
    const double drift = (p.r - p.q - 0.5 * p.sigma * p.sigma) * dt, vol = p.sigma * std::sqrt(dt);
    const double disc = std::exp(-p.r * horizon);
    BatchSum b;
    for (long long i = 0; i < paths; ++i) {
        double S = S0, I = opt.I0;
        for (int k = 0; k < n_steps; ++k) {
            const double Sn = S * std::exp(drift + vol * z(g));
            I += 0.5 * (S + Sn) * dt;
            S = Sn;
        }
        b.add(disc * payoff(p, S, I));
    }
    return b;
}

void check_mc(const MarketParams& p, double S0, long long n_paths, int n_steps, const MCOptions& opt) {
    // zero volatility is a valid (deterministic) path model here
    if (!(p.sigma >= 0)) throw ValidationError("monte_carlo_price: sigma must be >= 0");
    MarketParams c = p;
    if (c.sigma == 0) c.sigma = 1;
    c.validate();
    if (n_paths < 1000) throw ValidationError("monte_carlo_price: need at least 1000 paths");
    if (n_steps < 1) throw ValidationError("monte_carlo_price: need n_steps >= 1");
    if (!(S0 > 0)) throw ValidationError("monte_carlo_price: S0 must be positive");
    if (!(opt.t0 >= 0 && opt.t0 < p.T)) throw ValidationError("monte_carlo_price: t0 must lie in [0, T)");
    if (opt.batch < 1) throw ValidationError("monte_carlo_price: batch must be >= 1");
}

PriceQuote finish(const std::vector<BatchSum>& parts, long long n_paths, const std::string& tag) {
    // pairwise merge in batch order
    BatchSum acc;
    for (const auto& b : parts) {
        if (b.n == 0) continue;
        const double na = static_cast<double>(acc.n), nb = static_cast<double>(b.n);
        const double d = b.mean - acc.mean;
        acc.mean += d * nb / (na + nb);
        acc.m2 += b.m2 + d * d * na * nb / (na + nb);
        acc.n += b.n;
    }
    const double n = static_cast<double>(n_paths);
    const double var = acc.m2 / (n - 1);
    return {acc.mean, std::sqrt(var / n), tag};
}

}  // namespace

PriceQuote monte_carlo_price(const MarketParams& p, double S0, long long n_paths, int n_steps,
                             std::uint64_t seed, const MCOptions& opt) {
    check_mc(p, S0, n_paths, n_steps, opt);
    const long long nb = (n_paths + opt.batch - 1) / opt.batch;
    std::vector<BatchSum> parts(nb);
#pragma omp parallel for schedule(dynamic)
    for (long long b = 0; b < nb; ++b) {
        const long long cnt = std::min(opt.batch, n_paths - b * opt.batch);
        parts[b] = run_batch(p, S0, cnt, n_steps, mix_key(seed, static_cast<std::uint64_t>(b)), opt);
    }
    return finish(parts, n_paths, "monte-carlo");
}

PriceQuote monte_carlo_price_serial(const MarketParams& p, double S0, long long n_paths, int n_steps,
                                    std::uint64_t seed, const MCOptions& opt) {
    check_mc(p, S0, n_paths, n_steps, opt);
    const long long nb = (n_paths + opt.batch - 1) / opt.batch;
    std::vector<BatchSum> parts(nb);
    for (long long b = 0; b < nb; ++b) {
        const long long cnt = std::min(opt.batch, n_paths - b * opt.batch);
        parts[b] = run_batch(p, S0, cnt, n_steps, mix_key(seed, static_cast<std::uint64_t>(b)), opt);
    }
    return finish(parts, n_paths, "monte-carlo");
}

double eta_of(const MarketParams& p, double S, double I) {
    if (!(S > 0)) throw ValidationError("eta_of: S must be positive");
    const bool rate = p.kind == OptionKind::avg_rate_call || p.kind == OptionKind::avg_rate_put;
    return rate ? (I - p.K * p.T) / (S * p.T) : I / (S * p.T);
}

PriceQuote price_from_psi(double psi_val, double S, double I, double t, const MarketParams& p) {
    const double eta = eta_of(p, S, I);
    if (std::abs(eta) > p.eta_max) throw ValidationError("price_from_psi: eta outside [-eta_max, eta_max]");
    if (t < 0 || t > p.T) throw ValidationError("price_from_psi: t outside [0, T]");
    return {S * std::exp(-p.q * (p.T - t)) * psi_val, 0.0, "pde"};
}

double brute_prefix_sum(const StateVector& s, long long x_i, long long x_f) {
    const long long n = s.amplitudes().size();
    if (x_i < 0 || x_f < x_i || x_f >= n) throw ValidationError("brute_prefix_sum: need 0 <= x_i <= x_f < 2^n");
    double acc = 0;
    for (long long i = x_i; i <= x_f; ++i) acc += std::norm(s.amplitudes()(i));
    return acc;
}

}  // namespace qasian
