#pragma once

#include "qasian/circuits.hpp"
#include "qasian/grid.hpp"

#include <cstdint>
#include <string>

namespace qasian {

struct PriceQuote {
    double value = 0;
    double stderr_ = 0;
    std::string method;
};

struct CNSolution {
    RVec eta;  // vertex grid on [-eta_max, eta_max]
    RVec tau;  // 0 .. T
    RMat psi;  // (tau level, eta node)

    // cubic in eta, linear in tau
    double value(double eta, double tau) const;
};

struct CNOptions {
    int rannacher_steps = 2;  // leading CN steps replaced by two implicit half steps each
    double blowup = 1e6;
};
// n_x eta intervals, n_t time steps
CNSolution crank_nicolson_solve(const MarketParams& p, int n_x, int n_t, const CNOptions& opt = {});

struct MCOptions {
    double t0 = 0;    // start time
    double I0 = 0;    // running integral at t0
    long long batch = 4096;
};
PriceQuote monte_carlo_price(const MarketParams& p, double S0, long long n_paths, int n_steps,
                             std::uint64_t seed, const MCOptions& opt = {});
PriceQuote monte_carlo_price_serial(const MarketParams& p, double S0, long long n_paths, int n_steps,
                                    std::uint64_t seed, const MCOptions& opt = {});

double payoff(const MarketParams& p, double S_T, double I_T);

// eta of the reduced variable for (S, I)
double eta_of(const MarketParams& p, double S, double I);
PriceQuote price_from_psi(double psi_val, double S, double I, double t, const MarketParams& p);

double brute_prefix_sum(const StateVector& s, long long x_i, long long x_f);

}  // namespace qasian
