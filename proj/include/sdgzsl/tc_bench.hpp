#pragma once

#include <cstdint>
#include <vector>

#include "sdgzsl/rng.hpp"
#include "sdgzsl/tensor.hpp"

namespace sdgzsl {

// Density-ratio total-correlation benchmark on a Gaussian with a known
// answer. Samples are [h_a | h_b] with unit marginals and cross-correlation
// rho between matched coordinates, so TC = -min(a,b)/2 * log(1 - rho^2).
//
// The Gaussian log density ratio is quadratic in h, which a linear scorer
// cannot represent (both classes are zero-mean and symmetric), so the bench
// discriminator is a logistic model over h plus all pairwise products. Its
// population optimum recovers the exact ratio; the estimate is the mean log
// odds over fresh dependent samples.
struct TcBenchConfig {
    double rho = 0.5;
    std::size_t dim_a = 4;
    std::size_t dim_b = 4;
    std::size_t n_train = 65536; // dependent samples (the permuted class matches)
    std::size_t n_eval = 65536;  // fresh dependent samples for the estimate
    int steps = 2500;
    std::size_t batch = 4096;
    double lr = 0.05;
    std::uint64_t seed = 11;
};

struct TcBenchResult {
    double rho = 0;
    double analytic = 0;
    double estimate = 0;
    double rel_err = 0; // |estimate - analytic| / |analytic| (inf-safe: 0 when analytic == 0)
};

double analytic_block_tc(double rho, std::size_t dim_a, std::size_t dim_b);

// Draw n samples of [h_a | h_b] with the blockwise correlation structure.
Tensor<float> sample_block_gaussian(double rho, std::size_t dim_a, std::size_t dim_b,
                                    std::size_t n, Rng& rng);

// Monte Carlo cross-check using the exact densities (test oracle):
// mean over dependent samples of log N(h; 0, Sigma) - log N(h; 0, I).
double monte_carlo_block_tc(double rho, std::size_t dim_a, std::size_t dim_b, std::size_t n,
                            Rng& rng);

TcBenchResult run_tc_bench(const TcBenchConfig& cfg);

} // namespace sdgzsl
