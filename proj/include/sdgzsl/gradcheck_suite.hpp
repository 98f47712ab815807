#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdgzsl/gradcheck.hpp"

namespace sdgzsl {

// 64-bit finite-difference verification of every loss term, on a small
// random instance. Stochastic inputs (reparameterization noise) are frozen
// by replaying a fixed rng state; dropout runs in eval mode. The composite
// objective gets a looser tolerance than the individual terms since its
// value chains many more rounding steps.
struct GradSuiteConfig {
    std::uint64_t seed = 1;
    std::size_t batch = 8;
    std::size_t feature_dim = 16;
    std::size_t attr_dim = 6;
    std::size_t latent_dim = 4;
    std::size_t sem_dim = 4;
    std::size_t nuis_dim = 4;
    std::size_t hidden = 16; // all hidden widths at desk scale
    std::size_t n_classes = 4;
    // Inputs are drawn at moderate scale so the deviation head stays away
    // from stiff 1/sigma^3 curvature; the five-point stencil removes the
    // remaining truncation. Loss values here are O(10..50), so the numeric
    // probe carries ~1e-9 of round-off; the floor makes sub-1e-2 gradients
    // an absolute comparison at 1e-8 instead of amplifying that noise.
    double input_scale = 0.4;
    double eps = 1e-5;
    double denom_floor = 1e-2;
    double term_tolerance = 1e-6;
    double composite_tolerance = 1e-3;
};

struct GradSuiteResult {
    struct Term {
        std::string name;
        double max_rel_err = 0;
        double tolerance = 0;
        bool pass = false;
    };
    std::vector<Term> terms;
    bool pass = true;
};

GradSuiteResult run_grad_suite(const GradSuiteConfig& cfg);

} // namespace sdgzsl
