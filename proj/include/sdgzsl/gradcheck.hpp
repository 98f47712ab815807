#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sdgzsl/tensor.hpp"

namespace sdgzsl {

// Central-difference gradient verification, meant to run in 64-bit mode.
//
// `build_loss` rebuilds the scalar loss from the current parameter values on
// every call: once under a tape for the analytic gradients, then twice per
// parameter scalar for the numeric probes. It must be a pure function of the
// parameter values — freeze any noise vectors, dropout masks or permutations
// before checking.
//
// Relative error is |a - n| / max(|a|, |n|, denom_floor); the floor keeps
// near-zero gradients from tripping on pure round-off.

struct GradCheckReport {
    struct Entry {
        std::string name;
        double max_rel_err = 0.0;
        std::size_t worst_index = 0;
    };
    std::vector<Entry> entries;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

// `five_point` switches the probe from the 2-point central difference to
// the 5-point stencil (8(f+ - f-) - (f++ - f--)) / 12eps, trading two extra
// evaluations per scalar for an O(eps^4) truncation error; useful when the
// loss carries stiff curvature.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& build_loss,
                                  const std::vector<std::pair<std::string, Tensor<double>>>& params,
                                  double eps = 1e-5, double tolerance = 1e-6,
                                  double denom_floor = 1e-4, bool five_point = false) {
    GradCheckReport report;
    report.tolerance = tolerance;

    // Analytic gradients.
    for (auto& [name, p] : params) const_cast<Tensor<double>&>(p).zero_grad();
    std::vector<std::vector<double>> analytic;
    {
        Tape<double> tape;
        Tensor<double> loss = build_loss();
        tape.backward(loss);
        for (const auto& [name, p] : params)
            analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0));
        tape.reset();
    }

    // Central differences, one scalar at a time (no tape: pure forward).
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const auto& name = params[pi].first;
        auto& values = const_cast<Tensor<double>&>(params[pi].second).val_mut();
        GradCheckReport::Entry entry;
        entry.name = name;
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double saved = values[j];
            auto eval_at = [&](double offset) {
                values[j] = saved + offset;
                return build_loss().item();
            };
            double numeric;
            if (five_point) {
                numeric = (8.0 * (eval_at(eps) - eval_at(-eps)) -
                           (eval_at(2 * eps) - eval_at(-2 * eps))) /
                          (12.0 * eps);
            } else {
                numeric = (eval_at(eps) - eval_at(-eps)) / (2.0 * eps);
            }
            values[j] = saved;
            const double a = analytic[pi][j];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), denom_floor});
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = j;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    report.pass = report.max_rel_err < tolerance;
    return report;
}

} // namespace sdgzsl
