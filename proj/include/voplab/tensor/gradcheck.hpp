#pragma once

// Central finite-difference check of reverse-mode gradients.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "voplab/tensor/autograd.hpp"

namespace voplab {

struct GradCheckOptions {
    double epsilon = 1e-4;
    // Coordinates to probe; 0 probes every coordinate. At least one coordinate
    // per parameter is always included when the budget allows it.
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    // Relative error is |a - n| / max(|a|, |n|, abs_floor).
    double abs_floor = 1e-8;
    // 2: (f(x+h) - f(x-h)) / 2h.  4: fourth-order five-point stencil.
    int stencil = 2;
};

struct GradCheckEntry {
    std::string param;
    std::size_t index = 0;
    double analytic = 0;
    double numeric = 0;
    double rel_error = 0;
    bool finite = true;
};

struct CheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0;
    std::size_t non_finite = 0;

    bool passed(double tolerance) const { return non_finite == 0 && max_rel_error < tolerance; }
};

template <typename T>
using NamedVar = std::pair<std::string, Var<T>>;

// `fn` must rebuild the graph on every call and return a scalar.
template <typename T>
CheckReport grad_check(const std::function<Var<T>()>& fn, const std::vector<NamedVar<T>>& params,
                       const GradCheckOptions& options = {});

// Analytic gradients of `fn` checked against finite differences of
// `reference`, a higher-precision evaluation of the same function. Reference
// parameters pair with `params` by position and are overwritten with their
// values before probing.
template <typename T, typename R>
CheckReport grad_check_against(const std::function<Var<T>()>& fn, const std::vector<NamedVar<T>>& params,
                               const std::function<Var<R>()>& reference,
                               const std::vector<NamedVar<R>>& reference_params,
                               const GradCheckOptions& options = {});

// Scores another set of analytic gradients against the numeric values of a
// finished report, coordinate by coordinate. `params` must mirror the
// parameters the report was produced from.
template <typename T>
CheckReport rescore(const CheckReport& reference, const std::function<Var<T>()>& fn,
                    const std::vector<NamedVar<T>>& params, double abs_floor);

}  // namespace voplab
