// Central-difference gradient checker. The numeric side is the oracle every
// hand-written backward pass in the library is validated against.
#pragma once

#include <functional>
#include <utility>

#include "stdnet/tensor.hpp"

namespace stdnet {

struct GradCheckResult {
    double max_rel_err = 0.0;
    bool pass = false;
    i64 worst_coord = -1;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

// f maps a point to (scalar value, analytic gradient at that point).
using ScalarWithGrad = std::function<std::pair<double, Tensor>(const Tensor&)>;

// For every coordinate i: numeric = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps),
// rel err = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// Passes iff the max over coordinates is below tol. Throws if any evaluation
// is non-finite.
GradCheckResult gradcheck(const ScalarWithGrad& f, const Tensor& x,
                          double eps = 1e-5, double tol = 1e-4);

}  // namespace stdnet
