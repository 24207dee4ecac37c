#include "stdnet/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace stdnet {

GradCheckResult gradcheck(const ScalarWithGrad& f, const Tensor& x, double eps, double tol) {
    require(eps > 0.0 && tol > 0.0, "gradcheck: eps and tol must be positive");
    const auto [value, analytic] = f(x);
    require(std::isfinite(value), "gradcheck: objective is non-finite at the base point");
    require(analytic.same_shape(x), "gradcheck: analytic gradient shape mismatch");
    require(analytic.all_finite(), "gradcheck: analytic gradient is non-finite");

    GradCheckResult res;
    Tensor probe = x;
    for (i64 i = 0; i < x.numel(); ++i) {
        const double xi = x[i];
        probe[i] = xi + eps;
        const double fp = f(probe).first;
        probe[i] = xi - eps;
        const double fm = f(probe).first;
        probe[i] = xi;
        require(std::isfinite(fp) && std::isfinite(fm),
                "gradcheck: objective is non-finite at a probe point");
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic[i];
        const double denom = std::max(std::max(std::abs(a), std::abs(numeric)), 1e-8);
        const double rel = std::abs(a - numeric) / denom;
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst_coord = i;
            res.analytic_at_worst = a;
            res.numeric_at_worst = numeric;
        }
    }
    res.pass = res.max_rel_err < tol;
    return res;
}

}  // namespace stdnet
