// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "subtoken/error.hpp"

namespace subtoken {

GradCheckResult grad_check(const DifferentiableFn& f, std::span<const double> theta, double step) {
    std::vector<double> point(theta.begin(), theta.end());
    std::vector<double> analytic(point.size(), 0.0);
    const double f0 = f(point, &analytic);
    if (!std::isfinite(f0)) throw NumericError("grad_check: objective non-finite at the base point");
    if (analytic.size() != point.size()) throw DimensionError("grad_check: gradient length mismatch");

    GradCheckResult result;
    result.coordinates = point.size();
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double saved = point[i];
        point[i] = saved + step;
        const double fp = f(point, nullptr);
        point[i] = saved - step;
        const double fm = f(point, nullptr);
        point[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("grad_check: objective non-finite when probing coordinate " + std::to_string(i));
        }
        const double numeric = (fp - fm) / (2.0 * step);
        const double err =
            std::abs(analytic[i] - numeric) / std::max(1e-12, std::abs(analytic[i]) + std::abs(numeric));
        if (err > result.max_rel_error) {
            result.max_rel_error = err;
            result.worst_index = i;
        }
    }
    return result;
}

}  // namespace subtoken
