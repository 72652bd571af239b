// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace subtoken {

/// Scalar objective over a flat parameter vector. When `grad` is non-null
/// the callee also writes the analytic gradient (same length as theta).
using DifferentiableFn = std::function<double(std::span<const double> theta, std::vector<double>* grad)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t coordinates = 0;
};

inline constexpr double kDefaultGradCheckStep = 1e-5;

/// Compares the analytic gradient of `f` at `theta` to central differences.
///
/// Per coordinate the error is |g_a - g_f| / max(1e-12, |g_a| + |g_f|); the
/// maximum is returned. Throws NumericError naming the coordinate if f is
/// non-finite at a probe point.
GradCheckResult grad_check(const DifferentiableFn& f, std::span<const double> theta,
                           double step = kDefaultGradCheckStep);

}  // namespace subtoken
