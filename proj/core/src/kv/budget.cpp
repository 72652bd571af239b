// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/kv/budget.hpp"

#include <algorithm>
#include <cmath>

#include "subtoken/error.hpp"

namespace subtoken::kv {

namespace {

void require_fraction(double v, const char* name) {
    if (!(v > 0.0 && v <= 1.0)) {
        throw ArgumentError(std::string("budget: ") + name + " must lie in (0, 1], got " + std::to_string(v));
    }
}

}  // namespace

std::size_t floor_count(double x) {
    if (x <= 0.0) return 0;
    return static_cast<std::size_t>(std::floor(x + 1e-9));
}

void BudgetSpec::validate() const {
    require_fraction(rho, "rho");
    require_fraction(token_keep, "token_keep");
    if (groups == 0) throw ArgumentError("budget: groups must be positive");
}

std::size_t BudgetSpec::pair_budget(std::size_t tokens) const {
    return floor_count(rho * static_cast<double>(tokens) * static_cast<double>(groups));
}

std::size_t BudgetSpec::tokens_kept() const { return floor_count(token_keep * static_cast<double>(context)); }

double kv_retention_fraction(const BudgetSpec& spec) {
    spec.validate();
    return spec.token_keep * (1.0 + spec.rho) / 2.0;
}

SelectionMask::SelectionMask(std::size_t rows, std::size_t groups, std::size_t query_begin)
    : rows_(rows), groups_(groups), query_begin_(query_begin), bits_(rows * groups, 0) {
    if (query_begin > rows) throw ArgumentError("SelectionMask: query region starts beyond the sequence");
    for (std::size_t r = query_begin; r < rows; ++r) {
        for (std::size_t g = 0; g < groups; ++g) set(r, g, true);
    }
}

SelectionMask SelectionMask::all_ones(std::size_t rows, std::size_t groups, std::size_t query_begin) {
    SelectionMask m(rows, groups, query_begin);
    std::fill(m.bits_.begin(), m.bits_.end(), std::uint8_t{1});
    return m;
}

std::vector<std::size_t> SelectionMask::kept_counts() const {
    std::vector<std::size_t> k(rows_, 0);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t g = 0; g < groups_; ++g) k[r] += bits_[r * groups_ + g];
    }
    return k;
}

std::size_t SelectionMask::context_kept() const {
    std::size_t total = 0;
    for (std::size_t i = 0; i < query_begin_ * groups_; ++i) total += bits_[i];
    return total;
}

std::string SelectionMask::row_string(std::size_t row) const {
    std::string s(groups_, '0');
    for (std::size_t g = 0; g < groups_; ++g) {
        if (keep(row, g)) s[g] = '1';
    }
    return s;
}

}  // namespace subtoken::kv
