// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace subtoken::kv {

/// Retention budget over the context region of one sequence.
///
/// `rho` is the fraction of context (token, value-group) pairs kept among the
/// surviving tokens; `token_keep` is the fraction of context tokens whose
/// key/value entries survive at all. Query tokens are never compressed.
struct BudgetSpec {
    double rho = 1.0;
    std::size_t groups = 4;
    double token_keep = 1.0;
    std::size_t context = 0;
    std::size_t query = 0;

    /// Throws ArgumentError when a fraction is outside (0, 1] or groups == 0.
    void validate() const;

    /// floor(rho * tokens * groups) for the given surviving token count.
    std::size_t pair_budget(std::size_t tokens) const;
    std::size_t pair_budget() const { return pair_budget(context); }

    /// floor(token_keep * context).
    std::size_t tokens_kept() const;
};

/// Total KV fraction: keys are never group-compressed and a dropped token
/// loses both its key and value, so total = token_keep * (1 + rho) / 2.
double kv_retention_fraction(const BudgetSpec& spec);

/// floor(x) that tolerates representation error just below an integer.
std::size_t floor_count(double x);

/// Per-(token, group) keep bits for a sequence of `rows` tokens.
///
/// Rows at or beyond `query_begin` form the query region and are all-ones.
class SelectionMask {
public:
    SelectionMask() = default;
    SelectionMask(std::size_t rows, std::size_t groups, std::size_t query_begin);

    static SelectionMask all_ones(std::size_t rows, std::size_t groups, std::size_t query_begin);

    std::size_t rows() const { return rows_; }
    std::size_t groups() const { return groups_; }
    std::size_t query_begin() const { return query_begin_; }
    std::size_t context_rows() const { return query_begin_; }

    bool keep(std::size_t row, std::size_t group) const { return bits_[row * groups_ + group] != 0; }
    void set(std::size_t row, std::size_t group, bool on) { bits_[row * groups_ + group] = on ? 1 : 0; }
    std::span<const std::uint8_t> row_bits(std::size_t row) const {
        return std::span<const std::uint8_t>(bits_).subspan(row * groups_, groups_);
    }

    /// K_j for every row.
    std::vector<std::size_t> kept_counts() const;
    /// Sum of K_j over the context rows.
    std::size_t context_kept() const;

    /// "1010"-style rendering of one row, group 0 first.
    std::string row_string(std::size_t row) const;

    friend bool operator==(const SelectionMask&, const SelectionMask&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t groups_ = 0;
    std::size_t query_begin_ = 0;
    std::vector<std::uint8_t> bits_;
};

/// Measured retention of one compressed forward pass.
struct RetentionStats {
    double tokens_kept = 1.0;
    double rho = 1.0;
    double total_kv = 1.0;
};

}  // namespace subtoken::kv
