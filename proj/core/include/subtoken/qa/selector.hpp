// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "subtoken/kv/budget.hpp"
#include "subtoken/model/transformer.hpp"
#include "subtoken/numerics/tensor.hpp"

namespace subtoken::qa {

/// alpha_j = mean over query rows q of A[q, j], for each j in `context`.
/// Throws ArgumentError on an empty query set or an index outside A.
std::vector<double> diagnostic_alpha(const Tensor& attention, std::span<const std::size_t> query,
                                     std::span<const std::size_t> context);

/// s[j, g] = alpha_j * ||v_j^(g)||  for v[|C| x d_head].
Tensor pair_scores(std::span<const double> alpha, const Tensor& v, std::size_t groups);

/// Multi-head form over the first alpha.size() rows of values[T x H*d_head]:
/// the group norm pools group g of every head, sqrt(sum_h ||v_{j,h}^(g)||^2).
Tensor pair_scores(std::span<const double> alpha, const Tensor& values, std::size_t n_heads, std::size_t groups);

/// Keeps the M = floor(rho |C| S) highest-scoring context pairs of s[|C| x S];
/// ties go to the lexicographically smaller (j, g). Query rows are all-ones.
kv::SelectionMask global_topM_mask(const Tensor& scores, const kv::BudgetSpec& spec);

/// Keeps the `k` highest-scoring groups of every context row (same budget
/// shape as global_topM_mask with M = k |C|).
kv::SelectionMask fixed_k_mask(const Tensor& scores, std::size_t k, const kv::BudgetSpec& spec);

/// Sum of s[j, g] over kept context pairs.
double kept_score(const kv::SelectionMask& mask, const Tensor& scores);

/// Top floor(token_keep |C|) context tokens by alpha_hat (ties to the lower
/// index), sorted ascending.
std::vector<std::size_t> token_keep_set(std::span<const double> alpha_hat, double token_keep);

/// Token selection first, then the group budget M = floor(rho |C_alive| S)
/// over the surviving context rows. Dropped rows keep no groups.
model::QaSelection combined_selection(std::span<const double> alpha_hat, const Tensor& scores,
                                      const kv::BudgetSpec& spec);

/// Intersection over union of the kept context pairs of two masks.
double mask_jaccard(const kv::SelectionMask& a, const kv::SelectionMask& b);

/// Mean K_j over context rows.
double mean_context_k(const kv::SelectionMask& mask);

}  // namespace subtoken::qa
