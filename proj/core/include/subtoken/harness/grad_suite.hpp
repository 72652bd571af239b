// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace subtoken::harness {

inline constexpr double kGradTolerance = 1e-4;
/// Hard selections must clear this score margin at the probe point so that
/// finite-difference steps never flip them.
inline constexpr double kTieMargin = 1e-3;

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    std::size_t attempts = 1;  // random draws needed to clear the tie margin
    bool pass() const { return max_rel_error < kGradTolerance; }
};

/// Central-difference checks (f64) of every learned component:
///   routed_lora       A, B, W_r, b_r through a toy LM loss
///   reconstructor     reconstructor MLP through L_aux
///   group_router      group router through L_aux (router coupling)
///   load_balance      group router through the load-balance term
///   group_predictor   d_model -> 256 -> S predictor through MSE
///   token_predictor   d_model -> 256 -> 1 predictor through MSE
///   base_model        every base weight of a tiny decoder (baseline LM loss)
///   qi_model          every routed-LoRA weight of a tiny decoder in qi_routed mode
std::vector<GradCheckEntry> run_grad_suite(std::uint64_t seed);

}  // namespace subtoken::harness
