// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "subtoken/model/transformer.hpp"
#include "subtoken/numerics/tensor.hpp"

namespace subtoken::model {

// Little-endian layout (see docs/checkpoint_format.md):
//   magic "SUBTOKCK" | u32 version | u32 config_len | config bytes |
//   u32 array_count | per array: u32 name_len | name | u8 dtype |
//   u32 rank | u64 dims[rank] | data (f64)
inline constexpr std::string_view kCheckpointMagic = "SUBTOKCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF64 = 1;

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct Checkpoint {
    std::string config;  // key=value text
    std::vector<NamedTensor> arrays;

    /// Throws FileError when no array has this name.
    const Tensor& get(std::string_view name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws FileError on a truncated or malformed image.
Checkpoint decode_checkpoint(std::string_view bytes);

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

/// Copies every visited parameter into `ckpt`.
void collect_arrays(Checkpoint& ckpt, const std::function<void(const ConstParamVisitor&)>& visit);
/// Overwrites every visited parameter from `ckpt`; throws FileError on a
/// missing name or shape mismatch.
void restore_arrays(const Checkpoint& ckpt, const std::function<void(const ParamVisitor&)>& visit);

/// Base model with its configuration; loaded weights come back frozen when
/// they were saved frozen.
Checkpoint base_checkpoint(const Transformer& model);
Transformer load_base(const Checkpoint& ckpt);

/// Adapter checkpoint: model and adapter configuration plus adapter arrays.
Checkpoint qi_checkpoint(const Transformer& model);
/// Attaches the stored adapters to `model`; throws ConfigError when the
/// stored model configuration differs.
void load_qi(const Checkpoint& ckpt, Transformer& model);

}  // namespace subtoken::model
