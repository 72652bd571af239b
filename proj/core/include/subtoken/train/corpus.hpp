// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "subtoken/numerics/rng.hpp"

namespace subtoken::train {

using TokenSeq = std::vector<std::size_t>;

/// One token per byte (ids 0..255).
TokenSeq encode_bytes(std::string_view text);
/// Inverse of encode_bytes; special tokens are skipped.
std::string decode_bytes(std::span<const std::size_t> tokens);

/// Fixed-length chunks of a byte-tokenized text with a train/validation split.
///
/// Chunk i is BOS followed by bytes [i*seq_len, (i+1)*seq_len), i.e.
/// seq_len + 1 tokens: inputs are the first seq_len, targets the last
/// seq_len. The trailing `val_fraction` of chunks (at least one) is held out.
/// Training order is reshuffled from the seed at every epoch.
class CorpusStream {
public:
    CorpusStream(std::string_view text, std::size_t seq_len, double val_fraction, std::uint64_t seed);
    /// Throws FileError when the file cannot be read.
    static CorpusStream from_file(const std::string& path, std::size_t seq_len, double val_fraction,
                                  std::uint64_t seed);

    std::size_t seq_len() const { return seq_len_; }
    const std::vector<TokenSeq>& train() const { return train_; }
    const std::vector<TokenSeq>& val() const { return val_; }
    std::size_t epoch() const { return epoch_; }

    /// Next `n` training chunks in the current shuffled order.
    std::vector<const TokenSeq*> next_batch(std::size_t n);

private:
    void reshuffle();

    std::size_t seq_len_;
    std::vector<TokenSeq> train_;
    std::vector<TokenSeq> val_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t epoch_ = 0;
};

/// Reads a whole file; throws FileError.
std::string read_text_file(const std::string& path);

enum class SyntheticDomain {
    kProse,  // narrative sentences with facts that are restated later
    kLogs,   // structured service-log lines with recurring request ids
};

/// Deterministic synthetic text of at least `bytes` bytes.
std::string synthetic_corpus(SyntheticDomain domain, std::size_t bytes, std::uint64_t seed);

}  // namespace subtoken::train
