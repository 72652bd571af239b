// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/train/corpus.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "subtoken/error.hpp"
#include "subtoken/model/config.hpp"

namespace subtoken::train {

TokenSeq encode_bytes(std::string_view text) {
    TokenSeq out(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) out[i] = static_cast<unsigned char>(text[i]);
    return out;
}

std::string decode_bytes(std::span<const std::size_t> tokens) {
    std::string out;
    for (auto t : tokens) {
        if (t < model::kByteVocab) out.push_back(static_cast<char>(t));
    }
    return out;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError("cannot open corpus file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw FileError("error reading corpus file '" + path + "'");
    return ss.str();
}

CorpusStream::CorpusStream(std::string_view text, std::size_t seq_len, double val_fraction, std::uint64_t seed)
    : seq_len_(seq_len), rng_(seed) {
    if (seq_len == 0) throw ConfigError("corpus: seq_len must be positive");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("corpus: val_fraction must lie in (0, 1)");
    const std::size_t chunks = text.size() / seq_len;
    if (chunks < 2) {
        throw ConfigError("corpus: " + std::to_string(text.size()) + " bytes give fewer than two chunks of " +
                          std::to_string(seq_len));
    }
    std::size_t n_val = static_cast<std::size_t>(static_cast<double>(chunks) * val_fraction);
    n_val = std::clamp<std::size_t>(n_val, 1, chunks - 1);
    const std::size_t n_train = chunks - n_val;
    for (std::size_t c = 0; c < chunks; ++c) {
        TokenSeq seq;
        seq.reserve(seq_len + 1);
        seq.push_back(model::kBosToken);
        for (std::size_t i = 0; i < seq_len; ++i) seq.push_back(static_cast<unsigned char>(text[c * seq_len + i]));
        (c < n_train ? train_ : val_).push_back(std::move(seq));
    }
    order_.resize(train_.size());
    reshuffle();
}

CorpusStream CorpusStream::from_file(const std::string& path, std::size_t seq_len, double val_fraction,
                                     std::uint64_t seed) {
    return CorpusStream(read_text_file(path), seq_len, val_fraction, seed);
}

void CorpusStream::reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(std::span<std::size_t>(order_));
    cursor_ = 0;
}

std::vector<const TokenSeq*> CorpusStream::next_batch(std::size_t n) {
    std::vector<const TokenSeq*> batch;
    batch.reserve(n);
    while (batch.size() < n) {
        if (cursor_ == order_.size()) {
            ++epoch_;
            reshuffle();
        }
        batch.push_back(&train_[order_[cursor_++]]);
    }
    return batch;
}

namespace {

template <std::size_t N>
const char* pick(Rng& rng, const std::array<const char*, N>& items) {
    return items[rng.below(N)];
}

constexpr std::array<const char*, 16> kNames{"Mira", "Tomas", "Ada", "Jonas", "Lena", "Otto", "Pia", "Ravi",
                                             "Sofia", "Ivan", "Nora", "Emil", "Yara", "Hugo", "Alma", "Felix"};
constexpr std::array<const char*, 12> kObjects{"lamp", "boat", "coat", "book", "key", "cup",
                                               "kite", "drum", "map", "ring", "bell", "box"};
constexpr std::array<const char*, 10> kColors{"red", "blue", "green", "gold", "grey",
                                              "white", "black", "pink", "brown", "amber"};
constexpr std::array<const char*, 10> kPlaces{"market", "harbor", "garden", "station", "library",
                                              "bakery", "bridge", "school", "forest", "square"};
constexpr std::array<const char*, 8> kVerbs{"walked to", "ran to", "waited at", "looked around",
                                            "sang near", "read near", "slept near", "painted"};
constexpr std::array<const char*, 6> kTimes{"in the morning", "at noon", "after lunch", "in the evening",
                                            "before dawn", "late at night"};

void prose_paragraph(Rng& rng, std::string& out) {
    const std::size_t facts = 2 + rng.below(3);
    std::vector<std::pair<std::string, std::string>> known;
    for (std::size_t i = 0; i < facts; ++i) {
        const std::string who = pick(rng, kNames);
        const std::string what = pick(rng, kObjects);
        const std::string color = pick(rng, kColors);
        out += "The " + what + " of " + who + " is " + color + ". ";
        known.emplace_back(what + " of " + who, color);
        if (rng.uniform() < 0.7) {
            out += std::string(pick(rng, kNames)) + " " + pick(rng, kVerbs) + " the " + pick(rng, kPlaces) + " " +
                   pick(rng, kTimes) + ". ";
        }
        if (rng.uniform() < 0.3) {
            out += "It was " + std::to_string(2 + rng.below(40)) + " steps from the " + pick(rng, kPlaces) + ". ";
        }
    }
    const std::size_t recalls = 1 + rng.below(known.size());
    for (std::size_t i = 0; i < recalls; ++i) {
        const auto& [key, color] = known[rng.below(known.size())];
        out += "So the " + key + " is " + color + ". ";
    }
    out += "\n";
}

constexpr std::array<const char*, 6> kServices{"auth", "billing", "search", "cache", "queue", "gateway"};
constexpr std::array<const char*, 4> kLevels{"INFO", "INFO", "WARN", "ERROR"};
constexpr std::array<const char*, 8> kMessages{"request ok", "slow upstream", "retry scheduled", "token expired",
                                               "cache miss", "queue full", "timeout", "connection reset"};

std::string hex4(Rng& rng) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s(4, '0');
    for (auto& c : s) c = kHex[rng.below(16)];
    return s;
}

void log_block(Rng& rng, std::size_t& clock, std::string& out) {
    const std::string req = hex4(rng);
    const std::string svc = pick(rng, kServices);
    const std::size_t lines = 3 + rng.below(4);
    for (std::size_t i = 0; i < lines; ++i) {
        clock += 1 + rng.below(30);
        char stamp[16];
        std::snprintf(stamp, sizeof stamp, "%02zu:%02zu:%02zu", (clock / 3600) % 24, (clock / 60) % 60, clock % 60);
        const std::size_t ms = 5 + rng.below(400);
        out += std::string(stamp) + " [" + pick(rng, kLevels) + "] svc=" + svc + " req=" + req +
               " ms=" + std::to_string(ms) + " msg=" + pick(rng, kMessages) + ";\n";
    }
}

}  // namespace

std::string synthetic_corpus(SyntheticDomain domain, std::size_t bytes, std::uint64_t seed) {
    Rng rng(seed);
    std::string out;
    out.reserve(bytes + 512);
    std::size_t clock = 0;
    while (out.size() < bytes) {
        if (domain == SyntheticDomain::kProse) {
            prose_paragraph(rng, out);
        } else {
            log_block(rng, clock, out);
        }
    }
    return out;
}

}  // namespace subtoken::train
