// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace subtoken {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Parses `key=value` lines. Blank lines and lines starting with '#' are
/// skipped; whitespace around keys and values is trimmed. Throws ConfigError
/// naming `origin` and the line number on a malformed line.
KeyValues parse_key_values(std::string_view text, std::string_view origin);

/// Strict scalar parsers; throw ConfigError naming `key`.
std::size_t parse_count(std::string_view key, std::string_view value);
double parse_real(std::string_view key, std::string_view value);
bool parse_flag(std::string_view key, std::string_view value);

/// Shortest text that parses back to exactly `v`.
std::string format_real(double v);

}  // namespace subtoken
