// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#include "subtoken/config_text.hpp"

#include <charconv>
#include <cmath>

#include "subtoken/error.hpp"

namespace subtoken {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse_key_values(std::string_view text, std::string_view origin) {
    KeyValues out;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos || trim(line.substr(0, eq)).empty()) {
            throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": expected key=value, got '" +
                              std::string(line) + "'");
        }
        out.emplace_back(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
    }
    return out;
}

std::size_t parse_count(std::string_view key, std::string_view value) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || ptr != value.data() + value.size() || value.empty()) {
        throw ConfigError("config: " + std::string(key) + " expects a non-negative integer, got '" +
                          std::string(value) + "'");
    }
    return v;
}

double parse_real(std::string_view key, std::string_view value) {
    const std::string s(value);
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (s.empty() || used != s.size() || !std::isfinite(v)) {
        throw ConfigError("config: " + std::string(key) + " expects a finite real, got '" + s + "'");
    }
    return v;
}

bool parse_flag(std::string_view key, std::string_view value) {
    if (value == "1" || value == "true" || value == "on") return true;
    if (value == "0" || value == "false" || value == "off") return false;
    throw ConfigError("config: " + std::string(key) + " expects true/false, got '" + std::string(value) + "'");
}

std::string format_real(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace subtoken
