// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace babylab::unicode {

/// NFC-normalizes UTF-8 text. Input that is not valid UTF-8 is returned
/// unchanged.
std::string nfc(std::string_view text);

bool is_valid_utf8(std::string_view text);

/// True when the UTF-8 text contains at least one letter or digit code point.
bool contains_alnum(std::string_view text);

/// Full Unicode lowercase mapping; invalid UTF-8 passes through unchanged.
std::string to_lower(std::string_view text);

/// Replaces every ill-formed UTF-8 sequence with U+FFFD.
std::string scrub_utf8(std::string_view text);

/// Lowercased letter/digit runs of NFC text; every other code point separates.
std::vector<std::string> words(std::string_view text);

}  // namespace babylab::unicode
