// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "babylab/benchmark.hpp"

namespace babylab::protocol {

// External-scorer wire protocol: one JSON object per line in each direction
// (or one JSON body per HTTP POST).
//
//   {"op":"nll","text":T}                          -> {"total_nll":F,"tokens":N}
//   {"op":"complete","prompt":P,"beams":B,"max_new":M} -> {"text":S,"score":F}
//   {"op":"fill_mask","text":T,"k":K}              -> {"candidates":[{"token":S,"score":F}...]}
//   any failure                                    -> {"error":S}

nlohmann::json nll_request(std::string_view text);
nlohmann::json complete_request(std::string_view prompt, std::size_t beams, std::size_t max_new);
nlohmann::json fill_mask_request(std::string_view text, std::size_t k);

/// Response parsers; throw ScorerError on {"error":...} or malformed replies.
NllSum parse_nll_response(const nlohmann::json& response);
GeneratedText parse_complete_response(const nlohmann::json& response);
std::vector<MaskCandidate> parse_fill_mask_response(const nlohmann::json& response);

/// Serves one request against `scorer`, turning every failure into an
/// {"error":...} reply.
nlohmann::json handle_request(const Scorer& scorer, const nlohmann::json& request);

/// Same as handle_request on raw text; malformed JSON yields an error reply.
std::string handle_line(const Scorer& scorer, std::string_view line);

}  // namespace babylab::protocol
