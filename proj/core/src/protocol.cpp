// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "babylab/protocol.hpp"

#include <cmath>

#include "babylab/error.hpp"

namespace babylab::protocol {
namespace {

void raise_if_error(const nlohmann::json& response) {
  if (!response.is_object()) throw ScorerError("protocol: reply is not a JSON object");
  if (response.contains("error")) {
    const auto& e = response.at("error");
    throw ScorerError("scorer error: " + (e.is_string() ? e.get<std::string>() : e.dump()));
  }
}

template <typename F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw ScorerError(std::string("protocol: malformed ") + what + " reply: " + e.what());
  }
}

}  // namespace

nlohmann::json nll_request(std::string_view text) { return {{"op", "nll"}, {"text", text}}; }

nlohmann::json complete_request(std::string_view prompt, std::size_t beams, std::size_t max_new) {
  return {{"op", "complete"}, {"prompt", prompt}, {"beams", beams}, {"max_new", max_new}};
}

nlohmann::json fill_mask_request(std::string_view text, std::size_t k) {
  return {{"op", "fill_mask"}, {"text", text}, {"k", k}};
}

NllSum parse_nll_response(const nlohmann::json& response) {
  raise_if_error(response);
  return guarded("nll", [&] {
    NllSum out{response.at("total_nll").get<double>(), response.at("tokens").get<std::size_t>()};
    if (!std::isfinite(out.total)) throw ScorerError("protocol: non-finite total_nll");
    if (out.tokens == 0) throw ScorerError("protocol: tokens must be positive");
    return out;
  });
}

GeneratedText parse_complete_response(const nlohmann::json& response) {
  raise_if_error(response);
  return guarded("complete", [&] {
    return GeneratedText{response.at("text").get<std::string>(), response.value("score", 0.0)};
  });
}

std::vector<MaskCandidate> parse_fill_mask_response(const nlohmann::json& response) {
  raise_if_error(response);
  return guarded("fill_mask", [&] {
    std::vector<MaskCandidate> out;
    for (const auto& c : response.at("candidates")) {
      if (c.is_string()) {
        out.push_back({c.get<std::string>(), 0.0});
      } else {
        out.push_back({c.at("token").get<std::string>(), c.value("score", 0.0)});
      }
    }
    return out;
  });
}

nlohmann::json handle_request(const Scorer& scorer, const nlohmann::json& request) {
  try {
    const auto op = request.at("op").get<std::string>();
    if (op == "nll") {
      const NllSum r = scorer.sequence_nll(request.at("text").get<std::string>());
      return {{"total_nll", r.total}, {"tokens", r.tokens}};
    }
    if (op == "complete") {
      const auto r = scorer.complete(request.at("prompt").get<std::string>(),
                                     request.value("beams", std::size_t{3}),
                                     request.value("max_new", std::size_t{12}));
      return {{"text", r.text}, {"score", r.score}};
    }
    if (op == "fill_mask") {
      nlohmann::json candidates = nlohmann::json::array();
      for (const auto& c : scorer.fill_mask(request.at("text").get<std::string>(),
                                            request.value("k", std::size_t{1}))) {
        candidates.push_back({{"token", c.token}, {"score", c.score}});
      }
      return {{"candidates", candidates}};
    }
    return {{"error", "unknown op '" + op + "'"}};
  } catch (const std::exception& e) {
    return {{"error", e.what()}};
  }
}

std::string handle_line(const Scorer& scorer, std::string_view line) {
  nlohmann::json request;
  try {
    request = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    return nlohmann::json{{"error", std::string("malformed request: ") + e.what()}}.dump();
  }
  return handle_request(scorer, request).dump();
}

}  // namespace babylab::protocol
