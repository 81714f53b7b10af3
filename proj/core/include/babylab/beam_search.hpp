// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "babylab/model.hpp"
#include "babylab/tokens.hpp"

namespace babylab {

struct BeamOptions {
  std::size_t beams = 3;
  std::size_t max_new_tokens = 12;
  /// A hypothesis is finished once it emits one of these ids (the id is kept).
  std::vector<TokenId> stop_ids = {kEosId};
};

struct Hypothesis {
  std::vector<TokenId> tokens;  // generated continuation only
  double score = 0.0;           // total log-probability of `tokens`
  bool finished = false;
};

/// Next-token log-probabilities given the full sequence so far.
using NextTokenFn = std::function<std::vector<double>(std::span<const TokenId>)>;

/// Deterministic beam search by total log-probability. At each step every
/// live beam is expanded over the full vocabulary and the best `beams`
/// candidates survive; ties resolve by parent rank, then lower token id.
/// Returns up to `beams` hypotheses, best first. With beams == 1 this is
/// greedy decoding.
std::vector<Hypothesis> beam_search(const NextTokenFn& next, std::span<const TokenId> prompt,
                                    const BeamOptions& options);

/// Beam search over a decoder. Generation also stops when the context
/// reaches the model's max_length.
template <typename T>
std::vector<Hypothesis> beam_search(const BasicTransformer<T>& model, std::span<const TokenId> prompt,
                                    const BeamOptions& options);

}  // namespace babylab
