// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "babylab/beam_search.hpp"

#include <algorithm>
#include <stdexcept>

namespace babylab {
namespace {

struct Candidate {
  double score;
  std::size_t parent;
  TokenId token;
};

bool better(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.parent != b.parent) return a.parent < b.parent;
  return a.token < b.token;
}

bool hypothesis_order(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace

std::vector<Hypothesis> beam_search(const NextTokenFn& next, std::span<const TokenId> prompt,
                                    const BeamOptions& options) {
  if (prompt.empty()) throw std::invalid_argument("beam_search: empty prompt");
  if (options.beams == 0) throw std::invalid_argument("beam_search: beams must be >= 1");

  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;
  std::vector<TokenId> context(prompt.begin(), prompt.end());

  for (std::size_t step = 0; step < options.max_new_tokens && !live.empty(); ++step) {
    std::vector<Candidate> candidates;
    for (std::size_t b = 0; b < live.size(); ++b) {
      context.resize(prompt.size());
      context.insert(context.end(), live[b].tokens.begin(), live[b].tokens.end());
      const std::vector<double> logp = next(context);
      for (std::size_t v = 0; v < logp.size(); ++v) {
        candidates.push_back({live[b].score + logp[v], b, static_cast<TokenId>(v)});
      }
    }
    const std::size_t keep = std::min(options.beams, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), better);
    std::vector<Hypothesis> next_live;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = candidates[i];
      Hypothesis h = live[c.parent];
      h.tokens.push_back(c.token);
      h.score = c.score;
      const bool stop = std::find(options.stop_ids.begin(), options.stop_ids.end(), c.token) !=
                        options.stop_ids.end();
      if (stop) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        next_live.push_back(std::move(h));
      }
    }
    live = std::move(next_live);
    // Every live beam scores below the worst kept finished hypothesis: done.
    if (finished.size() >= options.beams) {
      std::sort(finished.begin(), finished.end(), hypothesis_order);
      const double worst_kept = finished[options.beams - 1].score;
      const bool improvable = std::any_of(live.begin(), live.end(), [&](const Hypothesis& h) {
        return h.score > worst_kept;
      });
      if (!improvable) live.clear();
    }
  }
  std::vector<Hypothesis> all = std::move(finished);
  all.insert(all.end(), live.begin(), live.end());
  std::sort(all.begin(), all.end(), hypothesis_order);
  if (all.size() > options.beams) all.resize(options.beams);
  return all;
}

template <typename T>
std::vector<Hypothesis> beam_search(const BasicTransformer<T>& model, std::span<const TokenId> prompt,
                                    const BeamOptions& options) {
  if (model.config().kind != ModelKind::Decoder) {
    throw std::invalid_argument("beam_search requires a decoder model");
  }
  const std::size_t max_length = model.config().max_length;
  if (prompt.size() > max_length) {
    throw std::invalid_argument("beam_search: prompt exceeds max_length");
  }
  BeamOptions bounded = options;
  bounded.max_new_tokens = std::min(options.max_new_tokens, max_length - prompt.size());
  auto next = [&model](std::span<const TokenId> context) {
    const Matrix<T> logp = model.forward_causal(context);
    const auto last = logp.row(logp.rows() - 1);
    std::vector<double> out(static_cast<std::size_t>(last.size()));
    for (Eigen::Index v = 0; v < last.size(); ++v) out[static_cast<std::size_t>(v)] = static_cast<double>(last(v));
    return out;
  };
  return beam_search(next, prompt, bounded);
}

template std::vector<Hypothesis> beam_search(const BasicTransformer<float>&, std::span<const TokenId>,
                                             const BeamOptions&);
template std::vector<Hypothesis> beam_search(const BasicTransformer<double>&, std::span<const TokenId>,
                                             const BeamOptions&);

}  // namespace babylab
