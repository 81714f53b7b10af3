// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

// Independent reference computations shared by the unit and acceptance
// tests. Nothing here calls into the code path it checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <unistd.h>
#include <utility>
#include <vector>

#include "babylab/benchmark.hpp"
#include "babylab/error.hpp"
#include "babylab/model.hpp"
#include "babylab/tokens.hpp"

namespace babylab::testing {

inline std::filesystem::path fixture(std::string_view name) {
  return std::filesystem::path(BABYLAB_FIXTURE_DIR) / name;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(std::string_view tag = "t") {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("babylab-" + std::string(tag) + "-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(std::string_view name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Parameter counts, enumerated tensor by tensor.

inline std::size_t enumerated_param_count(const ModelConfig& c) {
  const std::size_t V = c.vocab_size, P = c.max_length + c.position_offset, H = c.hidden,
                    F = c.intermediate;
  std::size_t n = 0;
  n += V * H;  // token embedding
  n += P * H;  // position embedding
  if (c.kind == ModelKind::Encoder) n += H + H;  // embedding norm gain, bias
  for (std::size_t l = 0; l < c.layers; ++l) {
    n += H + H;              // attention norm
    n += H * 3 * H + 3 * H;  // query/key/value
    n += H * H + H;          // attention output
    n += H + H;              // feed-forward norm
    n += H * F + F;          // up
    n += F * H + H;          // down
  }
  if (c.kind == ModelKind::Decoder) n += H + H;  // final norm
  if (c.head_style == HeadStyle::DenseNormProjection) {
    n += H * H + H;  // dense
    n += H + H;      // head norm
    n += V;          // projection bias
  }
  if (!c.tie_output) n += H * V;  // projection weight
  return n;
}

template <typename T>
std::size_t built_tensor_total(const BasicTransformer<T>& model) {
  std::size_t n = 0;
  for (const auto& t : model.tensors()) n += static_cast<std::size_t>(t.value.size());
  return n;
}

inline ModelConfig random_config(std::mt19937_64& rng) {
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  ModelConfig c;
  c.kind = pick(0, 1) ? ModelKind::Encoder : ModelKind::Decoder;
  c.heads = pick(1, 4);
  c.hidden = c.heads * pick(1, 6);
  c.vocab_size = pick(6, 80);
  c.max_length = pick(1, 24);
  c.layers = pick(0, 3);
  c.intermediate = pick(1, 40);
  c.tie_output = pick(0, 1) == 1;
  c.head_style = pick(0, 1) ? HeadStyle::DenseNormProjection : HeadStyle::PlainProjection;
  c.position_offset = pick(0, 2);
  return c;
}

// ---------------------------------------------------------------------------
// Finite-difference gradients.

struct TensorGradError {
  std::string name;
  double relative = 0.0;
};

inline ModelConfig gradcheck_config(ModelKind kind) {
  ModelConfig c = kind == ModelKind::Decoder ? decoder_preset() : encoder_preset();
  c.vocab_size = 13;
  c.max_length = 6;
  c.hidden = 8;
  c.heads = 2;
  c.layers = 1;
  c.intermediate = 16;
  return c;
}

/// Relative error ||numeric - analytic|| / ||numeric|| per tensor, with
/// central differences at step 1e-5 in double precision. Weights are
/// perturbed away from their initial values so no gradient vanishes by
/// symmetry.
inline std::vector<TensorGradError> gradient_errors(ModelKind kind) {
  auto model = TransformerModel64::build(gradcheck_config(kind), 3);
  for (auto& t : model.tensors()) {
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      t.value.data()[i] += 0.3 * std::sin(1.7 * static_cast<double>(i) + static_cast<double>(t.name.size()));
    }
  }
  Example ex;
  if (kind == ModelKind::Decoder) {
    ex.inputs = {kBosId, 7, 9, 12, 11, 5};
    ex.targets = {7, 9, 12, 11, 5, -1};
  } else {
    ex.inputs = {kBosId, 7, kMaskId, kMaskId, 11, kEosId};
    ex.targets = {-1, -1, 10, 8, -1, -1};
  }

  Gradients<double> grads(model);
  grads.zero();
  model.accumulate_gradients(ex, grads);

  std::vector<TensorGradError> out;
  for (std::size_t k = 0; k < model.tensors().size(); ++k) {
    auto& t = model.tensors()[k];
    double num_sq = 0.0, diff_sq = 0.0;
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      double& w = t.value.data()[i];
      const double w0 = w, h = 1e-5;
      w = w0 + h;
      const double up = model.loss(ex).total;
      w = w0 - h;
      const double down = model.loss(ex).total;
      w = w0;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads.tensors()[k].data()[i];
      num_sq += numeric * numeric;
      diff_sq += (numeric - analytic) * (numeric - analytic);
    }
    // A tensor with no influence on the loss must have an exactly-zero
    // analytic gradient too.
    const double rel = num_sq < 1e-24 ? std::sqrt(diff_sq) : std::sqrt(diff_sq / num_sq);
    out.push_back({t.name, rel});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Causality and normalization.

inline ModelConfig small_config(ModelKind kind, std::size_t vocab = 23) {
  ModelConfig c = kind == ModelKind::Decoder ? decoder_preset() : encoder_preset();
  c.vocab_size = vocab;
  c.max_length = 12;
  c.hidden = 16;
  c.heads = 4;
  c.layers = 2;
  c.intermediate = 32;
  return c;
}

inline std::vector<TokenId> random_ids(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::uniform_int_distribution<TokenId> d(kNumSpecials, static_cast<TokenId>(vocab) - 1);
  std::vector<TokenId> ids(n);
  for (auto& id : ids) id = d(rng);
  return ids;
}

/// Number of (sequence, cut) trials in which perturbing ids after the cut
/// changed any earlier log-probability row by even one bit.
template <typename T>
std::size_t causal_violations(const BasicTransformer<T>& model, std::mt19937_64& rng, std::size_t trials) {
  const std::size_t vocab = model.config().vocab_size, len = model.config().max_length;
  std::size_t violations = 0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    auto ids = random_ids(rng, len, vocab);
    const auto base = model.forward_causal(ids);
    for (std::size_t cut = 0; cut + 1 < len; ++cut) {
      auto changed = ids;
      const auto tail = random_ids(rng, len - cut - 1, vocab);
      std::copy(tail.begin(), tail.end(), changed.begin() + static_cast<std::ptrdiff_t>(cut + 1));
      const auto out = model.forward_causal(changed);
      for (std::size_t r = 0; r <= cut; ++r) {
        for (Eigen::Index v = 0; v < out.cols(); ++v) {
          if (std::memcmp(&out(r, v), &base(r, v), sizeof(T)) != 0) {
            ++violations;
            r = cut + 1;
            break;
          }
        }
      }
    }
  }
  return violations;
}

template <typename M>
double max_row_sum_error(const M& log_probs) {
  double worst = 0.0;
  for (Eigen::Index r = 0; r < log_probs.rows(); ++r) {
    double s = 0.0;
    for (Eigen::Index v = 0; v < log_probs.cols(); ++v) s += std::exp(static_cast<double>(log_probs(r, v)));
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

/// Pseudo-NLL by definition: bos + ids + eos, each id of `ids` masked alone.
template <typename T>
double pseudo_nll_by_single_masks(const BasicTransformer<T>& model, const std::vector<TokenId>& ids) {
  std::vector<TokenId> full{kBosId};
  full.insert(full.end(), ids.begin(), ids.end());
  full.push_back(kEosId);
  double total = 0.0;
  for (std::size_t i = 1; i + 1 < full.size(); ++i) {
    auto masked = full;
    masked[i] = kMaskId;
    const std::size_t pos[] = {i};
    const auto row = model.forward_mlm(masked, pos);
    total -= static_cast<double>(row(0, full[i]));
  }
  return total;
}

// ---------------------------------------------------------------------------
// Raw-score rules applied literally.

/// TROG: the number of consecutive four-item blocks with at least three
/// correct answers.
inline int brute_force_trog(const std::vector<bool>& outcomes) {
  int passed = 0;
  for (std::size_t block = 0; block < outcomes.size() / 4; ++block) {
    int right = 0;
    for (std::size_t j = 0; j < 4; ++j) right += outcomes[block * 4 + j] ? 1 : 0;
    if (right >= 3) ++passed;
  }
  return passed;
}

// ---------------------------------------------------------------------------
// Scripted scorers.

/// Answers sequence_nll from a table of per-text perplexities; unknown texts
/// throw. Completions come from a prompt table.
class TableScorer final : public Scorer {
 public:
  std::map<std::string, double> perplexity;  // text -> ppl
  std::map<std::string, std::string> completion;
  std::size_t tokens_per_text = 3;

  std::string name() const override { return "table"; }
  ScorerCapabilities capabilities() const override { return {true, true, false}; }
  NllSum sequence_nll(std::string_view text) const override {
    const auto it = perplexity.find(std::string(text));
    if (it == perplexity.end()) throw ScorerError("no entry for: " + std::string(text));
    const double n = static_cast<double>(tokens_per_text);
    return {n * std::log(it->second), tokens_per_text};
  }
  GeneratedText complete(std::string_view prompt, std::size_t, std::size_t) const override {
    const auto it = completion.find(std::string(prompt));
    if (it == completion.end()) throw ScorerError("no completion for: " + std::string(prompt));
    return {it->second, 0.0};
  }
};

inline BenchmarkItem choice_item(std::string id, std::vector<std::string> options, std::size_t target,
                                 std::string stimulus = "Stimolo") {
  BenchmarkItem item;
  item.id = std::move(id);
  item.task = Task::Idiom;
  item.payload = MultipleChoicePayload{std::move(stimulus), std::move(options), target};
  return item;
}

inline BenchmarkItem pair_item(std::string id, std::string good, std::string bad) {
  BenchmarkItem item;
  item.id = std::move(id);
  item.task = Task::Acceptability;
  item.payload = MinimalPairPayload{std::move(good), std::move(bad)};
  return item;
}

inline BenchmarkItem completion_item(std::string id, std::string prompt, std::vector<std::string> strict,
                                     std::vector<std::string> loose) {
  BenchmarkItem item;
  item.id = std::move(id);
  item.task = Task::Completion;
  item.payload = CompletionPayload{std::move(prompt), std::move(strict), std::move(loose)};
  return item;
}

}  // namespace babylab::testing
