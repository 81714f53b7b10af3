// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "babylab/tokens.hpp"

namespace babylab {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ModelKind { Decoder, Encoder };
enum class HeadStyle { PlainProjection, DenseNormProjection };

std::string_view to_string(ModelKind kind);
std::string_view to_string(HeadStyle style);

/// Architecture hyperparameters.
///
/// Decoders are pre-norm blocks with a final norm; encoders are post-norm
/// blocks with an embedding norm. A plain-projection head has no bias; the
/// dense+norm+projection head carries one on its projection. Learned absolute
/// positions are the only supported scheme; `position_offset` reserves extra
/// leading slots in the position table (two for the encoder presets).
struct ModelConfig {
  ModelKind kind = ModelKind::Decoder;
  std::size_t vocab_size = 0;
  std::size_t max_length = 0;
  std::size_t hidden = 0;
  std::size_t heads = 0;
  std::size_t layers = 0;
  std::size_t intermediate = 0;
  bool tie_output = false;
  HeadStyle head_style = HeadStyle::PlainProjection;
  std::size_t position_offset = 0;

  std::size_t position_slots() const { return max_length + position_offset; }

  /// Throws std::invalid_argument naming the first offending field.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& doc);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Reference decoder: 30,000 vocab, 1024 positions, 768 hidden, 12 heads,
/// 12 layers, 3072 feed-forward width, untied plain head.
ModelConfig decoder_preset();

/// Reference encoder: 30,000 vocab, 512 positions (+2 reserved slots), 256
/// hidden, 8 heads, 6 layers, 3072 feed-forward width, untied
/// dense+norm+projection head, no segment embeddings.
ModelConfig encoder_preset();

/// Closed-form trainable parameter count.
std::size_t count_params(const ModelConfig& config);

struct TensorShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

/// Names and shapes of every parameter tensor, in storage order.
std::vector<std::pair<std::string, TensorShape>> parameter_layout(const ModelConfig& config);

/// Total negative log-likelihood over scored positions.
struct NllSum {
  double total = 0.0;
  std::size_t tokens = 0;

  double mean() const { return tokens == 0 ? 0.0 : total / static_cast<double>(tokens); }
  NllSum& operator+=(const NllSum& other) {
    total += other.total;
    tokens += other.tokens;
    return *this;
  }
};

/// One sequence with per-position targets; a negative target is ignored.
struct Example {
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;
};

template <typename T>
class BasicTransformer;

/// Gradient buffers shaped like a model's parameters.
template <typename T>
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const BasicTransformer<T>& model);

  void zero();
  void scale(T factor);
  std::vector<Matrix<T>>& tensors() { return tensors_; }
  const std::vector<Matrix<T>>& tensors() const { return tensors_; }

 private:
  std::vector<Matrix<T>> tensors_;
};

/// A causal decoder or masked encoder transformer over named parameter
/// tensors. Inference methods are const and safe to call concurrently.
template <typename T>
class BasicTransformer {
 public:
  struct Tensor {
    std::string name;
    Matrix<T> value;
  };

  /// Deterministic initialization from `seed`: N(0, 0.02) weights, zero
  /// biases, unit norm gains.
  static BasicTransformer build(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t parameter_count() const;

  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  Tensor& tensor(std::string_view name);
  const Tensor& tensor(std::string_view name) const;

  /// Log-probability rows, one per input position; row t depends only on
  /// ids[0..t]. Requires a decoder.
  Matrix<T> forward_causal(std::span<const TokenId> ids) const;

  /// Log-probability rows at `positions` (in the given order) with full
  /// bidirectional attention. Requires an encoder.
  Matrix<T> forward_mlm(std::span<const TokenId> ids, std::span<const std::size_t> positions) const;

  /// Summed NLL of the targets of one example.
  NllSum loss(const Example& example) const;

  /// Adds d(summed NLL)/d(params) for one example to `grads`.
  NllSum accumulate_gradients(const Example& example, Gradients<T>& grads) const;

  template <typename U>
  BasicTransformer<U> cast() const;

 private:
  template <typename>
  friend class BasicTransformer;

  struct LayerIndex {
    std::size_t attn_norm_w, attn_norm_b, qkv_w, qkv_b, out_w, out_b;
    std::size_t ffn_norm_w, ffn_norm_b, up_w, up_b, down_w, down_b;
  };
  struct Index {
    std::size_t tokens = 0, positions = 0;
    std::size_t embed_norm_w = 0, embed_norm_b = 0;
    std::vector<LayerIndex> layers;
    std::size_t final_norm_w = 0, final_norm_b = 0;
    std::size_t dense_w = 0, dense_b = 0, head_norm_w = 0, head_norm_b = 0;
    std::size_t proj_w = 0, proj_b = 0;
  };

  struct Cache;

  explicit BasicTransformer(const ModelConfig& config);
  void check_ids(std::span<const TokenId> ids) const;
  void run(std::span<const TokenId> ids, Cache* cache, Matrix<T>& hidden) const;
  Matrix<T> head(const Matrix<T>& hidden, std::span<const std::size_t> rows, Cache* cache) const;
  NllSum forward_backward(const Example& example, Gradients<T>* grads) const;

  ModelConfig config_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> by_name_;
  Index index_;
};

using TransformerModel = BasicTransformer<float>;
using TransformerModel64 = BasicTransformer<double>;

extern template class BasicTransformer<float>;
extern template class BasicTransformer<double>;
extern template class Gradients<float>;
extern template class Gradients<double>;

/// Summed next-token NLL of `ids` preceded by bos (decoder), or the
/// single-position mask-out pseudo-NLL of bos+ids+eos (encoder). Every id in
/// `ids` is scored. Throws std::invalid_argument on empty input.
template <typename T>
NllSum sequence_nll(const BasicTransformer<T>& model, std::span<const TokenId> ids);

/// exp(total / tokens).
double perplexity(const NllSum& nll);

struct TokenScore {
  TokenId token = 0;
  double probability = 0.0;
};

/// Top-k candidates for the masked slot at `position`, by descending
/// probability then ascending id. Throws std::invalid_argument if
/// ids[position] is not the mask token.
template <typename T>
std::vector<TokenScore> fill_mask(const BasicTransformer<T>& model, std::span<const TokenId> ids,
                                  std::size_t position, std::size_t k);

}  // namespace babylab
