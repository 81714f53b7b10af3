// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "babylab/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "babylab/error.hpp"

namespace babylab {
namespace {

constexpr double kNormEps = 1e-5;
constexpr double kInitStd = 0.02;

template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(M_PI));
  return cdf + x * pdf;
}

template <typename T>
struct NormCache {
  Matrix<T> xhat;
  ColVector<T> rstd;
};

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias,
                     NormCache<T>* cache) {
  const auto cols = static_cast<T>(x.cols());
  ColVector<T> mean = x.rowwise().sum() / cols;
  Matrix<T> centered = x.colwise() - mean;
  ColVector<T> var = centered.array().square().rowwise().sum() / cols;
  ColVector<T> rstd = (var.array() + T(kNormEps)).rsqrt();
  Matrix<T> xhat = centered.array().colwise() * rstd.array();
  Matrix<T> y = (xhat.array().rowwise() * gain.row(0).array()).matrix();
  y.rowwise() += bias.row(0);
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& gain, const NormCache<T>& c,
                              Matrix<T>& dgain, Matrix<T>& dbias) {
  dgain.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  Matrix<T> dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
  const auto cols = static_cast<T>(dy.cols());
  ColVector<T> mean_d = dxhat.rowwise().sum() / cols;
  ColVector<T> mean_dx = (dxhat.array() * c.xhat.array()).rowwise().sum().matrix() / cols;
  Matrix<T> dx = dxhat;
  dx.colwise() -= mean_d;
  dx.array() -= c.xhat.array().colwise() * mean_dx.array();
  dx.array().colwise() *= c.rstd.array();
  return dx;
}

template <typename T>
Matrix<T> affine(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
  Matrix<T> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <typename T>
void log_softmax_rows(Matrix<T>& logits) {
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const T max = row.maxCoeff();
    const T lse = max + std::log((row.array() - max).exp().sum());
    row.array() -= lse;
  }
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  return kind == ModelKind::Decoder ? "decoder" : "encoder";
}

std::string_view to_string(HeadStyle style) {
  return style == HeadStyle::PlainProjection ? "plain-projection" : "dense+norm+projection";
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("model config: " + field + " " + why);
  };
  if (vocab_size <= static_cast<std::size_t>(kNumSpecials)) fail("vocab_size", "must exceed the special-token count");
  if (max_length == 0) fail("max_length", "must be positive");
  if (hidden == 0) fail("hidden", "must be positive");
  if (heads == 0) fail("heads", "must be positive");
  if (hidden % heads != 0) {
    fail("hidden", "(" + std::to_string(hidden) + ") must be divisible by heads (" +
                       std::to_string(heads) + ")");
  }
  if (layers > 0 && intermediate == 0) fail("intermediate", "must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"kind", to_string(kind)},
          {"vocab_size", vocab_size},
          {"max_length", max_length},
          {"hidden", hidden},
          {"heads", heads},
          {"layers", layers},
          {"intermediate", intermediate},
          {"tie_output", tie_output},
          {"positional", "learned"},
          {"head_style", to_string(head_style)},
          {"position_offset", position_offset}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& doc) {
  ModelConfig c;
  try {
    const auto kind = doc.at("kind").get<std::string>();
    if (kind == "decoder") {
      c.kind = ModelKind::Decoder;
    } else if (kind == "encoder") {
      c.kind = ModelKind::Encoder;
    } else {
      throw ConfigError("model config: kind must be 'decoder' or 'encoder', got '" + kind + "'");
    }
    c.vocab_size = doc.at("vocab_size").get<std::size_t>();
    c.max_length = doc.at("max_length").get<std::size_t>();
    c.hidden = doc.at("hidden").get<std::size_t>();
    c.heads = doc.at("heads").get<std::size_t>();
    c.layers = doc.at("layers").get<std::size_t>();
    c.intermediate = doc.value("intermediate", 4 * c.hidden);
    c.tie_output = doc.value("tie_output", false);
    if (doc.value("positional", std::string("learned")) != "learned") {
      throw ConfigError("model config: positional must be 'learned'");
    }
    const auto default_head = c.kind == ModelKind::Decoder ? "plain-projection"
                                                           : "dense+norm+projection";
    const auto head = doc.value("head_style", std::string(default_head));
    if (head == "plain-projection") {
      c.head_style = HeadStyle::PlainProjection;
    } else if (head == "dense+norm+projection") {
      c.head_style = HeadStyle::DenseNormProjection;
    } else {
      throw ConfigError("model config: head_style '" + head + "' is not recognised");
    }
    c.position_offset = doc.value("position_offset", c.kind == ModelKind::Encoder ? 2 : 0);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ModelConfig decoder_preset() {
  ModelConfig c;
  c.kind = ModelKind::Decoder;
  c.vocab_size = 30000;
  c.max_length = 1024;
  c.hidden = 768;
  c.heads = 12;
  c.layers = 12;
  c.intermediate = 3072;
  c.head_style = HeadStyle::PlainProjection;
  return c;
}

ModelConfig encoder_preset() {
  ModelConfig c;
  c.kind = ModelKind::Encoder;
  c.vocab_size = 30000;
  c.max_length = 512;
  c.hidden = 256;
  c.heads = 8;
  c.layers = 6;
  c.intermediate = 3072;
  c.head_style = HeadStyle::DenseNormProjection;
  c.position_offset = 2;
  return c;
}

std::size_t count_params(const ModelConfig& c) {
  const std::size_t v = c.vocab_size, h = c.hidden, f = c.intermediate;
  std::size_t total = v * h + c.position_slots() * h;
  if (c.kind == ModelKind::Encoder) total += 2 * h;
  // Two norms, fused qkv, output projection and the two feed-forward maps.
  const std::size_t per_layer = 4 * h + (3 * h * h + 3 * h) + (h * h + h) + (h * f + f) + (f * h + h);
  total += c.layers * per_layer;
  if (c.kind == ModelKind::Decoder) total += 2 * h;
  if (c.head_style == HeadStyle::DenseNormProjection) total += h * h + h + 2 * h + v;
  if (!c.tie_output) total += v * h;
  return total;
}

std::vector<std::pair<std::string, TensorShape>> parameter_layout(const ModelConfig& c) {
  const std::size_t v = c.vocab_size, h = c.hidden, f = c.intermediate;
  std::vector<std::pair<std::string, TensorShape>> layout;
  layout.push_back({"embed.tokens", {v, h}});
  layout.push_back({"embed.positions", {c.position_slots(), h}});
  if (c.kind == ModelKind::Encoder) {
    layout.push_back({"embed.norm.weight", {1, h}});
    layout.push_back({"embed.norm.bias", {1, h}});
  }
  for (std::size_t i = 0; i < c.layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    layout.push_back({p + "attn_norm.weight", {1, h}});
    layout.push_back({p + "attn_norm.bias", {1, h}});
    layout.push_back({p + "attn.qkv.weight", {h, 3 * h}});
    layout.push_back({p + "attn.qkv.bias", {1, 3 * h}});
    layout.push_back({p + "attn.out.weight", {h, h}});
    layout.push_back({p + "attn.out.bias", {1, h}});
    layout.push_back({p + "ffn_norm.weight", {1, h}});
    layout.push_back({p + "ffn_norm.bias", {1, h}});
    layout.push_back({p + "ffn.up.weight", {h, f}});
    layout.push_back({p + "ffn.up.bias", {1, f}});
    layout.push_back({p + "ffn.down.weight", {f, h}});
    layout.push_back({p + "ffn.down.bias", {1, h}});
  }
  if (c.kind == ModelKind::Decoder) {
    layout.push_back({"final_norm.weight", {1, h}});
    layout.push_back({"final_norm.bias", {1, h}});
  }
  if (c.head_style == HeadStyle::DenseNormProjection) {
    layout.push_back({"head.dense.weight", {h, h}});
    layout.push_back({"head.dense.bias", {1, h}});
    layout.push_back({"head.norm.weight", {1, h}});
    layout.push_back({"head.norm.bias", {1, h}});
  }
  if (!c.tie_output) layout.push_back({"head.proj.weight", {v, h}});
  if (c.head_style == HeadStyle::DenseNormProjection) layout.push_back({"head.proj.bias", {1, v}});
  return layout;
}

// ---------------------------------------------------------------------------
// Gradients

template <typename T>
Gradients<T>::Gradients(const BasicTransformer<T>& model) {
  tensors_.reserve(model.tensors().size());
  for (const auto& t : model.tensors()) {
    tensors_.push_back(Matrix<T>::Zero(t.value.rows(), t.value.cols()));
  }
}

template <typename T>
void Gradients<T>::zero() {
  for (auto& t : tensors_) t.setZero();
}

template <typename T>
void Gradients<T>::scale(T factor) {
  for (auto& t : tensors_) t *= factor;
}

// ---------------------------------------------------------------------------
// Transformer

template <typename T>
struct BasicTransformer<T>::Cache {
  struct Layer {
    Matrix<T> input;
    NormCache<T> attn_norm;
    Matrix<T> attn_in;
    Matrix<T> qkv;
    std::vector<Matrix<T>> probs;
    Matrix<T> attn_concat;
    NormCache<T> ffn_norm;
    Matrix<T> ffn_in;
    Matrix<T> up;
    Matrix<T> act;
  };
  std::vector<TokenId> ids;
  NormCache<T> embed_norm;
  std::vector<Layer> layers;
  NormCache<T> final_norm;
  std::vector<std::size_t> head_rows;
  Matrix<T> head_in;
  Matrix<T> dense_pre;
  NormCache<T> head_norm;
  Matrix<T> head_out;
};

template <typename T>
BasicTransformer<T>::BasicTransformer(const ModelConfig& config) : config_(config) {
  config_.validate();
  const auto layout = parameter_layout(config_);
  tensors_.reserve(layout.size());
  for (const auto& [name, shape] : layout) {
    by_name_.emplace(name, tensors_.size());
    tensors_.push_back({name, Matrix<T>::Zero(static_cast<Eigen::Index>(shape.rows),
                                              static_cast<Eigen::Index>(shape.cols))});
  }
  auto at = [&](const std::string& n) { return by_name_.at(n); };
  index_.tokens = at("embed.tokens");
  index_.positions = at("embed.positions");
  if (config_.kind == ModelKind::Encoder) {
    index_.embed_norm_w = at("embed.norm.weight");
    index_.embed_norm_b = at("embed.norm.bias");
  }
  for (std::size_t i = 0; i < config_.layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    index_.layers.push_back({at(p + "attn_norm.weight"), at(p + "attn_norm.bias"),
                             at(p + "attn.qkv.weight"), at(p + "attn.qkv.bias"),
                             at(p + "attn.out.weight"), at(p + "attn.out.bias"),
                             at(p + "ffn_norm.weight"), at(p + "ffn_norm.bias"),
                             at(p + "ffn.up.weight"), at(p + "ffn.up.bias"),
                             at(p + "ffn.down.weight"), at(p + "ffn.down.bias")});
  }
  if (config_.kind == ModelKind::Decoder) {
    index_.final_norm_w = at("final_norm.weight");
    index_.final_norm_b = at("final_norm.bias");
  }
  if (config_.head_style == HeadStyle::DenseNormProjection) {
    index_.dense_w = at("head.dense.weight");
    index_.dense_b = at("head.dense.bias");
    index_.head_norm_w = at("head.norm.weight");
    index_.head_norm_b = at("head.norm.bias");
    index_.proj_b = at("head.proj.bias");
  }
  index_.proj_w = config_.tie_output ? index_.tokens : at("head.proj.weight");
}

template <typename T>
BasicTransformer<T> BasicTransformer<T>::build(const ModelConfig& config, std::uint64_t seed) {
  BasicTransformer model(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  for (auto& t : model.tensors_) {
    const bool is_norm_gain = t.name.ends_with("norm.weight");
    const bool is_bias = t.name.ends_with(".bias");
    if (is_norm_gain) {
      t.value.setOnes();
    } else if (is_bias) {
      t.value.setZero();
    } else {
      for (Eigen::Index i = 0; i < t.value.size(); ++i) {
        t.value.data()[i] = static_cast<T>(normal(rng));
      }
    }
  }
  return model;
}

template <typename T>
std::size_t BasicTransformer<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

template <typename T>
auto BasicTransformer<T>::tensor(std::string_view name) -> Tensor& {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw std::out_of_range("no parameter tensor named " + std::string(name));
  return tensors_[it->second];
}

template <typename T>
auto BasicTransformer<T>::tensor(std::string_view name) const -> const Tensor& {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw std::out_of_range("no parameter tensor named " + std::string(name));
  return tensors_[it->second];
}

template <typename T>
template <typename U>
BasicTransformer<U> BasicTransformer<T>::cast() const {
  BasicTransformer<U> out(config_);
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    out.tensors_[i].value = tensors_[i].value.template cast<U>();
  }
  return out;
}

template <typename T>
void BasicTransformer<T>::check_ids(std::span<const TokenId> ids) const {
  if (ids.empty()) throw std::invalid_argument("transformer: empty input");
  if (ids.size() > config_.max_length) {
    throw std::invalid_argument("transformer: input of " + std::to_string(ids.size()) +
                                " tokens exceeds max_length " +
                                std::to_string(config_.max_length));
  }
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw std::invalid_argument("transformer: token id " + std::to_string(id) +
                                  " outside vocabulary");
    }
  }
}

template <typename T>
void BasicTransformer<T>::run(std::span<const TokenId> ids, Cache* cache, Matrix<T>& x) const {
  const auto n = static_cast<Eigen::Index>(ids.size());
  const auto h = static_cast<Eigen::Index>(config_.hidden);
  const auto nh = static_cast<Eigen::Index>(config_.heads);
  const auto d = h / nh;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const bool causal = config_.kind == ModelKind::Decoder;
  const auto& W = [this](std::size_t i) -> const Matrix<T>& { return tensors_[i].value; };

  x.resize(n, h);
  for (Eigen::Index t = 0; t < n; ++t) {
    x.row(t) = W(index_.tokens).row(ids[static_cast<std::size_t>(t)]) +
               W(index_.positions).row(t + static_cast<Eigen::Index>(config_.position_offset));
  }
  if (cache != nullptr) {
    cache->ids.assign(ids.begin(), ids.end());
    cache->layers.assign(config_.layers, {});
  }
  if (!causal) {
    x = layer_norm(x, W(index_.embed_norm_w), W(index_.embed_norm_b),
                   cache ? &cache->embed_norm : nullptr);
  }

  for (std::size_t li = 0; li < config_.layers; ++li) {
    const LayerIndex& L = index_.layers[li];
    typename Cache::Layer* lc = cache ? &cache->layers[li] : nullptr;
    if (lc) lc->input = x;

    Matrix<T> attn_in = causal ? layer_norm(x, W(L.attn_norm_w), W(L.attn_norm_b),
                                            lc ? &lc->attn_norm : nullptr)
                               : x;
    Matrix<T> qkv = affine(attn_in, W(L.qkv_w), W(L.qkv_b));
    Matrix<T> concat(n, h);
    if (lc) lc->probs.resize(static_cast<std::size_t>(nh));
    for (Eigen::Index head = 0; head < nh; ++head) {
      const auto q = qkv.middleCols(head * d, d);
      const auto k = qkv.middleCols(h + head * d, d);
      const auto v = qkv.middleCols(2 * h + head * d, d);
      Matrix<T> scores = (q * k.transpose()) * scale;
      for (Eigen::Index r = 0; r < n; ++r) {
        const Eigen::Index visible = causal ? r + 1 : n;
        auto row = scores.row(r);
        const T max = row.head(visible).maxCoeff();
        row.head(visible) = (row.head(visible).array() - max).exp();
        const T sum = row.head(visible).sum();
        row.head(visible) /= sum;
        if (visible < n) row.tail(n - visible).setZero();
      }
      concat.middleCols(head * d, d) = scores * v;
      if (lc) lc->probs[static_cast<std::size_t>(head)] = std::move(scores);
    }
    Matrix<T> attn_out = affine(concat, W(L.out_w), W(L.out_b));
    if (lc) {
      lc->attn_in = std::move(attn_in);
      lc->qkv = std::move(qkv);
      lc->attn_concat = std::move(concat);
    }

    Matrix<T> ffn_in;
    if (causal) {
      x += attn_out;
      ffn_in = layer_norm(x, W(L.ffn_norm_w), W(L.ffn_norm_b), lc ? &lc->ffn_norm : nullptr);
    } else {
      x = layer_norm(Matrix<T>(x + attn_out), W(L.attn_norm_w), W(L.attn_norm_b),
                     lc ? &lc->attn_norm : nullptr);
      ffn_in = x;
    }
    Matrix<T> up = affine(ffn_in, W(L.up_w), W(L.up_b));
    Matrix<T> act = up.unaryExpr([](T u) { return gelu(u); });
    Matrix<T> ffn_out = affine(act, W(L.down_w), W(L.down_b));
    if (causal) {
      x += ffn_out;
    } else {
      x = layer_norm(Matrix<T>(x + ffn_out), W(L.ffn_norm_w), W(L.ffn_norm_b),
                     lc ? &lc->ffn_norm : nullptr);
    }
    if (lc) {
      lc->ffn_in = std::move(ffn_in);
      lc->up = std::move(up);
      lc->act = std::move(act);
    }
  }
  if (causal) {
    x = layer_norm(x, W(index_.final_norm_w), W(index_.final_norm_b),
                   cache ? &cache->final_norm : nullptr);
  }
}

template <typename T>
Matrix<T> BasicTransformer<T>::head(const Matrix<T>& hidden, std::span<const std::size_t> rows,
                                    Cache* cache) const {
  const auto& W = [this](std::size_t i) -> const Matrix<T>& { return tensors_[i].value; };
  Matrix<T> in(static_cast<Eigen::Index>(rows.size()), hidden.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) in.row(static_cast<Eigen::Index>(r)) = hidden.row(static_cast<Eigen::Index>(rows[r]));
  Matrix<T> out;
  Matrix<T> logits;
  if (config_.head_style == HeadStyle::DenseNormProjection) {
    Matrix<T> pre = affine(in, W(index_.dense_w), W(index_.dense_b));
    Matrix<T> act = pre.unaryExpr([](T u) { return gelu(u); });
    out = layer_norm(act, W(index_.head_norm_w), W(index_.head_norm_b),
                     cache ? &cache->head_norm : nullptr);
    logits = out * W(index_.proj_w).transpose();
    logits.rowwise() += W(index_.proj_b).row(0);
    if (cache) cache->dense_pre = std::move(pre);
  } else {
    out = in;
    logits = out * W(index_.proj_w).transpose();
  }
  if (cache) {
    cache->head_rows.assign(rows.begin(), rows.end());
    cache->head_in = std::move(in);
    cache->head_out = std::move(out);
  }
  log_softmax_rows(logits);
  return logits;
}

template <typename T>
Matrix<T> BasicTransformer<T>::forward_causal(std::span<const TokenId> ids) const {
  if (config_.kind != ModelKind::Decoder) {
    throw std::invalid_argument("forward_causal requires a decoder model");
  }
  check_ids(ids);
  Matrix<T> hidden;
  run(ids, nullptr, hidden);
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return head(hidden, rows, nullptr);
}

template <typename T>
Matrix<T> BasicTransformer<T>::forward_mlm(std::span<const TokenId> ids,
                                           std::span<const std::size_t> positions) const {
  if (config_.kind != ModelKind::Encoder) {
    throw std::invalid_argument("forward_mlm requires an encoder model");
  }
  check_ids(ids);
  for (auto p : positions) {
    if (p >= ids.size()) {
      throw std::out_of_range("forward_mlm: position " + std::to_string(p) +
                              " outside sequence of length " + std::to_string(ids.size()));
    }
  }
  if (positions.empty()) return Matrix<T>(0, static_cast<Eigen::Index>(config_.vocab_size));
  Matrix<T> hidden;
  run(ids, nullptr, hidden);
  return head(hidden, positions, nullptr);
}

template <typename T>
NllSum BasicTransformer<T>::loss(const Example& example) const {
  return forward_backward(example, nullptr);
}

template <typename T>
NllSum BasicTransformer<T>::accumulate_gradients(const Example& example, Gradients<T>& grads) const {
  return forward_backward(example, &grads);
}

template <typename T>
NllSum BasicTransformer<T>::forward_backward(const Example& ex, Gradients<T>* grads) const {
  if (ex.inputs.size() != ex.targets.size()) {
    throw std::invalid_argument("example inputs and targets differ in length");
  }
  check_ids(ex.inputs);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ex.targets.size(); ++i) {
    if (ex.targets[i] >= 0) {
      if (static_cast<std::size_t>(ex.targets[i]) >= config_.vocab_size) {
        throw std::invalid_argument("example target outside vocabulary");
      }
      rows.push_back(i);
    }
  }
  NllSum result;
  if (rows.empty()) return result;

  Cache cache;
  Cache* cp = grads ? &cache : nullptr;
  Matrix<T> hidden;
  run(ex.inputs, cp, hidden);
  Matrix<T> logp = head(hidden, rows, cp);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    result.total -= static_cast<double>(logp(static_cast<Eigen::Index>(r), ex.targets[rows[r]]));
  }
  result.tokens = rows.size();
  if (!grads) return result;

  // Backward pass.
  auto& G = grads->tensors();
  const auto& W = [this](std::size_t i) -> const Matrix<T>& { return tensors_[i].value; };
  const auto n = static_cast<Eigen::Index>(ex.inputs.size());
  const auto h = static_cast<Eigen::Index>(config_.hidden);
  const auto nh = static_cast<Eigen::Index>(config_.heads);
  const auto d = h / nh;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const bool causal = config_.kind == ModelKind::Decoder;

  Matrix<T> dlogits = logp.array().exp().matrix();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    dlogits(static_cast<Eigen::Index>(r), ex.targets[rows[r]]) -= T(1);
  }
  Matrix<T> dhead_in;
  if (config_.head_style == HeadStyle::DenseNormProjection) {
    G[index_.proj_w] += dlogits.transpose() * cache.head_out;
    G[index_.proj_b].row(0) += dlogits.colwise().sum();
    Matrix<T> dout = dlogits * W(index_.proj_w);
    Matrix<T> dact = layer_norm_backward(dout, W(index_.head_norm_w), cache.head_norm,
                                         G[index_.head_norm_w], G[index_.head_norm_b]);
    Matrix<T> dpre = dact.array() * cache.dense_pre.unaryExpr([](T u) { return gelu_grad(u); }).array();
    G[index_.dense_w] += cache.head_in.transpose() * dpre;
    G[index_.dense_b].row(0) += dpre.colwise().sum();
    dhead_in = dpre * W(index_.dense_w).transpose();
  } else {
    G[index_.proj_w] += dlogits.transpose() * cache.head_out;
    dhead_in = dlogits * W(index_.proj_w);
  }
  Matrix<T> dx = Matrix<T>::Zero(n, h);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    dx.row(static_cast<Eigen::Index>(rows[r])) += dhead_in.row(static_cast<Eigen::Index>(r));
  }
  if (causal) {
    dx = layer_norm_backward(dx, W(index_.final_norm_w), cache.final_norm, G[index_.final_norm_w],
                             G[index_.final_norm_b]);
  }

  for (std::size_t li = config_.layers; li-- > 0;) {
    const LayerIndex& L = index_.layers[li];
    const auto& lc = cache.layers[li];

    // Feed-forward sub-block.
    Matrix<T> dffn_out;
    if (causal) {
      dffn_out = dx;
    } else {
      dx = layer_norm_backward(dx, W(L.ffn_norm_w), lc.ffn_norm, G[L.ffn_norm_w], G[L.ffn_norm_b]);
      dffn_out = dx;
    }
    G[L.down_w] += lc.act.transpose() * dffn_out;
    G[L.down_b].row(0) += dffn_out.colwise().sum();
    Matrix<T> dact = dffn_out * W(L.down_w).transpose();
    Matrix<T> dup = dact.array() * lc.up.unaryExpr([](T u) { return gelu_grad(u); }).array();
    G[L.up_w] += lc.ffn_in.transpose() * dup;
    G[L.up_b].row(0) += dup.colwise().sum();
    Matrix<T> dffn_in = dup * W(L.up_w).transpose();
    if (causal) {
      dx += layer_norm_backward(dffn_in, W(L.ffn_norm_w), lc.ffn_norm, G[L.ffn_norm_w],
                                G[L.ffn_norm_b]);
    } else {
      dx += dffn_in;
      dx = layer_norm_backward(dx, W(L.attn_norm_w), lc.attn_norm, G[L.attn_norm_w],
                               G[L.attn_norm_b]);
    }

    // Attention sub-block; dx now holds d(loss)/d(residual after attention).
    const Matrix<T>& dattn_out = dx;
    G[L.out_w] += lc.attn_concat.transpose() * dattn_out;
    G[L.out_b].row(0) += dattn_out.colwise().sum();
    Matrix<T> dconcat = dattn_out * W(L.out_w).transpose();
    Matrix<T> dqkv(n, 3 * h);
    for (Eigen::Index head = 0; head < nh; ++head) {
      const auto q = lc.qkv.middleCols(head * d, d);
      const auto k = lc.qkv.middleCols(h + head * d, d);
      const auto v = lc.qkv.middleCols(2 * h + head * d, d);
      const Matrix<T>& a = lc.probs[static_cast<std::size_t>(head)];
      const auto dout = dconcat.middleCols(head * d, d);
      Matrix<T> da = dout * v.transpose();
      dqkv.middleCols(2 * h + head * d, d) = a.transpose() * dout;
      ColVector<T> inner = (da.array() * a.array()).rowwise().sum();
      Matrix<T> ds = a.array() * (da.colwise() - inner).array();
      ds *= scale;
      dqkv.middleCols(head * d, d) = ds * k;
      dqkv.middleCols(h + head * d, d) = ds.transpose() * q;
    }
    G[L.qkv_w] += lc.attn_in.transpose() * dqkv;
    G[L.qkv_b].row(0) += dqkv.colwise().sum();
    Matrix<T> dattn_in = dqkv * W(L.qkv_w).transpose();
    if (causal) {
      dx += layer_norm_backward(dattn_in, W(L.attn_norm_w), lc.attn_norm, G[L.attn_norm_w],
                                G[L.attn_norm_b]);
    } else {
      dx += dattn_in;
    }
  }

  if (!causal) {
    dx = layer_norm_backward(dx, W(index_.embed_norm_w), cache.embed_norm, G[index_.embed_norm_w],
                             G[index_.embed_norm_b]);
  }
  for (Eigen::Index t = 0; t < n; ++t) {
    G[index_.tokens].row(cache.ids[static_cast<std::size_t>(t)]) += dx.row(t);
    G[index_.positions].row(t + static_cast<Eigen::Index>(config_.position_offset)) += dx.row(t);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Scoring primitives

template <typename T>
NllSum sequence_nll(const BasicTransformer<T>& model, std::span<const TokenId> ids) {
  if (ids.empty()) throw std::invalid_argument("sequence_nll: empty text");
  NllSum out;
  out.tokens = ids.size();
  if (model.config().kind == ModelKind::Decoder) {
    std::vector<TokenId> inputs;
    inputs.reserve(ids.size());
    inputs.push_back(kBosId);
    inputs.insert(inputs.end(), ids.begin(), ids.end() - 1);
    const Matrix<T> logp = model.forward_causal(inputs);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      out.total -= static_cast<double>(logp(static_cast<Eigen::Index>(t), ids[t]));
    }
    return out;
  }
  std::vector<TokenId> seq;
  seq.reserve(ids.size() + 2);
  seq.push_back(kBosId);
  seq.insert(seq.end(), ids.begin(), ids.end());
  seq.push_back(kEosId);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::vector<TokenId> masked = seq;
    masked[i + 1] = kMaskId;
    const std::size_t pos = i + 1;
    const Matrix<T> logp = model.forward_mlm(masked, std::span<const std::size_t>(&pos, 1));
    out.total -= static_cast<double>(logp(0, ids[i]));
  }
  return out;
}

double perplexity(const NllSum& nll) {
  if (nll.tokens == 0) throw std::invalid_argument("perplexity: no scored tokens");
  return std::exp(nll.total / static_cast<double>(nll.tokens));
}

template <typename T>
std::vector<TokenScore> fill_mask(const BasicTransformer<T>& model, std::span<const TokenId> ids,
                                  std::size_t position, std::size_t k) {
  if (position >= ids.size()) {
    throw std::out_of_range("fill_mask: position " + std::to_string(position) + " out of range");
  }
  if (ids[position] != kMaskId) {
    throw std::invalid_argument("fill_mask: no mask token at position " + std::to_string(position));
  }
  const Matrix<T> logp = model.forward_mlm(ids, std::span<const std::size_t>(&position, 1));
  std::vector<TokenScore> all(static_cast<std::size_t>(logp.cols()));
  for (Eigen::Index v = 0; v < logp.cols(); ++v) {
    all[static_cast<std::size_t>(v)] = {static_cast<TokenId>(v), std::exp(static_cast<double>(logp(0, v)))};
  }
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](const TokenScore& a, const TokenScore& b) {
                      return a.probability != b.probability ? a.probability > b.probability
                                                            : a.token < b.token;
                    });
  all.resize(k);
  return all;
}

template class BasicTransformer<float>;
template class BasicTransformer<double>;
template class Gradients<float>;
template class Gradients<double>;
template BasicTransformer<double> BasicTransformer<float>::cast<double>() const;
template BasicTransformer<float> BasicTransformer<double>::cast<float>() const;
template BasicTransformer<float> BasicTransformer<float>::cast<float>() const;
template BasicTransformer<double> BasicTransformer<double>::cast<double>() const;
template NllSum sequence_nll(const BasicTransformer<float>&, std::span<const TokenId>);
template NllSum sequence_nll(const BasicTransformer<double>&, std::span<const TokenId>);
template std::vector<TokenScore> fill_mask(const BasicTransformer<float>&, std::span<const TokenId>,
                                           std::size_t, std::size_t);
template std::vector<TokenScore> fill_mask(const BasicTransformer<double>&, std::span<const TokenId>,
                                           std::size_t, std::size_t);

}  // namespace babylab
