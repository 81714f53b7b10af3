// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "babylab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "babylab/error.hpp"

namespace babylab {
namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix(mix(mix(seed) ^ a) ^ b);
}

bool decays(const std::string& name) {
  return !name.ends_with(".bias") && name.find("norm.") == std::string::npos;
}

}  // namespace

TrainingConfig TrainingConfig::restricted() { return TrainingConfig{}; }

TrainingConfig TrainingConfig::unrestricted() {
  TrainingConfig c;
  c.max_epochs = 40;
  c.patience = 3;
  return c;
}

void TrainingConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("training config: " + field + " " + why);
  };
  if (!(initial_lr >= 0.0) || !std::isfinite(initial_lr)) fail("initial_lr", "must be a finite non-negative number");
  if (batch_size == 0) fail("batch_size", "must be positive");
  if (max_epochs == 0) fail("max_epochs", "must be positive");
  if (patience.has_value() == (max_epochs == 2)) {
    fail("patience", "must be absent exactly when max_epochs is 2 (restricted mode)");
  }
  if (patience && *patience == 0) fail("patience", "must be at least 1");
  if (grad_accum_steps == 0) fail("grad_accum_steps", "must be positive");
  if (scheduler != "cosine") fail("scheduler", "must be 'cosine'");
  if (weight_decay < 0.0) fail("weight_decay", "must be non-negative");
  if (metric != "loss") fail("metric", "must be 'loss'");
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) fail("eval_fraction", "must be in (0, 1)");
  if (!(mask_probability > 0.0 && mask_probability < 1.0)) fail("mask_probability", "must be in (0, 1)");
}

nlohmann::json TrainingConfig::to_json() const {
  return {{"initial_lr", initial_lr},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"patience", patience ? nlohmann::json(*patience) : nlohmann::json(nullptr)},
          {"grad_accum_steps", grad_accum_steps},
          {"scheduler", scheduler},
          {"warmup_steps", warmup_steps},
          {"weight_decay", weight_decay},
          {"reduced_precision", reduced_precision},
          {"metric", metric},
          {"seed", seed},
          {"eval_fraction", eval_fraction},
          {"mask_probability", mask_probability},
          {"beta1", beta1},
          {"beta2", beta2},
          {"epsilon", epsilon},
          {"max_grad_norm", max_grad_norm}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& doc) {
  TrainingConfig c;
  static const std::vector<std::string> known = {
      "initial_lr", "batch_size", "max_epochs", "patience", "grad_accum_steps", "scheduler",
      "warmup_steps", "weight_decay", "reduced_precision", "metric", "seed", "eval_fraction",
      "mask_probability", "beta1", "beta2", "epsilon", "max_grad_norm"};
  if (!doc.is_object()) throw ConfigError("training config: expected a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("training config: unknown field '" + key + "'");
    }
  }
  try {
    c.initial_lr = doc.value("initial_lr", c.initial_lr);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.max_epochs = doc.value("max_epochs", c.max_epochs);
    if (doc.contains("patience") && !doc.at("patience").is_null()) {
      c.patience = doc.at("patience").get<std::size_t>();
    } else if (!doc.contains("patience") && c.max_epochs != 2) {
      c.patience = 3;
    }
    c.grad_accum_steps = doc.value("grad_accum_steps", c.grad_accum_steps);
    c.scheduler = doc.value("scheduler", c.scheduler);
    c.warmup_steps = doc.value("warmup_steps", c.warmup_steps);
    c.weight_decay = doc.value("weight_decay", c.weight_decay);
    c.reduced_precision = doc.value("reduced_precision", c.reduced_precision);
    c.metric = doc.value("metric", c.metric);
    c.seed = doc.value("seed", c.seed);
    c.eval_fraction = doc.value("eval_fraction", c.eval_fraction);
    c.mask_probability = doc.value("mask_probability", c.mask_probability);
    c.beta1 = doc.value("beta1", c.beta1);
    c.beta2 = doc.value("beta2", c.beta2);
    c.epsilon = doc.value("epsilon", c.epsilon);
    c.max_grad_norm = doc.value("max_grad_norm", c.max_grad_norm);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

double lr_at_step(const TrainingConfig& config, std::size_t step, std::size_t total_steps) {
  if (total_steps < config.warmup_steps) {
    throw std::invalid_argument("lr schedule: total_steps (" + std::to_string(total_steps) +
                                ") is smaller than warmup_steps (" +
                                std::to_string(config.warmup_steps) + ")");
  }
  if (step < config.warmup_steps) {
    return config.initial_lr * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  }
  if (step >= total_steps) return 0.0;
  const double progress = static_cast<double>(step - config.warmup_steps) /
                          static_cast<double>(total_steps - config.warmup_steps);
  return config.initial_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

StopDecision should_stop(std::span<const double> eval_losses, std::optional<std::size_t> patience) {
  if (!patience) return {};
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t i = 0; i < eval_losses.size(); ++i) {
    if (eval_losses[i] < best) {
      best = eval_losses[i];
      stale = 0;
    } else if (++stale >= *patience) {
      return {true, i + 1};
    }
  }
  return {};
}

MaskedSequence masking_policy(std::span<const TokenId> ids, std::uint64_t seed,
                              std::size_t vocab_size, double rate) {
  MaskedSequence out{{ids.begin(), ids.end()}, std::vector<TokenId>(ids.size(), -1)};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<TokenId> random_token(kNumSpecials,
                                                      static_cast<TokenId>(vocab_size) - 1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double select = unit(rng);
    const double action = unit(rng);
    const TokenId replacement = random_token(rng);
    if (ids[i] < kNumSpecials || select >= rate) continue;
    out.targets[i] = ids[i];
    if (action < 0.8) {
      out.inputs[i] = kMaskId;
    } else if (action < 0.9) {
      out.inputs[i] = replacement;
    }
  }
  return out;
}

Example make_example(const ModelConfig& model, std::span<const TokenId> block,
                     std::uint64_t mask_seed, double mask_rate) {
  Example ex;
  if (model.kind == ModelKind::Decoder) {
    ex.inputs.assign(block.begin(), block.end());
    ex.targets.assign(block.size(), -1);
    for (std::size_t t = 0; t + 1 < block.size(); ++t) {
      if (block[t + 1] != kPadId) ex.targets[t] = block[t + 1];
    }
    return ex;
  }
  auto masked = masking_policy(block, mask_seed, model.vocab_size, mask_rate);
  ex.inputs = std::move(masked.inputs);
  ex.targets = std::move(masked.targets);
  return ex;
}

template <typename T>
NllSum step_gradient(const BasicTransformer<T>& model,
                     std::span<const std::vector<Example>> micro_batches, Gradients<T>& grads) {
  grads.zero();
  NllSum sum;
  for (const auto& batch : micro_batches) {
    for (const auto& ex : batch) sum += model.accumulate_gradients(ex, grads);
  }
  if (sum.tokens > 0) grads.scale(T(1) / static_cast<T>(sum.tokens));
  return sum;
}

template NllSum step_gradient(const BasicTransformer<float>&, std::span<const std::vector<Example>>,
                              Gradients<float>&);
template NllSum step_gradient(const BasicTransformer<double>&, std::span<const std::vector<Example>>,
                              Gradients<double>&);

AdamW::AdamW(const TransformerModel& model, const TrainingConfig& config)
    : beta1_(config.beta1),
      beta2_(config.beta2),
      epsilon_(config.epsilon),
      weight_decay_(config.weight_decay) {
  for (const auto& t : model.tensors()) {
    m_.push_back(Matrix<float>::Zero(t.value.rows(), t.value.cols()));
    v_.push_back(Matrix<float>::Zero(t.value.rows(), t.value.cols()));
    decay_.push_back(decays(t.name));
  }
}

void AdamW::step(TransformerModel& model, const Gradients<float>& grads, double lr) {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  const auto b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const auto step_size = static_cast<float>(lr / c1);
  const auto bias2 = static_cast<float>(std::sqrt(c2));
  const auto eps = static_cast<float>(epsilon_);
  auto& tensors = model.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& p = tensors[i].value;
    const auto& g = grads.tensors()[i];
    if (decay_[i] && weight_decay_ > 0.0) p *= static_cast<float>(1.0 - lr * weight_decay_);
    m_[i] = b1 * m_[i] + (1.0f - b1) * g;
    v_[i] = b2 * v_[i] + (1.0f - b2) * g.cwiseProduct(g);
    p.array() -= step_size * m_[i].array() / (v_[i].array().sqrt() / bias2 + eps);
  }
}

std::map<std::string, Matrix<float>> AdamW::state() const {
  std::map<std::string, Matrix<float>> out;
  for (std::size_t i = 0; i < m_.size(); ++i) {
    out.emplace("optim/m/" + std::to_string(i), m_[i]);
    out.emplace("optim/v/" + std::to_string(i), v_[i]);
  }
  return out;
}

void AdamW::restore(const TransformerModel& model, const std::map<std::string, Matrix<float>>& state,
                    std::size_t steps) {
  for (std::size_t i = 0; i < m_.size(); ++i) {
    auto m = state.find("optim/m/" + std::to_string(i));
    auto v = state.find("optim/v/" + std::to_string(i));
    if (m == state.end() || v == state.end() || m->second.rows() != m_[i].rows() ||
        m->second.cols() != m_[i].cols()) {
      throw ConfigError("optimizer state does not match model tensor " +
                        model.tensors()[i].name);
    }
    m_[i] = m->second;
    v_[i] = v->second;
  }
  steps_ = steps;
}

std::string_view to_string(StopReason reason) {
  return reason == StopReason::MaxEpochs ? "max_epochs" : "early_stop";
}

nlohmann::json TrainingLog::to_json() const {
  nlohmann::json steps_json = nlohmann::json::array();
  for (const auto& s : steps) steps_json.push_back({{"step", s.step}, {"lr", s.lr}, {"loss", s.loss}});
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) {
    epochs_json.push_back(
        {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"eval_loss", e.eval_loss}});
  }
  return {{"steps", steps_json},
          {"epochs", epochs_json},
          {"stop_reason", stop_reason ? nlohmann::json(to_string(*stop_reason)) : nlohmann::json()},
          {"total_steps", total_steps},
          {"tokens_seen", tokens_seen}};
}

TrainingLog TrainingLog::from_json(const nlohmann::json& doc) {
  TrainingLog log;
  for (const auto& s : doc.at("steps")) {
    log.steps.push_back({s.at("step").get<std::size_t>(), s.at("lr").get<double>(),
                         s.at("loss").get<double>()});
  }
  for (const auto& e : doc.at("epochs")) {
    log.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                          e.at("eval_loss").get<double>()});
  }
  if (doc.contains("stop_reason") && doc.at("stop_reason").is_string()) {
    log.stop_reason = doc.at("stop_reason") == "early_stop" ? StopReason::EarlyStop
                                                            : StopReason::MaxEpochs;
  }
  log.total_steps = doc.value("total_steps", std::size_t{0});
  log.tokens_seen = doc.value("tokens_seen", std::size_t{0});
  return log;
}

TrainingLog train(TransformerModel& model, std::span<const std::vector<TokenId>> blocks,
                  const TrainingConfig& config, const TrainOptions& options) {
  config.validate();
  if (blocks.empty()) throw std::invalid_argument("train: empty token stream");
  const ModelConfig& mc = model.config();

  // Held-out split.
  std::vector<std::size_t> order(blocks.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> train_ids, eval_ids;
  if (blocks.size() == 1) {
    train_ids = eval_ids = order;
  } else {
    std::mt19937_64 split_rng(derive_seed(config.seed, 0x5b117));
    std::shuffle(order.begin(), order.end(), split_rng);
    auto eval_count = static_cast<std::size_t>(
        std::ceil(config.eval_fraction * static_cast<double>(blocks.size())));
    eval_count = std::clamp<std::size_t>(eval_count, 1, blocks.size() - 1);
    eval_ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(eval_count));
    train_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(eval_count), order.end());
    std::sort(eval_ids.begin(), eval_ids.end());
  }
  std::vector<Example> eval_examples;
  for (auto b : eval_ids) {
    eval_examples.push_back(make_example(mc, blocks[b], derive_seed(config.seed, 0xe7a1, b),
                                         config.mask_probability));
  }

  const std::size_t micro_per_epoch = (train_ids.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t steps_per_epoch =
      (micro_per_epoch + config.grad_accum_steps - 1) / config.grad_accum_steps;
  const std::size_t total_steps = steps_per_epoch * config.max_epochs;
  // Fail before any work if the schedule is infeasible.
  (void)lr_at_step(config, 0, total_steps);

  AdamW optimizer(model, config);
  TrainingLog log;
  std::size_t first_epoch = 1;
  if (options.resume) {
    optimizer.restore(model, options.resume->optimizer, options.resume->optimizer_steps);
    log = options.resume->log;
    log.stop_reason.reset();
    first_epoch = options.resume->epochs_completed + 1;
  }
  log.total_steps = total_steps;
  std::vector<double> eval_history;
  for (const auto& e : log.epochs) eval_history.push_back(e.eval_loss);

  Gradients<float> grads(model);
  auto evaluate = [&](const TransformerModel& m) {
    NllSum sum;
    for (const auto& ex : eval_examples) sum += m.loss(ex);
    return sum.mean();
  };

  for (std::size_t epoch = first_epoch; epoch <= config.max_epochs; ++epoch) {
    std::vector<std::size_t> epoch_order = train_ids;
    std::mt19937_64 rng(derive_seed(config.seed, 0xe90c, epoch));
    std::shuffle(epoch_order.begin(), epoch_order.end(), rng);

    NllSum epoch_sum;
    std::size_t cursor = 0;
    while (cursor < epoch_order.size()) {
      std::vector<std::vector<Example>> micro;
      for (std::size_t a = 0; a < config.grad_accum_steps && cursor < epoch_order.size(); ++a) {
        std::vector<Example> batch;
        for (std::size_t b = 0; b < config.batch_size && cursor < epoch_order.size(); ++b, ++cursor) {
          const std::size_t block = epoch_order[cursor];
          batch.push_back(make_example(mc, blocks[block], derive_seed(config.seed, epoch, block),
                                       config.mask_probability));
          for (TokenId id : blocks[block]) log.tokens_seen += id != kPadId ? 1 : 0;
        }
        micro.push_back(std::move(batch));
      }
      NllSum step_sum;
      if (config.reduced_precision) {
        TransformerModel half = model;
        for (auto& t : half.tensors()) {
          t.value = t.value.unaryExpr([](float x) { return static_cast<float>(Eigen::half(x)); });
        }
        step_sum = step_gradient(half, std::span<const std::vector<Example>>(micro), grads);
      } else {
        step_sum = step_gradient(model, std::span<const std::vector<Example>>(micro), grads);
      }
      if (config.max_grad_norm > 0.0) {
        double sq = 0.0;
        for (const auto& g : grads.tensors()) sq += static_cast<double>(g.squaredNorm());
        const double norm = std::sqrt(sq);
        if (norm > config.max_grad_norm) grads.scale(static_cast<float>(config.max_grad_norm / norm));
      }
      const std::size_t step = optimizer.steps_taken();
      const double lr = lr_at_step(config, step, total_steps);
      optimizer.step(model, grads, lr);
      log.steps.push_back({step, lr, step_sum.mean()});
      epoch_sum += step_sum;
    }

    const double eval_loss = evaluate(model);
    // Ties keep the earlier checkpoint, matching the strict-improvement rule.
    const bool is_best = eval_history.empty() ||
                         eval_loss < *std::min_element(eval_history.begin(), eval_history.end());
    eval_history.push_back(eval_loss);
    log.epochs.push_back({epoch, epoch_sum.mean(), eval_loss});

    const StopDecision decision = should_stop(eval_history, config.patience);
    if (decision.stop) log.stop_reason = StopReason::EarlyStop;
    else if (epoch == config.max_epochs) log.stop_reason = StopReason::MaxEpochs;

    if (options.on_epoch_end) options.on_epoch_end({epoch, is_best, &model, &optimizer, &log});
    if (decision.stop) break;
  }
  if (!log.stop_reason) log.stop_reason = StopReason::MaxEpochs;
  return log;
}

}  // namespace babylab
