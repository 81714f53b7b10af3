// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "babylab/model.hpp"

namespace babylab {

/// Training arguments. Defaults are the restricted two-epoch regimen; use
/// unrestricted() for the 40-epoch, patience-3 variant.
struct TrainingConfig {
  double initial_lr = 5e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 2;
  std::optional<std::size_t> patience;
  std::size_t grad_accum_steps = 8;
  std::string scheduler = "cosine";
  std::size_t warmup_steps = 1000;
  double weight_decay = 0.01;
  bool reduced_precision = false;
  std::string metric = "loss";
  std::uint64_t seed = 42;

  // Not part of the published argument table; trainer defaults.
  double eval_fraction = 0.02;
  double mask_probability = 0.15;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double max_grad_norm = 1.0;  // <= 0 disables clipping

  static TrainingConfig restricted();
  static TrainingConfig unrestricted();

  std::size_t effective_batch() const { return batch_size * grad_accum_steps; }

  /// Throws ConfigError naming the offending field.
  void validate() const;

  nlohmann::json to_json() const;
  static TrainingConfig from_json(const nlohmann::json& doc);
};

/// Linear warmup from 0 to initial_lr over warmup_steps, then cosine decay
/// to 0 at total_steps. Throws std::invalid_argument when total_steps <
/// warmup_steps.
double lr_at_step(const TrainingConfig& config, std::size_t step, std::size_t total_steps);

struct StopDecision {
  bool stop = false;
  std::size_t at_evaluation = 0;  // 1-based index of the triggering evaluation
};

/// Early stopping: stop once `patience` consecutive evaluations fail to
/// strictly improve on the best loss so far. No patience never stops.
StopDecision should_stop(std::span<const double> eval_losses, std::optional<std::size_t> patience);

struct MaskedSequence {
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;  // original id at selected positions, -1 elsewhere
};

/// Dynamic masking: each non-special position is selected with probability
/// `rate`; selected positions become the mask token 80% of the time, a random
/// non-special token 10%, and stay unchanged 10%. Deterministic in `seed`.
MaskedSequence masking_policy(std::span<const TokenId> ids, std::uint64_t seed,
                              std::size_t vocab_size, double rate = 0.15);

/// Builds the training example for one token block.
Example make_example(const ModelConfig& model, std::span<const TokenId> block,
                     std::uint64_t mask_seed, double mask_rate);

/// Gradient of one optimizer step: per-token NLL gradients summed over every
/// micro-batch, divided by the total number of scored tokens. Equivalent to
/// one pass over the concatenated batch.
template <typename T>
NllSum step_gradient(const BasicTransformer<T>& model,
                     std::span<const std::vector<Example>> micro_batches, Gradients<T>& grads);

/// Decoupled-weight-decay Adam. Biases and norm parameters are not decayed.
class AdamW {
 public:
  AdamW() = default;
  AdamW(const TransformerModel& model, const TrainingConfig& config);

  void step(TransformerModel& model, const Gradients<float>& grads, double lr);

  std::size_t steps_taken() const { return steps_; }
  std::map<std::string, Matrix<float>> state() const;
  void restore(const TransformerModel& model, const std::map<std::string, Matrix<float>>& state,
               std::size_t steps);

 private:
  double beta1_ = 0.9, beta2_ = 0.999, epsilon_ = 1e-8, weight_decay_ = 0.0;
  std::vector<Matrix<float>> m_, v_;
  std::vector<bool> decay_;
  std::size_t steps_ = 0;
};

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double eval_loss = 0.0;
};

enum class StopReason { MaxEpochs, EarlyStop };

struct TrainingLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::optional<StopReason> stop_reason;
  std::size_t total_steps = 0;
  std::size_t tokens_seen = 0;

  nlohmann::json to_json() const;
  static TrainingLog from_json(const nlohmann::json& doc);
};

std::string_view to_string(StopReason reason);

/// Resumable trainer state carried in checkpoints.
struct TrainerState {
  std::size_t epochs_completed = 0;
  std::map<std::string, Matrix<float>> optimizer;
  std::size_t optimizer_steps = 0;
  TrainingLog log;
};

struct EpochEvent {
  std::size_t epoch = 0;
  bool is_best = false;
  const TransformerModel* model = nullptr;
  const AdamW* optimizer = nullptr;
  const TrainingLog* log = nullptr;
};

struct TrainOptions {
  std::optional<TrainerState> resume;
  std::function<void(const EpochEvent&)> on_epoch_end;
};

/// Runs the training regimen over fixed-length token blocks. Decoders learn
/// next-token prediction; encoders learn masked-token prediction with fresh
/// masks every epoch. A held-out split (eval_fraction of the blocks, at
/// least one) is evaluated after each epoch. Throws std::invalid_argument on
/// an empty stream.
TrainingLog train(TransformerModel& model, std::span<const std::vector<TokenId>> blocks,
                  const TrainingConfig& config, const TrainOptions& options = {});

}  // namespace babylab
