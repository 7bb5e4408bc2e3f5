#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "edgedoc/data.hpp"
#include "edgedoc/model.hpp"
#include "edgedoc/tensor.hpp"

namespace edgedoc {

struct LossConfig {
  Scalar lambda_mask = 3.0f;
  Scalar dice_epsilon = 1.0f;

  void validate() const {
    if (!(lambda_mask >= 0))
      throw ContractError("LossConfig: lambda_mask must be >= 0");
  }
};

struct OptimConfig {
  Scalar lr0 = 3e-4f;
  Scalar weight_decay = 5e-4f;
  Scalar beta1 = 0.9f;
  Scalar beta2 = 0.999f;
  Scalar eps = 1e-8f;
  std::size_t epochs = 20;
  std::size_t batch_size = 1;
  Scalar eta_min = 0.0f;

  void validate() const {
    if (!(lr0 > 0)) throw ContractError("OptimConfig: lr0 must be > 0");
    if (epochs < 1) throw ContractError("OptimConfig: epochs must be >= 1");
  }
};

// Numerically stable BCE on logits, mean over elements.
Tensor bce_logits(const Tensor& logits, const Tensor& targets);
// Soft Dice on logits, per batch item, mean over batch.
Tensor dice_loss(const Tensor& logits, const Tensor& targets,
                 Scalar eps = 1.0f);

struct LossParts {
  Tensor total;
  Tensor cls_part;
  Tensor mask_part;  // BCE(mask) + Dice(mask), before the lambda weight
};
// total = BCE(cls) + lambda * (BCE(mask) + Dice(mask)).
LossParts total_loss(const Tensor& cls_logit, const Tensor& mask_logit,
                     const Tensor& y_cls, const Tensor& y_mask,
                     const LossConfig& cfg);

// Per-parameter first/second moment buffers plus the global step counter.
struct TrainState {
  std::uint64_t step = 0;
  std::uint32_t epoch = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  Scalar best_val_loss = 0;
  std::uint64_t rng_seed = 0;
};

TrainState make_train_state(const ParamBundle& params, std::uint64_t seed);

// One decoupled-weight-decay Adam step over every parameter; gradients are
// read from the .grad buffers and must be populated.
void adamw_step(ParamBundle& params, TrainState& state, Scalar lr,
                const OptimConfig& cfg);

// eta_min + 0.5*(lr0 - eta_min)*(1 + cos(pi*epoch/epochs)).
Scalar cosine_lr(std::uint32_t epoch, const OptimConfig& cfg);

struct EpochStats {
  std::uint32_t epoch = 0;
  Scalar train_loss = 0, train_cls = 0, train_mask = 0;
  Scalar val_loss = 0, val_cls = 0, val_mask = 0;
  Scalar lr = 0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::string best_checkpoint_dir;
  Scalar best_val_loss = 0;
  std::uint32_t best_epoch = 0;
};

struct TrainOptions {
  LossConfig loss;
  OptimConfig optim;
  std::uint64_t seed = 0;
  std::string checkpoint_dir;  // best checkpoint written here
  bool verbose = false;
};

// Epoch loop: seeded shuffle, per-sample steps (batch size 1), epoch-end
// validation, best-checkpoint-by-validation-loss selection. Deterministic
// given the seed.
TrainResult train(const ModelConfig& cfg, ParamBundle& params,
                  const DatasetManifest& train_set,
                  const DatasetManifest& val_set,
                  const ResidualExtractor& extractor, const TrainOptions& opt);

void write_history_csv(const std::string& path,
                       const std::vector<EpochStats>& history);

}  // namespace edgedoc
