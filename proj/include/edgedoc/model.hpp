#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "edgedoc/layers.hpp"
#include "edgedoc/tensor.hpp"

namespace edgedoc {

struct ModelConfig {
  std::size_t in_channels = 2;
  std::vector<std::size_t> stage_channels = {16, 32, 64, 128};
  std::vector<std::size_t> stage_depths = {1, 1, 2, 1};
  std::set<std::size_t> attention_stages = {2, 3, 4};
  std::size_t input_h = 256;
  std::size_t input_w = 256;
  std::vector<std::size_t> decoder_channels = {64, 32, 16, 8};

  void validate() const;

  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);

  // Reduced setup for gradcheck / overfit tests.
  static ModelConfig reduced(std::size_t input_size = 64);
};

struct ForwardOutput {
  Tensor cls_logit;   // [N,1]
  Tensor mask_logit;  // [N,1,H,W]
  std::vector<Tensor> stage_features;  // diagnostic taps, stages 1..4
};

struct Prediction {
  Scalar score = 0;  // sigmoid(cls_logit), in [0,1]
  Tensor mask;       // [H,W] probabilities in [0,1]
};

// Deterministic parameter initialization; identical seed => bit-identical
// bundle.
ParamBundle build_model(const ModelConfig& cfg, std::uint64_t seed);

ForwardOutput forward(const ModelConfig& cfg, const ParamBundle& params,
                      const Tensor& x, bool keep_stage_features = false);

// Inference for a single sample [1,2,H,W] (no recording, no grads).
Prediction predict(const ModelConfig& cfg, const ParamBundle& params,
                   const Tensor& x);

// Checkpoint = directory: checkpoint.txt manifest + one BTF per parameter.
void save_checkpoint(const std::string& dir, const ModelConfig& cfg,
                     const ParamBundle& params,
                     const std::map<std::string, std::string>& meta);
struct Checkpoint {
  ModelConfig cfg;
  ParamBundle params;
  std::map<std::string, std::string> meta;
};
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace edgedoc
