#pragma once

#include <map>
#include <string>

#include "edgedoc/rng.hpp"
#include "edgedoc/tensor.hpp"

namespace edgedoc {

// Named, ordered (lexicographic) collection of learnable tensors. The names
// are the checkpoint contract; renaming a parameter breaks old checkpoints.
using ParamBundle = std::map<std::string, Tensor>;

const Tensor& param(const ParamBundle& params, const std::string& name);
std::size_t param_count(const ParamBundle& params);

enum class LayerKind {
  ConvStem,
  ConvEncoderBlock,
  TransposeAttentionBlock,
  Downsample,
  UpBlock,
  ClsHead,
  MaskHead,
};

struct LayerSpec {
  LayerKind kind;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t expansion = 4;

  void validate() const;
};

namespace init {
// He-uniform conv kernel [O,Ci,kh,kw] plus zero bias [O].
void conv(ParamBundle& params, const std::string& prefix, std::size_t out_ch,
          std::size_t in_ch, std::size_t kh, std::size_t kw, SplitMix64& rng);
// Depthwise kernel [C,1,kh,kw] plus zero bias [C].
void depthwise(ParamBundle& params, const std::string& prefix, std::size_t ch,
               std::size_t kh, std::size_t kw, SplitMix64& rng);
// He-uniform [in,out] weight plus zero bias [out] for x @ w + b.
void linear(ParamBundle& params, const std::string& prefix, std::size_t in_dim,
            std::size_t out_dim, SplitMix64& rng);
// gamma = ones, beta = zeros, both [C].
void norm(ParamBundle& params, const std::string& prefix, std::size_t ch);
void scalar(ParamBundle& params, const std::string& name, Scalar value);
}  // namespace init

namespace blocks {

// EdgeNeXt-style convolution encoder block:
// y = x + pw2(gelu(pw1(layer_norm(dwconv_k(x))))), expansion 4.
Tensor conv_encoder(const Tensor& x, const ParamBundle& params,
                    const std::string& prefix, std::size_t kernel = 3);
void conv_encoder_init(ParamBundle& params, const std::string& prefix,
                       std::size_t ch, std::size_t kernel,
                       std::size_t expansion, SplitMix64& rng);

// Single-head cross-covariance (channel) attention with learnable scalar
// temperature, followed by an MLP sub-block; residuals around both.
Tensor transpose_attention(const Tensor& x, const ParamBundle& params,
                           const std::string& prefix);
void transpose_attention_init(ParamBundle& params, const std::string& prefix,
                              std::size_t ch, std::size_t expansion,
                              SplitMix64& rng);
// Attention matrix alone ([N,C,C], rows sum to 1); exposed for tests.
Tensor transpose_attention_matrix(const Tensor& x, const ParamBundle& params,
                                  const std::string& prefix);

// Norm + strided 2x2 conv halving H,W and changing channel count.
Tensor downsample(const Tensor& x, const ParamBundle& params,
                  const std::string& prefix);
void downsample_init(ParamBundle& params, const std::string& prefix,
                     std::size_t in_ch, std::size_t out_ch, SplitMix64& rng);

// y = relu(layer_norm(pointwise(depthwise3x3(concat(up2x(x), skip))))).
// skip may be undefined; when present it must spatially match 2H x 2W.
Tensor up(const Tensor& x, const Tensor& skip, const ParamBundle& params,
          const std::string& prefix);
void up_init(ParamBundle& params, const std::string& prefix, std::size_t in_ch,
             std::size_t out_ch, SplitMix64& rng);

// GAP -> FC(C -> C/4) -> ReLU -> FC(C/4 -> 1); raw logits [N,1].
Tensor cls_head(const Tensor& x, const ParamBundle& params,
                const std::string& prefix);
void cls_head_init(ParamBundle& params, const std::string& prefix,
                   std::size_t ch, SplitMix64& rng);

// 1x1 conv C -> 1; raw logit map [N,1,H,W].
Tensor mask_head(const Tensor& x, const ParamBundle& params,
                 const std::string& prefix);
void mask_head_init(ParamBundle& params, const std::string& prefix,
                    std::size_t ch, SplitMix64& rng);

}  // namespace blocks
}  // namespace edgedoc
