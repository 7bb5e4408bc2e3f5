#include "edgedoc/layers.hpp"

#include <cmath>

#include "edgedoc/ops.hpp"

namespace edgedoc {

const Tensor& param(const ParamBundle& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end())
    throw ContractError("missing parameter: " + name);
  return it->second;
}

std::size_t param_count(const ParamBundle& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

void LayerSpec::validate() const {
  if (kernel % 2 == 0) throw ContractError("LayerSpec: kernel must be odd");
  if (in_channels == 0 || out_channels == 0)
    throw ContractError("LayerSpec: channels must be positive");
  if (expansion == 0) throw ContractError("LayerSpec: expansion must be positive");
}

namespace init {

namespace {
Tensor he_uniform(Shape shape, std::size_t fan_in, SplitMix64& rng) {
  Tensor t = Tensor::zeros(shape, /*requires_grad=*/true);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i)
    t.data()[i] = static_cast<Scalar>(rng.uniform(-limit, limit));
  return t;
}
}  // namespace

void conv(ParamBundle& params, const std::string& prefix, std::size_t out_ch,
          std::size_t in_ch, std::size_t kh, std::size_t kw, SplitMix64& rng) {
  params[prefix + ".w"] = he_uniform({out_ch, in_ch, kh, kw}, in_ch * kh * kw, rng);
  params[prefix + ".b"] = Tensor::zeros({out_ch}, true);
}

void depthwise(ParamBundle& params, const std::string& prefix, std::size_t ch,
               std::size_t kh, std::size_t kw, SplitMix64& rng) {
  params[prefix + ".w"] = he_uniform({ch, 1, kh, kw}, kh * kw, rng);
  params[prefix + ".b"] = Tensor::zeros({ch}, true);
}

void linear(ParamBundle& params, const std::string& prefix, std::size_t in_dim,
            std::size_t out_dim, SplitMix64& rng) {
  params[prefix + ".w"] = he_uniform({in_dim, out_dim}, in_dim, rng);
  params[prefix + ".b"] = Tensor::zeros({out_dim}, true);
}

void norm(ParamBundle& params, const std::string& prefix, std::size_t ch) {
  params[prefix + ".gamma"] = Tensor::full({ch}, 1.0f, true);
  params[prefix + ".beta"] = Tensor::zeros({ch}, true);
}

void scalar(ParamBundle& params, const std::string& name, Scalar value) {
  params[name] = Tensor::full({1}, value, true);
}

}  // namespace init

namespace blocks {

namespace {
Tensor pwconv(const Tensor& x, const ParamBundle& params,
              const std::string& prefix) {
  return ops::conv2d(x, param(params, prefix + ".w"),
                     param(params, prefix + ".b"), 1, 0);
}
}  // namespace

void conv_encoder_init(ParamBundle& params, const std::string& prefix,
                       std::size_t ch, std::size_t kernel,
                       std::size_t expansion, SplitMix64& rng) {
  LayerSpec{LayerKind::ConvEncoderBlock, ch, ch, kernel, expansion}.validate();
  init::depthwise(params, prefix + ".dw", ch, kernel, kernel, rng);
  init::norm(params, prefix + ".norm", ch);
  init::conv(params, prefix + ".pw1", ch * expansion, ch, 1, 1, rng);
  init::conv(params, prefix + ".pw2", ch, ch * expansion, 1, 1, rng);
}

Tensor conv_encoder(const Tensor& x, const ParamBundle& params,
                    const std::string& prefix, std::size_t kernel) {
  Tensor h = ops::depthwise_conv2d(x, param(params, prefix + ".dw.w"),
                                   param(params, prefix + ".dw.b"), 1,
                                   kernel / 2);
  h = ops::layer_norm_channels(h, param(params, prefix + ".norm.gamma"),
                               param(params, prefix + ".norm.beta"));
  h = pwconv(h, params, prefix + ".pw1");
  h = ops::gelu(h);
  h = pwconv(h, params, prefix + ".pw2");
  return ops::add(x, h);
}

void transpose_attention_init(ParamBundle& params, const std::string& prefix,
                              std::size_t ch, std::size_t expansion,
                              SplitMix64& rng) {
  init::norm(params, prefix + ".norm1", ch);
  init::conv(params, prefix + ".q", ch, ch, 1, 1, rng);
  init::conv(params, prefix + ".k", ch, ch, 1, 1, rng);
  init::conv(params, prefix + ".v", ch, ch, 1, 1, rng);
  init::scalar(params, prefix + ".temp", 1.0f);
  init::conv(params, prefix + ".proj", ch, ch, 1, 1, rng);
  init::norm(params, prefix + ".norm2", ch);
  init::conv(params, prefix + ".mlp1", ch * expansion, ch, 1, 1, rng);
  init::conv(params, prefix + ".mlp2", ch, ch * expansion, 1, 1, rng);
}

Tensor transpose_attention_matrix(const Tensor& x, const ParamBundle& params,
                                  const std::string& prefix) {
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor h = ops::layer_norm_channels(x, param(params, prefix + ".norm1.gamma"),
                                      param(params, prefix + ".norm1.beta"));
  Tensor q = ops::reshape(pwconv(h, params, prefix + ".q"), {N, C, HW});
  Tensor k = ops::reshape(pwconv(h, params, prefix + ".k"), {N, C, HW});
  q = ops::l2_normalize_lastdim(q);
  k = ops::l2_normalize_lastdim(k);
  Tensor logits = ops::mul(ops::matmul(q, ops::transpose_last2(k)),
                           param(params, prefix + ".temp"));
  return ops::softmax_lastdim(logits);
}

Tensor transpose_attention(const Tensor& x, const ParamBundle& params,
                           const std::string& prefix) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t HW = H * W;
  Tensor h = ops::layer_norm_channels(x, param(params, prefix + ".norm1.gamma"),
                                      param(params, prefix + ".norm1.beta"));
  Tensor q = ops::reshape(pwconv(h, params, prefix + ".q"), {N, C, HW});
  Tensor k = ops::reshape(pwconv(h, params, prefix + ".k"), {N, C, HW});
  Tensor v = ops::reshape(pwconv(h, params, prefix + ".v"), {N, C, HW});
  q = ops::l2_normalize_lastdim(q);
  k = ops::l2_normalize_lastdim(k);
  Tensor logits = ops::mul(ops::matmul(q, ops::transpose_last2(k)),
                           param(params, prefix + ".temp"));
  Tensor attn = ops::softmax_lastdim(logits);  // [N,C,C]
  Tensor out = ops::reshape(ops::matmul(attn, v), {N, C, H, W});
  out = pwconv(out, params, prefix + ".proj");
  Tensor x1 = ops::add(x, out);
  Tensor m = ops::layer_norm_channels(x1, param(params, prefix + ".norm2.gamma"),
                                      param(params, prefix + ".norm2.beta"));
  m = pwconv(m, params, prefix + ".mlp1");
  m = ops::gelu(m);
  m = pwconv(m, params, prefix + ".mlp2");
  return ops::add(x1, m);
}

void downsample_init(ParamBundle& params, const std::string& prefix,
                     std::size_t in_ch, std::size_t out_ch, SplitMix64& rng) {
  init::norm(params, prefix + ".norm", in_ch);
  init::conv(params, prefix + ".conv", out_ch, in_ch, 2, 2, rng);
}

Tensor downsample(const Tensor& x, const ParamBundle& params,
                  const std::string& prefix) {
  Tensor h = ops::layer_norm_channels(x, param(params, prefix + ".norm.gamma"),
                                      param(params, prefix + ".norm.beta"));
  return ops::conv2d(h, param(params, prefix + ".conv.w"),
                     param(params, prefix + ".conv.b"), 2, 0);
}

void up_init(ParamBundle& params, const std::string& prefix, std::size_t in_ch,
             std::size_t out_ch, SplitMix64& rng) {
  init::depthwise(params, prefix + ".dw", in_ch, 3, 3, rng);
  init::conv(params, prefix + ".pw", out_ch, in_ch, 1, 1, rng);
  init::norm(params, prefix + ".norm", out_ch);
}

Tensor up(const Tensor& x, const Tensor& skip, const ParamBundle& params,
          const std::string& prefix) {
  Tensor h = ops::upsample_nearest2x(x);
  if (skip.defined()) {
    if (skip.dim(2) != h.dim(2) || skip.dim(3) != h.dim(3))
      throw ShapeError("up: skip " + shape_str(skip.shape()) +
                       " does not match upsampled " + shape_str(h.shape()));
    h = ops::concat_channels({h, skip});
  }
  h = ops::depthwise_conv2d(h, param(params, prefix + ".dw.w"),
                            param(params, prefix + ".dw.b"), 1, 1);
  h = pwconv(h, params, prefix + ".pw");
  // Per-channel spatial normalization: the decoder has no residual path, so
  // normalizing across channels at each position would erase the magnitude
  // contrast that localizes a forgery. Normalizing each map over H*W keeps
  // that contrast while still controlling scale.
  h = ops::layer_norm_spatial(h, param(params, prefix + ".norm.gamma"),
                              param(params, prefix + ".norm.beta"));
  return ops::relu(h);
}

void cls_head_init(ParamBundle& params, const std::string& prefix,
                   std::size_t ch, SplitMix64& rng) {
  const std::size_t mid = std::max<std::size_t>(1, ch / 4);
  init::linear(params, prefix + ".fc1", ch, mid, rng);
  init::linear(params, prefix + ".fc2", mid, 1, rng);
}

Tensor cls_head(const Tensor& x, const ParamBundle& params,
                const std::string& prefix) {
  Tensor h = ops::global_avg_pool(x);  // [N,C]
  h = ops::add(ops::matmul(h, param(params, prefix + ".fc1.w")),
               param(params, prefix + ".fc1.b"));
  h = ops::relu(h);
  return ops::add(ops::matmul(h, param(params, prefix + ".fc2.w")),
                  param(params, prefix + ".fc2.b"));
}

void mask_head_init(ParamBundle& params, const std::string& prefix,
                    std::size_t ch, SplitMix64& rng) {
  init::conv(params, prefix + ".conv", 1, ch, 1, 1, rng);
}

Tensor mask_head(const Tensor& x, const ParamBundle& params,
                 const std::string& prefix) {
  return pwconv(x, params, prefix + ".conv");
}

}  // namespace blocks
}  // namespace edgedoc
