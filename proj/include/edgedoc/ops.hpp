#pragma once

#include <functional>
#include <vector>

#include "edgedoc/tensor.hpp"

namespace edgedoc {
namespace ops {

// Elementwise. add/mul accept equal shapes, a 1-element operand, or a rhs
// whose shape matches the trailing dims of lhs (broadcast over the rest).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Scalar c);
Tensor add_const(const Tensor& x, Scalar c);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // tanh approximation
Tensor sigmoid(const Tensor& x);

// matmul: [a,b]@[b,c] or batched [n,a,b]@[n,b,c].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// conv2d: x [N,C,H,W], w [O,C,kh,kw], b [O]; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::size_t stride, std::size_t pad);
// depthwise: w [C,1,kh,kw], b [C]; groups = C.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                        std::size_t stride, std::size_t pad);
Tensor pad_zero(const Tensor& x, std::size_t pad);

Tensor softmax_lastdim(const Tensor& x);
Tensor l2_normalize_lastdim(const Tensor& x);

// Normalizes each (n,h,w) position across channels; gamma/beta are [C].
Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma,
                           const Tensor& beta, Scalar eps = 1e-5f);

// Normalizes each (n,c) feature map over its H*W positions; gamma/beta are
// [C]. Unlike the per-position channel norm this preserves where a feature
// fires, so decoder blocks keep their spatial contrast.
Tensor layer_norm_spatial(const Tensor& x, const Tensor& gamma,
                          const Tensor& beta, Scalar eps = 1e-5f);

Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);  // [N,C,H,W] -> [N,C]

Tensor upsample_nearest2x(const Tensor& x);
Tensor concat_channels(const std::vector<Tensor>& xs);

// Numerically stable BCE-with-logits, mean over all elements.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);
// Soft Dice on logits: per batch item 1 - (2*sum(p*y)+eps)/(sum p+sum y+eps),
// mean over the batch. 4-D [N,1,H,W] or any shape treated as one item.
Tensor dice_with_logits(const Tensor& logits, const Tensor& targets,
                        Scalar eps = 1.0f);

// Max over elements of |g_ad - g_fd| / max(1,|g_ad|,|g_fd|), g_fd by central
// differences with step eps. Checks every element of x unless max_probes > 0,
// in which case a seeded random subset of that size is probed.
Scalar gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                 Scalar eps = 1e-3f, std::size_t max_probes = 0,
                 std::uint64_t probe_seed = 0);

}  // namespace ops
}  // namespace edgedoc
