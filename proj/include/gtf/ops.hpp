#pragma once

// Differentiable op set. Every op builds the autograd graph via make_node;
// forward compute dispatches through the kern:: wrappers so the serial /
// parallel kernel switch applies uniformly.

#include <vector>

#include "gtf/tensor.hpp"

namespace gtf::ops {

// Elementwise (shapes must match exactly).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
// a*x + b
Tensor affine(const Tensor& x, double a, double b);
Tensor relu(const Tensor& x);
// tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, RngState& rng, bool training);

// y = x @ W (+ bias). x: [..., in], W: [in, out], bias: [out] or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
// Batched matmul, a: [B,M,K], b: [B,K,P] -> [B,M,P].
Tensor bmm(const Tensor& a, const Tensor& b);
// a: [B,M,K], b: [B,P,K] -> [B,M,P]  (scores = Q Kᵀ)
Tensor bmm_nt(const Tensor& a, const Tensor& b);
// x: [N,C_in,H,W], w: [C_out,C_in/g,kh,kw], bias: [C_out] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              i64 stride_h, i64 stride_w, i64 pad_h, i64 pad_w, i64 groups = 1);

Tensor softmax_lastdim(const Tensor& x);
Tensor layer_norm_lastdim(const Tensor& x, const Tensor& gamma,
                          const Tensor& beta, double eps = 1e-5);
// NCHW, align_corners=false.
Tensor bilinear_resize(const Tensor& x, i64 out_h, i64 out_w);
// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);
// x: [N,C,H,W] * gate: [N,C] broadcast over H,W.
Tensor mul_channels(const Tensor& x, const Tensor& gate);
// [N,C,H,W] -> [N,H,W]
Tensor select_channel(const Tensor& x, i64 c);

// Shape plumbing (all copies; grads flow back through the index map).
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& xs, int dim);
// Zero-pad bottom/right rows/cols: [N,H,W,C] -> [N,H+ph,W+pw,C].
Tensor pad_hw(const Tensor& x, i64 ph, i64 pw);
// Inverse of pad_hw: keep the top-left H×W block.
Tensor crop_hw(const Tensor& x, i64 out_h, i64 out_w);
// Same padding on a channel-first map: [N,C,H,W] -> [N,C,H+ph,W+pw].
Tensor pad_nchw(const Tensor& x, i64 ph, i64 pw);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// [R,n] -> [R]
Tensor sum_rows(const Tensor& x);

// Fused classification losses over row-major logits [R,K]. Mean over rows
// whose target != ignore_index. Both share one code path, so
// focal(gamma=0, alpha=1) reproduces cross-entropy bit for bit.
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<i64>& targets,
                            i64 ignore_index = -1);
Tensor focal_loss_logits(const Tensor& logits, const std::vector<i64>& targets,
                         double gamma, double alpha, i64 ignore_index = -1);

} // namespace gtf::ops
