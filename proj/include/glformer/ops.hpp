// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "glformer/autograd.hpp"

namespace glformer::ag {

// Elementwise.
VarPtr add(const VarPtr& a, const VarPtr& b);
VarPtr sub(const VarPtr& a, const VarPtr& b);
VarPtr mul(const VarPtr& a, const VarPtr& b);
VarPtr scale(const VarPtr& a, double c);
VarPtr add_const(const VarPtr& a, double c);
VarPtr sigmoid(const VarPtr& a);
VarPtr relu(const VarPtr& a);
VarPtr gelu(const VarPtr& a);

// Broadcast multiplies over (B,C,H,W).
VarPtr mul_bcast_c(const VarPtr& x, const VarPtr& a);   // a: (B,1,H,W)
VarPtr mul_bcast_hw(const VarPtr& x, const VarPtr& s);  // s: (B,C)

// Channel plumbing on (B,C,H,W).
VarPtr concat_c(const std::vector<VarPtr>& xs);
VarPtr slice_c(const VarPtr& x, int c0, int c1);
VarPtr mean_c(const VarPtr& x);
VarPtr max_c(const VarPtr& x);
VarPtr global_avgpool(const VarPtr& x);  // -> (B,C)
VarPtr global_maxpool(const VarPtr& x);  // -> (B,C)

// Shape moves.
VarPtr reshape(const VarPtr& x, std::vector<int> shape);
VarPtr to_tokens(const VarPtr& x);                 // (B,C,H,W) -> (B,HW,C)
VarPtr from_tokens(const VarPtr& x, int h, int w); // (B,HW,C) -> (B,C,H,W)
VarPtr split_heads(const VarPtr& x, int heads);    // (B,T,C) -> (B,h,T,C/h)
VarPtr merge_heads(const VarPtr& x);               // (B,h,T,d) -> (B,T,h*d)

// Dense algebra.
VarPtr linear(const VarPtr& x, const VarPtr& w, const VarPtr& b);  // (B,T,Ci),(Co,Ci),(Co)
VarPtr matmul_nt(const VarPtr& a, const VarPtr& b);  // (B,h,T1,D)x(B,h,T2,D) -> (B,h,T1,T2)
VarPtr matmul_nn(const VarPtr& a, const VarPtr& b);  // (B,h,T1,T2)x(B,h,T2,D) -> (B,h,T1,D)
VarPtr softmax_last(const VarPtr& x);

// Normalization.
VarPtr layernorm_chw(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta, double eps = 1e-5);
VarPtr batchnorm2d(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta, Tensor* running_mean,
                   Tensor* running_var, bool training, double momentum = 0.1, double eps = 1e-5);

// Convolution. w: (Cout, Cin/groups, kh, kw); b may be null.
VarPtr conv2d(const VarPtr& x, const VarPtr& w, const VarPtr& b, int stride, int pad, int dilation = 1,
              int groups = 1);

VarPtr upsample_bilinear(const VarPtr& x, int h_out, int w_out);
VarPtr avgpool2d(const VarPtr& x, int k);  // non-overlapping k x k mean; H,W divisible by k

// Reductions and scalar plumbing.
VarPtr sum_all(const VarPtr& x);                     // -> (1)
VarPtr div_ss(const VarPtr& a, const VarPtr& b);     // scalars
VarPtr bce_logits(const VarPtr& p, const VarPtr& t); // elementwise, t treated as data

// Spectral ops. Layout: (B,2C,H,Wf), Wf = W/2+1, [re | im] channel halves.
VarPtr rfft2(const VarPtr& x);
VarPtr irfft2(const VarPtr& s, int w_full);
// Averages the self-mirror spectrum columns (u = 0 and, for even widths,
// u = W/2) so a per-bin gain keeps the merged spectrum conjugate-symmetric.
VarPtr hermitian_balance(const VarPtr& lam, int w_full);

}  // namespace glformer::ag
