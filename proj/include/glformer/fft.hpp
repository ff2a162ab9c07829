// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <vector>

#include "glformer/tensor.hpp"

namespace glformer::fftops {

using cplx = std::complex<double>;

// Number of stored spectrum columns for a real transform of width w.
inline int half_width(int w) { return w / 2 + 1; }

// In-place complex DFT of length n over contiguous data. Mixed-radix
// Cooley-Tukey; prime lengths fall back to the quadratic direct sum.
// No normalization is applied in either direction.
void fft1d(cplx* data, int n, bool inverse);

// Unnormalized 2-d complex DFT of an (h,w) row-major buffer.
void fft2d(cplx* data, int h, int w, bool inverse);

// Forward 2-d transform of real maps. Input (B,C,H,W); output (B,2C,H,Wf)
// with Wf = W/2 + 1, channels [0,C) real parts and [C,2C) imaginary parts.
// Unnormalized: bin (v,u) = sum_{y,x} f(y,x) exp(-i 2 pi (u x / W + v y / H)).
Tensor rfft2(const Tensor& x);

// Inverse of rfft2 with 1/(W*H) normalization. Mirrored bins are
// reconstructed by conjugate symmetry; the imaginary residue is dropped.
Tensor irfft2(const Tensor& s, int w_full);

// Adjoint (transpose) of rfft2 as a linear map R^{B,C,H,W} -> R^{B,2C,H,Wf}.
// Used for reverse-mode differentiation; no normalization.
Tensor rfft2_adjoint(const Tensor& g, int w_full);

// Adjoint of irfft2: maps (B,C,H,W) cotangents back to (B,2C,H,Wf).
Tensor irfft2_adjoint(const Tensor& g);

}  // namespace glformer::fftops
