// SPDX-License-Identifier: Apache-2.0
#include "glformer/spectral_merge.hpp"

namespace glformer {

using ag::VarPtr;

SpectralMerge::SpectralMerge(nn::Registry& reg, const std::string& name, int channels, bool zero_init_out)
    : mix_in_local(reg, name + ".mix_in_local", 2 * channels, channels, 1, 1, 0),
      mix_out_local(reg, name + ".mix_out_local", channels, channels, 1, 1, 0),
      mix_in_global(reg, name + ".mix_in_global", 2 * channels, channels, 1, 1, 0),
      mix_out_global(reg, name + ".mix_out_global", channels, channels, 1, 1, 0),
      bn_local(reg, name + ".bn_local", channels),
      bn_global(reg, name + ".bn_global", channels),
      out_proj(reg, name + ".out_proj", channels, channels, 1, 1, 0, 1, 1, true,
               zero_init_out ? nn::Init::kZero : nn::Init::kFanIn) {}

VarPtr SpectralMerge::gain(const VarPtr& spec_local, const VarPtr& spec_global) const {
    const VarPtr wl = ag::sigmoid(mix_out_local(ag::relu(bn_local(mix_in_local(spec_local)))));
    const VarPtr wg = ag::sigmoid(mix_out_global(ag::relu(bn_global(mix_in_global(spec_global)))));
    return ag::add(wl, wg);
}

VarPtr SpectralMerge::operator()(const VarPtr& local, const VarPtr& global_, const VarPtr& residual) const {
    const int w_full = local->value.dim(3);
    const VarPtr spec_l = ag::rfft2(local);
    const VarPtr spec_g = ag::rfft2(global_);
    const VarPtr lam = ag::hermitian_balance(gain(spec_l, spec_g), w_full);
    const VarPtr lam2 = ag::concat_c({lam, lam});
    const VarPtr sum_spec = ag::add(spec_l, spec_g);
    const VarPtr merged = ag::add(ag::mul(lam2, sum_spec), sum_spec);
    return ag::add(out_proj(ag::irfft2(merged, w_full)), residual);
}

}  // namespace glformer
