// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#ifndef PARNET_VISUAL_RELATION_HPP
#define PARNET_VISUAL_RELATION_HPP

#include <cmath>
#include <vector>

#include "parnet/spatial.hpp"
#include "parnet/tape.hpp"

namespace parnet {

/// Scaled dot-product self-relation: w[i][j] = Vh_i . Vh_j / sqrt(d_scale).
/// Symmetric and unnormalized; normalization happens in the fusion step.
template <typename S>
Var<S> semantic_weights(Var<S> Vh, double d_scale) {
    return affine(matmul_nt(Vh, Vh), static_cast<S>(1.0 / std::sqrt(d_scale)), S(0));
}

/// Fuse a row-stochastic positive spatial weight with raw semantic scores:
/// out[i][j] = p[i][j] exp(s[i][j]) / sum_j' p[i][j'] exp(s[i][j']).
/// The exponent is shifted by the row max, which cancels in the ratio.
/// With uniform p this is exactly softmax_rows(s).
template <typename S>
Var<S> fuse_weights(Var<S> omega_p, Var<S> omega_s) {
    detail::require_same_shape("fuse_weights", omega_p.value(), omega_s.value());
    return normalize_rows(mul(omega_p, exp_rows_shifted(omega_s)));
}

/// Per-head tape bindings for the image relation module.
template <typename S>
struct VisualVars {
    std::vector<Var<S>> proj_w;      // K of [d_v x d_h]
    std::vector<Var<S>> proj_b;      // K of [d_h]
    std::vector<Var<S>> reduction;   // K of [d_p]
    Var<S> rho0, sigma_rho, theta0, sigma_theta;  // shared kernel bank, [d_p] each
};

/// Relation-encoded object features plus the per-head attention matrices
/// retained for inspection.
template <typename S>
struct EncodedImage {
    Var<S> V_r;                    // N x d_model
    std::vector<Var<S>> omega;     // K row-stochastic N x N matrices
};

struct VisualRelationOptions {
    bool position_enabled = true;
    bool scale_by_projected_dim = true;
    double sigma_min = 1e-3;
    double epsilon_p = 1e-6;
};

/// Position-aware intra-modal relation for one image:
/// per head, fuse spatial and semantic weights (or plain softmax of the
/// semantic weights when the position branch is off), attend, then add the
/// projected features back as a residual:
///   V_r = Concat_k f_k(V) + Concat_k (omega_k f_k(V)).
template <typename S>
EncodedImage<S> encode_image(Tape<S>& tape, const Tensor<S>& features, const BoxMatrix& boxes,
                             const VisualVars<S>& vars, const VisualRelationOptions& opt) {
    std::size_t n = features.rows();
    if (boxes.count() != n) {
        throw DimensionError("encode_image: " + std::to_string(n) + " feature rows vs " +
                             std::to_string(boxes.count()) + " boxes");
    }
    std::size_t heads = vars.proj_w.size();
    Var<S> v = tape.constant(features);

    Var<S> responses;  // shared by all heads
    if (opt.position_enabled) {
        PolarField<S> polar = relative_polar<S>(boxes);
        responses = kernel_response(polar.rho, polar.theta, vars.rho0, vars.sigma_rho,
                                    vars.theta0, vars.sigma_theta, opt.sigma_min);
    }

    std::vector<Var<S>> projected, attended;
    EncodedImage<S> out;
    for (std::size_t k = 0; k < heads; ++k) {
        Var<S> vh = linear(v, vars.proj_w[k], vars.proj_b[k]);
        double d_scale = opt.scale_by_projected_dim ? static_cast<double>(vh.value().cols())
                                                    : static_cast<double>(features.cols());
        Var<S> ws = semantic_weights(vh, d_scale);
        Var<S> omega;
        if (opt.position_enabled) {
            Var<S> wp = spatial_weight(responses, vars.reduction[k], n, opt.epsilon_p);
            omega = fuse_weights(wp, ws);
        } else {
            omega = softmax_rows(ws);
        }
        projected.push_back(vh);
        attended.push_back(matmul(omega, vh));
        out.omega.push_back(omega);
    }
    out.V_r = add(concat_cols(projected), concat_cols(attended));
    return out;
}

}  // namespace parnet

#endif  // PARNET_VISUAL_RELATION_HPP
