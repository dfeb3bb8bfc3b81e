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

#ifndef PARNET_CROSS_MODAL_HPP
#define PARNET_CROSS_MODAL_HPP

#include <string>

#include "parnet/tape.hpp"

namespace parnet {

/// Object-word relevance u[i][j] = cosine(v_r_i, t_r_j), in [-1, 1].
template <typename S>
Var<S> relevance(Var<S> V_r, Var<S> T_r) {
    return cosine_matrix(V_r, T_r);
}

enum class AttentionAxis { objects, words };

inline AttentionAxis attention_axis_from_string(const std::string& s) {
    if (s == "objects") return AttentionAxis::objects;
    if (s == "words") return AttentionAxis::words;
    throw ConfigError("unknown attention axis: " + s);
}

template <typename S>
struct AttendedImage {
    Var<S> alpha;    // N x d: sentence-conditioned object vectors
    Var<S> weights;  // N x M: per-word object weights
};

/// Sentence-conditioned re-weighting of objects. With the default axis each
/// word distributes softmax(lambda * u[., j]) over objects; each object is
/// then scaled by its mean weight across words:
///   alpha_i = (1/M) (sum_j w[i][j]) v_r_i.
/// Objects are re-weighted individually, not mixed.
template <typename S>
AttendedImage<S> attend_objects(Var<S> u, Var<S> V_r, double lambda,
                                AttentionAxis axis = AttentionAxis::objects) {
    if (lambda < 0.0) throw ConfigError("attend_objects: lambda must be non-negative");
    Var<S> scaled = affine(u, static_cast<S>(lambda), S(0));
    Var<S> w = axis == AttentionAxis::objects ? softmax_cols(scaled) : softmax_rows(scaled);
    std::size_t m = u.value().cols();
    Var<S> totals = affine(row_sums(w), static_cast<S>(1.0 / static_cast<double>(m)), S(0));
    return {scale_rows(V_r, totals), w};
}

/// Average-pooled cosine alignment:
/// S = sum_ij cosine(alpha_i, t_r_j) / (N * M), always in [-1, 1].
template <typename S>
Var<S> pair_similarity(Var<S> alpha, Var<S> T_r) {
    return mean_all(cosine_matrix(alpha, T_r));
}

}  // namespace parnet

#endif  // PARNET_CROSS_MODAL_HPP
