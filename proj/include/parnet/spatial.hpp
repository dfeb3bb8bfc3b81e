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

#ifndef PARNET_SPATIAL_HPP
#define PARNET_SPATIAL_HPP

#include <cmath>
#include <cstddef>

#include "parnet/errors.hpp"
#include "parnet/tape.hpp"
#include "parnet/tensor.hpp"

namespace parnet {

/// Normalized bounding boxes, one (x, y, w, h) row per detected object with
/// (x, y) the box center in [0,1] image coordinates.
class BoxMatrix {
  public:
    explicit BoxMatrix(Tensor<double> rows) : boxes_(std::move(rows)) {
        if (boxes_.rank() != 2 || boxes_.cols() != 4) {
            throw DataError("box matrix must be Nx4, got " + boxes_.shape_string());
        }
        if (boxes_.rows() < 1) throw DataError("box matrix needs at least one object");
        for (std::size_t i = 0; i < boxes_.rows(); ++i) {
            double x = boxes_(i, 0), y = boxes_(i, 1), w = boxes_(i, 2), h = boxes_(i, 3);
            if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0)) {
                throw DataError("box center (" + std::to_string(x) + ", " + std::to_string(y) +
                                ") outside [0,1] at row " + std::to_string(i));
            }
            if (!(w > 0.0 && h > 0.0)) {
                throw DataError("box extent must be positive at row " + std::to_string(i));
            }
        }
    }

    std::size_t count() const { return boxes_.rows(); }
    double x(std::size_t i) const { return boxes_(i, 0); }
    double y(std::size_t i) const { return boxes_(i, 1); }
    double w(std::size_t i) const { return boxes_(i, 2); }
    double h(std::size_t i) const { return boxes_(i, 3); }
    const Tensor<double>& raw() const { return boxes_; }

  private:
    Tensor<double> boxes_;
};

/// Pairwise relative polar coordinates between box centers.
/// rho[i][j] is the center distance, theta[i][j] = atan2(yj - yi, xj - xi)
/// in (-pi, pi]; the self pair is (0, 0) by convention.
template <typename S>
struct PolarField {
    Tensor<S> rho;    // N x N
    Tensor<S> theta;  // N x N
};

template <typename S = double>
PolarField<S> relative_polar(const BoxMatrix& boxes) {
    std::size_t n = boxes.count();
    PolarField<S> f{Tensor<S>({n, n}), Tensor<S>({n, n})};
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            double dx = boxes.x(j) - boxes.x(i);
            double dy = boxes.y(j) - boxes.y(i);
            f.rho(i, j) = static_cast<S>(std::sqrt(dx * dx + dy * dy));
            double th = std::atan2(dy, dx);
            if (th <= -kPi) th = kPi;  // keep (-pi, pi] half-open
            f.theta(i, j) = static_cast<S>(th);
        }
    }
    return f;
}

/// Reduce kernel responses to one row-stochastic spatial weight matrix for a
/// head: raw pair weight = responses . reduction + epsilon, then rows are
/// normalized. reduction is the head's non-negative [d_p] vector; epsilon
/// keeps rows normalizable when every kernel response vanishes.
template <typename S>
Var<S> spatial_weight(Var<S> responses, Var<S> reduction, std::size_t n, double epsilon) {
    std::size_t dp = reduction.value().size();
    if (responses.value().rank() != 2 || responses.value().cols() != dp ||
        responses.value().rows() != n * n) {
        throw DimensionError("spatial_weight: responses " + responses.value().shape_string() +
                             " do not match " + std::to_string(n) + " objects with " +
                             std::to_string(dp) + " kernels");
    }
    auto r = reshape(reduction, {dp, 1});
    auto raw = reshape(matmul(responses, r), {n, n});
    return normalize_rows(affine(raw, S(1), static_cast<S>(epsilon)));
}

}  // namespace parnet

#endif  // PARNET_SPATIAL_HPP
