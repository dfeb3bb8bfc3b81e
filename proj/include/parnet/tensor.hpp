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

#ifndef PARNET_TENSOR_HPP
#define PARNET_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "parnet/errors.hpp"

namespace parnet {

/// Dense row-major tensor. Rank is dynamic; ranks 1..3 are what the model
/// uses. Value semantics throughout: copies are deep, mutation never aliases.
template <typename S>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), S(0)) {}

    Tensor(std::vector<std::size_t> shape, std::vector<S> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_)) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string());
        }
    }

    /// 2-D convenience constructor from nested initializer lists.
    Tensor(std::initializer_list<std::initializer_list<S>> rows) {
        std::size_t r = rows.size();
        std::size_t c = r == 0 ? 0 : rows.begin()->size();
        shape_ = {r, c};
        data_.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("ragged initializer for rank-2 tensor");
            for (const S& v : row) data_.push_back(v);
        }
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::size_t> shape, S v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    static Tensor row(std::vector<S> values) {
        std::size_t n = values.size();
        return Tensor({1, n}, std::move(values));
    }

    static Tensor vector1d(std::vector<S> values) {
        std::size_t n = values.size();
        return Tensor({n}, std::move(values));
    }

    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    const std::vector<std::size_t>& shape() const { return shape_; }

    std::size_t extent(std::size_t d) const { return shape_.at(d); }

    std::size_t rows() const {
        require_rank(2);
        return shape_[0];
    }
    std::size_t cols() const {
        require_rank(2);
        return shape_[1];
    }

    S& operator[](std::size_t i) { return data_[i]; }
    const S& operator[](std::size_t i) const { return data_[i]; }

    S& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    const S& operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    S& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    const S& operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    std::vector<S>& data() { return data_; }
    const std::vector<S>& data() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    /// Reinterpret the extents; element count must be preserved.
    Tensor reshaped(std::vector<std::size_t> shape) const {
        if (count(shape) != data_.size()) {
            throw DimensionError("reshape from " + shape_string() + " to " +
                                 shape_string(shape) + " changes element count");
        }
        return Tensor(std::move(shape), data_);
    }

    void fill(S v) {
        for (auto& x : data_) x = v;
    }

    bool all_finite() const {
        for (const S& x : data_) {
            if (!std::isfinite(static_cast<double>(x))) return false;
        }
        return true;
    }

    std::string shape_string() const { return shape_string(shape_); }

    static std::string shape_string(const std::vector<std::size_t>& shape) {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

  private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t(1),
                               [](std::size_t a, std::size_t b) { return a * b; });
    }

    void require_rank(std::size_t r) const {
        if (shape_.size() != r) {
            throw DimensionError("expected rank-" + std::to_string(r) + " tensor, got " +
                                 shape_string());
        }
    }

    std::vector<std::size_t> shape_;
    std::vector<S> data_;
};

}  // namespace parnet

#endif  // PARNET_TENSOR_HPP
