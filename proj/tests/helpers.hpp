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

#ifndef PARNET_TESTS_HELPERS_HPP
#define PARNET_TESTS_HELPERS_HPP

#include <functional>
#include <string>
#include <vector>

#include "parnet/grad_check.hpp"
#include "parnet/random.hpp"
#include "parnet/tape.hpp"

namespace testutil {

inline parnet::Tensor<double> random_tensor(std::vector<std::size_t> shape, parnet::Rng& rng,
                                            double lo = -1.0, double hi = 1.0) {
    parnet::Tensor<double> t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

/// Gradient-check a tape op: the op output feeds a fixed random-coefficient
/// scalar readout, and every input tensor is treated as a parameter.
using OpBuilder = std::function<parnet::Var<double>(parnet::Tape<double>&,
                                                    const std::vector<parnet::Var<double>>&)>;

inline parnet::GradCheckReport check_op_gradients(const OpBuilder& build,
                                                  const std::vector<parnet::Tensor<double>>& inputs,
                                                  unsigned coeff_seed = 123, double h = 1e-5) {
    using namespace parnet;
    ParamStore<double> ps;
    for (std::size_t i = 0; i < inputs.size(); ++i) ps.add("x" + std::to_string(i), inputs[i]);

    Tensor<double> coeff;
    {
        Tape<double> t;
        std::vector<Var<double>> vars;
        for (std::size_t i = 0; i < ps.size(); ++i) vars.push_back(t.leaf(ps[i].value));
        auto out = build(t, vars);
        Rng rng(coeff_seed);
        coeff = random_tensor(out.value().shape(), rng);
    }
    auto loss = [&](ParamStore<double>& p) {
        Tape<double> t;
        std::vector<Var<double>> vars;
        for (std::size_t i = 0; i < p.size(); ++i) vars.push_back(t.leaf(p[i].value));
        auto l = weighted_sum(build(t, vars), coeff);
        t.backward(l);
        for (std::size_t i = 0; i < p.size(); ++i) detail::accumulate(p[i].grad, vars[i].grad());
        return l.value()[0];
    };
    return grad_check(loss, ps, h);
}

inline double max_abs_diff(const parnet::Tensor<double>& a, const parnet::Tensor<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

template <typename S>
double rel_frobenius_diff(const parnet::Tensor<S>& a, const parnet::Tensor<S>& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        num += d * d;
        den += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

}  // namespace testutil

#endif  // PARNET_TESTS_HELPERS_HPP
