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

#ifndef PARNET_GRAD_CHECK_HPP
#define PARNET_GRAD_CHECK_HPP

#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "parnet/errors.hpp"
#include "parnet/param_store.hpp"

namespace parnet {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_analytic = 0.0;
    std::size_t worst_index = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    std::string worst_param;

    bool passed(double tol) const { return max_rel_err <= tol; }

    std::string to_string() const {
        std::ostringstream os;
        os << std::scientific << std::setprecision(3);
        for (const auto& e : entries) {
            os << "  " << std::left << std::setw(28) << e.name << " max rel err " << e.max_rel_err
               << "\n";
        }
        os << "  overall max rel err " << max_rel_err << " (" << worst_param << ")\n";
        return os.str();
    }
};

/// Compare analytic gradients against central finite differences.
///
/// `loss_fn` must be deterministic, return the scalar loss and leave its
/// analytic gradients in the store's grad buffers (which arrive zeroed).
/// For each scalar entry p the check perturbs p +/- h, re-evaluates, and
/// compares (f+ - f-)/2h against the recorded gradient. Relative error uses
/// max(|analytic|, |numeric|) as denominator; when both magnitudes sit below
/// `floor` the disagreement is finite-difference noise and counts as 0.
/// `value_fn`, when given, evaluates the loss without the backward pass and
/// is used for the perturbed evaluations.
inline GradCheckReport grad_check(
    const std::function<double(ParamStore<double>&)>& loss_fn, ParamStore<double>& params,
    double h = 1e-5, double floor = 1e-6,
    const std::function<double(ParamStore<double>&)>& value_fn = {}) {
    const auto& eval = value_fn ? value_fn : loss_fn;
    params.zero_grads();
    double base = loss_fn(params);
    if (!std::isfinite(base)) throw NumericError("grad_check: loss is non-finite at base point");

    // Snapshot analytic gradients before the perturbation loop reuses buffers.
    std::vector<Tensor<double>> analytic;
    analytic.reserve(params.size());
    for (std::size_t e = 0; e < params.size(); ++e) analytic.push_back(params[e].grad);

    GradCheckReport report;
    for (std::size_t e = 0; e < params.size(); ++e) {
        auto& entry = params[e];
        GradCheckEntry re;
        re.name = entry.name;
        for (std::size_t i = 0; i < entry.value.size(); ++i) {
            const double saved = entry.value[i];
            entry.value[i] = saved + h;
            params.zero_grads();
            double fp = eval(params);
            entry.value[i] = saved - h;
            params.zero_grads();
            double fm = eval(params);
            entry.value[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw NumericError("grad_check: non-finite loss while perturbing '" + entry.name +
                                   "'[" + std::to_string(i) + "] by ±" + std::to_string(h));
            }
            double numeric = (fp - fm) / (2.0 * h);
            double a = analytic[e][i];
            double denom = std::max(std::abs(a), std::abs(numeric));
            double rel = denom < floor ? 0.0 : std::abs(a - numeric) / denom;
            if (rel > re.max_rel_err) {
                re.max_rel_err = rel;
                re.worst_index = i;
            }
            re.max_abs_analytic = std::max(re.max_abs_analytic, std::abs(a));
        }
        if (re.max_rel_err > report.max_rel_err) {
            report.max_rel_err = re.max_rel_err;
            report.worst_param = re.name;
        }
        report.entries.push_back(std::move(re));
    }
    if (report.entries.empty()) report.worst_param = "(no parameters)";
    // Restore analytic gradients so callers can inspect them afterwards.
    for (std::size_t e = 0; e < params.size(); ++e) params[e].grad = analytic[e];
    return report;
}

}  // namespace parnet

#endif  // PARNET_GRAD_CHECK_HPP
