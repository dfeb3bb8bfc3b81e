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

#ifndef PARNET_PARAM_STORE_HPP
#define PARNET_PARAM_STORE_HPP

#include <string>
#include <unordered_map>
#include <vector>

#include "parnet/errors.hpp"
#include "parnet/tensor.hpp"

namespace parnet {

/// Named learnable tensors plus matching gradient accumulators.
/// Enumeration order is registration order, which is deterministic for a
/// given model configuration and is what the optimizer, the checkpoint
/// writer and the gradient checker all iterate over.
template <typename S>
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Tensor<S> value;
        Tensor<S> grad;
    };

    std::size_t add(const std::string& name, Tensor<S> value) {
        if (index_.count(name)) throw Error("duplicate parameter name: " + name);
        Entry e;
        e.name = name;
        e.grad = Tensor<S>::zeros(value.shape());
        e.value = std::move(value);
        entries_.push_back(std::move(e));
        index_[name] = entries_.size() - 1;
        return entries_.size() - 1;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("unknown parameter: " + name);
        return it->second;
    }

    Entry& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("unknown parameter: " + name);
        return entries_[it->second];
    }
    const Entry& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("unknown parameter: " + name);
        return entries_[it->second];
    }

    Entry& operator[](std::size_t i) { return entries_[i]; }
    const Entry& operator[](std::size_t i) const { return entries_[i]; }

    std::size_t size() const { return entries_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

    void zero_grads() {
        for (auto& e : entries_) e.grad.fill(S(0));
    }

    /// First parameter holding a non-finite value or gradient, if any.
    std::string first_non_finite() const {
        for (const auto& e : entries_) {
            if (!e.value.all_finite()) return e.name + " (value)";
            if (!e.grad.all_finite()) return e.name + " (gradient)";
        }
        return "";
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

  private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace parnet

#endif  // PARNET_PARAM_STORE_HPP
