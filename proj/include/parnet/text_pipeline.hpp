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

#ifndef PARNET_TEXT_PIPELINE_HPP
#define PARNET_TEXT_PIPELINE_HPP

#include <cmath>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "parnet/errors.hpp"
#include "parnet/tape.hpp"

namespace parnet {

constexpr std::size_t kPadId = 0;
constexpr std::size_t kUnkId = 1;

/// Token-to-id table. Ids 0 and 1 are reserved for padding and unknown;
/// file tokens get dense ids in line order starting at 2.
class Vocabulary {
  public:
    Vocabulary() {
        tokens_ = {"<pad>", "<unk>"};
        index_["<pad>"] = kPadId;
        index_["<unk>"] = kUnkId;
    }

    static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
        Vocabulary v;
        for (const auto& t : tokens) v.append(t);
        return v;
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open vocabulary file: " + path);
        Vocabulary v;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) throw DataError("empty line in vocabulary file: " + path);
            v.append(line);
        }
        return v;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write vocabulary file: " + path);
        for (std::size_t i = 2; i < tokens_.size(); ++i) out << tokens_[i] << "\n";
    }

    std::size_t size() const { return tokens_.size(); }

    std::size_t id(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnkId : it->second;
    }

    const std::string& token(std::size_t id) const {
        if (id >= tokens_.size()) throw DataError("token id out of range");
        return tokens_[id];
    }

    std::vector<std::size_t> encode(const std::vector<std::string>& words) const {
        std::vector<std::size_t> ids;
        ids.reserve(words.size());
        for (const auto& w : words) ids.push_back(id(w));
        return ids;
    }

  private:
    void append(const std::string& token) {
        if (index_.count(token)) throw DataError("duplicate vocabulary token: " + token);
        index_[token] = tokens_.size();
        tokens_.push_back(token);
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Gate weights of one GRU direction.
template <typename S>
struct GruDirectionVars {
    Var<S> Wz, Uz, bz;  // update gate
    Var<S> Wr, Ur, br;  // reset gate
    Var<S> Wh, Uh, bh;  // candidate state
};

template <typename S>
struct TextVars {
    Var<S> embedding;  // vocab x d_e
    GruDirectionVars<S> fw, bw;
    std::vector<Var<S>> proj_w;  // K of [d_t x d_h]
    std::vector<Var<S>> proj_b;  // K of [d_h]
};

/// Word embedding lookup: row j = table[ids[j]].
template <typename S>
Var<S> embed_tokens(Var<S> table, const std::vector<std::size_t>& ids) {
    return gather_rows(table, ids);
}

namespace detail {

template <typename S>
std::vector<Var<S>> gru_direction(Tape<S>& tape, Var<S> x, const GruDirectionVars<S>& g,
                                  bool reversed) {
    std::size_t steps = x.value().rows();
    std::size_t d_t = g.Uz.value().rows();
    Var<S> h = tape.constant(Tensor<S>({1, d_t}));  // h_0 = 0
    std::vector<Var<S>> states(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        std::size_t pos = reversed ? steps - 1 - s : s;
        Var<S> xt = slice_row(x, pos);
        Var<S> z = sigmoid(add(linear(xt, g.Wz, g.bz), matmul(h, g.Uz)));
        Var<S> r = sigmoid(add(linear(xt, g.Wr, g.br), matmul(h, g.Ur)));
        Var<S> cand = tanh_op(add(linear(xt, g.Wh, g.bh), matmul(mul(r, h), g.Uh)));
        // h = (1 - z) * h + z * cand
        h = add(mul(affine(z, S(-1), S(1)), h), mul(z, cand));
        states[pos] = h;
    }
    return states;
}

}  // namespace detail

/// Bidirectional GRU over embedded tokens; output row j is the average of
/// the forward and backward states at position j, so every row sees the
/// whole sentence.
template <typename S>
Var<S> bigru(Tape<S>& tape, Var<S> x, const GruDirectionVars<S>& fw,
             const GruDirectionVars<S>& bw) {
    if (x.value().rows() < 1) throw DimensionError("bigru: empty sequence");
    auto f = detail::gru_direction(tape, x, fw, false);
    auto b = detail::gru_direction(tape, x, bw, true);
    std::vector<Var<S>> rows(f.size());
    for (std::size_t j = 0; j < f.size(); ++j) rows[j] = affine(add(f[j], b[j]), S(0.5), S(0));
    return stack_rows(rows);
}

/// Intra-sentence relation weights: softmax_rows(Th Th^T / sqrt(d_scale)).
/// `valid`, when non-empty, masks padding columns out of every row.
template <typename S>
Var<S> text_weights(Var<S> Th, double d_scale, const std::vector<std::uint8_t>& valid = {}) {
    return softmax_rows(
        affine(matmul_nt(Th, Th), static_cast<S>(1.0 / std::sqrt(d_scale)), S(0)), valid);
}

template <typename S>
struct EncodedText {
    Var<S> T_r;                 // M x d_model
    std::vector<Var<S>> omega;  // K row-stochastic M x M matrices
};

struct TextRelationOptions {
    bool scale_by_projected_dim = true;
};

/// Word embedding + bidirectional GRU + multi-head self-relation:
///   T_r = Concat_k g_k(T) + Concat_k (omega_k g_k(T)).
/// Padding ids are dropped before encoding, which realizes the
/// mask-and-renormalize rule at the sequence level.
template <typename S>
EncodedText<S> encode_text(Tape<S>& tape, const std::vector<std::size_t>& ids,
                           const TextVars<S>& vars, const TextRelationOptions& opt = {}) {
    std::vector<std::size_t> live;
    live.reserve(ids.size());
    for (std::size_t id : ids)
        if (id != kPadId) live.push_back(id);
    if (live.empty()) throw DataError("encode_text: sentence has no non-padding tokens");

    Var<S> emb = embed_tokens(vars.embedding, live);
    Var<S> t = bigru(tape, emb, vars.fw, vars.bw);

    std::vector<Var<S>> projected, attended;
    EncodedText<S> out;
    for (std::size_t k = 0; k < vars.proj_w.size(); ++k) {
        Var<S> th = linear(t, vars.proj_w[k], vars.proj_b[k]);
        double d_scale = opt.scale_by_projected_dim ? static_cast<double>(th.value().cols())
                                                    : static_cast<double>(t.value().cols());
        Var<S> omega = text_weights(th, d_scale);
        projected.push_back(th);
        attended.push_back(matmul(omega, th));
        out.omega.push_back(omega);
    }
    out.T_r = add(concat_cols(projected), concat_cols(attended));
    return out;
}

}  // namespace parnet

#endif  // PARNET_TEXT_PIPELINE_HPP
