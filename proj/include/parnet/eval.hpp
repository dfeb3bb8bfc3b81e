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

#ifndef PARNET_EVAL_HPP
#define PARNET_EVAL_HPP

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "parnet/data_io.hpp"
#include "parnet/model.hpp"

namespace parnet {

/// Percentage of queries whose top-K candidates (descending score, ties by
/// ascending index) intersect the query's relevant set.
inline double recall_at_k(const Tensor<double>& scores,
                          const std::vector<std::vector<std::size_t>>& relevant, std::size_t k) {
    std::size_t queries = scores.rows(), candidates = scores.cols();
    if (k < 1) throw DataError("recall_at_k: K must be at least 1");
    if (k > candidates) {
        throw DataError("recall_at_k: K=" + std::to_string(k) + " exceeds candidate count " +
                        std::to_string(candidates));
    }
    if (relevant.size() != queries) {
        throw DataError("recall_at_k: ground truth for " + std::to_string(relevant.size()) +
                        " queries, score matrix has " + std::to_string(queries));
    }
    std::size_t hits = 0;
    std::vector<std::size_t> order(candidates);
    for (std::size_t q = 0; q < queries; ++q) {
        if (relevant[q].empty()) {
            throw DataError("recall_at_k: query " + std::to_string(q) + " has no relevant items");
        }
        std::iota(order.begin(), order.end(), std::size_t(0));
        std::partial_sort(order.begin(), order.begin() + k, order.end(),
                          [&](std::size_t a, std::size_t b) {
                              if (scores(q, a) != scores(q, b)) return scores(q, a) > scores(q, b);
                              return a < b;
                          });
        bool hit = false;
        for (std::size_t r = 0; r < k && !hit; ++r) {
            hit = std::find(relevant[q].begin(), relevant[q].end(), order[r]) != relevant[q].end();
        }
        if (hit) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(queries);
}

/// Dense image x sentence scores with parameters frozen (no gradients).
/// Sentences are encoded once up front; their encoded values then enter
/// each image's pair graphs as constants.
template <typename S>
Tensor<double> score_all_pairs(const ParNetModel<S>& model,
                               const std::vector<ObjectSet<S>>& images,
                               const std::vector<std::vector<std::size_t>>& sentences) {
    if (images.empty() || sentences.empty()) {
        throw DataError("score_all_pairs: empty image or sentence list");
    }
    std::vector<Tensor<S>> encoded_text;
    encoded_text.reserve(sentences.size());
    for (const auto& s : sentences) {
        Tape<S> tape;
        ModelBinding<S> b = model.bind(tape);
        encoded_text.push_back(model.encode_text(tape, b, s).T_r.value());
    }
    Tensor<double> scores({images.size(), sentences.size()});
    for (std::size_t i = 0; i < images.size(); ++i) {
        Tape<S> tape;
        ModelBinding<S> b = model.bind(tape);
        Var<S> vr = model.encode_image(tape, b, images[i]).V_r;
        for (std::size_t j = 0; j < sentences.size(); ++j) {
            Var<S> tr = tape.constant(encoded_text[j]);
            scores(i, j) = static_cast<double>(model.pair_score(vr, tr).score.value()[0]);
        }
    }
    return scores;
}

struct RetrievalReport {
    std::string direction;
    std::vector<std::pair<int, double>> recalls;  // (K, percentage), ascending K
    std::size_t query_count = 0;
    nlohmann::json config_snapshot;

    double at(int k) const {
        for (const auto& [kk, v] : recalls)
            if (kk == k) return v;
        throw DataError("report has no R@" + std::to_string(k));
    }

    nlohmann::json to_json() const {
        nlohmann::json rec;
        for (const auto& [k, v] : recalls) rec["R@" + std::to_string(k)] = v;
        return nlohmann::json{{"direction", direction},
                              {"recall", rec},
                              {"query_count", query_count},
                              {"config", config_snapshot}};
    }
};

/// Fixed-width table, one row per direction.
inline std::string format_reports(const std::vector<RetrievalReport>& reports) {
    std::ostringstream os;
    os << std::left << std::setw(16) << "direction";
    if (!reports.empty()) {
        for (const auto& [k, v] : reports.front().recalls) {
            os << std::right << std::setw(10) << ("R@" + std::to_string(k));
        }
    }
    os << std::right << std::setw(10) << "queries" << "\n";
    for (const auto& r : reports) {
        os << std::left << std::setw(16) << r.direction;
        os << std::fixed << std::setprecision(2);
        for (const auto& [k, v] : r.recalls) os << std::right << std::setw(10) << v;
        os << std::right << std::setw(10) << r.query_count << "\n";
    }
    return os.str();
}

template <typename S>
struct EvalReports {
    RetrievalReport image_to_text;
    RetrievalReport text_to_image;
    Tensor<double> scores;  // images x captions
};

/// Both retrieval directions over the full dataset. Every caption of an
/// image counts as relevant for image-to-text; each caption has exactly
/// one relevant image.
template <typename S>
EvalReports<S> evaluate(const ParNetModel<S>& model, const Dataset<S>& ds,
                        const std::vector<int>& ks = {1, 5, 10}) {
    std::vector<std::vector<std::size_t>> sentences;
    sentences.reserve(ds.captions.size());
    for (const auto& c : ds.captions) sentences.push_back(c.tokens);
    EvalReports<S> out;
    out.scores = score_all_pairs(model, ds.images, sentences);

    std::vector<std::vector<std::size_t>> caps_of_image(ds.images.size());
    std::vector<std::vector<std::size_t>> image_of_cap(ds.captions.size());
    for (std::size_t j = 0; j < ds.captions.size(); ++j) {
        std::size_t ipos = ds.image_pos(ds.captions[j].image_id);
        caps_of_image[ipos].push_back(j);
        image_of_cap[j] = {ipos};
    }

    Tensor<double> transposed({ds.captions.size(), ds.images.size()});
    for (std::size_t i = 0; i < ds.images.size(); ++i)
        for (std::size_t j = 0; j < ds.captions.size(); ++j)
            transposed(j, i) = out.scores(i, j);

    auto snapshot = config_to_json(model.config());
    out.image_to_text.direction = "image-to-text";
    out.image_to_text.query_count = ds.images.size();
    out.image_to_text.config_snapshot = snapshot;
    out.text_to_image.direction = "text-to-image";
    out.text_to_image.query_count = ds.captions.size();
    out.text_to_image.config_snapshot = snapshot;
    for (int k : ks) {
        out.image_to_text.recalls.emplace_back(
            k, recall_at_k(out.scores, caps_of_image, static_cast<std::size_t>(k)));
        out.text_to_image.recalls.emplace_back(
            k, recall_at_k(transposed, image_of_cap, static_cast<std::size_t>(k)));
    }
    return out;
}

namespace detail {

template <typename S>
nlohmann::json matrix_json(const Tensor<S>& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < t.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t j = 0; j < t.cols(); ++j) row.push_back(static_cast<double>(t(i, j)));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace detail

/// Full attention trace of one image-sentence pair: per-head intra-modal
/// weights for both modalities, the relevance matrix, the per-word object
/// weights, and the pair score.
template <typename S>
nlohmann::json dump_attention(const ParNetModel<S>& model, const Dataset<S>& ds,
                              std::uint64_t image_id, std::uint64_t caption_id) {
    std::size_t ipos = ds.image_pos(image_id);
    std::size_t cpos = ds.caption_pos(caption_id);
    Tape<S> tape;
    ModelBinding<S> b = model.bind(tape);
    EncodedImage<S> img = model.encode_image(tape, b, ds.images[ipos]);
    EncodedText<S> txt = model.encode_text(tape, b, ds.captions[cpos].tokens);
    PairTrace<S> trace = model.pair_score(img.V_r, txt.T_r);

    nlohmann::json omega_i = nlohmann::json::array();
    for (const auto& o : img.omega) omega_i.push_back(detail::matrix_json(o.value()));
    nlohmann::json omega_t = nlohmann::json::array();
    for (const auto& o : txt.omega) omega_t.push_back(detail::matrix_json(o.value()));

    return nlohmann::json{{"image_id", image_id},
                          {"caption_id", caption_id},
                          {"score", static_cast<double>(trace.score.value()[0])},
                          {"omega_I", omega_i},
                          {"omega_T", omega_t},
                          {"relevance", detail::matrix_json(trace.u.value())},
                          {"word_object_weights", detail::matrix_json(trace.weights.value())}};
}

}  // namespace parnet

#endif  // PARNET_EVAL_HPP
