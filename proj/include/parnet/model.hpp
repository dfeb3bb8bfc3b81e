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

#ifndef PARNET_MODEL_HPP
#define PARNET_MODEL_HPP

#include <string>
#include <vector>

#include "parnet/config.hpp"
#include "parnet/cross_modal.hpp"
#include "parnet/param_store.hpp"
#include "parnet/random.hpp"
#include "parnet/spatial.hpp"
#include "parnet/text_pipeline.hpp"
#include "parnet/visual_relation.hpp"

namespace parnet {

/// One image as the model consumes it: object features plus boxes.
template <typename S>
struct ObjectSet {
    Tensor<S> features;  // N x d_v
    BoxMatrix boxes;     // N x 4
};

/// All tape bindings of the model parameters, aligned with the store.
template <typename S>
struct ModelBinding {
    std::vector<Var<S>> all;  // one Var per store entry, same order
    VisualVars<S> visual;
    TextVars<S> text;
};

/// Per-pair intermediate products kept for inspection and dumping.
template <typename S>
struct PairTrace {
    Var<S> u;        // N x M relevance
    Var<S> weights;  // N x M per-word object weights
    Var<S> score;    // scalar
};

/// The full matching model: owns the parameter store and knows how to build
/// forward graphs for images, sentences and image-sentence batches on a tape.
template <typename S>
class ParNetModel {
  public:
    explicit ParNetModel(Config cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        if (cfg_.vocab_size < 2) {
            throw ConfigError("model needs vocab_size >= 2 (pad and unk), got " +
                              std::to_string(cfg_.vocab_size));
        }
        register_params();
    }

    const Config& config() const { return cfg_; }
    ParamStore<S>& params() { return params_; }
    const ParamStore<S>& params() const { return params_; }

    /// Draw fresh parameter values; the stream consumed is identical for
    /// every configuration with the same shapes, so runs are reproducible.
    void init_params(Rng& rng) {
        auto xavier = [&rng](Tensor<S>& t, std::size_t fan_in, std::size_t fan_out) {
            double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            for (auto& v : t.data()) v = static_cast<S>(rng.uniform(-limit, limit));
        };
        for (auto& e : params_) {
            if (e.name == "embed.table") {
                for (auto& v : e.value.data()) v = static_cast<S>(rng.uniform(-0.1, 0.1));
            } else if (e.name == "spatial.rho0") {
                for (auto& v : e.value.data()) v = static_cast<S>(rng.uniform(0.0, 1.0));
            } else if (e.name == "spatial.theta0") {
                for (auto& v : e.value.data()) v = static_cast<S>(rng.uniform(-kPi, kPi));
            } else if (e.name == "spatial.sigma_rho") {
                e.value.fill(S(0.5));
            } else if (e.name == "spatial.sigma_theta") {
                e.value.fill(static_cast<S>(kPi / 4.0));
            } else if (e.name.find(".reduction") != std::string::npos) {
                for (auto& v : e.value.data()) v = static_cast<S>(rng.uniform(0.5, 1.5));
            } else if (e.name.size() >= 2 && e.name.compare(e.name.size() - 2, 2, ".b") == 0) {
                e.value.fill(S(0));
            } else if (e.value.rank() == 2) {
                xavier(e.value, e.value.rows(), e.value.cols());
            } else {
                e.value.fill(S(0));
            }
        }
    }

    /// Re-impose parameter constraints after an optimizer step: kernel
    /// spreads stay above sigma_min, reduction weights stay non-negative.
    void apply_constraints() {
        const S smin = static_cast<S>(cfg_.sigma_min);
        for (const char* name : {"spatial.sigma_rho", "spatial.sigma_theta"}) {
            for (auto& v : params_.at(name).value.data()) v = std::max(v, smin);
        }
        for (int k = 0; k < cfg_.heads; ++k) {
            auto& r = params_.at("spatial.head" + std::to_string(k) + ".reduction");
            for (auto& v : r.value.data()) v = std::max(v, S(0));
        }
    }

    /// Create one tape leaf per parameter and wire up the structured views.
    ModelBinding<S> bind(Tape<S>& tape) const {
        ModelBinding<S> b;
        b.all.reserve(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) b.all.push_back(tape.leaf(params_[i].value));
        auto var = [&](const std::string& name) { return b.all[index(name)]; };

        b.text.embedding = var("embed.table");
        auto bind_dir = [&](const std::string& prefix) {
            GruDirectionVars<S> g;
            g.Wz = var(prefix + ".Wz");
            g.Uz = var(prefix + ".Uz");
            g.bz = var(prefix + ".bz");
            g.Wr = var(prefix + ".Wr");
            g.Ur = var(prefix + ".Ur");
            g.br = var(prefix + ".br");
            g.Wh = var(prefix + ".Wh");
            g.Uh = var(prefix + ".Uh");
            g.bh = var(prefix + ".bh");
            return g;
        };
        b.text.fw = bind_dir("gru.fw");
        b.text.bw = bind_dir("gru.bw");
        for (int k = 0; k < cfg_.heads; ++k) {
            std::string h = std::to_string(k);
            b.text.proj_w.push_back(var("text.head" + h + ".W"));
            b.text.proj_b.push_back(var("text.head" + h + ".b"));
            b.visual.proj_w.push_back(var("vis.head" + h + ".W"));
            b.visual.proj_b.push_back(var("vis.head" + h + ".b"));
            b.visual.reduction.push_back(var("spatial.head" + h + ".reduction"));
        }
        b.visual.rho0 = var("spatial.rho0");
        b.visual.sigma_rho = var("spatial.sigma_rho");
        b.visual.theta0 = var("spatial.theta0");
        b.visual.sigma_theta = var("spatial.sigma_theta");
        return b;
    }

    /// Accumulate tape leaf gradients back into the store.
    void collect_grads(const ModelBinding<S>& b) {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            detail::accumulate(params_[i].grad, b.all[i].grad());
        }
    }

    VisualRelationOptions visual_options() const {
        VisualRelationOptions o;
        o.position_enabled = cfg_.position_enabled;
        o.scale_by_projected_dim = cfg_.scale_by_projected_dim;
        o.sigma_min = cfg_.sigma_min;
        o.epsilon_p = cfg_.epsilon_p;
        return o;
    }

    EncodedImage<S> encode_image(Tape<S>& tape, const ModelBinding<S>& b,
                                 const ObjectSet<S>& image) const {
        if (image.features.cols() != static_cast<std::size_t>(cfg_.d_v)) {
            throw DimensionError("encode_image: features " + image.features.shape_string() +
                                 " vs configured d_v " + std::to_string(cfg_.d_v));
        }
        return parnet::encode_image(tape, image.features, image.boxes, b.visual,
                                    visual_options());
    }

    EncodedText<S> encode_text(Tape<S>& tape, const ModelBinding<S>& b,
                               const std::vector<std::size_t>& tokens) const {
        TextRelationOptions o;
        o.scale_by_projected_dim = cfg_.scale_by_projected_dim;
        return parnet::encode_text(tape, tokens, b.text, o);
    }

    /// Score one encoded pair, exposing the cross-modal trace.
    PairTrace<S> pair_score(Var<S> V_r, Var<S> T_r) const {
        PairTrace<S> t;
        t.u = relevance(V_r, T_r);
        auto attended =
            attend_objects(t.u, V_r, cfg_.lambda, attention_axis_from_string(cfg_.attention_axis));
        t.weights = attended.weights;
        t.score = pair_similarity(attended.alpha, T_r);
        return t;
    }

    /// Dense image x sentence score matrix. Each image and sentence is
    /// encoded once; every pair goes through the cross-modal step.
    Var<S> score_matrix(Tape<S>& tape, const ModelBinding<S>& b,
                        const std::vector<ObjectSet<S>>& images,
                        const std::vector<std::vector<std::size_t>>& sentences) const {
        if (images.empty() || sentences.empty()) {
            throw DimensionError("score_matrix: empty image or sentence list");
        }
        std::vector<Var<S>> vr, tr;
        vr.reserve(images.size());
        tr.reserve(sentences.size());
        for (const auto& im : images) vr.push_back(encode_image(tape, b, im).V_r);
        for (const auto& s : sentences) tr.push_back(encode_text(tape, b, s).T_r);
        std::vector<Var<S>> cells;
        cells.reserve(vr.size() * tr.size());
        for (const auto& v : vr)
            for (const auto& t : tr) cells.push_back(pair_score(v, t).score);
        return pack_scalars(cells, vr.size(), tr.size());
    }

    std::size_t index(const std::string& name) const { return params_.index_of(name); }

  private:
    void register_params() {
        const std::size_t d_h = static_cast<std::size_t>(cfg_.head_dim());
        const std::size_t d_v = static_cast<std::size_t>(cfg_.d_v);
        const std::size_t d_e = static_cast<std::size_t>(cfg_.d_e);
        const std::size_t d_t = static_cast<std::size_t>(cfg_.d_t);
        const std::size_t d_p = static_cast<std::size_t>(cfg_.d_p);
        const std::size_t vocab = static_cast<std::size_t>(cfg_.vocab_size);

        params_.add("embed.table", Tensor<S>({vocab, d_e}));
        for (const char* dir : {"gru.fw", "gru.bw"}) {
            for (const char* gate : {"z", "r", "h"}) {
                std::string g(gate);
                params_.add(std::string(dir) + ".W" + g, Tensor<S>({d_e, d_t}));
                params_.add(std::string(dir) + ".U" + g, Tensor<S>({d_t, d_t}));
                params_.add(std::string(dir) + ".b" + g, Tensor<S>({d_t}));
            }
        }
        for (int k = 0; k < cfg_.heads; ++k) {
            std::string h = std::to_string(k);
            params_.add("text.head" + h + ".W", Tensor<S>({d_t, d_h}));
            params_.add("text.head" + h + ".b", Tensor<S>({d_h}));
            params_.add("vis.head" + h + ".W", Tensor<S>({d_v, d_h}));
            params_.add("vis.head" + h + ".b", Tensor<S>({d_h}));
        }
        // The kernel bank is registered even for position-disabled models so
        // checkpoints and init streams line up across the ablation switch.
        params_.add("spatial.rho0", Tensor<S>({d_p}));
        params_.add("spatial.sigma_rho", Tensor<S>({d_p}));
        params_.add("spatial.theta0", Tensor<S>({d_p}));
        params_.add("spatial.sigma_theta", Tensor<S>({d_p}));
        for (int k = 0; k < cfg_.heads; ++k) {
            params_.add("spatial.head" + std::to_string(k) + ".reduction", Tensor<S>({d_p}));
        }
    }

    Config cfg_;
    ParamStore<S> params_;
};

}  // namespace parnet

#endif  // PARNET_MODEL_HPP
