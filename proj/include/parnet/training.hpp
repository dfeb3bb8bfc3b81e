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

#ifndef PARNET_TRAINING_HPP
#define PARNET_TRAINING_HPP

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "parnet/model.hpp"

namespace parnet {

/// Adam with bias-corrected moments (0.9 / 0.999, eps 1e-8).
template <typename S>
class Adam {
  public:
    explicit Adam(const ParamStore<S>& params, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_.push_back(Tensor<S>::zeros(params[i].value.shape()));
            v_.push_back(Tensor<S>::zeros(params[i].value.shape()));
        }
    }

    void step(ParamStore<S>& params, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& value = params[i].value;
            const auto& grad = params[i].grad;
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < value.size(); ++k) {
                double g = static_cast<double>(grad[k]);
                double mk = beta1_ * static_cast<double>(m[k]) + (1.0 - beta1_) * g;
                double vk = beta2_ * static_cast<double>(v[k]) + (1.0 - beta2_) * g * g;
                m[k] = static_cast<S>(mk);
                v[k] = static_cast<S>(vk);
                value[k] -= static_cast<S>(lr * (mk / c1) / (std::sqrt(vk / c2) + eps_));
            }
        }
    }

  private:
    double beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Tensor<S>> m_;
    std::vector<Tensor<S>> v_;
};

/// Scale all gradients down to a global L2 norm of max_norm. No-op when
/// max_norm <= 0 or the norm is already within bounds.
template <typename S>
double clip_gradients(ParamStore<S>& params, double max_norm) {
    double sq = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i)
        for (const S& g : params[i].grad.data()) sq += static_cast<double>(g) * g;
    double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const S scale = static_cast<S>(max_norm / norm);
        for (std::size_t i = 0; i < params.size(); ++i)
            for (S& g : params[i].grad.data()) g *= scale;
    }
    return norm;
}

/// One matched image-sentence pair of a training batch.
template <typename S>
struct TrainPair {
    const ObjectSet<S>* image;
    const std::vector<std::size_t>* tokens;
};

/// Forward, loss, backward, clip, Adam step, constraint clamp.
/// Throws NumericError on non-finite loss, naming a non-finite parameter
/// when one exists.
template <typename S>
double train_step(ParNetModel<S>& model, Adam<S>& opt, const std::vector<TrainPair<S>>& batch) {
    const Config& cfg = model.config();
    if (batch.size() < 2) {
        throw DimensionError("train_step: batch of " + std::to_string(batch.size()) +
                             " has no negatives");
    }
    Tape<S> tape;
    ModelBinding<S> bind = model.bind(tape);
    std::vector<ObjectSet<S>> images;
    std::vector<std::vector<std::size_t>> sentences;
    for (const auto& p : batch) {
        images.push_back(*p.image);
        sentences.push_back(*p.tokens);
    }
    Var<S> scores = model.score_matrix(tape, bind, images, sentences);
    Var<S> loss = triplet_loss_hard(scores, cfg.margin);
    double loss_value = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(loss_value)) {
        std::string culprit = model.params().first_non_finite();
        throw NumericError("train_step: non-finite loss" +
                           (culprit.empty() ? std::string(" with all parameters finite")
                                            : "; first non-finite parameter: " + culprit));
    }
    tape.backward(loss);
    model.params().zero_grads();
    model.collect_grads(bind);
    clip_gradients(model.params(), cfg.grad_clip_norm);
    opt.step(model.params(), cfg.learning_rate);
    model.apply_constraints();
    return loss_value;
}

/// A trained-state snapshot: everything needed to evaluate or resume.
template <typename S>
struct Snapshot {
    Config config;
    int epoch = 0;
    std::string rng_state;
    std::vector<std::pair<std::string, Tensor<S>>> tensors;

    static Snapshot capture(const ParNetModel<S>& model, int epoch, const Rng& rng) {
        Snapshot s;
        s.config = model.config();
        s.epoch = epoch;
        s.rng_state = rng.serialize();
        for (std::size_t i = 0; i < model.params().size(); ++i) {
            s.tensors.emplace_back(model.params()[i].name, model.params()[i].value);
        }
        return s;
    }

    void restore_into(ParNetModel<S>& model) const {
        if (tensors.size() != model.params().size()) {
            throw DataError("snapshot holds " + std::to_string(tensors.size()) +
                            " tensors, model has " + std::to_string(model.params().size()) +
                            " parameters");
        }
        for (const auto& [name, tensor] : tensors) {
            if (!model.params().contains(name)) {
                throw DataError("snapshot tensor " + name + " is not a model parameter");
            }
            auto& entry = model.params().at(name);
            if (!entry.value.same_shape(tensor)) {
                throw DataError("snapshot tensor " + name + " has shape " +
                                tensor.shape_string() + ", model expects " +
                                entry.value.shape_string());
            }
            entry.value = tensor;
        }
    }
};

template <typename S>
struct TrainResult {
    Snapshot<S> best;
    double best_metric = -1.0;
    int best_epoch = -1;
    std::vector<double> losses;  // one entry per step
    long steps = 0;
};

/// Validation callback: returns a scalar metric to maximize (the harness
/// wires in mean Recall@1 over both directions). May be empty.
template <typename S>
using ValidationFn = std::function<double(ParNetModel<S>&)>;

using LogFn = std::function<void(const std::string&)>;

/// Epochs x shuffled batches of train_step. Keeps the best-validation
/// snapshot (falling back to the final state when validation never runs).
/// Deterministic given config.seed: the same Rng stream drives parameter
/// init (when `fresh_params`) and batch shuffling.
template <typename S>
TrainResult<S> train(ParNetModel<S>& model, const std::vector<ObjectSet<S>>& images,
                     const std::vector<std::vector<std::size_t>>& sentences,
                     const ValidationFn<S>& validate = {}, const LogFn& log = {},
                     bool fresh_params = true, Rng* resume_rng = nullptr,
                     int start_epoch = 0) {
    const Config& cfg = model.config();
    if (images.empty() || images.size() != sentences.size()) {
        throw DataError("train: need matched image/sentence lists, got " +
                        std::to_string(images.size()) + " and " +
                        std::to_string(sentences.size()));
    }
    Rng local_rng(cfg.seed);
    Rng& rng = resume_rng ? *resume_rng : local_rng;
    if (fresh_params) model.init_params(rng);

    Adam<S> opt(model.params());
    TrainResult<S> result;

    // Snapshot.epoch counts completed epochs, so a resumed run picks up
    // exactly where the snapshot was taken.
    auto run_validation = [&](int epochs_done) {
        if (!validate) return;
        double metric = validate(model);
        if (log) {
            log("epoch " + std::to_string(epochs_done) + " validation metric " +
                std::to_string(metric));
        }
        if (metric > result.best_metric) {
            result.best_metric = metric;
            result.best_epoch = epochs_done;
            result.best = Snapshot<S>::capture(model, epochs_done, rng);
        }
    };

    std::vector<std::size_t> order(images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    int epochs_done = start_epoch;
    bool capped = false;
    for (int epoch = start_epoch; epoch < cfg.epochs && !capped; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        long epoch_steps = 0;
        for (std::size_t from = 0; from < order.size();
             from += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t to =
                std::min(order.size(), from + static_cast<std::size_t>(cfg.batch_size));
            if (to - from < 2) break;  // a trailing singleton has no negatives
            std::vector<TrainPair<S>> batch;
            for (std::size_t i = from; i < to; ++i)
                batch.push_back({&images[order[i]], &sentences[order[i]]});
            double loss = train_step(model, opt, batch);
            result.losses.push_back(loss);
            epoch_loss += loss;
            ++epoch_steps;
            ++result.steps;
            if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) {
                capped = true;
                break;
            }
        }
        epochs_done = epoch + 1;
        if (log && epoch_steps > 0) {
            log("epoch " + std::to_string(epoch) + " mean loss " +
                std::to_string(epoch_loss / static_cast<double>(epoch_steps)));
        }
        if (cfg.eval_every_epochs > 0 && (epochs_done % cfg.eval_every_epochs == 0)) {
            run_validation(epochs_done);
        }
    }
    if (result.best_epoch < 0) {
        // no validation ran (or epochs == 0): the final state is the result
        result.best = Snapshot<S>::capture(model, epochs_done, rng);
        result.best_epoch = epochs_done;
    }
    return result;
}

}  // namespace parnet

#endif  // PARNET_TRAINING_HPP
