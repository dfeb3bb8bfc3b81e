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

#ifndef PARNET_PIPELINE_CHECK_HPP
#define PARNET_PIPELINE_CHECK_HPP

#include <vector>

#include "parnet/grad_check.hpp"
#include "parnet/model.hpp"
#include "parnet/training.hpp"

namespace parnet {

/// A deterministic random batch for gradient checking: `batch` images of
/// `objects` random features/boxes each, `batch` sentences of `words`
/// non-reserved token ids.
template <typename S>
void synth_check_batch(const Config& cfg, std::size_t objects, std::size_t words,
                       std::size_t batch, Rng& rng, std::vector<ObjectSet<S>>& images,
                       std::vector<std::vector<std::size_t>>& sentences) {
    for (std::size_t b = 0; b < batch; ++b) {
        Tensor<S> f({objects, static_cast<std::size_t>(cfg.d_v)});
        for (auto& v : f.data()) v = static_cast<S>(rng.uniform(-1.0, 1.0));
        Tensor<double> boxes({objects, 4});
        for (std::size_t i = 0; i < objects; ++i) {
            boxes(i, 0) = rng.uniform(0.05, 0.95);
            boxes(i, 1) = rng.uniform(0.05, 0.95);
            boxes(i, 2) = rng.uniform(0.05, 0.3);
            boxes(i, 3) = rng.uniform(0.05, 0.3);
        }
        images.push_back(ObjectSet<S>{std::move(f), BoxMatrix(std::move(boxes))});
        std::vector<std::size_t> toks;
        for (std::size_t w = 0; w < words; ++w) {
            toks.push_back(2 + rng.index(static_cast<std::size_t>(cfg.vocab_size) - 2));
        }
        sentences.push_back(std::move(toks));
    }
}

/// Central-difference check of the whole pipeline loss (encode both
/// modalities, score every pair, hard-negative ranking loss) against the
/// tape gradients, over every named parameter. Runs in 64-bit regardless
/// of the configured training precision.
inline GradCheckReport full_pipeline_grad_check(Config cfg, std::size_t objects = 5,
                                                std::size_t words = 4, std::size_t batch = 3,
                                                double h = 1e-5) {
    cfg.precision = "f64";
    if (cfg.vocab_size < 3) cfg.vocab_size = 10;
    cfg.validate();
    ParNetModel<double> model(cfg);
    Rng rng(cfg.seed);
    model.init_params(rng);

    std::vector<ObjectSet<double>> images;
    std::vector<std::vector<std::size_t>> sentences;
    synth_check_batch(cfg, objects, words, batch, rng, images, sentences);

    auto forward = [&](bool with_grad) {
        Tape<double> tape;
        ModelBinding<double> bind = model.bind(tape);
        Var<double> scores = model.score_matrix(tape, bind, images, sentences);
        Var<double> loss = triplet_loss_hard(scores, model.config().margin);
        if (with_grad) {
            tape.backward(loss);
            model.collect_grads(bind);
        }
        return static_cast<double>(loss.value()[0]);
    };
    auto loss_fn = [&](ParamStore<double>&) { return forward(true); };
    auto value_fn = [&](ParamStore<double>&) { return forward(false); };
    return grad_check(loss_fn, model.params(), h, 1e-6, value_fn);
}

}  // namespace parnet

#endif  // PARNET_PIPELINE_CHECK_HPP
