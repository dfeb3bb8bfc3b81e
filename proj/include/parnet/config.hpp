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

#ifndef PARNET_CONFIG_HPP
#define PARNET_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <string>

#include "json.hpp"
#include "parnet/errors.hpp"

namespace parnet {

/// Training and model configuration. The JSON file format mirrors these
/// fields one-to-one; unknown keys are rejected.
struct Config {
    // optimization
    double learning_rate = 0.0005;
    int epochs = 25;
    int batch_size = 128;
    double margin = 0.2;
    double grad_clip_norm = 2.0;
    int max_steps = 0;           // 0 = no cap
    int eval_every_epochs = 1;   // 0 = no validation during training

    // model
    double lambda = 9.0;  // inter-modal softmax temperature
    int heads = 6;        // relation heads K
    int d_model = 256;    // relation output width (K * per-head dim)
    int d_p = 64;         // spatial kernel count
    bool position_enabled = true;
    int d_v = 2048;  // object feature width
    int d_e = 300;   // word embedding width
    int d_t = 256;   // GRU hidden width
    int vocab_size = 0;
    bool scale_by_projected_dim = true;    // attention scale: per-head dim vs raw input dim
    std::string attention_axis = "objects";  // inter-modal softmax axis

    // numerics
    std::string precision = "f32";
    double sigma_min = 1e-3;
    double epsilon_p = 1e-6;

    std::uint64_t seed = 42;

    int head_dim() const { return d_model / heads; }

    void validate() const {
        if (margin <= 0.0) throw ConfigError("margin must be positive");
        if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
        if (heads < 1) throw ConfigError("heads must be at least 1");
        if (d_model < 1 || d_model % heads != 0) {
            throw ConfigError("d_model (" + std::to_string(d_model) +
                              ") must be a positive multiple of heads (" + std::to_string(heads) +
                              ")");
        }
        if (d_p < 1) throw ConfigError("d_p must be at least 1");
        if (d_v < 1 || d_e < 1 || d_t < 1) throw ConfigError("feature widths must be positive");
        if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
        if (precision != "f32" && precision != "f64") {
            throw ConfigError("precision must be \"f32\" or \"f64\", got \"" + precision + "\"");
        }
        if (attention_axis != "objects" && attention_axis != "words") {
            throw ConfigError("attention_axis must be \"objects\" or \"words\", got \"" +
                              attention_axis + "\"");
        }
        if (epochs < 0 || max_steps < 0 || eval_every_epochs < 0) {
            throw ConfigError("epochs, max_steps and eval_every_epochs must be non-negative");
        }
        if (sigma_min <= 0.0 || epsilon_p <= 0.0) {
            throw ConfigError("sigma_min and epsilon_p must be positive");
        }
        if (grad_clip_norm < 0.0) throw ConfigError("grad_clip_norm must be non-negative");
        if (vocab_size < 0) throw ConfigError("vocab_size must be non-negative");
    }
};

inline nlohmann::json config_to_json(const Config& c) {
    return nlohmann::json{{"learning_rate", c.learning_rate},
                          {"epochs", c.epochs},
                          {"batch_size", c.batch_size},
                          {"margin", c.margin},
                          {"grad_clip_norm", c.grad_clip_norm},
                          {"max_steps", c.max_steps},
                          {"eval_every_epochs", c.eval_every_epochs},
                          {"lambda", c.lambda},
                          {"heads", c.heads},
                          {"d_model", c.d_model},
                          {"d_p", c.d_p},
                          {"position_enabled", c.position_enabled},
                          {"d_v", c.d_v},
                          {"d_e", c.d_e},
                          {"d_t", c.d_t},
                          {"vocab_size", c.vocab_size},
                          {"scale_by_projected_dim", c.scale_by_projected_dim},
                          {"attention_axis", c.attention_axis},
                          {"precision", c.precision},
                          {"sigma_min", c.sigma_min},
                          {"epsilon_p", c.epsilon_p},
                          {"seed", c.seed}};
}

inline Config config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    Config c;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            if (k == "learning_rate") c.learning_rate = it.value().get<double>();
            else if (k == "epochs") c.epochs = it.value().get<int>();
            else if (k == "batch_size") c.batch_size = it.value().get<int>();
            else if (k == "margin") c.margin = it.value().get<double>();
            else if (k == "grad_clip_norm") c.grad_clip_norm = it.value().get<double>();
            else if (k == "max_steps") c.max_steps = it.value().get<int>();
            else if (k == "eval_every_epochs") c.eval_every_epochs = it.value().get<int>();
            else if (k == "lambda") c.lambda = it.value().get<double>();
            else if (k == "heads") c.heads = it.value().get<int>();
            else if (k == "d_model") c.d_model = it.value().get<int>();
            else if (k == "d_p") c.d_p = it.value().get<int>();
            else if (k == "position_enabled") c.position_enabled = it.value().get<bool>();
            else if (k == "d_v") c.d_v = it.value().get<int>();
            else if (k == "d_e") c.d_e = it.value().get<int>();
            else if (k == "d_t") c.d_t = it.value().get<int>();
            else if (k == "vocab_size") c.vocab_size = it.value().get<int>();
            else if (k == "scale_by_projected_dim")
                c.scale_by_projected_dim = it.value().get<bool>();
            else if (k == "attention_axis") c.attention_axis = it.value().get<std::string>();
            else if (k == "precision") c.precision = it.value().get<std::string>();
            else if (k == "sigma_min") c.sigma_min = it.value().get<double>();
            else if (k == "epsilon_p") c.epsilon_p = it.value().get<double>();
            else if (k == "seed") c.seed = it.value().get<std::uint64_t>();
            else throw ConfigError("unknown config key: " + k);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config value: ") + e.what());
    }
    c.validate();
    return c;
}

inline Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    return config_from_json(j);
}

}  // namespace parnet

#endif  // PARNET_CONFIG_HPP
