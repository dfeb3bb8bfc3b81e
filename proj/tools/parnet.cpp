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

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "parnet/checkpoint.hpp"
#include "parnet/data_io.hpp"
#include "parnet/eval.hpp"
#include "parnet/pipeline_check.hpp"
#include "parnet/training.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct Args {
    std::string config_path, features_path, captions_path, vocab_path;
    std::string ckpt_path, out_path, out_dir, spec_path, json_path;
    std::uint64_t image_id = 0, caption_id = 0;
    std::vector<int> ks = {1, 5, 10};
    double tol = 1e-4;
    double h = 1e-5;
    int objects = 5, words = 4, batch = 3;
    bool seed_set = false;
    std::uint64_t seed = 0;
};

template <typename S>
parnet::Dataset<S> load_dataset(const parnet::Config& cfg, const Args& a) {
    auto features = parnet::load_features(a.features_path);
    auto captions = parnet::load_captions(a.captions_path);
    return parnet::make_dataset<S>(features, std::move(captions),
                                   static_cast<std::uint32_t>(cfg.d_v),
                                   static_cast<std::size_t>(cfg.vocab_size));
}

template <typename S>
parnet::ParNetModel<S> load_model(const parnet::Snapshot<S>& snap) {
    parnet::ParNetModel<S> model(snap.config);
    snap.restore_into(model);
    return model;
}

template <typename S>
int run_train(parnet::Config cfg, const Args& a) {
    if (!a.vocab_path.empty()) {
        auto vocab = parnet::Vocabulary::load(a.vocab_path);
        if (cfg.vocab_size != 0 && cfg.vocab_size != static_cast<int>(vocab.size())) {
            throw parnet::ConfigError("config vocab_size " + std::to_string(cfg.vocab_size) +
                                      " disagrees with vocabulary file (" +
                                      std::to_string(vocab.size()) + " tokens)");
        }
        cfg.vocab_size = static_cast<int>(vocab.size());
    }
    if (cfg.vocab_size < 2) {
        throw parnet::ConfigError("vocab_size unknown: set it in the config or pass --vocab");
    }
    auto ds = load_dataset<S>(cfg, a);
    parnet::ParNetModel<S> model(cfg);

    std::vector<std::vector<std::size_t>> sentences;
    for (const auto& c : ds.captions) sentences.push_back(c.tokens);
    // Training pairs one caption with its image; extra captions of the same
    // image are additional pairs.
    std::vector<parnet::ObjectSet<S>> images;
    for (const auto& c : ds.captions) images.push_back(ds.images[ds.image_pos(c.image_id)]);

    auto validate = [&](parnet::ParNetModel<S>& m) {
        auto reports = parnet::evaluate(m, ds, {1});
        return 0.5 * (reports.image_to_text.at(1) + reports.text_to_image.at(1));
    };
    auto log = [](const std::string& line) { std::cout << line << "\n"; };
    auto result = parnet::train<S>(model, images, sentences,
                                   cfg.eval_every_epochs > 0 ? parnet::ValidationFn<S>(validate)
                                                             : parnet::ValidationFn<S>(),
                                   log);
    parnet::save_checkpoint(a.out_path, result.best);
    std::cout << "steps " << result.steps << ", best epoch " << result.best_epoch;
    if (result.best_metric >= 0) std::cout << ", best mean R@1 " << result.best_metric;
    std::cout << "\ncheckpoint written to " << a.out_path << "\n";
    return kExitOk;
}

template <typename S>
int run_evaluate(const Args& a) {
    auto snap = parnet::load_checkpoint<S>(a.ckpt_path);
    auto model = load_model(snap);
    auto ds = load_dataset<S>(snap.config, a);
    auto reports = parnet::evaluate(model, ds, a.ks);
    std::cout << parnet::format_reports({reports.image_to_text, reports.text_to_image});
    if (!a.json_path.empty()) {
        nlohmann::json j{{"image_to_text", reports.image_to_text.to_json()},
                         {"text_to_image", reports.text_to_image.to_json()}};
        std::ofstream out(a.json_path);
        if (!out) throw parnet::DataError("cannot write report: " + a.json_path);
        out << j.dump(2) << "\n";
    }
    return kExitOk;
}

template <typename S>
int run_score(const Args& a) {
    auto snap = parnet::load_checkpoint<S>(a.ckpt_path);
    auto model = load_model(snap);
    auto ds = load_dataset<S>(snap.config, a);
    std::size_t ipos = ds.image_pos(a.image_id);
    std::size_t cpos = ds.caption_pos(a.caption_id);
    parnet::Tape<S> tape;
    auto bind = model.bind(tape);
    auto img = model.encode_image(tape, bind, ds.images[ipos]);
    auto txt = model.encode_text(tape, bind, ds.captions[cpos].tokens);
    auto trace = model.pair_score(img.V_r, txt.T_r);
    std::cout << static_cast<double>(trace.score.value()[0]) << "\n";
    return kExitOk;
}

template <typename S>
int run_dump(const Args& a) {
    auto snap = parnet::load_checkpoint<S>(a.ckpt_path);
    auto model = load_model(snap);
    auto ds = load_dataset<S>(snap.config, a);
    auto record = parnet::dump_attention(model, ds, a.image_id, a.caption_id);
    std::ofstream out(a.out_path);
    if (!out) throw parnet::DataError("cannot write attention record: " + a.out_path);
    out << record.dump(2) << "\n";
    std::cout << "attention record written to " << a.out_path << "\n";
    return kExitOk;
}

int run_synth(const Args& a) {
    parnet::SyntheticSpec spec;
    if (!a.spec_path.empty()) {
        std::ifstream in(a.spec_path);
        if (!in) throw parnet::DataError("cannot open spec file: " + a.spec_path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw parnet::ConfigError("spec is not valid JSON: " + std::string(e.what()));
        }
        spec = parnet::synthetic_spec_from_json(j);
    }
    if (a.seed_set) spec.seed = a.seed;
    auto data = parnet::synth_generate(spec);
    std::filesystem::create_directories(a.out_dir);
    auto base = std::filesystem::path(a.out_dir);
    parnet::write_features(data.features, (base / "features.parf").string());
    parnet::write_captions(data.captions, (base / "captions.jsonl").string());
    data.vocab.save((base / "vocab.txt").string());
    std::cout << "wrote " << data.features.images.size() << " scenes, "
              << data.captions.size() << " captions, vocabulary of " << data.vocab.size()
              << " to " << a.out_dir << "\n";
    return kExitOk;
}

int run_gradcheck(const Args& a) {
    parnet::Config cfg;
    if (!a.config_path.empty()) cfg = parnet::load_config(a.config_path);
    auto report = parnet::full_pipeline_grad_check(cfg, static_cast<std::size_t>(a.objects),
                                                   static_cast<std::size_t>(a.words),
                                                   static_cast<std::size_t>(a.batch), a.h);
    std::cout << report.to_string();
    if (!report.passed(a.tol)) {
        std::cout << "FAIL: max relative error " << report.max_rel_err << " exceeds " << a.tol
                  << "\n";
        return kExitNumeric;
    }
    std::cout << "PASS: all gradients within " << a.tol << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"position-aware relation network for image-text matching"};
    app.require_subcommand(1);
    Args a;

    auto* train = app.add_subcommand("train", "train a model and write the best checkpoint");
    train->add_option("--config", a.config_path, "JSON config")->required();
    train->add_option("--features", a.features_path, "feature container")->required();
    train->add_option("--captions", a.captions_path, "caption records")->required();
    train->add_option("--out", a.out_path, "output checkpoint")->required();
    train->add_option("--vocab", a.vocab_path, "vocabulary file (sets vocab_size)");

    auto* eval = app.add_subcommand("evaluate", "Recall@K retrieval evaluation");
    eval->add_option("--ckpt", a.ckpt_path)->required();
    eval->add_option("--features", a.features_path)->required();
    eval->add_option("--captions", a.captions_path)->required();
    eval->add_option("--k", a.ks, "recall cutoffs")->delimiter(',');
    eval->add_option("--json", a.json_path, "also write the reports as JSON");

    auto* score = app.add_subcommand("score", "similarity of one image-caption pair");
    score->add_option("--ckpt", a.ckpt_path)->required();
    score->add_option("--features", a.features_path)->required();
    score->add_option("--captions", a.captions_path)->required();
    score->add_option("--image-id", a.image_id)->required();
    score->add_option("--caption-id", a.caption_id)->required();

    auto* synth = app.add_subcommand("synth", "generate a synthetic scene dataset");
    synth->add_option("--spec", a.spec_path, "JSON generator spec");
    synth->add_option("--seed", a.seed, "override the spec seed")
        ->each([&a](const std::string&) { a.seed_set = true; });
    synth->add_option("--out-dir", a.out_dir)->required();

    auto* dump = app.add_subcommand("dump-attention", "write one pair's attention record");
    dump->add_option("--ckpt", a.ckpt_path)->required();
    dump->add_option("--features", a.features_path)->required();
    dump->add_option("--captions", a.captions_path)->required();
    dump->add_option("--image-id", a.image_id)->required();
    dump->add_option("--caption-id", a.caption_id)->required();
    dump->add_option("--out", a.out_path)->required();

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full pipeline");
    gc->add_option("--config", a.config_path, "JSON config (defaults when omitted)");
    gc->add_option("--tol", a.tol, "max relative error");
    gc->add_option("--step", a.h, "finite-difference step");
    gc->add_option("--objects", a.objects, "objects per image");
    gc->add_option("--words", a.words, "words per sentence");
    gc->add_option("--batch", a.batch, "pairs in the batch");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (app.got_subcommand(train)) {
            parnet::Config cfg = parnet::load_config(a.config_path);
            return cfg.precision == "f64" ? run_train<double>(cfg, a) : run_train<float>(cfg, a);
        }
        if (app.got_subcommand(eval)) {
            auto cfg = parnet::peek_checkpoint_config(a.ckpt_path);
            return cfg.precision == "f64" ? run_evaluate<double>(a) : run_evaluate<float>(a);
        }
        if (app.got_subcommand(score)) {
            auto cfg = parnet::peek_checkpoint_config(a.ckpt_path);
            return cfg.precision == "f64" ? run_score<double>(a) : run_score<float>(a);
        }
        if (app.got_subcommand(dump)) {
            auto cfg = parnet::peek_checkpoint_config(a.ckpt_path);
            return cfg.precision == "f64" ? run_dump<double>(a) : run_dump<float>(a);
        }
        if (app.got_subcommand(synth)) return run_synth(a);
        if (app.got_subcommand(gc)) return run_gradcheck(a);
    } catch (const parnet::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const parnet::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
