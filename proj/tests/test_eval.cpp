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

#include <algorithm>
#include <catch2/catch_amalgamated.hpp>
#include <set>

#include "helpers.hpp"
#include "parnet/eval.hpp"

using namespace parnet;
using testutil::random_tensor;

namespace {

/// Brute-force oracle: fully sort each row by (score desc, index asc) and
/// scan the first K candidates for any relevant one.
double recall_oracle(const Tensor<double>& scores,
                     const std::vector<std::vector<std::size_t>>& relevant, std::size_t k) {
    std::size_t hits = 0;
    for (std::size_t q = 0; q < scores.rows(); ++q) {
        std::vector<std::size_t> order(scores.cols());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return scores(q, a) > scores(q, b);
        });
        std::set<std::size_t> rel(relevant[q].begin(), relevant[q].end());
        for (std::size_t r = 0; r < k; ++r) {
            if (rel.count(order[r])) {
                ++hits;
                break;
            }
        }
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(scores.rows());
}

Dataset<double> small_dataset(std::uint64_t seed, int scenes = 8) {
    SyntheticSpec spec;
    spec.scene_count = scenes;
    spec.paired = false;
    spec.feature_dim = 12;
    spec.seed = seed;
    auto data = synth_generate(spec);
    return make_dataset<double>(data.features, data.captions, 12, data.vocab.size());
}

Config small_config(std::size_t vocab) {
    Config cfg;
    cfg.heads = 2;
    cfg.d_model = 16;
    cfg.d_p = 4;
    cfg.d_v = 12;
    cfg.d_e = 6;
    cfg.d_t = 10;
    cfg.vocab_size = static_cast<int>(vocab);
    return cfg;
}

}  // namespace

TEST_CASE("recall_at_k basics", "[eval]") {
    Tensor<double> scores({4, 4});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) scores(i, j) = (i == j) ? 1.0 : 0.1;
    std::vector<std::vector<std::size_t>> diag = {{0}, {1}, {2}, {3}};
    std::vector<std::vector<std::size_t>> anti = {{3}, {2}, {1}, {0}};
    REQUIRE(recall_at_k(scores, diag, 1) == 100.0);
    REQUIRE(recall_at_k(scores, anti, 1) == 0.0);
    REQUIRE(recall_at_k(scores, anti, 4) == 100.0);

    REQUIRE_THROWS_AS(recall_at_k(scores, diag, 5), DataError);
    REQUIRE_THROWS_AS(recall_at_k(scores, diag, 0), DataError);
    REQUIRE_THROWS_AS(recall_at_k(scores, {{0}, {}, {2}, {3}}, 1), DataError);
}

TEST_CASE("ties resolve to the lowest index", "[eval]") {
    Tensor<double> scores = Tensor<double>::full({2, 2}, 0.5);
    REQUIRE(recall_at_k(scores, {{0}, {0}}, 1) == 100.0);
    REQUIRE(recall_at_k(scores, {{1}, {1}}, 1) == 0.0);
}

TEST_CASE("recall matches the brute-force oracle on random matrices", "[eval]") {
    Rng rng(64);
    for (int rep = 0; rep < 200; ++rep) {
        std::size_t q = 2 + rng.index(12), c = 2 + rng.index(12);
        Tensor<double> scores = random_tensor({q, c}, rng);
        std::vector<std::vector<std::size_t>> relevant(q);
        for (auto& rel : relevant) {
            std::size_t count = 1 + rng.index(2);
            std::set<std::size_t> s;
            while (s.size() < count) s.insert(rng.index(c));
            rel.assign(s.begin(), s.end());
        }
        std::size_t k = 1 + rng.index(c);
        REQUIRE(recall_at_k(scores, relevant, k) == recall_oracle(scores, relevant, k));
    }
}

TEST_CASE("recall is monotone in K", "[eval]") {
    Rng rng(65);
    Tensor<double> scores = random_tensor({10, 10}, rng);
    std::vector<std::vector<std::size_t>> relevant(10);
    for (std::size_t q = 0; q < 10; ++q) relevant[q] = {rng.index(10)};
    double prev = 0;
    for (std::size_t k = 1; k <= 10; ++k) {
        double r = recall_at_k(scores, relevant, k);
        REQUIRE(r >= prev);
        prev = r;
    }
}

TEST_CASE("evaluate produces coherent reports", "[eval]") {
    auto ds = small_dataset(7);
    Config cfg = small_config(ds.captions.empty() ? 0 : 24);
    ParNetModel<double> model(cfg);
    Rng rng(1);
    model.init_params(rng);

    auto reports = evaluate(model, ds, {1, 5});
    REQUIRE(reports.image_to_text.query_count == 8);
    REQUIRE(reports.text_to_image.query_count == 8);
    REQUIRE(reports.image_to_text.at(1) >= 0.0);
    REQUIRE(reports.image_to_text.at(1) <= reports.image_to_text.at(5));
    REQUIRE(reports.text_to_image.at(1) <= reports.text_to_image.at(5));
    REQUIRE(reports.image_to_text.at(5) <= 100.0);

    SECTION("json and table surfaces") {
        auto j = reports.image_to_text.to_json();
        REQUIRE(j.at("direction") == "image-to-text");
        REQUIRE(j.at("recall").contains("R@1"));
        REQUIRE(j.at("query_count") == 8);
        auto table = format_reports({reports.image_to_text, reports.text_to_image});
        REQUIRE(table.find("image-to-text") != std::string::npos);
        REQUIRE(table.find("R@5") != std::string::npos);
    }
}

TEST_CASE("evaluate is invariant to dataset shuffling", "[eval]") {
    auto ds = small_dataset(19);
    Config cfg = small_config(24);
    ParNetModel<double> model(cfg);
    Rng rng(2);
    model.init_params(rng);
    auto base = evaluate(model, ds, {1, 5});

    // shuffle images and captions independently, keeping ids intact
    SyntheticSpec spec;
    spec.scene_count = 8;
    spec.paired = false;
    spec.feature_dim = 12;
    spec.seed = 19;
    auto data = synth_generate(spec);
    Rng shuffler(77);
    shuffler.shuffle(data.features.images);
    shuffler.shuffle(data.captions);
    auto shuffled = make_dataset<double>(data.features, data.captions, 12, data.vocab.size());
    auto moved = evaluate(model, shuffled, {1, 5});

    REQUIRE(base.image_to_text.at(1) == moved.image_to_text.at(1));
    REQUIRE(base.image_to_text.at(5) == moved.image_to_text.at(5));
    REQUIRE(base.text_to_image.at(1) == moved.text_to_image.at(1));
    REQUIRE(base.text_to_image.at(5) == moved.text_to_image.at(5));
}

TEST_CASE("multiple captions per image count as relevant", "[eval]") {
    auto set = [] {
        FeatureSet s;
        s.d_v = 2;
        for (std::uint64_t id = 0; id < 2; ++id) {
            RawImage im;
            im.id = id;
            im.objects = 1;
            im.features = {id == 0 ? 1.f : 0.f, id == 0 ? 0.f : 1.f};
            im.boxes = {0.5f, 0.5f, 0.1f, 0.1f};
            s.images.push_back(im);
        }
        return s;
    }();
    CaptionSet caps = {{0, 0, {2}}, {0, 1, {3}}, {1, 2, {4}}};
    auto ds = make_dataset<double>(set, caps, 2, 8);
    Config cfg = small_config(8);
    cfg.d_v = 2;
    ParNetModel<double> model(cfg);
    Rng rng(3);
    model.init_params(rng);
    auto reports = evaluate(model, ds, {1});
    // image 0 counts a hit if either caption 0 or 1 ranks first
    REQUIRE(reports.image_to_text.query_count == 2);
    REQUIRE(reports.text_to_image.query_count == 3);
}

TEST_CASE("attention dumps expose stochastic weights", "[eval]") {
    SyntheticSpec spec;
    spec.scene_count = 4;
    spec.paired = true;
    spec.noise_sigma = 0.0;
    spec.feature_dim = 12;
    spec.seed = 5;
    auto data = synth_generate(spec);
    auto ds = make_dataset<double>(data.features, data.captions, 12, data.vocab.size());
    Config cfg = small_config(data.vocab.size());

    for (bool position : {true, false}) {
        cfg.position_enabled = position;
        ParNetModel<double> model(cfg);
        Rng rng(6);
        model.init_params(rng);

        auto rec = dump_attention(model, ds, 0, 0);
        REQUIRE(rec.at("image_id") == 0);
        REQUIRE(rec.at("score").is_number());
        for (const auto& head : rec.at("omega_I")) {
            for (const auto& row : head) {
                double s = 0;
                for (const auto& v : row) s += v.get<double>();
                REQUIRE(s == Catch::Approx(1.0).margin(1e-6));
            }
        }
        for (const auto& head : rec.at("omega_T")) {
            for (const auto& row : head) {
                double s = 0;
                for (const auto& v : row) s += v.get<double>();
                REQUIRE(s == Catch::Approx(1.0).margin(1e-6));
            }
        }
        // attention over objects: every word's column sums to one
        const auto& w = rec.at("word_object_weights");
        std::size_t words = w.at(0).size();
        for (std::size_t j = 0; j < words; ++j) {
            double s = 0;
            for (const auto& row : w) s += row.at(j).get<double>();
            REQUIRE(s == Catch::Approx(1.0).margin(1e-6));
        }

        // deterministic re-run
        REQUIRE(dump_attention(model, ds, 0, 0) == rec);

        // contrast scenes share features; omega_I must differ only when the
        // position branch is live
        auto a = dump_attention(model, ds, 0, 0).at("omega_I");
        auto b = dump_attention(model, ds, 1, 1).at("omega_I");
        if (position) {
            REQUIRE(a != b);
        } else {
            REQUIRE(a == b);
        }
    }

    ParNetModel<double> model(cfg);
    Rng rng(6);
    model.init_params(rng);
    REQUIRE_THROWS_AS(dump_attention(model, ds, 999, 0), DataError);
}
