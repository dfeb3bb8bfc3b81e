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

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "helpers.hpp"
#include "parnet/model.hpp"
#include "parnet/visual_relation.hpp"

using namespace parnet;
using testutil::random_tensor;
using testutil::rel_frobenius_diff;

namespace {

Config tiny_config(bool position) {
    Config cfg;
    cfg.heads = 3;
    cfg.d_model = 24;
    cfg.d_p = 8;
    cfg.d_v = 10;
    cfg.d_e = 6;
    cfg.d_t = 12;
    cfg.vocab_size = 10;
    cfg.position_enabled = position;
    cfg.seed = 77;
    return cfg;
}

ObjectSet<double> random_scene(std::size_t n, std::size_t d_v, Rng& rng) {
    Tensor<double> boxes({n, 4});
    for (std::size_t i = 0; i < n; ++i) {
        boxes(i, 0) = rng.uniform(0.1, 0.9);
        boxes(i, 1) = rng.uniform(0.1, 0.9);
        boxes(i, 2) = rng.uniform(0.05, 0.3);
        boxes(i, 3) = rng.uniform(0.05, 0.3);
    }
    return ObjectSet<double>{random_tensor({n, d_v}, rng), BoxMatrix(boxes)};
}

}  // namespace

TEST_CASE("semantic_weights hand values", "[visual_relation]") {
    Tape<double> tape;
    SECTION("orthogonal rows give zero off-diagonals") {
        auto vh = tape.constant(Tensor<double>{{1, 0}, {0, 1}});
        auto w = semantic_weights(vh, 2.0);
        REQUIRE(w.value()(0, 1) == 0.0);
        REQUIRE(w.value()(1, 0) == 0.0);
    }
    SECTION("hand evaluation") {
        auto vh = tape.constant(Tensor<double>{{2, 0}, {2, 0}});
        auto w = semantic_weights(vh, 2.0);
        for (std::size_t i = 0; i < 4; ++i)
            REQUIRE(w.value()[i] == Catch::Approx(4.0 / std::sqrt(2.0)).margin(1e-12));
    }
    SECTION("symmetry on random input") {
        Rng rng(2);
        auto vh = tape.constant(random_tensor({4, 5}, rng));
        auto w = semantic_weights(vh, 5.0);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                REQUIRE(w.value()(i, j) == Catch::Approx(w.value()(j, i)).margin(1e-12));
    }
}

TEST_CASE("fuse_weights hand values and degeneracies", "[visual_relation]") {
    Tape<double> tape;
    SECTION("uniform spatial weight reduces to softmax") {
        Rng rng(6);
        auto ws = tape.constant(random_tensor({3, 3}, rng, -2, 2));
        auto wp = tape.constant(Tensor<double>::full({3, 3}, 1.0 / 3.0));
        auto fused = fuse_weights(wp, ws);
        auto sm = softmax_rows(ws);
        REQUIRE(testutil::max_abs_diff(fused.value(), sm.value()) <= 1e-9);
    }
    SECTION("zero semantic weight returns the spatial weight") {
        auto wp = tape.constant(Tensor<double>{{0.8, 0.2}, {0.5, 0.5}});
        auto ws = tape.constant(Tensor<double>({2, 2}));
        auto fused = fuse_weights(wp, ws);
        REQUIRE(testutil::max_abs_diff(fused.value(), wp.value()) <= 1e-12);
    }
    SECTION("hand evaluation") {
        auto wp = tape.constant(Tensor<double>{{0.5, 0.5}});
        auto ws = tape.constant(Tensor<double>{{std::log(2.0), 0.0}});
        auto fused = fuse_weights(wp, ws);
        REQUIRE(fused.value()(0, 0) == Catch::Approx(2.0 / 3.0).margin(1e-12));
        REQUIRE(fused.value()(0, 1) == Catch::Approx(1.0 / 3.0).margin(1e-12));
    }
}

TEST_CASE("encode_image single object doubles its projection", "[visual_relation]") {
    Config cfg = tiny_config(true);
    ParNetModel<double> model(cfg);
    Rng rng(cfg.seed);
    model.init_params(rng);
    auto scene = random_scene(1, cfg.d_v, rng);

    Tape<double> tape;
    auto bind = model.bind(tape);
    auto enc = model.encode_image(tape, bind, scene);
    REQUIRE(enc.omega.size() == 3);
    for (const auto& o : enc.omega) REQUIRE(o.value()(0, 0) == Catch::Approx(1.0).margin(1e-12));

    // V_r = F(v) + 1*F(v)
    std::vector<Var<double>> heads;
    for (int k = 0; k < cfg.heads; ++k) {
        heads.push_back(linear(tape.constant(scene.features), bind.visual.proj_w[k],
                               bind.visual.proj_b[k]));
    }
    auto f = concat_cols(heads);
    for (std::size_t i = 0; i < f.value().size(); ++i) {
        REQUIRE(enc.V_r.value()[i] == Catch::Approx(2.0 * f.value()[i]).margin(1e-9));
    }
}

TEST_CASE("position-disabled encoding ignores boxes exactly", "[visual_relation]") {
    Config cfg = tiny_config(false);
    ParNetModel<double> model(cfg);
    Rng rng(cfg.seed);
    model.init_params(rng);
    auto scene = random_scene(4, cfg.d_v, rng);
    auto other = random_scene(4, cfg.d_v, rng);
    ObjectSet<double> moved{scene.features, other.boxes};  // same features, new boxes

    Tape<double> tape;
    auto bind = model.bind(tape);
    auto a = model.encode_image(tape, bind, scene);
    auto b = model.encode_image(tape, bind, moved);
    REQUIRE(a.V_r.value() == b.V_r.value());  // bitwise
}

TEST_CASE("position-enabled encoding feels box changes", "[visual_relation]") {
    Config cfg = tiny_config(true);
    ParNetModel<double> model(cfg);
    Rng rng(cfg.seed);
    model.init_params(rng);

    Tensor<double> features = random_tensor({2, static_cast<std::size_t>(cfg.d_v)}, rng);
    Tensor<double> placed({2, 4}), swapped({2, 4});
    double centers[2][2] = {{0.2, 0.5}, {0.8, 0.5}};
    for (int i = 0; i < 2; ++i) {
        placed(i, 0) = centers[i][0];
        placed(i, 1) = centers[i][1];
        placed(i, 2) = placed(i, 3) = 0.1;
        swapped(i, 0) = centers[1 - i][0];
        swapped(i, 1) = centers[1 - i][1];
        swapped(i, 2) = swapped(i, 3) = 0.1;
    }
    Tape<double> tape;
    auto bind = model.bind(tape);
    auto a = model.encode_image(tape, bind, {features, BoxMatrix(placed)});
    auto b = model.encode_image(tape, bind, {features, BoxMatrix(swapped)});
    REQUIRE(rel_frobenius_diff(a.V_r.value(), b.V_r.value()) > 1e-3);
}

TEST_CASE("encode_image is permutation equivariant", "[visual_relation]") {
    Config cfg = tiny_config(true);
    ParNetModel<double> model(cfg);
    Rng rng(91);
    model.init_params(rng);
    auto scene = random_scene(5, cfg.d_v, rng);

    std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    Tensor<double> pf({5, static_cast<std::size_t>(cfg.d_v)});
    Tensor<double> pb({5, 4});
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < pf.cols(); ++j) pf(i, j) = scene.features(perm[i], j);
        for (std::size_t j = 0; j < 4; ++j) pb(i, j) = scene.boxes.raw()(perm[i], j);
    }
    Tape<double> tape;
    auto bind = model.bind(tape);
    auto base = model.encode_image(tape, bind, scene);
    auto permuted = model.encode_image(tape, bind, {pf, BoxMatrix(pb)});
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < base.V_r.value().cols(); ++j) {
            REQUIRE(permuted.V_r.value()(i, j) ==
                    Catch::Approx(base.V_r.value()(perm[i], j)).epsilon(1e-6).margin(1e-9));
        }
    }
}

TEST_CASE("joint translation leaves V_r nearly unchanged", "[visual_relation]") {
    Config cfg = tiny_config(true);
    ParNetModel<double> model(cfg);
    Rng rng(15);
    model.init_params(rng);

    Tensor<double> features = random_tensor({3, static_cast<std::size_t>(cfg.d_v)}, rng);
    Tensor<double> rows({3, 4}), moved({3, 4});
    double cx[3] = {0.2, 0.5, 0.7}, cy[3] = {0.3, 0.6, 0.2};
    for (std::size_t i = 0; i < 3; ++i) {
        rows(i, 0) = cx[i];
        rows(i, 1) = cy[i];
        rows(i, 2) = rows(i, 3) = 0.1;
        moved(i, 0) = cx[i] + 0.1;
        moved(i, 1) = cy[i] + 0.25;
        moved(i, 2) = moved(i, 3) = 0.1;
    }
    Tape<double> tape;
    auto bind = model.bind(tape);
    auto a = model.encode_image(tape, bind, {features, BoxMatrix(rows)});
    auto b = model.encode_image(tape, bind, {features, BoxMatrix(moved)});
    REQUIRE(rel_frobenius_diff(a.V_r.value(), b.V_r.value()) <= 1e-6);
}

TEST_CASE("relation weight rows sum to one", "[visual_relation]") {
    for (bool position : {true, false}) {
        Config cfg = tiny_config(position);
        ParNetModel<double> model(cfg);
        Rng rng(52);
        model.init_params(rng);
        auto scene = random_scene(4, cfg.d_v, rng);
        Tape<double> tape;
        auto bind = model.bind(tape);
        auto enc = model.encode_image(tape, bind, scene);
        for (const auto& o : enc.omega) {
            for (std::size_t i = 0; i < 4; ++i) {
                double s = 0;
                for (std::size_t j = 0; j < 4; ++j) s += o.value()(i, j);
                REQUIRE(s == Catch::Approx(1.0).margin(1e-6));
            }
        }
    }
}

TEST_CASE("all image-branch parameters pass grad check", "[visual_relation]") {
    Config cfg = tiny_config(true);
    ParNetModel<double> model(cfg);
    Rng rng(cfg.seed);
    model.init_params(rng);
    auto scene = random_scene(4, cfg.d_v, rng);
    Tensor<double> coeff =
        random_tensor({4, static_cast<std::size_t>(cfg.d_model)}, rng, -1.0, 1.0);

    auto loss = [&](ParamStore<double>&) {
        Tape<double> tape;
        auto bind = model.bind(tape);
        auto enc = model.encode_image(tape, bind, scene);
        auto l = weighted_sum(enc.V_r, coeff);
        tape.backward(l);
        model.collect_grads(bind);
        return l.value()[0];
    };
    auto report = grad_check(loss, model.params(), 1e-5);
    REQUIRE(report.max_rel_err <= 1e-4);
    // text-branch parameters are untouched by this loss
    for (const auto& e : report.entries) {
        if (e.name.rfind("vis.", 0) == 0 || e.name.rfind("spatial.", 0) == 0) {
            INFO(e.name);
            CHECK(e.max_abs_analytic > 0.0);
        }
    }
}
