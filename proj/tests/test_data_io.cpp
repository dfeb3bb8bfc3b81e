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
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "parnet/data_io.hpp"

using namespace parnet;

namespace {

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

FeatureSet tiny_features() {
    FeatureSet set;
    set.d_v = 3;
    RawImage a;
    a.id = 10;
    a.objects = 2;
    a.features = {0.1f, 0.2f, 0.3f, -0.4f, 0.5f, -0.6f};
    a.boxes = {0.2f, 0.3f, 0.1f, 0.1f, 0.7f, 0.8f, 0.2f, 0.2f};
    RawImage b;
    b.id = 11;
    b.objects = 1;
    b.features = {1.0f, -1.0f, 0.25f};
    b.boxes = {0.5f, 0.5f, 0.3f, 0.3f};
    set.images = {a, b};
    return set;
}

CaptionSet tiny_captions() {
    return {{10, 0, {2, 3, 4}}, {11, 1, {4, 2}}};
}

}  // namespace

TEST_CASE("feature files round-trip bit-exactly", "[data_io]") {
    auto dir = std::filesystem::temp_directory_path();
    auto path = (dir / "parnet_feats.parf").string();
    auto set = tiny_features();
    write_features(set, path);
    auto loaded = load_features(path);
    REQUIRE(loaded.d_v == set.d_v);
    REQUIRE(loaded.images.size() == 2);
    REQUIRE(loaded.images[0].id == 10);
    REQUIRE(loaded.images[0].features == set.images[0].features);
    REQUIRE(loaded.images[1].boxes == set.images[1].boxes);

    auto path2 = path + ".rewrite";
    write_features(loaded, path2);
    REQUIRE(file_bytes(path) == file_bytes(path2));
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("feature file error paths", "[data_io]") {
    auto dir = std::filesystem::temp_directory_path();
    auto path = (dir / "parnet_feats_bad.parf").string();
    SECTION("bad magic") {
        std::ofstream(path, std::ios::binary) << "XXXX stuff and more stuff";
        REQUIRE_THROWS_AS(load_features(path), FormatError);
    }
    SECTION("truncation reports a byte offset") {
        write_features(tiny_features(), path);
        auto bytes = file_bytes(path);
        std::ofstream(path, std::ios::binary)
            .write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 5));
        try {
            load_features(path);
            FAIL("expected CorruptionError");
        } catch (const CorruptionError& e) {
            REQUIRE(std::string(e.what()).find("byte offset") != std::string::npos);
            REQUIRE(e.byte_offset > 0);
        }
    }
    SECTION("width mismatch against the config is a config error") {
        write_features(tiny_features(), path);
        auto set = load_features(path);
        REQUIRE_THROWS_AS(make_dataset<float>(set, tiny_captions(), 7, 0), ConfigError);
    }
    SECTION("invalid box coordinates are rejected") {
        auto set = tiny_features();
        set.images[0].boxes[0] = 1.5f;
        write_features(set, path);
        REQUIRE_THROWS_AS(load_features(path), DataError);
    }
    std::filesystem::remove(path);
}

TEST_CASE("caption files round-trip", "[data_io]") {
    auto dir = std::filesystem::temp_directory_path();
    auto path = (dir / "parnet_caps.jsonl").string();
    auto caps = tiny_captions();
    write_captions(caps, path);
    auto loaded = load_captions(path);
    REQUIRE(loaded.size() == 2);
    REQUIRE(loaded[0].image_id == 10);
    REQUIRE(loaded[0].tokens == std::vector<std::size_t>{2, 3, 4});
    REQUIRE(loaded[1].caption_id == 1);

    SECTION("bad json names the line") {
        std::ofstream(path) << "{\"image_id\": 1}\n";
        REQUIRE_THROWS_MATCHES(load_captions(path), DataError,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring("line 1")));
    }
    std::filesystem::remove(path);
}

TEST_CASE("dataset validation", "[data_io]") {
    auto set = tiny_features();
    SECTION("valid join") {
        auto ds = make_dataset<float>(set, tiny_captions(), 3, 8);
        REQUIRE(ds.images.size() == 2);
        REQUIRE(ds.captions.size() == 2);
        REQUIRE(ds.image_pos(11) == 1);
        REQUIRE(ds.caption_pos(1) == 1);
    }
    SECTION("caption referencing an unknown image") {
        CaptionSet caps = {{99, 0, {2}}, {10, 1, {2}}, {11, 2, {2}}};
        REQUIRE_THROWS_AS(make_dataset<float>(set, caps, 3, 8), DataError);
    }
    SECTION("image without captions") {
        CaptionSet caps = {{10, 0, {2}}};
        REQUIRE_THROWS_AS(make_dataset<float>(set, caps, 3, 8), DataError);
    }
    SECTION("token beyond the vocabulary") {
        CaptionSet caps = {{10, 0, {2, 8}}, {11, 1, {2}}};
        REQUIRE_THROWS_AS(make_dataset<float>(set, caps, 3, 8), DataError);
    }
    SECTION("unknown lookups") {
        auto ds = make_dataset<float>(set, tiny_captions(), 3, 8);
        REQUIRE_THROWS_AS(ds.image_pos(1234), DataError);
        REQUIRE_THROWS_AS(ds.caption_pos(1234), DataError);
    }
}

TEST_CASE("synthetic generation is deterministic", "[data_io]") {
    SyntheticSpec spec;
    spec.scene_count = 10;
    spec.seed = 99;
    auto a = synth_generate(spec);
    auto b = synth_generate(spec);
    REQUIRE(a.features.images.size() == b.features.images.size());
    for (std::size_t i = 0; i < a.features.images.size(); ++i) {
        REQUIRE(a.features.images[i].features == b.features.images[i].features);
        REQUIRE(a.features.images[i].boxes == b.features.images[i].boxes);
    }
    for (std::size_t i = 0; i < a.captions.size(); ++i) {
        REQUIRE(a.captions[i].tokens == b.captions[i].tokens);
    }

    auto dir = std::filesystem::temp_directory_path();
    auto p1 = (dir / "parnet_synth_a.parf").string();
    auto p2 = (dir / "parnet_synth_b.parf").string();
    write_features(a.features, p1);
    write_features(b.features, p2);
    REQUIRE(file_bytes(p1) == file_bytes(p2));
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("synthetic scenes have the requested shape", "[data_io]") {
    SyntheticSpec spec;
    spec.scene_count = 32;
    spec.objects_per_scene = 3;
    spec.feature_dim = 16;
    auto data = synth_generate(spec);
    REQUIRE(data.features.images.size() == 32);
    REQUIRE(data.features.d_v == 16);
    for (const auto& im : data.features.images) REQUIRE(im.objects == 3);
    REQUIRE(data.captions.size() == 32);
    for (const auto& c : data.captions) {
        REQUIRE(!c.tokens.empty());
        for (std::size_t t : c.tokens) REQUIRE(t < data.vocab.size());
    }
    // join must validate cleanly
    REQUIRE_NOTHROW(make_dataset<float>(data.features, data.captions, 16, data.vocab.size()));
}

TEST_CASE("contrast pairs differ only in geometry", "[data_io]") {
    SyntheticSpec spec;
    spec.scene_count = 12;
    spec.paired = true;
    spec.noise_sigma = 0.0;
    auto data = synth_generate(spec);
    REQUIRE(data.features.images.size() == 12);
    for (std::size_t p = 0; p + 1 < 12; p += 2) {
        const auto& s1 = data.features.images[p];
        const auto& s2 = data.features.images[p + 1];
        REQUIRE(s1.features == s2.features);  // identical rows, identical order
        REQUIRE(s1.boxes != s2.boxes);
        const auto& c1 = data.captions[p].tokens;
        const auto& c2 = data.captions[p + 1].tokens;
        REQUIRE(c1 != c2);
        auto sorted1 = c1, sorted2 = c2;
        std::sort(sorted1.begin(), sorted1.end());
        std::sort(sorted2.begin(), sorted2.end());
        REQUIRE(sorted1 == sorted2);  // same words, different order
    }

    SECTION("with noise the paired features still match") {
        spec.noise_sigma = 0.05;
        auto noisy = synth_generate(spec);
        for (std::size_t p = 0; p + 1 < 12; p += 2) {
            REQUIRE(noisy.features.images[p].features ==
                    noisy.features.images[p + 1].features);
        }
    }
}

TEST_CASE("position-disabled encodings cannot tell contrast scenes apart", "[data_io]") {
    SyntheticSpec spec;
    spec.scene_count = 8;
    spec.paired = true;
    spec.noise_sigma = 0.0;
    spec.feature_dim = 16;
    auto data = synth_generate(spec);
    auto ds = make_dataset<double>(data.features, data.captions, 16, data.vocab.size());

    Config cfg;
    cfg.heads = 2;
    cfg.d_model = 16;
    cfg.d_p = 4;
    cfg.d_v = 16;
    cfg.d_e = 6;
    cfg.d_t = 10;
    cfg.vocab_size = static_cast<int>(data.vocab.size());
    cfg.position_enabled = false;
    ParNetModel<double> model(cfg);
    Rng rng(4);
    model.init_params(rng);

    Tape<double> tape;
    auto bind = model.bind(tape);
    for (std::size_t p = 0; p + 1 < 8; p += 2) {
        auto a = model.encode_image(tape, bind, ds.images[p]);
        auto b = model.encode_image(tape, bind, ds.images[p + 1]);
        REQUIRE(a.V_r.value() == b.V_r.value());  // bitwise equal
    }
}

TEST_CASE("synthetic spec validation", "[data_io]") {
    SyntheticSpec spec;
    spec.objects_per_scene = 1;
    REQUIRE_THROWS_AS(synth_generate(spec), ConfigError);
    spec = {};
    spec.templates = {"inside"};
    REQUIRE_THROWS_AS(synth_generate(spec), ConfigError);
    spec = {};
    spec.objects_per_scene = 2;
    spec.templates = {"between"};  // needs 3 objects
    REQUIRE_THROWS_AS(synth_generate(spec), ConfigError);
    REQUIRE_THROWS_AS(synthetic_spec_from_json(nlohmann::json{{"bogus", 1}}), ConfigError);
}
