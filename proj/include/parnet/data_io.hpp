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

#ifndef PARNET_DATA_IO_HPP
#define PARNET_DATA_IO_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "parnet/binary_io.hpp"
#include "parnet/model.hpp"
#include "parnet/random.hpp"
#include "parnet/text_pipeline.hpp"

namespace parnet {

inline constexpr char kFeatureMagic[4] = {'P', 'A', 'R', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;

/// One image's payload exactly as stored on disk (f32 regardless of the
/// compute precision).
struct RawImage {
    std::uint64_t id = 0;
    std::uint32_t objects = 0;
    std::vector<float> features;  // objects x d_v, row-major
    std::vector<float> boxes;     // objects x 4, (x, y, w, h)
};

struct FeatureSet {
    std::uint32_t d_v = 0;
    std::vector<RawImage> images;

    const RawImage* find(std::uint64_t id) const {
        for (const auto& im : images)
            if (im.id == id) return &im;
        return nullptr;
    }
};

/// Feature container: magic "PARF", version u32, image count u64, d_v u32;
/// per image: id u64, N u32, V as N x d_v f32 LE, P as N x 4 f32 LE.
inline void write_features(const FeatureSet& set, const std::string& path) {
    auto out = open_for_write(path);
    ByteWriter w(out);
    w.bytes(kFeatureMagic, 4);
    w.u32(kFeatureVersion);
    w.u64(set.images.size());
    w.u32(set.d_v);
    for (const auto& im : set.images) {
        if (im.features.size() != static_cast<std::size_t>(im.objects) * set.d_v ||
            im.boxes.size() != static_cast<std::size_t>(im.objects) * 4) {
            throw DataError("image " + std::to_string(im.id) + " payload sizes disagree with N=" +
                            std::to_string(im.objects));
        }
        w.u64(im.id);
        w.u32(im.objects);
        for (float v : im.features) w.f32(v);
        for (float v : im.boxes) w.f32(v);
    }
    out.flush();
    if (!out) throw DataError("feature write failed: " + path);
}

inline FeatureSet load_features(const std::string& path) {
    auto in = open_for_read(path);
    ByteReader r(in, "feature file " + path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kFeatureMagic, 4) != 0) {
        throw FormatError("not a feature file (bad magic): " + path);
    }
    std::uint32_t version = r.u32();
    if (version != kFeatureVersion) {
        throw FormatError("unsupported feature file version " + std::to_string(version));
    }
    std::uint64_t count = r.u64();
    FeatureSet set;
    set.d_v = r.u32();
    if (set.d_v == 0) throw CorruptionError("feature width is zero", r.offset());
    set.images.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        RawImage im;
        im.id = r.u64();
        im.objects = r.u32();
        if (im.objects == 0) throw CorruptionError("image with zero objects", r.offset());
        im.features.resize(static_cast<std::size_t>(im.objects) * set.d_v);
        for (auto& v : im.features) v = r.f32();
        im.boxes.resize(static_cast<std::size_t>(im.objects) * 4);
        for (auto& v : im.boxes) v = r.f32();
        for (std::uint32_t o = 0; o < im.objects; ++o) {
            float x = im.boxes[o * 4], y = im.boxes[o * 4 + 1];
            if (!(x >= 0.f && x <= 1.f && y >= 0.f && y <= 1.f)) {
                throw DataError("image " + std::to_string(im.id) +
                                " has a box center outside [0,1]");
            }
        }
        set.images.push_back(std::move(im));
    }
    if (!r.at_eof()) throw CorruptionError("trailing bytes after last image", r.offset());
    return set;
}

struct Caption {
    std::uint64_t image_id = 0;
    std::uint64_t caption_id = 0;
    std::vector<std::size_t> tokens;
};

using CaptionSet = std::vector<Caption>;

/// Caption storage: one JSON record per line,
/// {"image_id": ..., "caption_id": ..., "tokens": [...]}.
inline void write_captions(const CaptionSet& captions, const std::string& path) {
    auto out = open_for_write(path);
    for (const auto& c : captions) {
        nlohmann::json j{{"image_id", c.image_id}, {"caption_id", c.caption_id},
                         {"tokens", c.tokens}};
        out << j.dump() << "\n";
    }
    out.flush();
    if (!out) throw DataError("caption write failed: " + path);
}

inline CaptionSet load_captions(const std::string& path) {
    auto in = open_for_read(path);
    CaptionSet captions;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            Caption c;
            c.image_id = j.at("image_id").get<std::uint64_t>();
            c.caption_id = j.at("caption_id").get<std::uint64_t>();
            c.tokens = j.at("tokens").get<std::vector<std::size_t>>();
            captions.push_back(std::move(c));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("caption file " + path + " line " + std::to_string(lineno) +
                            ": " + e.what());
        }
    }
    return captions;
}

/// In-memory dataset at the model's precision, with caption-to-image wiring
/// resolved and validated.
template <typename S>
struct Dataset {
    std::vector<std::uint64_t> image_ids;
    std::vector<ObjectSet<S>> images;
    CaptionSet captions;
    std::unordered_map<std::uint64_t, std::size_t> image_index;    // id -> position
    std::unordered_map<std::uint64_t, std::size_t> caption_index;  // id -> position

    std::size_t image_pos(std::uint64_t id) const {
        auto it = image_index.find(id);
        if (it == image_index.end())
            throw DataError("unknown image id " + std::to_string(id));
        return it->second;
    }
    std::size_t caption_pos(std::uint64_t id) const {
        auto it = caption_index.find(id);
        if (it == caption_index.end())
            throw DataError("unknown caption id " + std::to_string(id));
        return it->second;
    }
};

/// Join features and captions, validating referential integrity and token
/// range. `expected_d_v` of 0 skips the width check; `vocab_size` of 0
/// skips the token range check.
template <typename S>
Dataset<S> make_dataset(const FeatureSet& features, CaptionSet captions,
                        std::uint32_t expected_d_v = 0, std::size_t vocab_size = 0) {
    if (expected_d_v != 0 && features.d_v != expected_d_v) {
        throw ConfigError("feature width " + std::to_string(features.d_v) +
                          " does not match configured d_v " + std::to_string(expected_d_v));
    }
    Dataset<S> ds;
    for (const auto& im : features.images) {
        Tensor<S> f({im.objects, features.d_v});
        for (std::size_t i = 0; i < im.features.size(); ++i) f[i] = static_cast<S>(im.features[i]);
        Tensor<double> b({im.objects, 4});
        for (std::size_t i = 0; i < im.boxes.size(); ++i) b[i] = static_cast<double>(im.boxes[i]);
        if (ds.image_index.count(im.id))
            throw DataError("duplicate image id " + std::to_string(im.id));
        ds.image_index[im.id] = ds.images.size();
        ds.image_ids.push_back(im.id);
        ds.images.push_back(ObjectSet<S>{std::move(f), BoxMatrix(std::move(b))});
    }
    std::vector<bool> has_caption(ds.images.size(), false);
    for (const auto& c : captions) {
        auto it = ds.image_index.find(c.image_id);
        if (it == ds.image_index.end()) {
            throw DataError("caption " + std::to_string(c.caption_id) +
                            " references unknown image " + std::to_string(c.image_id));
        }
        has_caption[it->second] = true;
        if (ds.caption_index.count(c.caption_id))
            throw DataError("duplicate caption id " + std::to_string(c.caption_id));
        std::size_t pos = ds.caption_index.size();
        ds.caption_index[c.caption_id] = pos;
        if (vocab_size > 0) {
            for (std::size_t t : c.tokens) {
                if (t >= vocab_size) {
                    throw DataError("caption " + std::to_string(c.caption_id) + " token id " +
                                    std::to_string(t) + " out of vocabulary (" +
                                    std::to_string(vocab_size) + ")");
                }
            }
        }
    }
    for (std::size_t i = 0; i < has_caption.size(); ++i) {
        if (!has_caption[i]) {
            throw DataError("image " + std::to_string(ds.image_ids[i]) + " has no caption");
        }
    }
    ds.captions = std::move(captions);
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

/// Generator parameters. Generation is a pure function of this struct; the
/// same spec (seed included) reproduces byte-identical files.
struct SyntheticSpec {
    int object_vocab_size = 16;
    int scene_count = 32;
    int objects_per_scene = 3;
    std::vector<std::string> templates = {"left_of", "above", "between"};
    int feature_dim = 32;
    double noise_sigma = 0.01;
    /// When true, scenes come in contrast pairs (2i, 2i+1): identical object
    /// rows, rearranged boxes, captions that differ only in word order.
    bool paired = true;
    std::uint64_t seed = 7;
};

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "object_vocab_size") s.object_vocab_size = it.value().get<int>();
        else if (k == "scene_count") s.scene_count = it.value().get<int>();
        else if (k == "objects_per_scene") s.objects_per_scene = it.value().get<int>();
        else if (k == "templates") s.templates = it.value().get<std::vector<std::string>>();
        else if (k == "feature_dim") s.feature_dim = it.value().get<int>();
        else if (k == "noise_sigma") s.noise_sigma = it.value().get<double>();
        else if (k == "paired") s.paired = it.value().get<bool>();
        else if (k == "seed") s.seed = it.value().get<std::uint64_t>();
        else throw ConfigError("unknown synthetic spec key: " + k);
    }
    return s;
}

struct SyntheticData {
    FeatureSet features;
    CaptionSet captions;
    Vocabulary vocab;
};

namespace detail {

struct SceneTemplate {
    std::string name;
    int arity;
};

inline const std::vector<SceneTemplate>& known_templates() {
    static const std::vector<SceneTemplate> t = {
        {"left_of", 2}, {"above", 2}, {"between", 3}};
    return t;
}

}  // namespace detail

/// Build scenes of object prototypes placed to realize a spatial relation,
/// with template-sentence captions. Paired mode emits contrast pairs whose
/// feature rows are identical (noise included) and whose captions mention
/// the same words in a different order, so only box geometry separates them.
inline SyntheticData synth_generate(const SyntheticSpec& spec) {
    if (spec.objects_per_scene < 2) throw ConfigError("objects_per_scene must be at least 2");
    if (spec.object_vocab_size < spec.objects_per_scene) {
        throw ConfigError("object_vocab_size must cover objects_per_scene");
    }
    if (spec.scene_count < 1) throw ConfigError("scene_count must be positive");
    if (spec.feature_dim < 1) throw ConfigError("feature_dim must be positive");
    if (spec.templates.empty()) throw ConfigError("at least one template required");
    std::vector<detail::SceneTemplate> templates;
    for (const auto& name : spec.templates) {
        bool found = false;
        for (const auto& t : detail::known_templates()) {
            if (t.name == name) {
                if (t.arity > spec.objects_per_scene) {
                    throw ConfigError("template " + name + " needs " + std::to_string(t.arity) +
                                      " objects per scene");
                }
                templates.push_back(t);
                found = true;
            }
        }
        if (!found) throw ConfigError("unknown template: " + name);
    }

    Rng rng(spec.seed);

    // Fixed grammar words, then object names.
    std::vector<std::string> words = {"is", "left", "of", "above", "between", "and"};
    std::vector<std::string> names;
    for (int i = 0; i < spec.object_vocab_size; ++i) names.push_back("obj" + std::to_string(i));
    std::vector<std::string> all = words;
    all.insert(all.end(), names.begin(), names.end());
    Vocabulary vocab = Vocabulary::from_tokens(all);

    // Unit-norm prototype features per vocabulary entry.
    std::vector<std::vector<float>> prototypes(spec.object_vocab_size);
    for (auto& proto : prototypes) {
        proto.resize(spec.feature_dim);
        double norm = 0.0;
        for (auto& v : proto) {
            double d = rng.normal();
            v = static_cast<float>(d);
            norm += d * d;
        }
        norm = std::sqrt(norm);
        for (auto& v : proto) v = static_cast<float>(v / norm);
    }

    SyntheticData out;
    out.vocab = vocab;
    out.features.d_v = static_cast<std::uint32_t>(spec.feature_dim);

    auto jitter = [&rng](double lo, double hi) { return rng.uniform(lo, hi); };

    // Box placements per template. Positions use image conventions
    // (y grows downward, so "above" means smaller y).
    auto place = [&](const std::string& tmpl, bool swapped,
                     std::vector<std::array<double, 2>>& centers) {
        if (tmpl == "left_of") {
            std::array<double, 2> a{0.25 + jitter(-0.05, 0.05), 0.5 + jitter(-0.1, 0.1)};
            std::array<double, 2> b{0.75 + jitter(-0.05, 0.05), 0.5 + jitter(-0.1, 0.1)};
            centers = swapped ? std::vector<std::array<double, 2>>{b, a}
                              : std::vector<std::array<double, 2>>{a, b};
        } else if (tmpl == "above") {
            std::array<double, 2> a{0.5 + jitter(-0.1, 0.1), 0.25 + jitter(-0.05, 0.05)};
            std::array<double, 2> b{0.5 + jitter(-0.1, 0.1), 0.75 + jitter(-0.05, 0.05)};
            centers = swapped ? std::vector<std::array<double, 2>>{b, a}
                              : std::vector<std::array<double, 2>>{a, b};
        } else {  // between: first object sits between the other two
            std::array<double, 2> mid{0.5 + jitter(-0.03, 0.03), 0.5 + jitter(-0.1, 0.1)};
            std::array<double, 2> lft{0.15 + jitter(-0.05, 0.05), 0.5 + jitter(-0.1, 0.1)};
            std::array<double, 2> rgt{0.85 + jitter(-0.05, 0.05), 0.5 + jitter(-0.1, 0.1)};
            centers = swapped ? std::vector<std::array<double, 2>>{lft, mid, rgt}
                              : std::vector<std::array<double, 2>>{mid, lft, rgt};
        }
    };

    auto caption_words = [&](const std::string& tmpl,
                             const std::vector<int>& ids) -> std::vector<std::string> {
        if (tmpl == "left_of") return {names[ids[0]], "is", "left", "of", names[ids[1]]};
        if (tmpl == "above") return {names[ids[0]], "is", "above", names[ids[1]]};
        return {names[ids[0]], "is", "between", names[ids[1]], "and", names[ids[2]]};
    };

    std::uint64_t next_id = 0;
    auto emit_scene = [&](const std::vector<int>& object_ids,
                          const std::vector<std::vector<float>>& noisy,
                          const std::string& tmpl, bool swapped) {
        // Relation participants come first in the row order; distractors after.
        std::vector<std::array<double, 2>> centers;
        place(tmpl, swapped, centers);
        RawImage im;
        im.id = next_id;
        im.objects = static_cast<std::uint32_t>(object_ids.size());
        for (std::size_t o = 0; o < object_ids.size(); ++o) {
            im.features.insert(im.features.end(), noisy[o].begin(), noisy[o].end());
            double x, y;
            if (o < centers.size()) {
                x = centers[o][0];
                y = centers[o][1];
            } else {
                x = jitter(0.05, 0.95);
                y = jitter(0.05, 0.95);
            }
            im.boxes.push_back(static_cast<float>(x));
            im.boxes.push_back(static_cast<float>(y));
            im.boxes.push_back(static_cast<float>(0.1 + jitter(0.0, 0.1)));
            im.boxes.push_back(static_cast<float>(0.1 + jitter(0.0, 0.1)));
        }
        out.features.images.push_back(std::move(im));

        std::vector<int> mentioned;
        int arity = 0;
        for (const auto& t : detail::known_templates())
            if (t.name == tmpl) arity = t.arity;
        for (int a = 0; a < arity; ++a) mentioned.push_back(object_ids[a]);
        if (swapped) std::swap(mentioned[0], mentioned[1]);
        Caption cap;
        cap.image_id = next_id;
        cap.caption_id = next_id;
        cap.tokens = vocab.encode(caption_words(tmpl, mentioned));
        out.captions.push_back(std::move(cap));
        ++next_id;
    };

    int scenes_left = spec.scene_count;
    while (scenes_left > 0) {
        const auto& tmpl = templates[rng.index(templates.size())];
        // distinct object ids per scene
        std::vector<int> pool(spec.object_vocab_size);
        for (int i = 0; i < spec.object_vocab_size; ++i) pool[i] = i;
        rng.shuffle(pool);
        std::vector<int> object_ids(pool.begin(), pool.begin() + spec.objects_per_scene);
        std::vector<std::vector<float>> noisy(object_ids.size());
        for (std::size_t o = 0; o < object_ids.size(); ++o) {
            noisy[o] = prototypes[object_ids[o]];
            if (spec.noise_sigma > 0.0) {
                for (auto& v : noisy[o])
                    v = static_cast<float>(v + rng.normal(0.0, spec.noise_sigma));
            }
        }
        if (spec.paired && scenes_left >= 2) {
            emit_scene(object_ids, noisy, tmpl.name, false);
            emit_scene(object_ids, noisy, tmpl.name, true);
            scenes_left -= 2;
        } else {
            emit_scene(object_ids, noisy, tmpl.name, false);
            scenes_left -= 1;
        }
    }
    return out;
}

}  // namespace parnet

#endif  // PARNET_DATA_IO_HPP
