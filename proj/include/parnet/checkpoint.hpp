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

#ifndef PARNET_CHECKPOINT_HPP
#define PARNET_CHECKPOINT_HPP

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "parnet/binary_io.hpp"
#include "parnet/config.hpp"
#include "parnet/training.hpp"

namespace parnet {

inline constexpr char kCheckpointMagic[4] = {'P', 'N', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Checkpoint container: magic "PNCK", version u32, a length-prefixed UTF-8
/// JSON header {"config": ..., "epoch": ..., "rng_state": ...}, then named
/// tensors until end of file. Tensor payloads are little-endian reals at the
/// width declared by config.precision, so a write/load cycle is bit-exact.
template <typename S>
void save_checkpoint(const std::string& path, const Snapshot<S>& snap) {
    auto out = open_for_write(path);
    ByteWriter w(out);
    w.bytes(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    nlohmann::json header{{"config", config_to_json(snap.config)},
                          {"epoch", snap.epoch},
                          {"rng_state", snap.rng_state}};
    w.string(header.dump());
    const bool wide = snap.config.precision == "f64";
    for (const auto& [name, tensor] : snap.tensors) {
        w.string(name);
        w.u32(static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t d = 0; d < tensor.rank(); ++d) w.u64(tensor.extent(d));
        for (const S& v : tensor.data()) {
            if (wide) {
                w.f64(static_cast<double>(v));
            } else {
                w.f32(static_cast<float>(v));
            }
        }
    }
    out.flush();
    if (!out) throw DataError("checkpoint write failed: " + path);
}

/// Read just the header, e.g. to pick the load precision.
inline Config peek_checkpoint_config(const std::string& path) {
    auto in = open_for_read(path);
    ByteReader r(in, "checkpoint " + path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw FormatError("not a checkpoint file (bad magic): " + path);
    }
    std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.string());
    } catch (const nlohmann::json::exception&) {
        throw CorruptionError("checkpoint header is not valid JSON", r.offset());
    }
    if (!header.contains("config")) throw FormatError("checkpoint header lacks config");
    return config_from_json(header.at("config"));
}

template <typename S>
Snapshot<S> load_checkpoint(const std::string& path) {
    auto in = open_for_read(path);
    ByteReader r(in, "checkpoint " + path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw FormatError("not a checkpoint file (bad magic): " + path);
    }
    std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.string());
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError("checkpoint header is not valid JSON", r.offset());
    }
    Snapshot<S> snap;
    if (!header.contains("config")) throw FormatError("checkpoint header lacks config");
    snap.config = config_from_json(header.at("config"));
    snap.epoch = header.value("epoch", 0);
    snap.rng_state = header.value("rng_state", std::string());
    const bool wide = snap.config.precision == "f64";
    while (!r.at_eof()) {
        std::string name = r.string();
        std::uint32_t rank = r.u32();
        if (rank > 8) throw CorruptionError("implausible tensor rank", r.offset());
        std::vector<std::size_t> shape(rank);
        std::size_t count = 1;
        for (auto& d : shape) {
            d = static_cast<std::size_t>(r.u64());
            count *= d;
        }
        std::vector<S> data(count);
        for (auto& v : data) v = wide ? static_cast<S>(r.f64()) : static_cast<S>(r.f32());
        snap.tensors.emplace_back(std::move(name), Tensor<S>(std::move(shape), std::move(data)));
    }
    return snap;
}

}  // namespace parnet

#endif  // PARNET_CHECKPOINT_HPP
