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

#ifndef PARNET_BINARY_IO_HPP
#define PARNET_BINARY_IO_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "parnet/errors.hpp"

namespace parnet {

/// Little-endian binary writer over a stream.
class ByteWriter {
  public:
    explicit ByteWriter(std::ostream& out) : out_(out) {}

    void bytes(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }

    void u32(std::uint32_t v) { scalar(v); }
    void u64(std::uint64_t v) { scalar(v); }
    void f32(float v) { scalar_bits<std::uint32_t>(v); }
    void f64(double v) { scalar_bits<std::uint64_t>(v); }

    void string(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

  private:
    template <typename U>
    void le(U v) {
        unsigned char buf[sizeof(U)];
        for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
        bytes(buf, sizeof(U));
    }
    template <typename U>
    void scalar(U v) {
        le(v);
    }
    template <typename Bits, typename F>
    void scalar_bits(F v) {
        Bits b;
        std::memcpy(&b, &v, sizeof(F));
        le(b);
    }

    std::ostream& out_;
};

/// Little-endian binary reader that tracks its byte offset for error
/// reporting; a short read raises CorruptionError at the failing offset.
class ByteReader {
  public:
    explicit ByteReader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

    std::size_t offset() const { return offset_; }

    bool at_eof() {
        return in_.peek() == std::char_traits<char>::eof();
    }

    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw CorruptionError(what_ + ": truncated", offset_);
        }
        offset_ += n;
    }

    std::uint32_t u32() { return le<std::uint32_t>(); }
    std::uint64_t u64() { return le<std::uint64_t>(); }
    float f32() { return bits<float, std::uint32_t>(); }
    double f64() { return bits<double, std::uint64_t>(); }

    std::string string(std::size_t max_len = 1 << 20) {
        std::uint32_t n = u32();
        if (n > max_len) throw CorruptionError(what_ + ": implausible string length", offset_);
        std::string s(n, '\0');
        if (n) bytes(s.data(), n);
        return s;
    }

  private:
    template <typename U>
    U le() {
        unsigned char buf[sizeof(U)];
        bytes(buf, sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
        return v;
    }
    template <typename F, typename Bits>
    F bits() {
        Bits b = le<Bits>();
        F v;
        std::memcpy(&v, &b, sizeof(F));
        return v;
    }

    std::istream& in_;
    std::string what_;
    std::size_t offset_ = 0;
};

inline std::ofstream open_for_write(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    return out;
}

inline std::ifstream open_for_read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open for reading: " + path);
    return in;
}

}  // namespace parnet

#endif  // PARNET_BINARY_IO_HPP
