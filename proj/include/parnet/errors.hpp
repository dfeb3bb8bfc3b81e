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

#ifndef PARNET_ERRORS_HPP
#define PARNET_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace parnet {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape or rank mismatch between tensors.
struct DimensionError : Error {
    using Error::Error;
};

/// A file does not look like the expected container (bad magic/version).
struct FormatError : Error {
    using Error::Error;
};

/// A container is recognizable but cut short or internally inconsistent.
struct CorruptionError : Error {
    CorruptionError(const std::string& msg, std::size_t offset)
        : Error(msg + " (at byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
    std::size_t byte_offset;
};

/// Configuration contradicts itself or the data it is applied to.
struct ConfigError : Error {
    using Error::Error;
};

/// Dataset-level validation failure (unknown ids, out-of-range tokens, ...).
struct DataError : Error {
    using Error::Error;
};

/// Non-finite value where a finite one is required.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace parnet

#endif  // PARNET_ERRORS_HPP
