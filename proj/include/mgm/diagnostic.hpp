#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mgm {

// A recoverable anomaly found while reading model output or external text.
// `position` is a byte offset for text inputs and a token index for streams.
struct Diagnostic {
    std::size_t position = 0;
    std::string message;
};

template <typename T>
struct Parsed {
    T value;
    std::vector<Diagnostic> diagnostics;
};

}  // namespace mgm
