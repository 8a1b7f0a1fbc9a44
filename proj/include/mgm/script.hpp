#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "mgm/diagnostic.hpp"
#include "mgm/motion.hpp"

namespace mgm {

inline constexpr std::string_view kSepToken = "<SEP>";
inline constexpr std::string_view kMotionlessToken = "<Motionless>";

// Per-snippet body-part-movement text for a whole motion. An empty string
// marks a snippet without significant movement.
struct MotionScript {
    std::vector<std::string> snippets;
    double snippet_seconds = kDefaultSnippetSeconds;
    int fps = kDefaultFps;

    int size() const noexcept { return static_cast<int>(snippets.size()); }
    double duration_seconds() const noexcept { return size() * snippet_seconds; }

    friend bool operator==(const MotionScript& a, const MotionScript& b) {
        return a.snippets == b.snippets && a.snippet_seconds == b.snippet_seconds && a.fps == b.fps;
    }
};

// Joins statements with <SEP>, writing <Motionless> for empty snippets.
// Throws InvalidArgument naming the snippet index when a statement contains a
// reserved marker.
std::string serialize_script(const MotionScript& script);

// Inverse of serialize_script. Never throws; anomalies (bare empty segments,
// surrounding whitespace, empty input) become diagnostics.
Parsed<MotionScript> parse_script(std::string_view text, double snippet_seconds = kDefaultSnippetSeconds,
                                  int fps = kDefaultFps);

// "from {start}s to {end}s" with one decimal place (more only when the value
// needs it).
std::string format_time_span(const TimeSpan& span);

// Accepts the canonical form only. Throws ParseError with the byte position.
TimeSpan parse_time_span(std::string_view text);

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t position)
        : std::runtime_error(what + " at position " + std::to_string(position)), position_(position) {}
    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

// Snippets fully covered by `span`. Throws RangeError when the span reaches
// past the script.
MotionScript script_window(const MotionScript& script, const TimeSpan& span);

// Locates `window` as a contiguous run inside `script`; returns the span of
// the first match or throws LookupError.
TimeSpan locate_window(const MotionScript& script, const MotionScript& window);

}  // namespace mgm
