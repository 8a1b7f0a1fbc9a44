#include "mgm/script.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "mgm/errors.hpp"

namespace mgm {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

}  // namespace

std::string serialize_script(const MotionScript& script) {
    std::string out;
    for (int i = 0; i < script.size(); ++i) {
        const std::string& s = script.snippets[i];
        if (s.find(kSepToken) != std::string::npos || s.find(kMotionlessToken) != std::string::npos ||
            s.find("###") != std::string::npos)
            throw InvalidArgument("snippet " + std::to_string(i) + " contains a reserved marker");
        if (trim(s).size() != s.size())
            throw InvalidArgument("snippet " + std::to_string(i) + " has surrounding whitespace");
        if (i) out += kSepToken;
        out += s.empty() ? std::string(kMotionlessToken) : s;
    }
    return out;
}

Parsed<MotionScript> parse_script(std::string_view text, double snippet_seconds, int fps) {
    Parsed<MotionScript> result;
    result.value.snippet_seconds = snippet_seconds;
    result.value.fps = fps;
    if (trim(text).empty()) {
        result.value.snippets.emplace_back();
        result.diagnostics.push_back({0, "empty script text"});
        return result;
    }
    std::size_t pos = 0;
    while (true) {
        const std::size_t next = text.find(kSepToken, pos);
        const std::string_view raw = text.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos);
        const std::string_view seg = trim(raw);
        if (seg.size() != raw.size() && !seg.empty())
            result.diagnostics.push_back({pos, "whitespace around separator trimmed"});
        if (seg == kMotionlessToken) {
            result.value.snippets.emplace_back();
        } else if (seg.empty()) {
            result.value.snippets.emplace_back();
            result.diagnostics.push_back(
                {pos, next == std::string_view::npos ? "trailing separator" : "bare empty segment"});
        } else {
            if (seg.find(kMotionlessToken) != std::string_view::npos)
                result.diagnostics.push_back({pos, "<Motionless> mixed with statement text"});
            result.value.snippets.emplace_back(seg);
        }
        if (next == std::string_view::npos) break;
        pos = next + kSepToken.size();
    }
    return result;
}

namespace {

std::string format_seconds(double v) {
    char buf[32];
    for (int decimals = 1; decimals <= 3; ++decimals) {
        std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
        if (std::abs(std::strtod(buf, nullptr) - v) < 1e-9) return buf;
    }
    return buf;
}

}  // namespace

std::string format_time_span(const TimeSpan& span) {
    if (!(span.start_seconds >= 0) || !(span.start_seconds < span.end_seconds))
        throw InvalidArgument("time span must satisfy 0 <= start < end");
    return "from " + format_seconds(span.start_seconds) + "s to " + format_seconds(span.end_seconds) + "s";
}

namespace {

class TimeParser {
public:
    explicit TimeParser(std::string_view text) : text_(text) {}

    void literal(std::string_view lit) {
        if (text_.substr(pos_, lit.size()) != lit)
            throw ParseError("expected '" + std::string(lit) + "'", pos_);
        pos_ += lit.size();
    }

    double number() {
        const std::size_t start = pos_;
        auto digits = [&] {
            const std::size_t from = pos_;
            while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
            if (pos_ == from) throw ParseError("expected digit", pos_);
        };
        digits();
        literal(".");
        digits();
        double v = 0;
        std::from_chars(text_.data() + start, text_.data() + pos_, v);
        return v;
    }

    void end() {
        if (pos_ != text_.size()) throw ParseError("unexpected trailing text", pos_);
    }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
};

}  // namespace

TimeSpan parse_time_span(std::string_view text) {
    TimeParser p(text);
    p.literal("from ");
    const double start = p.number();
    p.literal("s to ");
    const double end = p.number();
    p.literal("s");
    p.end();
    if (!(start < end)) throw ParseError("span start must precede its end", 0);
    TimeSpan span{start, end};
    if (format_time_span(span) != text) throw ParseError("non-canonical number formatting", 0);
    return span;
}

MotionScript script_window(const MotionScript& script, const TimeSpan& span) {
    const auto [first, last] = snap_to_snippets(span, script.snippet_seconds);
    if (last > script.size())
        throw RangeError("span " + format_time_span(span) + " exceeds script of " +
                         std::to_string(script.size()) + " snippets");
    MotionScript out;
    out.snippet_seconds = script.snippet_seconds;
    out.fps = script.fps;
    out.snippets.assign(script.snippets.begin() + first, script.snippets.begin() + last);
    return out;
}

TimeSpan locate_window(const MotionScript& script, const MotionScript& window) {
    const int n = script.size();
    const int m = window.size();
    for (int i = 0; m > 0 && i + m <= n; ++i) {
        if (std::equal(window.snippets.begin(), window.snippets.end(), script.snippets.begin() + i))
            return span_from_snippets(i, i + m, script.snippet_seconds);
    }
    throw LookupError("window not found in script");
}

}  // namespace mgm
