#include "mgm/motion.hpp"

#include <cmath>
#include <fstream>
#include <iterator>

#include "mgm/binary_io.hpp"
#include "mgm/errors.hpp"

namespace mgm {

MotionSequence::MotionSequence(FrameMatrix frames, int fps) : frames_(std::move(frames)), fps_(fps) {
    if (frames_.rows() < 1 || frames_.cols() < 1)
        throw InvalidArgument("motion must have at least one frame and one feature");
    if (fps_ < 1) throw InvalidArgument("fps must be positive, got " + std::to_string(fps_));
    if (!frames_.allFinite()) throw InvalidArgument("motion contains non-finite values");
}

namespace {

int snap_index(double seconds, double snippet_seconds, const char* which) {
    const double q = seconds / snippet_seconds;
    const double r = std::round(q);
    if (std::abs(q - r) > 1e-6)
        throw InvalidArgument(std::string("span ") + which + " " + std::to_string(seconds) +
                              "s is not on a snippet boundary");
    return static_cast<int>(r);
}

}  // namespace

std::pair<int, int> snap_to_snippets(const TimeSpan& span, double snippet_seconds) {
    if (!(snippet_seconds > 0)) throw InvalidArgument("snippet duration must be positive");
    const int first = snap_index(span.start_seconds, snippet_seconds, "start");
    const int last = snap_index(span.end_seconds, snippet_seconds, "end");
    if (first < 0 || first >= last)
        throw InvalidArgument("span must satisfy 0 <= start < end");
    return {first, last};
}

TimeSpan span_from_snippets(int first, int last, double snippet_seconds) {
    if (first < 0 || first >= last) throw InvalidArgument("snippet range must satisfy 0 <= first < last");
    return {first * snippet_seconds, last * snippet_seconds};
}

int snippet_frame_count(double snippet_seconds, int fps) {
    if (!(snippet_seconds > 0)) throw InvalidArgument("snippet duration must be positive");
    if (fps < 1) throw InvalidArgument("fps must be positive");
    const auto frames = static_cast<int>(std::lround(snippet_seconds * fps));
    if (frames < 1)
        throw InvalidArgument("snippet of " + std::to_string(snippet_seconds) +
                              "s is shorter than one frame at " + std::to_string(fps) + " fps");
    return frames;
}

std::pair<int, int> SnippetGrid::frame_range(int first, int last) const {
    if (first < 0 || first >= last || first >= size())
        throw RangeError("snippet range [" + std::to_string(first) + ", " + std::to_string(last) +
                         ") outside grid of " + std::to_string(size()));
    const int end = std::min(last, size());
    return {boundaries[first].first, boundaries[end - 1].second};
}

SnippetGrid make_snippet_grid(int num_frames, int fps, double snippet_seconds) {
    if (num_frames < 1) throw InvalidArgument("grid needs at least one frame");
    SnippetGrid grid;
    grid.snippet_seconds = snippet_seconds;
    grid.fps = fps;
    grid.snippet_frames = snippet_frame_count(snippet_seconds, fps);
    grid.num_frames = num_frames;
    for (int start = 0; start < num_frames; start += grid.snippet_frames)
        grid.boundaries.emplace_back(start, std::min(start + grid.snippet_frames, num_frames));
    return grid;
}

SnippetGrid make_snippet_grid(const MotionSequence& motion, double snippet_seconds) {
    return make_snippet_grid(motion.num_frames(), motion.fps(), snippet_seconds);
}

MotionSequence slice_motion(const MotionSequence& motion, const TimeSpan& span,
                            double snippet_seconds, SpanPolicy policy) {
    const SnippetGrid grid = make_snippet_grid(motion, snippet_seconds);
    auto [first, last] = snap_to_snippets(span, snippet_seconds);
    if (first >= grid.size())
        throw RangeError("span starts at " + std::to_string(span.start_seconds) +
                         "s, past the motion end");
    if (last > grid.size()) {
        if (policy == SpanPolicy::kStrict)
            throw RangeError("span ends at " + std::to_string(span.end_seconds) +
                             "s, past the last snippet boundary");
        last = grid.size();
    }
    const auto [begin, end] = grid.frame_range(first, last);
    return MotionSequence(motion.frames().middleRows(begin, end - begin), motion.fps());
}

std::vector<std::uint8_t> encode_motion_file(const MotionSequence& motion) {
    ByteWriter w;
    w.magic("MGM1");
    w.u32(static_cast<std::uint32_t>(motion.fps()));
    w.u32(static_cast<std::uint32_t>(motion.num_frames()));
    w.u32(static_cast<std::uint32_t>(motion.dim()));
    w.f32s(motion.frames().data(), static_cast<std::size_t>(motion.frames().size()));
    return w.take();
}

MotionSequence decode_motion_file(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    r.expect_magic("MGM1");
    const auto fps = r.u32("fps");
    const auto frames = r.u32("frame count");
    const auto dim = r.u32("feature dim");
    if (fps < 1) throw FormatError("fps must be positive", 4);
    if (frames < 1 || dim < 1) throw FormatError("empty motion shape", 8);
    const std::size_t count = std::size_t{frames} * dim;
    const std::size_t payload_at = r.pos();
    r.need(count * sizeof(float), "frame payload");
    FrameMatrix m(frames, dim);
    r.f32s(m.data(), count, "frame payload");
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::isfinite(m.data()[i]))
            throw FormatError("non-finite frame value", payload_at + i * sizeof(float));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after frame payload", r.pos());
    return MotionSequence(std::move(m), static_cast<int>(fps));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + path.string());
}

void write_motion(const std::filesystem::path& path, const MotionSequence& motion) {
    write_file_bytes(path, encode_motion_file(motion));
}

MotionSequence read_motion(const std::filesystem::path& path) {
    return decode_motion_file(read_file_bytes(path));
}

}  // namespace mgm
