#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace mgm {

using FrameMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kDefaultFps = 20;
inline constexpr int kDefaultMaxFrames = 196;
inline constexpr double kDefaultSnippetSeconds = 0.5;
// Feature width of the HumanML3D vector representation.
inline constexpr int kHumanML3DFeatureDim = 263;

// T frames x d features sampled at a fixed frame rate. Immutable once built;
// the constructor rejects empty shapes, fps < 1 and non-finite values.
class MotionSequence {
public:
    MotionSequence(FrameMatrix frames, int fps);

    const FrameMatrix& frames() const noexcept { return frames_; }
    int fps() const noexcept { return fps_; }
    int num_frames() const noexcept { return static_cast<int>(frames_.rows()); }
    int dim() const noexcept { return static_cast<int>(frames_.cols()); }
    double duration_seconds() const noexcept {
        return static_cast<double>(num_frames()) / fps_;
    }

    friend bool operator==(const MotionSequence& a, const MotionSequence& b) {
        return a.fps_ == b.fps_ && a.frames_.rows() == b.frames_.rows() &&
               a.frames_.cols() == b.frames_.cols() && a.frames_ == b.frames_;
    }

private:
    FrameMatrix frames_;
    int fps_;
};

// A half-open interval in seconds. Canonical spans sit on snippet boundaries.
struct TimeSpan {
    double start_seconds = 0.0;
    double end_seconds = 0.0;

    double length() const noexcept { return end_seconds - start_seconds; }
    friend bool operator==(const TimeSpan&, const TimeSpan&) = default;
};

// Snippet index range [first, last) of a boundary-snapped span. Throws
// InvalidArgument when either end is not a multiple of `snippet_seconds` or
// when start >= end.
std::pair<int, int> snap_to_snippets(const TimeSpan& span, double snippet_seconds);

TimeSpan span_from_snippets(int first, int last, double snippet_seconds);

// Fixed-interval partition of frames [0, T) into contiguous snippets. Every
// snippet has `snippet_frames` frames except possibly the last, which is
// shorter but never empty.
struct SnippetGrid {
    double snippet_seconds = kDefaultSnippetSeconds;
    int fps = kDefaultFps;
    int snippet_frames = 0;
    int num_frames = 0;
    std::vector<std::pair<int, int>> boundaries;

    int size() const noexcept { return static_cast<int>(boundaries.size()); }

    // Frame range covered by snippets [first, last), clipped to the motion end.
    std::pair<int, int> frame_range(int first, int last) const;
};

int snippet_frame_count(double snippet_seconds, int fps);

SnippetGrid make_snippet_grid(int num_frames, int fps, double snippet_seconds);
SnippetGrid make_snippet_grid(const MotionSequence& motion, double snippet_seconds);

enum class SpanPolicy {
    // Span must lie on the grid; the last snippet may extend past T.
    kStrict,
    // Snippets past the motion end are clipped away (model-produced spans).
    kClip,
};

// Frames of the snippets covered by `span`. fps and d are preserved.
MotionSequence slice_motion(const MotionSequence& motion, const TimeSpan& span,
                            double snippet_seconds = kDefaultSnippetSeconds,
                            SpanPolicy policy = SpanPolicy::kStrict);

// Binary motion file: "MGM1", u32 fps, u32 T, u32 d, T*d float32 row-major,
// all little-endian.
std::vector<std::uint8_t> encode_motion_file(const MotionSequence& motion);
MotionSequence decode_motion_file(const std::vector<std::uint8_t>& bytes);

void write_motion(const std::filesystem::path& path, const MotionSequence& motion);
MotionSequence read_motion(const std::filesystem::path& path);

}  // namespace mgm
