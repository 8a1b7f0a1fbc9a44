#include <doctest.h>

#include <filesystem>
#include <random>

#include "mgm/errors.hpp"
#include "mgm/motion.hpp"

using namespace mgm;

namespace {

MotionSequence ramp(int frames, int dim, int fps = 20) {
    FrameMatrix m(frames, dim);
    for (int t = 0; t < frames; ++t)
        for (int c = 0; c < dim; ++c) m(t, c) = static_cast<float>(t * 0.01 + c);
    return MotionSequence(m, fps);
}

}  // namespace

TEST_CASE("motion rejects empty and non-finite input") {
    CHECK_THROWS_AS(MotionSequence(FrameMatrix(0, 3), 20), InvalidArgument);
    CHECK_THROWS_AS(MotionSequence(FrameMatrix(4, 0), 20), InvalidArgument);
    CHECK_THROWS_AS(MotionSequence(FrameMatrix::Zero(4, 2), 0), InvalidArgument);
    FrameMatrix bad = FrameMatrix::Zero(4, 2);
    bad(2, 1) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(MotionSequence(bad, 20), InvalidArgument);
}

TEST_CASE("snippet grid covers every frame with a short tail") {
    const auto grid = make_snippet_grid(142, 20, 0.5);
    CHECK(grid.snippet_frames == 10);
    REQUIRE(grid.size() == 15);
    CHECK(grid.boundaries.front() == std::pair{0, 10});
    CHECK(grid.boundaries.back() == std::pair{140, 142});
    int covered = 0;
    for (int i = 0; i < grid.size(); ++i) {
        const auto [a, b] = grid.boundaries[i];
        CHECK(b > a);
        CHECK(a == covered);
        covered = b;
    }
    CHECK(covered == 142);

    const auto exact = make_snippet_grid(196, 20, 0.5);
    CHECK(exact.size() == 20);
    CHECK(exact.boundaries.back() == std::pair{190, 196});
    CHECK(make_snippet_grid(40, 20, 0.5).size() == 4);
}

TEST_CASE("snippet duration shorter than a frame is rejected") {
    CHECK_THROWS_AS(snippet_frame_count(0.01, 20), InvalidArgument);
    CHECK_THROWS_AS(snippet_frame_count(0.0, 20), InvalidArgument);
    CHECK(snippet_frame_count(0.5, 20) == 10);
}

TEST_CASE("spans snap to snippet boundaries") {
    CHECK(snap_to_snippets({1.0, 2.5}, 0.5) == std::pair{2, 5});
    CHECK_THROWS_AS(snap_to_snippets({0.3, 1.0}, 0.5), InvalidArgument);
    CHECK_THROWS_AS(snap_to_snippets({1.0, 1.0}, 0.5), InvalidArgument);
    CHECK_THROWS_AS(snap_to_snippets({-0.5, 1.0}, 0.5), InvalidArgument);
    CHECK(span_from_snippets(2, 5, 0.5) == TimeSpan{1.0, 2.5});
}

TEST_CASE("slice keeps fps and feature width") {
    const auto m = ramp(142, 3);
    const auto s = slice_motion(m, {1.0, 2.0});
    CHECK(s.num_frames() == 20);
    CHECK(s.dim() == 3);
    CHECK(s.fps() == 20);
    CHECK(s.frames().row(0) == m.frames().row(20));

    // The last snippet holds only 2 frames; a span ending on its boundary is valid.
    const auto tail = slice_motion(m, {7.0, 7.5});
    CHECK(tail.num_frames() == 2);

    CHECK_THROWS_AS(slice_motion(m, {7.0, 8.0}), RangeError);
    CHECK(slice_motion(m, {7.0, 8.0}, 0.5, SpanPolicy::kClip).num_frames() == 2);
    CHECK_THROWS_AS(slice_motion(m, {7.5, 8.0}, 0.5, SpanPolicy::kClip), RangeError);
}

TEST_CASE("motion file round-trip is bit identical") {
    std::mt19937_64 rng(3);
    std::normal_distribution<float> n(0, 1);
    FrameMatrix f(37, 5);
    for (int i = 0; i < f.size(); ++i) f.data()[i] = n(rng);
    const MotionSequence m(f, 30);
    const auto bytes = encode_motion_file(m);
    CHECK(bytes.size() == 16 + 37 * 5 * 4);
    const auto back = decode_motion_file(bytes);
    CHECK(back == m);
    CHECK(encode_motion_file(back) == bytes);

    const auto path = std::filesystem::temp_directory_path() / "mgm_test_motion.mgm";
    write_motion(path, m);
    CHECK(read_motion(path) == m);
    std::filesystem::remove(path);
}

TEST_CASE("corrupt motion files report a byte offset") {
    const auto bytes = encode_motion_file(ramp(4, 2));

    auto magic = bytes;
    magic[0] = 'X';
    try {
        decode_motion_file(magic);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset() == 0);
    }

    auto cut = bytes;
    cut.resize(cut.size() - 3);
    CHECK_THROWS_AS(decode_motion_file(cut), FormatError);

    auto extra = bytes;
    extra.push_back(0);
    CHECK_THROWS_AS(decode_motion_file(extra), FormatError);

    auto nan = bytes;
    const float q = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(nan.data() + 16 + 4 * 3, &q, 4);
    try {
        decode_motion_file(nan);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset() == 28);
    }

    CHECK_THROWS_AS(read_motion("/nonexistent/motion.mgm"), DataError);
}
