#include <doctest.h>

#include "mgm/errors.hpp"
#include "mgm/script.hpp"
#include "support.hpp"

using namespace mgm;

TEST_CASE("empty snippets serialize as <Motionless>") {
    MotionScript s;
    s.snippets = {"raise your left arm", "", "bend your right knee"};
    const auto text = serialize_script(s);
    CHECK(text == "raise your left arm<SEP><Motionless><SEP>bend your right knee");
    const auto back = parse_script(text);
    CHECK(back.value == s);
    CHECK(back.diagnostics.empty());
}

TEST_CASE("script round-trip on random scripts") {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 300; ++i) {
        const auto s = testing::random_script(rng, i % 3);
        const auto back = parse_script(serialize_script(s));
        REQUIRE(back.value == s);
        CHECK(back.diagnostics.empty());
    }
}

TEST_CASE("reserved markers inside a statement are rejected") {
    MotionScript s;
    s.snippets = {"ok", "bad <SEP> text"};
    CHECK_THROWS_WITH_AS(serialize_script(s), doctest::Contains("snippet 1"), InvalidArgument);
    s.snippets = {"<Motionless>"};
    CHECK_THROWS_AS(serialize_script(s), InvalidArgument);
    s.snippets = {" padded"};
    CHECK_THROWS_AS(serialize_script(s), InvalidArgument);
}

TEST_CASE("malformed scripts parse with diagnostics") {
    auto p = parse_script("walk<SEP><SEP>run");
    CHECK(p.value.snippets == std::vector<std::string>{"walk", "", "run"});
    CHECK(p.diagnostics.size() == 1);

    p = parse_script("walk <SEP> run");
    CHECK(p.value.snippets == std::vector<std::string>{"walk", "run"});
    CHECK_FALSE(p.diagnostics.empty());

    p = parse_script("");
    CHECK(p.value.size() == 1);
    CHECK_FALSE(p.diagnostics.empty());

    p = parse_script("walk<SEP>");
    CHECK(p.value.size() == 2);
    CHECK_FALSE(p.diagnostics.empty());
}

TEST_CASE("time spans use one decimal") {
    CHECK(format_time_span({0.0, 2.5}) == "from 0.0s to 2.5s");
    CHECK(format_time_span({1.0, 4.0}) == "from 1.0s to 4.0s");
    CHECK(format_time_span({0.25, 0.5}) == "from 0.25s to 0.5s");
    CHECK_THROWS_AS(format_time_span({2.0, 1.0}), InvalidArgument);
    for (int a = 0; a < 20; ++a)
        for (int b = a + 1; b <= 20; ++b) {
            const auto span = span_from_snippets(a, b, 0.5);
            CHECK(parse_time_span(format_time_span(span)) == span);
        }
}

TEST_CASE("non-canonical time spans are rejected with a position") {
    CHECK_THROWS_AS(parse_time_span("from 1s to 2.0s"), ParseError);
    CHECK_THROWS_AS(parse_time_span("from 1.00s to 2.0s"), ParseError);
    CHECK_THROWS_AS(parse_time_span("from 2.0s to 1.0s"), ParseError);
    CHECK_THROWS_AS(parse_time_span("from 1.0s to 2.0s "), ParseError);
    try {
        parse_time_span("from 1.0s till 2.0s");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.position() == 8);
    }
}

TEST_CASE("window and locate are inverse on unique scripts") {
    MotionScript s;
    s.snippets = {"a", "b", "", "c", "d"};
    const TimeSpan span{0.5, 2.0};
    const auto w = script_window(s, span);
    CHECK(w.snippets == std::vector<std::string>{"b", "", "c"});
    CHECK(locate_window(s, w) == span);
    CHECK_THROWS_AS(script_window(s, {2.0, 3.0}), RangeError);
    MotionScript missing;
    missing.snippets = {"c", "b"};
    CHECK_THROWS_AS(locate_window(s, missing), LookupError);
}
