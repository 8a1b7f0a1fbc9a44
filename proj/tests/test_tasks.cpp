#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mgm/errors.hpp"
#include "mgm/tasks.hpp"
#include "support.hpp"

using namespace mgm;

namespace {

const char* kLocalize = "(Motion Script, Snippet Motion Script)-to-Time";

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("registry holds 12 coarse and 16 fine tasks") {
    const auto& reg = TaskRegistry::builtin();
    CHECK(reg.size() == 28);
    int coarse = 0, fine = 0;
    for (const auto& t : reg.tasks()) (t.granularity == Granularity::kCoarse ? coarse : fine)++;
    CHECK(coarse == 12);
    CHECK(fine == 16);
    CHECK_THROWS_AS(reg.find("Motion-to-Dance"), LookupError);
}

TEST_CASE("builtin registry matches the checked-in manifest") {
    const auto text = read_text(std::string(MGM_SOURCE_DIR) + "/data/tasks.jsonl");
    REQUIRE_FALSE(text.empty());
    const auto file = TaskRegistry::parse(text);
    const auto& reg = TaskRegistry::builtin();
    REQUIRE(file.size() == reg.size());
    for (int i = 0; i < reg.size(); ++i) {
        const auto& a = file.tasks()[i];
        const auto& b = reg.tasks()[i];
        CHECK(a.name == b.name);
        CHECK(a.granularity == b.granularity);
        CHECK(a.input_types == b.input_types);
        CHECK(a.templates == b.templates);
        CHECK(a.placeholders == b.placeholders);
        CHECK(a.output_schema == b.output_schema);
    }
}

TEST_CASE("transcribed templates") {
    const auto& reg = TaskRegistry::builtin();
    const auto& t2m = reg.find("Text-to-Motion");
    CHECK(std::find(t2m.templates.begin(), t2m.templates.end(),
                    "Give me a motion that represents the idea of [caption].") != t2m.templates.end());
    CHECK(reg.find("Motion-to-Text").templates[0] == "Describe the motion portrayed in [motion] using words.");
    const auto& loc = reg.find(kLocalize);
    CHECK(loc.templates[0] ==
          "Determine the start and end times of the snippet of the motion script within the whole motion script.\n"
          "### Whole Motion Script ###\n[motion script]\n### Snippet Motion Script ###\n[snippet motion script]");
    CHECK(loc.output_schema == "[time]");
    CHECK(reg.find("(Time, Motion Script)-to-Snippet Motion Script").templates[1] ==
          "Detail [time] in the scope of the whole motion script.\n### Whole Motion Script ###\n[motion script]");
}

TEST_CASE("manifest validation") {
    CHECK_THROWS_AS(TaskRegistry::parse("not json"), SchemaError);
    CHECK_THROWS_AS(TaskRegistry::parse(R"({"name": "x"})"), SchemaError);
    const std::string bad_placeholder =
        R"({"name": "x", "granularity": "coarse", "input_types": ["text"], "templates": ["Do [caption]."], )"
        R"("placeholders": ["[motion]"], "output_schema": "[motion]"})";
    CHECK_THROWS_AS(TaskRegistry::parse(bad_placeholder), SchemaError);
    const std::string script_only =
        R"({"name": "x", "granularity": "fine", "input_types": ["text"], "templates": ["Do [motion script]."], )"
        R"("placeholders": ["[motion script]", "[motion]"], "output_schema": "[motion]"})";
    CHECK_THROWS_AS(TaskRegistry::parse(script_only), SchemaError);
}

TEST_CASE("no task generates motion from a script alone") {
    for (const auto& t : TaskRegistry::builtin().tasks())
        if (t.motion_output() && t.needs_script()) CHECK(t.needs_caption());
}

TEST_CASE("every template instantiates without residual placeholders") {
    const auto samples = testing::synthetic_samples(6, 21);
    const auto& reg = TaskRegistry::builtin();
    for (const auto& task : reg.tasks()) {
        for (int t = 0; t < static_cast<int>(task.templates.size()); ++t) {
            InstantiateOptions o;
            o.template_index = t;
            for (const auto& s : samples) {
                const auto p = instantiate(task, s, 5 + t, o);
                INFO(task.name << " template " << t);
                CHECK_FALSE(has_unresolved_placeholder(p.input));
                CHECK_FALSE(has_unresolved_placeholder(p.target));
                CHECK_FALSE(p.target.empty());
                CHECK(p.template_index == t);
                if (task.uses(kTime)) CHECK(p.span.has_value());
            }
        }
    }
}

TEST_CASE("localization prompts are consistent with their targets") {
    const auto samples = testing::synthetic_samples(20, 3, true);
    const auto& task = TaskRegistry::builtin().find(kLocalize);
    for (const auto& s : samples) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto p = instantiate(task, s, seed);
            REQUIRE(p.span);
            CHECK(p.target == format_time_span(*p.span));
            const auto whole = prompt_block(p.input, "Whole Motion Script");
            const auto snippet = prompt_block(p.input, "Snippet Motion Script");
            REQUIRE(whole);
            REQUIRE(snippet);
            CHECK(*whole == serialize_script(*s.script));
            CHECK(*snippet == serialize_script(script_window(*s.script, *p.span)));
            CHECK(locate_window(*s.script, parse_script(*snippet).value) == *p.span);
        }
    }
}

TEST_CASE("a sample without a script cannot bind fine tasks") {
    auto s = testing::synthetic_samples(1, 8)[0];
    s.script.reset();
    const auto& reg = TaskRegistry::builtin();
    CHECK_FALSE(s.can_bind(reg.find(kLocalize)));
    CHECK(s.can_bind(reg.find("Text-to-Motion")));
    CHECK_THROWS_WITH_AS(instantiate(reg.find(kLocalize), s, 1), doctest::Contains("[motion script]"), SchemaError);
}

TEST_CASE("fill_template is single pass") {
    const std::map<std::string, std::string> b = {{"[caption]", "a [motion] b"}, {"[motion]", "M"}};
    CHECK(fill_template("x [caption] y [motion]", b) == "x a [motion] b y M");
    CHECK(fill_template("[not a placeholder] [caption]", b) == "[not a placeholder] a [motion] b");
    CHECK_THROWS_AS(fill_template("[time]", b), SchemaError);
}

TEST_CASE("auxiliary motions are cut from the right place") {
    const auto samples = testing::synthetic_samples(10, 12);
    for (const auto& s : samples) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            for (bool rel : {false, true}) {
                const auto aux = derive_aux(s, seed, rel);
                const auto& base = rel ? aux.span_tokens : s.tokens;
                const auto n = base.size();
                REQUIRE(!aux.head.empty());
                CHECK(aux.head.size() == aux.tail.size());
                CHECK(aux.head.size() == std::max<std::size_t>(1, (n + 3) / 4));
                CHECK(std::equal(aux.head.begin(), aux.head.end(), base.begin()));
                CHECK(std::equal(aux.tail.begin(), aux.tail.end(), base.end() - static_cast<long>(aux.tail.size())));
                CHECK(aux.random.size() >= 1);
                CHECK(aux.random.size() <= std::max<std::size_t>(1, n / 4));
                CHECK(aux.first_snippet >= 0);
                CHECK(aux.first_snippet < aux.last_snippet);
                CHECK(aux.last_snippet <= s.grid.size());
                const auto [t0, t1] = s.token_range(aux.first_snippet, aux.last_snippet);
                CHECK(aux.span_tokens.size() == static_cast<std::size_t>(t1 - t0));
            }
            CHECK(derive_aux(s, seed).span == derive_aux(s, seed).span);
        }
    }
}

TEST_CASE("pretrain stream follows a uniform task mixture") {
    const auto samples = testing::synthetic_samples(30, 1);
    const auto& reg = TaskRegistry::builtin();
    StreamOptions o;
    o.seed = 42;
    PretrainStream stream(samples, reg, o);
    REQUIRE(stream.active_tasks().size() == 28);
    const int draws = 28000;
    for (int i = 0; i < draws; ++i) stream.next();
    CHECK(stream.draws() == draws);
    for (const auto& [name, count] : stream.counts()) {
        INFO(name);
        CHECK(count >= 800);
        CHECK(count <= 1200);
    }
}

TEST_CASE("pretrain stream is deterministic and honours exclusions") {
    const auto samples = testing::synthetic_samples(10, 2);
    const auto& reg = TaskRegistry::builtin();
    StreamOptions o;
    o.seed = 9;
    o.exclude_tasks = {kLocalize};
    PretrainStream a(samples, reg, o), b(samples, reg, o);
    CHECK(a.active_tasks().size() == 27);
    for (int i = 0; i < 500; ++i) {
        const auto x = a.next(), y = b.next();
        REQUIRE(x.input == y.input);
        REQUIRE(x.target == y.target);
        CHECK(x.task != kLocalize);
    }
    StreamOptions all;
    all.seed = 9;
    CHECK(PretrainStream(samples, reg, all).mix_hash() != a.mix_hash());

    StreamOptions unknown;
    unknown.tasks = {"Motion-to-Dance"};
    CHECK_THROWS_AS(PretrainStream(samples, reg, unknown), LookupError);

    auto bare = samples;
    for (auto& s : bare) s.script.reset();
    StreamOptions fine;
    fine.tasks = {kLocalize};
    CHECK_THROWS_AS(PretrainStream(bare, reg, fine), ConfigError);
}

TEST_CASE("finetune epochs rotate templates over every sample") {
    const auto samples = testing::synthetic_samples(8, 4);
    const auto& reg = TaskRegistry::builtin();
    const auto e0 = finetune_set(samples, reg, kLocalize, 0, 1);
    const auto e1 = finetune_set(samples, reg, kLocalize, 1, 1);
    CHECK(e0.size() == samples.size());
    CHECK(e1.size() == samples.size());
    int moved = 0;
    for (std::size_t i = 0; i < e0.size(); ++i) moved += e0[i].template_index != e1[i].template_index;
    CHECK(moved > 0);
    const auto again = finetune_set(samples, reg, kLocalize, 0, 1);
    for (std::size_t i = 0; i < e0.size(); ++i) CHECK(again[i].input == e0[i].input);

    std::size_t captions = 0;
    for (const auto& s : samples) captions += s.captions.size();
    CHECK(finetune_set(samples, reg, "Motion-to-Text").size() == captions);
}

TEST_CASE("mix_seed spreads nearby inputs") {
    CHECK(mix_seed(1, 2) != mix_seed(2, 1));
    CHECK(mix_seed(1, 2) == mix_seed(1, 2));
    CHECK(mix_seed(0, 0) != mix_seed(0, 1));
}
