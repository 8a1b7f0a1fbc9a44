#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include <json.hpp>

#include "mgm/errors.hpp"
#include "mgm/harness.hpp"

using namespace mgm;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("mgm_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

RunConfig tiny_config(const fs::path& cache) {
    RunConfig c;
    c.apply_overrides({"cache_dir=" + cache.string(), "corpus_size=20", "vq_steps=20", "vq_batch=4", "iterations=6",
                       "batch=2", "eval_every=3", "eval_pairs=4", "log_every=2", "width=16", "heads=2", "ffn=32",
                       "enc_layers=1", "dec_layers=1", "max_input=512", "max_output=256"});
    return c;
}

// Quantizer trained once for the whole binary.
const fs::path& shared_cache() {
    static const fs::path dir = [] {
        const fs::path d = scratch_dir("ws");
        RunConfig c = tiny_config(d);
        run_train_vqvae(c, load_corpus(c));
        return d;
    }();
    return dir;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(MGM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing, overrides and hashing") {
    const auto c = RunConfig::parse("# desk run\nwidth = 32\nlr=5e-4  # comment\ntasks = a, b ,c\n");
    CHECK(c.integer("width") == 32);
    CHECK(c.real("lr") == 5e-4);
    CHECK(c.list("tasks") == std::vector<std::string>{"a", "b", "c"});
    CHECK(c.is_set("width"));
    CHECK_FALSE(c.is_set("heads"));
    CHECK(c.integer("heads") == 4);

    CHECK_THROWS_AS(RunConfig::parse("colour = red"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("width = wide"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("width"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("from_scratch = yes"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("stage = midtrain"), ConfigError);

    RunConfig a, b;
    CHECK(a.hash() == b.hash());
    b.set("force", "true");
    CHECK(a.hash() == b.hash());
    b.apply_overrides({"seed=4"});
    CHECK(a.hash() != b.hash());
    CHECK(a.hash().size() == 16);
    CHECK_THROWS_AS(b.apply_overrides({"seed"}), ConfigError);
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
}

TEST_CASE("paths resolve under the cache directory") {
    RunConfig c;
    c.apply_overrides({"cache_dir=/tmp/mgm-x", "stage=finetune", "from_scratch=true"});
    c.resolve_paths("/work");
    CHECK(c.path("quantizer") == "/tmp/mgm-x/quantizer.mgq");
    CHECK(c.path("base_model") == "/tmp/mgm-x/pretrain.mgs");
    const std::string out = c.path("output").filename().string();
    CHECK(out.rfind("finetune-", 0) == 0);
    CHECK(out.find("-scratch.mgs") != std::string::npos);

    RunConfig rel;
    rel.apply_overrides({"cache_dir=cache", "vocab=v.txt"});
    rel.resolve_paths("/work");
    CHECK(rel.path("cache_dir") == "/work/cache");
    CHECK(rel.path("vocab") == "/work/v.txt");
}

TEST_CASE("splits are seeded and proportional") {
    const auto s = assign_splits(100, 0.8, 0.1, 5);
    CHECK(std::count(s.begin(), s.end(), "train") == 80);
    CHECK(std::count(s.begin(), s.end(), "val") == 10);
    CHECK(std::count(s.begin(), s.end(), "test") == 10);
    CHECK(assign_splits(100, 0.8, 0.1, 5) == s);
    CHECK(assign_splits(100, 0.8, 0.1, 6) != s);
    CHECK_THROWS_AS(assign_splits(10, 0.8, 0.3, 1), ConfigError);
}

TEST_CASE("dataset directory round-trip") {
    const fs::path dir = scratch_dir("dataset");
    RunConfig c;
    c.set("corpus_size", "6");
    const auto entries = synth_entries(c);
    write_dataset(dir, entries);
    const auto back = read_dataset(dir / "manifest.jsonl");
    REQUIRE(back.size() == entries.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].record.id == entries[i].record.id);
        CHECK(back[i].record.captions == entries[i].record.captions);
        CHECK(back[i].record.script == entries[i].record.script);
        CHECK(back[i].record.split == entries[i].record.split);
        CHECK(back[i].motion == entries[i].motion);
    }
    {
        std::ofstream out(dir / "manifest.jsonl", std::ios::app);
        out << "{\"id\": 3\n";
    }
    CHECK_THROWS_AS(read_dataset_manifest(dir / "manifest.jsonl"), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("script length must match the motion grid") {
    RunConfig c;
    c.set("corpus_size", "1");
    auto e = synth_entries(c).front();
    e.record.script->push_back("extra");
    const MotionQuantizer q(QuantizerConfig{});
    CHECK_THROWS_AS(make_sample(e, q), DataError);
}

TEST_CASE("existing outputs are protected") {
    const fs::path dir = scratch_dir("writable");
    const fs::path f = dir / "x.bin";
    CHECK_NOTHROW(check_writable(f, false));
    std::ofstream(f) << "x";
    CHECK_THROWS_AS(check_writable(f, false), ConfigError);
    CHECK_NOTHROW(check_writable(f, true));
    fs::remove_all(dir);
}

TEST_CASE("edits replace one statement or a whole snippet") {
    MotionScript s;
    s.snippets = {"raise your left arm up", "bend your right leg forward, turn your upper body left", ""};
    auto e = apply_edit(s, {1, "lift your left leg forward", std::string("bend your right leg forward")});
    CHECK(e.snippets[1] == "lift your left leg forward, turn your upper body left");
    CHECK(e.snippets[0] == s.snippets[0]);
    e = apply_edit(s, {2, "raise your left arm up", std::nullopt});
    CHECK(e.snippets[2] == "raise your left arm up");
    CHECK_THROWS_AS(apply_edit(s, {3, "x", std::nullopt}), RangeError);
    CHECK_THROWS_AS(apply_edit(s, {0, "x", std::string("not there")}), LookupError);
}

TEST_CASE("an identity edit leaves the regeneration prompt unchanged") {
    RunConfig c;
    c.set("corpus_size", "5");
    for (const auto& entry : synth_entries(c)) {
        const MotionScript script{*entry.record.script, kDefaultSnippetSeconds, kDefaultFps};
        const auto& caption = entry.record.captions.front();
        const auto statements = split_statements(script.snippets[0]);
        const MotionScript same = apply_edit(script, {0, statements.empty() ? "" : statements[0],
                                                      statements.empty() ? std::nullopt : std::optional(statements[0])});
        CHECK(edit_prompt(caption, same) == edit_prompt(caption, script));
        CHECK(edit_prompt(caption, script).find(serialize_script(script)) != std::string::npos);
    }
}

TEST_CASE("oracle rendering of an edit is local") {
    SyntheticSpec base;
    base.num_snippets = 5;
    const std::vector<std::string> before = {"raise your right arm upward", "", "swing your left leg forward", "", ""};
    auto after = before;
    after[0] = "raise your left arm upward";
    const auto m0 = render_statements(before, base);
    const auto m1 = render_statements(after, base);
    const auto& layout = base.layout;
    int left = -1, right = -1;
    for (int i = 0; i < static_cast<int>(layout.size()); ++i) {
        if (layout[i].name == "left_arm") left = i;
        if (layout[i].name == "right_arm") right = i;
    }
    REQUIRE(left >= 0);
    REQUIRE(right >= 0);
    bool changed = false;
    for (const auto& d : motion_diff(m0, m1)) {
        if (d.snippet == 0 && (d.channel == left || d.channel == right)) {
            changed = changed || d.max_abs > 0.1;
        } else {
            CHECK(d.max_abs <= 1e-9);
        }
    }
    CHECK(changed);
}

TEST_CASE("self evaluation is perfect on ground truth") {
    RunConfig c;
    c.set("corpus_size", "40");
    const auto rows = self_evaluation(synth_entries(c), "h");
    for (const auto& r : rows) {
        INFO(r.metric);
        if (r.metric == "fid" || r.metric == "mm_dist") CHECK(std::abs(r.value) <= 1e-6);
        if (r.metric == "r_precision@1" || r.metric == "iou") CHECK(r.value == 1.0);
        if (r.metric == "bleu@4" || r.metric == "rouge_l") CHECK(r.value == doctest::Approx(100.0));
        CHECK(r.config_hash == "h");
    }
}

TEST_CASE("workspace needs a quantizer") {
    const fs::path dir = scratch_dir("noq");
    CHECK_THROWS_AS(open_workspace(tiny_config(dir)), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("tiny pretrain is deterministic and honours exclusions") {
    const fs::path cache = shared_cache();
    auto c = tiny_config(cache);
    c.apply_overrides({"output=" + (cache / "a.mgs").string(), "exclude_tasks=Text-to-Motion"});
    const Workspace ws = open_workspace(c);
    CHECK(ws.train.size() == 16);
    CHECK(ws.val.size() == 2);
    CHECK(ws.test.size() == 2);
    const TrainResult a = run_pretrain(ws);
    CHECK(a.steps == 6);
    CHECK(a.task_counts.count("Text-to-Motion") == 0);
    CHECK(a.log.size() == 3);
    CHECK(fs::exists(cache / "a.mgs.log.csv"));
    CHECK(fs::exists(cache / "a.mgs.eval.csv"));
    CHECK(fs::exists(cache / "a.mgs.mix.csv"));
    CHECK_THROWS_AS(run_pretrain(ws), ConfigError);

    auto c2 = c;
    c2.set("output", (cache / "b.mgs").string());
    const TrainResult b = run_pretrain(open_workspace(c2));
    // Metadata differs (output path); the weights must not.
    auto ma = LanguageModel::load(cache / "a.mgs"), mb = LanguageModel::load(cache / "b.mgs");
    auto pb = mb.model().params().begin();
    for (const auto& p : ma.model().params()) CHECK(p.value == (pb++)->value);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);

    std::string meta;
    LanguageModel::load(cache / "a.mgs", &meta);
    const auto j = nlohmann::json::parse(meta);
    CHECK(j["stage"] == "pretrain");
    CHECK(j["config_hash"] == a.config_hash);
}

TEST_CASE("finetune records its lineage") {
    const fs::path cache = shared_cache();
    auto pre = tiny_config(cache);
    pre.set("output", (cache / "base.mgs").string());
    run_pretrain(open_workspace(pre));

    auto ft = tiny_config(cache);
    ft.apply_overrides({"stage=finetune", "base_model=" + (cache / "base.mgs").string(),
                        "output=" + (cache / "ft.mgs").string()});
    const TrainResult r = run_finetune(open_workspace(ft));
    CHECK(r.arm == "pretrain+finetune");
    CHECK(r.parent_hash == file_hash(cache / "base.mgs"));
    CHECK(r.evals.front().step == 0);
    CHECK(r.best_eval <= r.evals.front().loss);

    auto scratch = ft;
    scratch.apply_overrides({"from_scratch=true", "output=" + (cache / "scratch.mgs").string()});
    const TrainResult s = run_finetune(open_workspace(scratch));
    CHECK(s.arm == "from-scratch");
    CHECK(s.parent_hash.empty());

    auto missing = ft;
    missing.apply_overrides({"base_model=" + (cache / "nope.mgs").string(), "output=" + (cache / "x.mgs").string()});
    CHECK_THROWS_AS(run_finetune(open_workspace(missing)), ConfigError);
    auto unknown = ft;
    unknown.apply_overrides({"task=Motion-to-Dance", "output=" + (cache / "y.mgs").string()});
    CHECK_THROWS_AS(run_finetune(open_workspace(unknown)), LookupError);
}

TEST_CASE("caption tasks train for fewer iterations by default") {
    const auto& reg = TaskRegistry::builtin();
    RunConfig c;
    CHECK(finetune_iterations(c, reg.find("Motion-to-Text")) == c.integer("caption_iterations"));
    CHECK(finetune_iterations(c, reg.find("(Motion Script, Snippet Motion Script)-to-Time")) == c.integer("iterations"));
    c.set("iterations", "77");
    CHECK(finetune_iterations(c, reg.find("Motion-to-Text")) == 77);
}

TEST_CASE("localization evaluation reports parse failures") {
    const fs::path cache = shared_cache();
    const Workspace ws = open_workspace(tiny_config(cache));
    LanguageModel lm(ws.vocab, model_config(ws.config, ws.vocab));
    const auto trials = evaluate_localization(lm, ws.test, ws.config.str("task"), 2, 1, 8);
    REQUIRE(trials.size() == 2);
    for (const auto& t : trials) {
        CHECK(t.n == 2);
        CHECK(t.parsed >= 0.0);
        CHECK(t.exact <= t.parsed);
    }
    CHECK_THROWS_AS(evaluate_localization(lm, ws.test, "Motion-to-Text", 1, 1), ConfigError);
}

TEST_CASE("command-line exit codes") {
    const fs::path dir = scratch_dir("cli");
    const std::string cache = " -s cache_dir=" + dir.string();
    CHECK(run_cli("") == 2);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("synth -s colour=red") == 2);
    CHECK(run_cli("synth -s corpus_size=4" + cache) == 0);
    CHECK(fs::exists(dir / "corpus" / "manifest.jsonl"));
    CHECK(run_cli("synth -s corpus_size=4" + cache) == 2);
    CHECK(run_cli("synth -f -s corpus_size=4" + cache) == 0);
    CHECK(run_cli("train-lm" + cache) == 2);
    {
        std::ofstream(dir / "bad.mgm") << "not a motion";
    }
    CHECK(run_cli("tokenize --motion " + (dir / "bad.mgm").string() + " -s quantizer=" +
                  (shared_cache() / "quantizer.mgq").string() + cache) == 3);
    CHECK(run_cli("train-lm --stage finetune --task Motion-to-Dance" + cache) == 2);
    fs::remove_all(dir);
}
