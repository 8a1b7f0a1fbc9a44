#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mgm/errors.hpp"
#include "mgm/harness.hpp"

using namespace mgm;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config_file;
    std::vector<std::string> overrides;
    bool force = false;
};

RunConfig load_config(const Globals& g) {
    RunConfig c = g.config_file.empty() ? RunConfig() : RunConfig::load(g.config_file);
    c.apply_overrides(g.overrides);
    if (g.force) c.set("force", "true");
    return c;
}

RunConfig resolved(RunConfig c) {
    c.resolve_paths();
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot read '" + p.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

LanguageModel open_model(const RunConfig& c) {
    const fs::path p = c.path("model");
    if (!fs::exists(p)) throw ConfigError("model checkpoint '" + p.string() + "' not found");
    return LanguageModel::load(p);
}

MotionQuantizer open_quantizer(const RunConfig& c) {
    const fs::path p = c.path("quantizer");
    if (!fs::exists(p)) throw ConfigError("quantizer checkpoint '" + p.string() + "' not found");
    return MotionQuantizer::load(p);
}

// Motion placeholders take a motion file path; the rest take text.
std::map<std::string, std::string> bindings_from_json(const nlohmann::json& j, const MotionQuantizer& q) {
    std::map<std::string, std::string> b;
    for (const auto& [key, value] : j.items()) {
        const std::string name = "[" + key + "]";
        if (!known_placeholders().count(name)) throw ConfigError("unknown placeholder '" + key + "' in input");
        const std::string text = value.get<std::string>();
        const bool motion = name == kMotion || name == kHeadMotion || name == kTailMotion || name == kRandomMotions ||
                            name == kSnippetMotion;
        b[name] = motion ? wrap_motion_text(q.encode(read_motion(text))) : text;
    }
    return b;
}

void print_generation(const Generation& g) {
    std::cout << g.text << "\n";
    for (const Diagnostic& d : g.motion.diagnostics) std::cerr << "warning: token " << d.position << ": " << d.message << "\n";
    if (g.truncated) std::cerr << "warning: output stopped at the token limit\n";
}

void write_output(const fs::path& p, const std::string& text, bool force) {
    check_writable(p, force);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw DataError("write failed for '" + p.string() + "'");
}

int exit_code(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const LookupError*>(&e) ||
        dynamic_cast<const InvalidArgument*>(&e) || dynamic_cast<const RangeError*>(&e))
        return 2;
    if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const DataError*>(&e) ||
        dynamic_cast<const SchemaError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
        dynamic_cast<const InvalidToken*>(&e) || dynamic_cast<const nlohmann::json::exception*>(&e))
        return 3;
    if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const TrainingError*>(&e)) return 4;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Motion-language toolkit: synthetic corpora, quantizer, instruction-tuned seq2seq"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("-c,--config", g.config_file, "key = value config file");
    app.add_option("-s,--set", g.overrides, "config override key=value")->take_all();
    app.add_flag("-f,--force", g.force, "overwrite existing outputs");

    std::string out_dir;
    auto* synth = app.add_subcommand("synth", "write a synthetic corpus");
    synth->add_option("--out", out_dir, "corpus directory (default <cache>/corpus)");

    app.add_subcommand("train-vqvae", "train the motion quantizer on the training split");
    app.add_subcommand("build-vocab", "build the unified vocabulary from the training split");

    std::string tok_text, tok_motion;
    auto* tokenize = app.add_subcommand("tokenize", "print token ids");
    tokenize->add_option("--text", tok_text, "text to tokenize");
    tokenize->add_option("--motion", tok_motion, "motion file to quantize");

    std::string stage = "pretrain", lm_task;
    std::vector<std::string> excludes;
    bool from_scratch = false;
    auto* train = app.add_subcommand("train-lm", "pretrain or finetune the language model");
    train->add_option("--stage", stage)->check(CLI::IsMember({"pretrain", "finetune"}));
    train->add_option("--task", lm_task, "finetune task, or a pretrain whitelist entry");
    train->add_option("--exclude-task", excludes, "leave a task out of pretraining");
    train->add_flag("--from-scratch", from_scratch, "finetune without a pretrained base");

    std::string gen_task, gen_in, gen_out;
    int template_index = 0;
    auto* generate = app.add_subcommand("generate", "run one task on explicit inputs");
    generate->add_option("--task", gen_task)->required();
    generate->add_option("--in", gen_in, "JSON object: placeholder name -> text or motion file")->required();
    generate->add_option("--template", template_index);
    generate->add_option("--out", gen_out, "write a generated motion here");

    std::string motion_file;
    auto* script = app.add_subcommand("script", "describe a motion snippet by snippet");
    script->add_option("--motion", motion_file)->required();

    std::string loc_script, loc_snippet;
    auto* localize = app.add_subcommand("localize", "find when a snippet description happens");
    localize->add_option("--script", loc_script, "serialized motion script")->required();
    localize->add_option("--snippet", loc_snippet, "serialized snippet motion script")->required();

    std::string caption, statement, replace, edit_out;
    int snippet = 0;
    auto* edit = app.add_subcommand("edit", "generate, describe, edit and regenerate a motion");
    edit->add_option("--caption", caption)->required();
    edit->add_option("--snippet", snippet)->required();
    edit->add_option("--statement", statement)->required();
    edit->add_option("--replace", replace, "statement to replace (default: whole snippet)");
    edit->add_option("--out", edit_out, "diff report path");

    std::string suite;
    auto* eval = app.add_subcommand("eval", "run an evaluation suite");
    eval->add_option("--suite", suite)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig config = load_config(g);
        if (synth->parsed()) {
            const RunConfig c = resolved(config);
            const fs::path dir = out_dir.empty() ? c.path("cache_dir") / "corpus" : fs::path(out_dir);
            check_writable(dir / "manifest.jsonl", g.force);
            const auto entries = synth_entries(c);
            write_dataset(dir, entries);
            std::cout << "wrote " << entries.size() << " motions to " << dir.string() << "\n";
        } else if (app.got_subcommand("train-vqvae")) {
            const auto r = run_train_vqvae(config, load_corpus(resolved(config)));
            for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
            if (!r.curve.empty())
                std::cout << "final loss " << r.curve.back().terms.total << " (recon " << r.curve.back().terms.recon << ")\n";
        } else if (app.got_subcommand("build-vocab")) {
            const RunConfig c = resolved(config);
            const fs::path out = c.path("vocab");
            check_writable(out, g.force);
            const MotionQuantizer q = open_quantizer(c);
            std::vector<CorpusEntry> train_entries;
            for (auto& e : load_corpus(c))
                if (e.record.split == "train") train_entries.push_back(std::move(e));
            const auto vocab = build_vocab(vocab_corpus(train_entries, TaskRegistry::builtin(),
                                                        static_cast<int>(c.integer("max_snippets")), c.real("snippet_seconds")),
                                           q.config().codebook_size);
            vocab.save(out);
            std::cout << "vocabulary of " << vocab.size() << " tokens written to " << out.string() << "\n";
        } else if (tokenize->parsed()) {
            const RunConfig c = resolved(config);
            if (!tok_motion.empty()) {
                for (int id : open_quantizer(c).encode(read_motion(tok_motion))) std::cout << id << " ";
            } else {
                if (!fs::exists(c.path("vocab"))) throw ConfigError("vocabulary '" + c.path("vocab").string() + "' not found");
                for (int id : UnifiedVocabulary::load(c.path("vocab")).tokenize(tok_text)) std::cout << id << " ";
            }
            std::cout << "\n";
        } else if (train->parsed()) {
            config.set("stage", stage);
            if (from_scratch) config.set("from_scratch", "true");
            if (!excludes.empty()) {
                std::string joined;
                for (const auto& e : excludes) joined += (joined.empty() ? "" : ",") + e;
                config.set("exclude_tasks", joined);
            }
            if (!lm_task.empty()) config.set(stage == "pretrain" ? "tasks" : "task", lm_task);
            if (stage == "finetune") TaskRegistry::builtin().find(config.str("task"));
            const Workspace ws = open_workspace(config);
            const TrainResult r = stage == "pretrain" ? run_pretrain(ws) : run_finetune(ws);
            std::cout << r.arm << " checkpoint " << r.checkpoint.string() << " after " << r.steps << " steps"
                      << (r.early_stopped ? " (early stop)" : "") << ", config " << r.config_hash << "\n";
        } else if (generate->parsed()) {
            const RunConfig c = resolved(config);
            const TaskSpec& task = TaskRegistry::builtin().find(gen_task);
            const MotionQuantizer q = open_quantizer(c);
            const auto prompt = build_prompt(task, bindings_from_json(nlohmann::json::parse(slurp(gen_in)), q), template_index);
            const LanguageModel lm = open_model(c);
            GenerateOptions go;
            go.max_tokens = static_cast<int>(c.integer("max_new_tokens"));
            const Generation out = lm.generate(prompt, go);
            print_generation(out);
            if (!gen_out.empty()) {
                if (out.motion.spans.empty() || out.motion.spans.front().empty())
                    throw DataError("output holds no motion tokens: " + out.text);
                const auto& tokens = out.motion.spans.front();
                check_writable(gen_out, g.force);
                write_motion(gen_out, q.reconstruct(tokens, static_cast<int>(tokens.size()) * q.config().down_rate, kDefaultFps));
            }
        } else if (script->parsed()) {
            const RunConfig c = resolved(config);
            const MotionQuantizer q = open_quantizer(c);
            const TaskSpec& task = TaskRegistry::builtin().find("Motion-to-Motion Script");
            const LanguageModel lm = open_model(c);
            GenerateOptions go;
            go.max_tokens = static_cast<int>(c.integer("max_new_tokens"));
            const Generation out =
                lm.generate(build_prompt(task, {{std::string(kMotion), wrap_motion_text(q.encode(read_motion(motion_file)))}}), go);
            const auto block = prompt_block(out.text, "Motion Script");
            if (!block) throw DataError("output has no motion script block: " + out.text);
            const auto parsed = parse_script(*block);
            for (const Diagnostic& d : parsed.diagnostics) std::cerr << "warning: byte " << d.position << ": " << d.message << "\n";
            for (int i = 0; i < parsed.value.size(); ++i)
                std::cout << format_time_span(span_from_snippets(i, i + 1, parsed.value.snippet_seconds)) << ": "
                          << (parsed.value.snippets[static_cast<std::size_t>(i)].empty() ? std::string(kMotionlessToken)
                                                                                          : parsed.value.snippets[static_cast<std::size_t>(i)])
                          << "\n";
        } else if (localize->parsed()) {
            const RunConfig c = resolved(config);
            const TaskSpec& task = TaskRegistry::builtin().find("(Motion Script, Snippet Motion Script)-to-Time");
            const LanguageModel lm = open_model(c);
            GenerateOptions go;
            go.max_tokens = 24;
            const Generation out = lm.generate(
                build_prompt(task, {{std::string(kMotionScript), loc_script}, {std::string(kSnippetMotionScript), loc_snippet}}), go);
            const TimeSpan span = parse_time_span(out.text);
            std::cout << format_time_span(span) << "\n";
        } else if (edit->parsed()) {
            const RunConfig c = resolved(config);
            const LanguageModel lm = open_model(c);
            const MotionQuantizer q = open_quantizer(c);
            ScriptEdit e{snippet, statement, replace.empty() ? std::nullopt : std::optional<std::string>(replace)};
            const EditReport r = edit_roundtrip(lm, q, caption, e, static_cast<int>(c.integer("max_new_tokens")));
            const std::string report = diff_report_json(r);
            if (edit_out.empty()) {
                std::cout << report << "\n";
            } else {
                write_output(edit_out, report + "\n", g.force);
                std::cout << "diff report written to " << edit_out << "\n";
            }
        } else if (eval->parsed()) {
            const Workspace ws = open_workspace(config);
            const auto rows = evaluate_suite(ws, suite);
            std::cout << report_jsonl(rows);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e);
    }
    return 0;
}
