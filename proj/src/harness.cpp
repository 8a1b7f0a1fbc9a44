#include "mgm/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "mgm/binary_io.hpp"
#include "mgm/errors.hpp"

namespace mgm {

namespace fs = std::filesystem;

// ---- configuration ----

namespace {

enum class Kind { kString, kPath, kInt, kReal, kBool, kList };

struct KeySpec {
    const char* key;
    const char* value;
    Kind kind;
};

const std::vector<KeySpec>& key_specs() {
    static const std::vector<KeySpec> specs = {
        {"stage", "pretrain", Kind::kString},
        {"task", "(Motion Script, Snippet Motion Script)-to-Time", Kind::kString},
        {"tasks", "", Kind::kList},
        {"exclude_tasks", "", Kind::kList},
        {"from_scratch", "false", Kind::kBool},
        {"force", "false", Kind::kBool},
        {"cache_dir", "", Kind::kPath},
        {"corpus_dir", "", Kind::kPath},
        {"quantizer", "", Kind::kPath},
        {"vocab", "", Kind::kPath},
        {"base_model", "", Kind::kPath},
        {"model", "", Kind::kPath},
        {"output", "", Kind::kPath},
        {"report", "", Kind::kPath},
        {"corpus_size", "400", Kind::kInt},
        {"corpus_seed", "11", Kind::kInt},
        {"min_snippets", "3", Kind::kInt},
        {"max_snippets", "8", Kind::kInt},
        {"unique_statements", "true", Kind::kBool},
        {"noise_sigma", "0.01", Kind::kReal},
        {"snippet_seconds", "0.5", Kind::kReal},
        {"split_train", "0.8", Kind::kReal},
        {"split_val", "0.1", Kind::kReal},
        {"split_seed", "5", Kind::kInt},
        {"vq_steps", "12000", Kind::kInt},
        {"vq_batch", "16", Kind::kInt},
        {"vq_window", "64", Kind::kInt},
        {"vq_lr", "2e-3", Kind::kReal},
        {"vq_seed", "7", Kind::kInt},
        {"codebook_size", "64", Kind::kInt},
        {"latent_dim", "8", Kind::kInt},
        {"vq_width", "32", Kind::kInt},
        {"iterations", "4000", Kind::kInt},
        {"caption_iterations", "1000", Kind::kInt},
        {"lr", "1e-3", Kind::kReal},
        {"batch", "16", Kind::kInt},
        {"log_every", "50", Kind::kInt},
        {"eval_every", "500", Kind::kInt},
        {"eval_pairs", "64", Kind::kInt},
        {"patience", "5", Kind::kInt},
        {"seed", "3", Kind::kInt},
        {"width", "64", Kind::kInt},
        {"heads", "4", Kind::kInt},
        {"ffn", "256", Kind::kInt},
        {"enc_layers", "2", Kind::kInt},
        {"dec_layers", "2", Kind::kInt},
        {"max_input", "1024", Kind::kInt},
        {"max_output", "512", Kind::kInt},
        {"rel_buckets", "32", Kind::kInt},
        {"init_seed", "1", Kind::kInt},
        {"metrics", "", Kind::kList},
        {"trials", "20", Kind::kInt},
        {"eval_split", "test", Kind::kString},
        {"max_new_tokens", "0", Kind::kInt},
        {"temperature", "1.0", Kind::kReal},
        {"top_k", "0", Kind::kInt},
        {"embedder", "handcrafted", Kind::kString},
        {"retrieval_batch", "32", Kind::kInt},
    };
    return specs;
}

const KeySpec& key_spec(const std::string& key) {
    for (const KeySpec& k : key_specs())
        if (key == k.key) return k;
    throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

std::string slug(std::string_view name) {
    std::string out;
    for (char c : name) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!out.empty() && out.back() != '-') {
            out += '-';
        }
    }
    while (!out.empty() && out.back() == '-') out.pop_back();
    return out;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

RunConfig::RunConfig() {
    for (const KeySpec& k : key_specs()) values_[k.key] = k.value;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
    const KeySpec& spec = key_spec(key);
    const std::string value = trim(raw);
    auto bad = [&](const char* what) {
        throw ConfigError("config key '" + key + "': '" + value + "' is not " + what);
    };
    switch (spec.kind) {
        case Kind::kInt: {
            std::size_t used = 0;
            try {
                (void)std::stol(value, &used);
            } catch (const std::exception&) {
                bad("an integer");
            }
            if (used != value.size()) bad("an integer");
            break;
        }
        case Kind::kReal: {
            std::size_t used = 0;
            try {
                (void)std::stod(value, &used);
            } catch (const std::exception&) {
                bad("a number");
            }
            if (used != value.size()) bad("a number");
            break;
        }
        case Kind::kBool:
            if (value != "true" && value != "false") bad("true or false");
            break;
        default:
            break;
    }
    if (key == "stage" && value != "pretrain" && value != "finetune") bad("pretrain or finetune");
    values_[key] = value;
    explicit_[key] = true;
}

void RunConfig::apply_overrides(const std::vector<std::string>& assignments) {
    for (const std::string& a : assignments) {
        const std::size_t eq = a.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + a + "' is not key=value");
        set(trim(std::string_view(a).substr(0, eq)), a.substr(eq + 1));
    }
}

RunConfig RunConfig::parse(std::string_view text) {
    RunConfig c;
    std::istringstream in{std::string(text)};
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        if (trim(line).empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(number) + " is not key = value");
        c.set(trim(std::string_view(line).substr(0, eq)), line.substr(eq + 1));
    }
    return c;
}

RunConfig RunConfig::load(const fs::path& path) { return parse(read_text(path)); }

const std::string& RunConfig::str(const std::string& key) const {
    key_spec(key);
    return values_.at(key);
}

long RunConfig::integer(const std::string& key) const {
    if (key_spec(key).kind != Kind::kInt) throw ConfigError("config key '" + key + "' is not an integer");
    return std::stol(values_.at(key));
}

double RunConfig::real(const std::string& key) const {
    if (key_spec(key).kind != Kind::kReal) throw ConfigError("config key '" + key + "' is not a number");
    return std::stod(values_.at(key));
}

bool RunConfig::flag(const std::string& key) const {
    if (key_spec(key).kind != Kind::kBool) throw ConfigError("config key '" + key + "' is not a flag");
    return values_.at(key) == "true";
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream in(str(key));
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

fs::path RunConfig::path(const std::string& key) const {
    if (key_spec(key).kind != Kind::kPath) throw ConfigError("config key '" + key + "' is not a path");
    return values_.at(key);
}

void RunConfig::resolve_paths(const fs::path& base) {
    auto absolute = [&](const std::string& p) { return fs::weakly_canonical(fs::path(p).is_absolute() ? fs::path(p) : base / p); };
    std::string cache = values_["cache_dir"];
    if (cache.empty()) {
        const char* env = std::getenv("MGM_CACHE_DIR");
        cache = env && *env ? env : "mgm-cache";
    }
    const fs::path cache_dir = absolute(cache);
    values_["cache_dir"] = cache_dir.string();
    const std::string stage_file =
        str("stage") == "pretrain" ? "pretrain.mgs" : "finetune-" + slug(str("task")) + (flag("from_scratch") ? "-scratch" : "") + ".mgs";
    const std::map<std::string, fs::path> defaults = {
        {"quantizer", cache_dir / "quantizer.mgq"},
        {"vocab", cache_dir / "vocab.txt"},
        {"base_model", cache_dir / "pretrain.mgs"},
        {"model", cache_dir / stage_file},
        {"output", cache_dir / stage_file},
        {"report", cache_dir / "report.jsonl"},
    };
    for (const KeySpec& k : key_specs()) {
        if (k.kind != Kind::kPath || std::string(k.key) == "cache_dir") continue;
        std::string& v = values_[k.key];
        if (!v.empty()) {
            v = absolute(v).string();
        } else if (auto it = defaults.find(k.key); it != defaults.end()) {
            v = it->second.string();
        }
    }
}

std::string RunConfig::canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) {
        if (k == "force") continue;
        out += k + "=" + v + "\n";
    }
    return out;
}

std::string RunConfig::hash() const { return fnv1a_hex(canonical()); }

const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const KeySpec& k : key_specs()) v.push_back(k.key);
        return v;
    }();
    return names;
}

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string file_hash(const fs::path& path) {
    const auto bytes = read_file_bytes(path);
    return fnv1a_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

void check_writable(const fs::path& path, bool force) {
    if (fs::exists(path) && !force)
        throw ConfigError("'" + path.string() + "' exists; pass --force to overwrite");
}

// ---- datasets ----

std::vector<DatasetRecord> read_dataset_manifest(const fs::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw DataError("cannot read dataset manifest '" + manifest.string() + "'");
    const fs::path dir = manifest.parent_path();
    std::vector<DatasetRecord> out;
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
        const std::size_t here = offset;
        offset += line.size() + 1;
        if (trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            DatasetRecord r;
            r.id = j.at("id").get<std::string>();
            r.motion_path = j.at("motion_path").get<std::string>();
            if (r.motion_path.is_relative()) r.motion_path = dir / r.motion_path;
            r.captions = j.at("captions").get<std::vector<std::string>>();
            if (j.contains("script") && !j.at("script").is_null())
                r.script = j.at("script").get<std::vector<std::string>>();
            r.split = j.value("split", std::string("train"));
            if (r.split != "train" && r.split != "val" && r.split != "test")
                throw DataError("record '" + r.id + "' has unknown split '" + r.split + "'");
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("dataset manifest: ") + e.what(), here);
        }
    }
    return out;
}

std::vector<std::string> assign_splits(int count, double train, double val, std::uint64_t seed) {
    if (train < 0 || val < 0 || train + val > 1) throw ConfigError("split fractions must be non-negative and sum to at most 1");
    std::vector<int> order(static_cast<std::size_t>(std::max(count, 0)));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const int n_train = static_cast<int>(std::lround(train * count));
    const int n_val = static_cast<int>(std::lround(val * count));
    std::vector<std::string> out(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        const int rank = static_cast<int>(i);
        out[static_cast<std::size_t>(order[i])] = rank < n_train ? "train" : rank < n_train + n_val ? "val" : "test";
    }
    return out;
}

std::vector<CorpusEntry> synth_entries(const RunConfig& config) {
    CorpusOptions o;
    o.min_snippets = static_cast<int>(config.integer("min_snippets"));
    o.max_snippets = static_cast<int>(config.integer("max_snippets"));
    o.unique_per_snippet = config.flag("unique_statements");
    o.noise_sigma = config.real("noise_sigma");
    o.snippet_seconds = config.real("snippet_seconds");
    const int count = static_cast<int>(config.integer("corpus_size"));
    if (count < 1) throw ConfigError("corpus_size must be positive");
    auto items = synth_corpus(count, config.seed("corpus_seed"), o);
    const auto splits = assign_splits(count, config.real("split_train"), config.real("split_val"), config.seed("split_seed"));
    std::vector<CorpusEntry> out;
    out.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        DatasetRecord r;
        r.id = items[i].id;
        r.motion_path = fs::path("motions") / (items[i].id + ".mgm");
        r.captions = items[i].captions;
        std::vector<std::string> script;
        for (const auto& st : items[i].statements) script.push_back(join_statements(st));
        r.script = std::move(script);
        r.split = splits[i];
        out.push_back({std::move(r), std::move(items[i].motion)});
    }
    return out;
}

void write_dataset(const fs::path& dir, const std::vector<CorpusEntry>& entries) {
    fs::create_directories(dir / "motions");
    std::string manifest;
    for (const CorpusEntry& e : entries) {
        const fs::path rel = fs::path("motions") / (e.record.id + ".mgm");
        write_motion(dir / rel, e.motion);
        nlohmann::json j = {{"id", e.record.id},
                            {"motion_path", rel.generic_string()},
                            {"captions", e.record.captions},
                            {"script", e.record.script ? nlohmann::json(*e.record.script) : nlohmann::json(nullptr)},
                            {"split", e.record.split}};
        manifest += j.dump() + "\n";
    }
    write_text(dir / "manifest.jsonl", manifest);
}

std::vector<CorpusEntry> read_dataset(const fs::path& manifest) {
    std::vector<CorpusEntry> out;
    for (DatasetRecord& r : read_dataset_manifest(manifest)) {
        MotionSequence m = read_motion(r.motion_path);
        out.push_back({std::move(r), std::move(m)});
    }
    return out;
}

std::vector<CorpusEntry> load_corpus(const RunConfig& config) {
    const fs::path dir = config.path("corpus_dir");
    if (dir.empty()) return synth_entries(config);
    return read_dataset(dir / "manifest.jsonl");
}

Sample make_sample(const CorpusEntry& entry, const MotionQuantizer& quantizer, double snippet_seconds) {
    Sample s;
    s.id = entry.record.id;
    s.tokens = quantizer.encode(entry.motion);
    s.captions = entry.record.captions;
    s.grid = make_snippet_grid(entry.motion, snippet_seconds);
    s.down_rate = quantizer.config().down_rate;
    if (entry.record.script) {
        if (static_cast<int>(entry.record.script->size()) != s.grid.size())
            throw DataError("record '" + s.id + "' has " + std::to_string(entry.record.script->size()) +
                            " script snippets for " + std::to_string(s.grid.size()) + " motion snippets");
        s.script = MotionScript{*entry.record.script, snippet_seconds, entry.motion.fps()};
    }
    s.validate();
    return s;
}

std::vector<std::string> vocab_corpus(const std::vector<CorpusEntry>& entries, const TaskRegistry& registry,
                                      int max_snippets, double snippet_seconds) {
    std::vector<std::string> corpus;
    for (const TaskSpec& t : registry.tasks()) {
        corpus.insert(corpus.end(), t.templates.begin(), t.templates.end());
        corpus.push_back(t.output_schema);
    }
    for (const CorpusEntry& e : entries) {
        corpus.insert(corpus.end(), e.record.captions.begin(), e.record.captions.end());
        if (e.record.script) corpus.push_back(serialize_script(MotionScript{*e.record.script, snippet_seconds, e.motion.fps()}));
        max_snippets = std::max(max_snippets, make_snippet_grid(e.motion, snippet_seconds).size());
    }
    for (int a = 0; a < max_snippets; ++a)
        for (int b = a + 1; b <= max_snippets; ++b) corpus.push_back(format_time_span(span_from_snippets(a, b, snippet_seconds)));
    return corpus;
}

Workspace open_workspace(const RunConfig& input) {
    RunConfig config = input;
    config.resolve_paths();
    const fs::path qpath = config.path("quantizer");
    if (!fs::exists(qpath)) throw ConfigError("quantizer checkpoint '" + qpath.string() + "' not found; run train-vqvae first");
    MotionQuantizer quantizer = MotionQuantizer::load(qpath);
    std::vector<CorpusEntry> corpus = load_corpus(config);
    const double ss = config.real("snippet_seconds");

    std::vector<CorpusEntry> train_entries;
    for (const CorpusEntry& e : corpus)
        if (e.record.split == "train") train_entries.push_back(e);
    const fs::path vpath = config.path("vocab");
    UnifiedVocabulary vocab =
        fs::exists(vpath) ? UnifiedVocabulary::load(vpath)
                          : build_vocab(vocab_corpus(train_entries, TaskRegistry::builtin(),
                                                     static_cast<int>(config.integer("max_snippets")), ss),
                                        quantizer.config().codebook_size);
    if (vocab.motion_size() != quantizer.config().codebook_size)
        throw ConfigError("vocabulary has " + std::to_string(vocab.motion_size()) + " motion tokens, quantizer codebook " +
                          std::to_string(quantizer.config().codebook_size));

    Workspace ws{std::move(config), std::move(quantizer), std::move(vocab), std::move(corpus), {}, {}, {}};
    for (const CorpusEntry& e : ws.corpus) {
        Sample s = make_sample(e, ws.quantizer, ss);
        if (e.record.split == "train") {
            ws.train.push_back(std::move(s));
        } else if (e.record.split == "val") {
            ws.val.push_back(std::move(s));
        } else {
            ws.test.push_back(std::move(s));
        }
    }
    if (ws.train.empty()) throw DataError("corpus has no training samples");
    return ws;
}

Seq2SeqConfig model_config(const RunConfig& config, const UnifiedVocabulary& vocab) {
    Seq2SeqConfig c = desk_config(vocab);
    c.width = static_cast<int>(config.integer("width"));
    c.heads = static_cast<int>(config.integer("heads"));
    c.ffn = static_cast<int>(config.integer("ffn"));
    c.enc_layers = static_cast<int>(config.integer("enc_layers"));
    c.dec_layers = static_cast<int>(config.integer("dec_layers"));
    c.max_input = static_cast<int>(config.integer("max_input"));
    c.max_output = static_cast<int>(config.integer("max_output"));
    c.rel_buckets = static_cast<int>(config.integer("rel_buckets"));
    c.init_seed = config.seed("init_seed");
    c.validate();
    return c;
}

QuantizerConfig quantizer_config(const RunConfig& config, int input_dim) {
    QuantizerConfig q;
    q.input_dim = input_dim;
    q.width = static_cast<int>(config.integer("vq_width"));
    q.latent_dim = static_cast<int>(config.integer("latent_dim"));
    q.codebook_size = static_cast<int>(config.integer("codebook_size"));
    q.init_seed = config.seed("vq_seed");
    return q;
}

VqTrainSchedule vq_schedule(const RunConfig& config) {
    VqTrainSchedule s;
    s.steps = static_cast<int>(config.integer("vq_steps"));
    s.batch_size = static_cast<int>(config.integer("vq_batch"));
    s.window_frames = static_cast<int>(config.integer("vq_window"));
    s.lr = config.real("vq_lr");
    s.seed = config.seed("vq_seed");
    return s;
}

VqTrainResult run_train_vqvae(const RunConfig& input, const std::vector<CorpusEntry>& corpus) {
    RunConfig config = input;
    config.resolve_paths();
    const fs::path out = config.path("quantizer");
    check_writable(out, config.flag("force"));
    std::vector<MotionSequence> motions;
    for (const CorpusEntry& e : corpus)
        if (e.record.split == "train") motions.push_back(e.motion);
    if (motions.empty()) throw DataError("no training motions for the quantizer");
    MotionQuantizer q(quantizer_config(config, motions.front().dim()));
    VqTrainResult r = train_vqvae(motions, q, vq_schedule(config));
    q.save(out);
    write_text(fs::path(out.string() + ".curve.csv"), vq_curve_csv(r.curve));
    return r;
}

// ---- training ----

namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::vector<EncodedPair> eval_pairs(const LanguageModel& lm, const std::vector<Sample>& samples, const std::string& task,
                                    std::size_t limit, std::uint64_t seed) {
    const TaskSpec& spec = TaskRegistry::builtin().find(task);
    std::vector<Sample> usable;
    for (const Sample& s : samples)
        if (s.can_bind(spec)) usable.push_back(s);
    std::vector<EncodedPair> out;
    if (usable.empty()) return out;
    for (const PromptPair& p : finetune_set(usable, TaskRegistry::builtin(), task, 0, seed)) {
        if (out.size() >= limit) break;
        out.push_back(lm.encode(p));
    }
    return out;
}

std::string log_csv(const std::vector<TrainLogRow>& rows) {
    std::string out = "step,stage,mix_hash,loss,lr\n";
    for (const auto& r : rows)
        out += std::to_string(r.step) + "," + r.stage + "," + r.mix_hash + "," + format_real(r.loss) + "," + format_real(r.lr) + "\n";
    return out;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string eval_csv(const std::vector<EvalLogRow>& rows) {
    std::string out = "step,task,eval_loss\n";
    for (const auto& r : rows) out += std::to_string(r.step) + "," + csv_field(r.task) + "," + format_real(r.loss) + "\n";
    return out;
}

void write_logs(const fs::path& checkpoint, const TrainResult& r) {
    write_text(fs::path(checkpoint.string() + ".log.csv"), log_csv(r.log));
    write_text(fs::path(checkpoint.string() + ".eval.csv"), eval_csv(r.evals));
    long total = 0;
    for (const auto& [t, n] : r.task_counts) total += n;
    std::string mix = "task,count,share\n";
    for (const auto& [t, n] : r.task_counts)
        mix += csv_field(t) + "," + std::to_string(n) + "," + format_real(total ? static_cast<double>(n) / total : 0.0) + "\n";
    write_text(fs::path(checkpoint.string() + ".mix.csv"), mix);
}

std::string metadata_json(const RunConfig& config, const TrainResult& r, const std::string& stage, const std::string& task) {
    nlohmann::json j = {{"stage", stage},       {"task", task},           {"arm", r.arm},
                        {"config_hash", r.config_hash}, {"parent_hash", r.parent_hash}, {"steps", r.steps},
                        {"early_stopped", r.early_stopped}, {"config", config.canonical()}};
    return j.dump();
}

nn::AdamWConfig optimizer_config(const RunConfig& config) {
    nn::AdamWConfig c;
    c.lr = config.real("lr");
    return c;
}

}  // namespace

TrainResult run_pretrain(const Workspace& ws) {
    const RunConfig& cfg = ws.config;
    TrainResult r;
    r.config_hash = cfg.hash();
    r.arm = "pretrain";
    r.checkpoint = cfg.path("output");
    check_writable(r.checkpoint, cfg.flag("force"));

    const TaskRegistry& reg = TaskRegistry::builtin();
    LanguageModel lm(ws.vocab, model_config(cfg, ws.vocab));
    nn::AdamW<float> opt(lm.model().params(), optimizer_config(cfg));
    StreamOptions so;
    so.tasks = cfg.list("tasks");
    so.exclude_tasks = cfg.list("exclude_tasks");
    so.seed = cfg.seed("seed");
    PretrainStream stream(ws.train, reg, so);
    const std::string mix = hex64(stream.mix_hash());

    const std::size_t eval_limit = static_cast<std::size_t>(cfg.integer("eval_pairs"));
    std::vector<std::pair<std::string, std::vector<EncodedPair>>> evals;
    for (const std::string& t : stream.active_tasks()) {
        auto pairs = eval_pairs(lm, ws.val, t, eval_limit, mix_seed(cfg.seed("seed"), 0xe7a1));
        if (!pairs.empty()) evals.emplace_back(t, std::move(pairs));
    }

    const long iterations = cfg.integer("iterations");
    const long log_every = std::max(1L, cfg.integer("log_every"));
    const long eval_every = cfg.integer("eval_every");
    const int batch = static_cast<int>(cfg.integer("batch"));
    if (iterations < 1 || batch < 1) throw ConfigError("iterations and batch must be positive");
    double sum = 0;
    long tokens = 0;
    for (long step = 1; step <= iterations; ++step) {
        std::vector<EncodedPair> b;
        for (int i = 0; i < batch; ++i) b.push_back(lm.encode(stream.next()));
        const StepStats st = lm.train_step(b, opt);
        sum += st.loss_sum;
        tokens += st.tokens;
        if (step % log_every == 0 || step == iterations) {
            r.log.push_back({step, "pretrain", mix, sum / static_cast<double>(tokens), opt.lr()});
            sum = 0;
            tokens = 0;
        }
        if ((eval_every > 0 && step % eval_every == 0) || step == iterations)
            for (const auto& [t, pairs] : evals) r.evals.push_back({step, t, lm.eval_loss(pairs)});
    }
    r.steps = iterations;
    r.task_counts = stream.counts();
    lm.save(r.checkpoint, metadata_json(cfg, r, "pretrain", ""));
    write_logs(r.checkpoint, r);
    return r;
}

long finetune_iterations(const RunConfig& config, const TaskSpec& task) {
    if (task.output_schema == kCaption && !config.is_set("iterations")) return config.integer("caption_iterations");
    return config.integer("iterations");
}

TrainResult run_finetune(const Workspace& ws) {
    const RunConfig& cfg = ws.config;
    const TaskRegistry& reg = TaskRegistry::builtin();
    const std::string task = cfg.str("task");
    const TaskSpec& spec = reg.find(task);
    TrainResult r;
    r.config_hash = cfg.hash();
    r.checkpoint = cfg.path("output");
    check_writable(r.checkpoint, cfg.flag("force"));

    std::optional<LanguageModel> lm;
    if (cfg.flag("from_scratch")) {
        r.arm = "from-scratch";
        lm.emplace(ws.vocab, model_config(cfg, ws.vocab));
    } else {
        const fs::path base = cfg.path("base_model");
        if (!fs::exists(base))
            throw ConfigError("finetune needs a pretrain checkpoint at '" + base.string() + "' (or from_scratch)");
        r.arm = "pretrain+finetune";
        r.parent_hash = file_hash(base);
        lm.emplace(LanguageModel::load(base));
    }
    nn::AdamW<float> opt(lm->model().params(), optimizer_config(cfg));

    std::vector<Sample> train;
    for (const Sample& s : ws.train)
        if (s.can_bind(spec)) train.push_back(s);
    if (train.empty()) throw ConfigError("no training sample can bind task '" + task + "'");
    const std::uint64_t seed = cfg.seed("seed");
    const auto val = eval_pairs(*lm, ws.val, task, static_cast<std::size_t>(cfg.integer("eval_pairs")), mix_seed(seed, 0xe7a1));

    const long iterations = finetune_iterations(cfg, spec);
    const long log_every = std::max(1L, cfg.integer("log_every"));
    const long eval_every = cfg.integer("eval_every");
    const long patience = cfg.integer("patience");
    const int batch = static_cast<int>(cfg.integer("batch"));
    if (iterations < 1 || batch < 1) throw ConfigError("iterations and batch must be positive");

    const std::string mix = fnv1a_hex(task);
    std::vector<nn::Matrix<float>> best;
    auto snapshot = [&] {
        best.clear();
        for (const auto& p : lm->model().params()) best.push_back(p.value);
    };
    long since_best = 0;
    auto evaluate = [&](long step) {
        if (val.empty()) return false;
        const double loss = lm->eval_loss(val);
        r.evals.push_back({step, task, loss});
        if (best.empty() || loss < r.best_eval) {
            r.best_eval = loss;
            since_best = 0;
            snapshot();
            return false;
        }
        return ++since_best >= patience && patience > 0;
    };
    evaluate(0);

    int epoch = 0;
    std::vector<PromptPair> pool;
    std::size_t cursor = 0;
    auto refill = [&] {
        pool = finetune_set(train, reg, task, epoch, mix_seed(seed, static_cast<std::uint64_t>(epoch)));
        std::mt19937_64 rng(mix_seed(seed ^ 0x5eed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(pool.begin(), pool.end(), rng);
        ++epoch;
        cursor = 0;
    };
    refill();
    double sum = 0;
    long tokens = 0;
    long step = 1;
    for (; step <= iterations; ++step) {
        std::vector<EncodedPair> b;
        for (int i = 0; i < batch; ++i) {
            if (cursor >= pool.size()) refill();
            b.push_back(lm->encode(pool[cursor++]));
        }
        const StepStats st = lm->train_step(b, opt);
        sum += st.loss_sum;
        tokens += st.tokens;
        if (step % log_every == 0 || step == iterations) {
            r.log.push_back({step, "finetune", mix, sum / static_cast<double>(tokens), opt.lr()});
            sum = 0;
            tokens = 0;
        }
        if (eval_every > 0 && step % eval_every == 0 && evaluate(step)) {
            r.early_stopped = true;
            break;
        }
    }
    r.steps = std::min(step, iterations);
    if (!r.early_stopped && !val.empty() && (eval_every <= 0 || iterations % eval_every != 0)) evaluate(iterations);
    if (!best.empty()) {
        std::size_t i = 0;
        for (auto& p : lm->model().params()) p.value = best[i++];
    }
    r.task_counts[task] = r.steps * batch;
    lm->save(r.checkpoint, metadata_json(cfg, r, "finetune", task));
    write_logs(r.checkpoint, r);
    return r;
}

// ---- generation helpers ----

std::string build_prompt(const TaskSpec& task, const std::map<std::string, std::string>& bindings, int template_index) {
    if (template_index < 0 || template_index >= static_cast<int>(task.templates.size()))
        throw RangeError("template index out of range for '" + task.name + "'");
    return fill_template(task.templates[static_cast<std::size_t>(template_index)], bindings, task.name);
}

// ---- edit round-trip ----

MotionScript apply_edit(const MotionScript& script, const ScriptEdit& edit) {
    if (edit.snippet < 0 || edit.snippet >= script.size())
        throw RangeError("snippet " + std::to_string(edit.snippet) + " outside a script of " + std::to_string(script.size()));
    MotionScript out = script;
    std::string& text = out.snippets[static_cast<std::size_t>(edit.snippet)];
    if (!edit.replace) {
        text = edit.statement;
        return out;
    }
    std::vector<std::string> statements = split_statements(text);
    auto it = std::find(statements.begin(), statements.end(), *edit.replace);
    if (it == statements.end())
        throw LookupError("snippet " + std::to_string(edit.snippet) + " has no statement '" + *edit.replace + "'");
    *it = edit.statement;
    text = join_statements(statements);
    return out;
}

std::vector<ChannelDelta> motion_diff(const MotionSequence& before, const MotionSequence& after, double snippet_seconds) {
    if (before.dim() != after.dim()) throw InvalidArgument("motion_diff needs equal feature widths");
    const int frames = std::min(before.num_frames(), after.num_frames());
    const SnippetGrid grid = make_snippet_grid(frames, before.fps(), snippet_seconds);
    std::vector<ChannelDelta> out;
    for (int s = 0; s < grid.size(); ++s) {
        const auto [a, b] = grid.boundaries[static_cast<std::size_t>(s)];
        for (int c = 0; c < before.dim(); ++c) {
            double m = 0;
            for (int f = a; f < b; ++f)
                m = std::max(m, std::abs(static_cast<double>(before.frames()(f, c)) - after.frames()(f, c)));
            out.push_back({s, c, m});
        }
    }
    return out;
}

std::string edit_prompt(const std::string& caption, const MotionScript& script, int template_index) {
    const TaskSpec& t = TaskRegistry::builtin().find("(Text, Motion Script)-to-Motion");
    return build_prompt(t, {{std::string(kCaption), caption}, {std::string(kMotionScript), serialize_script(script)}},
                        template_index);
}

EditReport edit_roundtrip(const LanguageModel& lm, const MotionQuantizer& quantizer, const std::string& caption,
                          const ScriptEdit& edit, int max_tokens, int fps) {
    const TaskRegistry& reg = TaskRegistry::builtin();
    GenerateOptions go;
    go.max_tokens = max_tokens;
    EditReport r;
    auto first_span = [&](const Generation& g, const char* step) {
        if (g.motion.spans.empty()) {
            r.warnings.push_back(std::string(step) + ": no motion span in the output");
            return std::vector<int>{};
        }
        for (const Diagnostic& d : g.motion.diagnostics) r.warnings.push_back(std::string(step) + ": " + d.message);
        return g.motion.spans.front();
    };

    r.step1_prompt = build_prompt(reg.find("Text-to-Motion"), {{std::string(kCaption), caption}});
    r.before_tokens = first_span(lm.generate(r.step1_prompt, go), "step 1");

    r.step2_prompt = build_prompt(reg.find("Motion-to-Motion Script"), {{std::string(kMotion), wrap_motion_text(r.before_tokens)}});
    const Generation g2 = lm.generate(r.step2_prompt, go);
    r.step2_output = g2.text;
    const auto block = prompt_block(g2.text, "Motion Script");
    if (!block) throw DataError("step 2 output has no motion script block; raw output: " + g2.text);
    Parsed<MotionScript> parsed = parse_script(*block);
    if (parsed.value.size() == 0) throw DataError("step 2 output holds an empty motion script; raw output: " + g2.text);
    for (const Diagnostic& d : parsed.diagnostics) r.warnings.push_back("step 2: " + d.message);
    r.script = parsed.value;

    r.edited = apply_edit(r.script, edit);
    r.step4_prompt = edit_prompt(caption, r.edited);
    if (r.step4_prompt.find(serialize_script(r.edited)) == std::string::npos)
        throw DataError("edited script is not embedded verbatim in the step 4 prompt");
    r.after_tokens = first_span(lm.generate(r.step4_prompt, go), "step 4");

    const int l = quantizer.config().down_rate;
    if (!r.before_tokens.empty())
        r.before_motion = quantizer.reconstruct(r.before_tokens, static_cast<int>(r.before_tokens.size()) * l, fps);
    if (!r.after_tokens.empty())
        r.after_motion = quantizer.reconstruct(r.after_tokens, static_cast<int>(r.after_tokens.size()) * l, fps);
    if (r.before_motion && r.after_motion) r.deltas = motion_diff(*r.before_motion, *r.after_motion, r.script.snippet_seconds);
    return r;
}

std::string diff_report_json(const EditReport& report) {
    nlohmann::json deltas = nlohmann::json::array();
    for (const ChannelDelta& d : report.deltas)
        deltas.push_back({{"snippet", d.snippet}, {"channel", d.channel}, {"max_abs", d.max_abs}});
    nlohmann::json j = {{"script", report.script.snippets},
                        {"edited", report.edited.snippets},
                        {"before_tokens", report.before_tokens},
                        {"after_tokens", report.after_tokens},
                        {"step4_prompt", report.step4_prompt},
                        {"deltas", deltas},
                        {"warnings", report.warnings}};
    return j.dump(2);
}

// ---- evaluation ----

std::vector<LocalizationTrial> evaluate_localization(const LanguageModel& lm, const std::vector<Sample>& samples,
                                                     const std::string& task, int trials, std::uint64_t seed,
                                                     int max_tokens) {
    const TaskSpec& spec = TaskRegistry::builtin().find(task);
    if (spec.output_schema != kTime) throw ConfigError("task '" + task + "' does not produce a time span");
    std::vector<Sample> usable;
    for (const Sample& s : samples)
        if (s.can_bind(spec)) usable.push_back(s);
    if (usable.empty()) throw DataError("no evaluation sample can bind '" + task + "'");
    GenerateOptions go;
    go.max_tokens = max_tokens;
    std::vector<LocalizationTrial> out;
    for (int t = 0; t < trials; ++t) {
        LocalizationTrial trial;
        for (const PromptPair& p : finetune_set(usable, TaskRegistry::builtin(), task, t, mix_seed(seed, static_cast<std::uint64_t>(t)))) {
            const LocalizationScore s = localization_score(lm.generate(p.input, go).text, *p.span);
            trial.exact += s.exact_match;
            trial.iou += s.iou;
            trial.parsed += s.diagnostic ? 0 : 1;
            ++trial.n;
        }
        trial.exact /= trial.n;
        trial.iou /= trial.n;
        trial.parsed /= trial.n;
        out.push_back(trial);
    }
    return out;
}

std::vector<MetricRow> self_evaluation(const std::vector<CorpusEntry>& entries, const std::string& config_hash) {
    if (entries.size() < 2) throw DataError("self evaluation needs at least two motions");
    FeatureMatrix f(static_cast<Eigen::Index>(entries.size()), motion_statistics(entries.front().motion).size());
    std::vector<std::string> scripts;
    std::vector<std::vector<std::string>> refs;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        f.row(static_cast<Eigen::Index>(i)) = motion_statistics(entries[i].motion).transpose();
        const std::string text = entries[i].record.script ? join_statements(*entries[i].record.script)
                                                          : entries[i].record.captions.at(0);
        scripts.push_back(text);
        refs.push_back({text});
    }
    const long n = static_cast<long>(entries.size());
    const int batch = static_cast<int>(std::min<long>(32, n));
    const RetrievalResult rr = retrieval_metrics(f, f, batch, std::min(3, batch));
    const auto bleu = corpus_bleu(scripts, refs);
    double rouge = 0;
    for (std::size_t i = 0; i < scripts.size(); ++i) rouge += rouge_l(scripts[i], refs[i]);
    rouge /= static_cast<double>(scripts.size());
    const TimeSpan span = span_from_snippets(0, 1, kDefaultSnippetSeconds);
    return {summarize_trials("fid", {fid(f, f)}, n, config_hash),
            summarize_trials("r_precision@1", {rr.r_precision.at(0)}, n, config_hash),
            summarize_trials("mm_dist", {rr.mm_dist}, n, config_hash),
            summarize_trials("bleu@4", {bleu[3]}, n, config_hash),
            summarize_trials("rouge_l", {rouge}, n, config_hash),
            summarize_trials("iou", {localization_score(span, span).iou}, n, config_hash)};
}

namespace {

const std::vector<Sample>& split_samples(const Workspace& ws) {
    const std::string& split = ws.config.str("eval_split");
    if (split == "test") return ws.test;
    if (split == "val") return ws.val;
    if (split == "train") return ws.train;
    throw ConfigError("eval_split must be train, val or test");
}

std::vector<CorpusEntry> split_entries(const Workspace& ws) {
    std::vector<CorpusEntry> out;
    for (const CorpusEntry& e : ws.corpus)
        if (e.record.split == ws.config.str("eval_split")) out.push_back(e);
    return out;
}

LanguageModel load_model(const Workspace& ws) {
    const fs::path p = ws.config.path("model");
    if (!fs::exists(p)) throw ConfigError("model checkpoint '" + p.string() + "' not found");
    return LanguageModel::load(p);
}

// One generation per motion: the first pair of each motion id.
std::vector<PromptPair> per_motion(const std::vector<Sample>& samples, const std::string& task, std::uint64_t seed) {
    const TaskSpec& spec = TaskRegistry::builtin().find(task);
    std::vector<Sample> usable;
    for (const Sample& s : samples)
        if (s.can_bind(spec)) usable.push_back(s);
    std::vector<PromptPair> out;
    for (PromptPair& p : finetune_set(usable, TaskRegistry::builtin(), task, 0, seed))
        if (out.empty() || out.back().motion_id != p.motion_id) out.push_back(std::move(p));
    return out;
}

const Sample& find_sample(const std::vector<Sample>& samples, const std::string& id) {
    for (const Sample& s : samples)
        if (s.id == id) return s;
    throw LookupError("no sample '" + id + "'");
}

}  // namespace

std::vector<MetricRow> evaluate_suite(const Workspace& ws, const std::string& suite) {
    const RunConfig& cfg = ws.config;
    const std::string hash = cfg.hash();
    const fs::path report = cfg.is_set("report") ? cfg.path("report") : cfg.path("cache_dir") / ("report-" + suite + ".jsonl");
    check_writable(report, cfg.flag("force"));
    const std::uint64_t seed = cfg.seed("seed");
    const int trials = static_cast<int>(cfg.integer("trials"));
    const int max_tokens = static_cast<int>(cfg.integer("max_new_tokens"));
    if (trials < 1) throw ConfigError("trials must be positive");
    std::vector<MetricRow> rows;

    if (suite == "sanity") {
        rows = self_evaluation(split_entries(ws), hash);
    } else if (suite == "localization") {
        const LanguageModel lm = load_model(ws);
        const std::string task = TaskRegistry::builtin().find(cfg.str("task")).output_schema == kTime
                                     ? cfg.str("task")
                                     : "(Motion Script, Snippet Motion Script)-to-Time";
        const auto res = evaluate_localization(lm, split_samples(ws), task, trials, seed, max_tokens > 0 ? max_tokens : 24);
        std::vector<double> exact, iou, parsed;
        for (const auto& t : res) {
            exact.push_back(t.exact);
            iou.push_back(t.iou);
            parsed.push_back(t.parsed);
        }
        const long n = res.front().n;
        rows = {summarize_trials("localization_exact", exact, n, hash), summarize_trials("localization_iou", iou, n, hash),
                summarize_trials("parse_rate", parsed, n, hash)};
    } else if (suite == "captioning" || suite == "script") {
        const LanguageModel lm = load_model(ws);
        const std::string task = suite == "captioning" ? "Motion-to-Text" : "Motion-to-Motion Script";
        GenerateOptions go;
        go.max_tokens = max_tokens;
        std::vector<std::string> cands;
        std::vector<std::vector<std::string>> refs;
        double rouge = 0, snippet_bleu = 0;
        const auto pairs = per_motion(split_samples(ws), task, seed);
        if (pairs.empty()) throw DataError("no evaluation sample for '" + task + "'");
        for (const PromptPair& p : pairs) {
            const std::string out = lm.generate(p.input, go).text;
            const Sample& s = find_sample(split_samples(ws), p.motion_id);
            if (suite == "captioning") {
                cands.push_back(out);
                refs.push_back(s.captions);
                rouge += rouge_l(out, s.captions);
            } else {
                const std::string predicted = prompt_block(out, "Motion Script").value_or("");
                const SnippetEvaluation e = snippet_level_eval(predicted, serialize_script(*s.script));
                snippet_bleu += e.aggregate.bleu[3];
                rouge += e.aggregate.rouge_l;
            }
        }
        const long n = static_cast<long>(pairs.size());
        if (suite == "captioning") {
            const auto bleu = corpus_bleu(cands, refs);
            rows = {summarize_trials("bleu@1", {bleu[0]}, n, hash), summarize_trials("bleu@4", {bleu[3]}, n, hash),
                    summarize_trials("rouge_l", {rouge / n}, n, hash)};
        } else {
            rows = {summarize_trials("snippet_bleu@4", {snippet_bleu / n}, n, hash),
                    summarize_trials("snippet_rouge_l", {rouge / n}, n, hash)};
        }
    } else if (suite == "generation") {
        const LanguageModel lm = load_model(ws);
        const auto entries = split_entries(ws);
        std::unique_ptr<EmbeddingOracle> oracle;
        if (cfg.str("embedder") == "handcrafted") {
            oracle = std::make_unique<HandcraftedEmbedder>();
        } else if (cfg.str("embedder") == "contrastive") {
            std::vector<MotionSequence> motions;
            std::vector<std::string> texts;
            for (const CorpusEntry& e : ws.corpus)
                if (e.record.split == "train") {
                    motions.push_back(e.motion);
                    texts.push_back(e.record.captions.at(0));
                }
            ContrastiveEmbedder::Options o;
            o.seed = seed;
            auto c = std::make_unique<ContrastiveEmbedder>(static_cast<int>(motion_statistics(motions.at(0)).size()), o);
            c->train(motions, texts);
            oracle = std::move(c);
        } else {
            throw ConfigError("embedder must be handcrafted or contrastive");
        }
        std::vector<MotionSequence> real;
        std::vector<std::string> captions;
        for (const CorpusEntry& e : entries) {
            real.push_back(e.motion);
            captions.push_back(e.record.captions.at(0));
        }
        if (real.size() < 2) throw DataError("generation suite needs at least two evaluation motions");
        const FeatureMatrix real_f = oracle->embed_motions(real);
        const FeatureMatrix text_f = oracle->embed_texts(captions);
        const TaskSpec& t2m = TaskRegistry::builtin().find("Text-to-Motion");
        const int batch = static_cast<int>(cfg.integer("retrieval_batch"));
        const int l = ws.quantizer.config().down_rate;
        std::vector<double> fids, r1, r3, mm, div;
        std::vector<FeatureMatrix> groups(real.size(), FeatureMatrix(trials, oracle->dim()));
        for (int trial = 0; trial < trials; ++trial) {
            GenerateOptions go;
            go.max_tokens = max_tokens;
            go.temperature = cfg.real("temperature");
            go.top_k = static_cast<int>(cfg.integer("top_k"));
            std::vector<MotionSequence> generated;
            for (std::size_t i = 0; i < real.size(); ++i) {
                go.seed = mix_seed(seed, static_cast<std::uint64_t>(trial) * 1000003u + i);
                const Generation g = lm.generate(build_prompt(t2m, {{std::string(kCaption), captions[i]}}), go);
                std::vector<int> tokens = g.motion.spans.empty() ? std::vector<int>{} : g.motion.spans.front();
                if (tokens.empty()) tokens.push_back(0);
                generated.push_back(ws.quantizer.reconstruct(tokens, static_cast<int>(tokens.size()) * l, real[i].fps()));
            }
            const FeatureMatrix gen_f = oracle->embed_motions(generated);
            for (std::size_t i = 0; i < real.size(); ++i) groups[i].row(trial) = gen_f.row(static_cast<Eigen::Index>(i));
            fids.push_back(fid(real_f, gen_f));
            const RetrievalResult rr = retrieval_metrics(text_f, gen_f, batch, 3);
            r1.push_back(rr.r_precision.at(0));
            r3.push_back(rr.r_precision.at(2));
            mm.push_back(rr.mm_dist);
            div.push_back(diversity(gen_f, std::min<int>(300, static_cast<int>(gen_f.rows())), mix_seed(seed, static_cast<std::uint64_t>(trial))));
        }
        const long n = static_cast<long>(real.size());
        rows = {summarize_trials("fid", fids, n, hash),          summarize_trials("r_precision@1", r1, n, hash),
                summarize_trials("r_precision@3", r3, n, hash),  summarize_trials("mm_dist", mm, n, hash),
                summarize_trials("diversity", div, n, hash)};
        if (trials >= 2) rows.push_back(summarize_trials("multimodality", {multimodality(groups)}, n, hash));
    } else {
        throw ConfigError("unknown suite '" + suite + "' (sanity, localization, captioning, script, generation)");
    }

    const auto selected = cfg.list("metrics");
    if (!selected.empty())
        rows.erase(std::remove_if(rows.begin(), rows.end(),
                                  [&](const MetricRow& m) {
                                      return std::find(selected.begin(), selected.end(), m.metric) == selected.end();
                                  }),
                   rows.end());
    write_text(report, report_jsonl(rows));
    return rows;
}

}  // namespace mgm
