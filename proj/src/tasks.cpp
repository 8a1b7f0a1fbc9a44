#include "mgm/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <regex>

#include <json.hpp>

#include "mgm/errors.hpp"
#include "mgm/vocabulary.hpp"

namespace mgm {

namespace detail {
extern const std::string_view kTaskManifest;
}

std::string_view builtin_manifest() { return detail::kTaskManifest; }

const std::set<std::string>& known_placeholders() {
    static const std::set<std::string> names = {
        std::string(kCaption),     std::string(kMotion),        std::string(kMotionScript),
        std::string(kSnippetMotionScript), std::string(kTime),  std::string(kHeadMotion),
        std::string(kTailMotion),  std::string(kRandomMotions), std::string(kSnippetMotion)};
    return names;
}

std::vector<std::string> find_placeholders(std::string_view text) {
    std::vector<std::string> found;
    std::size_t pos = 0;
    while ((pos = text.find('[', pos)) != std::string_view::npos) {
        const std::size_t close = text.find(']', pos);
        if (close == std::string_view::npos) break;
        std::string candidate(text.substr(pos, close - pos + 1));
        if (known_placeholders().count(candidate)) {
            found.push_back(std::move(candidate));
            pos = close + 1;
        } else {
            ++pos;
        }
    }
    return found;
}

bool TaskSpec::motion_output() const { return output_schema == kMotion || output_schema == kSnippetMotion; }

namespace {

const std::set<std::string> kInputTypes = {"text", "time", "motion"};

TaskSpec parse_task(const nlohmann::json& j, std::size_t line) {
    const auto where = [&](const std::string& what) {
        return SchemaError("manifest line " + std::to_string(line) + ": " + what);
    };
    if (!j.is_object()) throw where("not an object");
    for (const char* key : {"name", "granularity", "input_types", "templates", "placeholders", "output_schema"})
        if (!j.contains(key)) throw where(std::string("missing field '") + key + "'");
    TaskSpec t;
    try {
        t.name = j.at("name").get<std::string>();
        const std::string gran = j.at("granularity").get<std::string>();
        if (gran == "coarse") t.granularity = Granularity::kCoarse;
        else if (gran == "fine") t.granularity = Granularity::kFine;
        else throw where("granularity must be coarse or fine, got '" + gran + "'");
        t.input_types = j.at("input_types").get<std::vector<std::string>>();
        t.templates = j.at("templates").get<std::vector<std::string>>();
        for (const auto& p : j.at("placeholders").get<std::vector<std::string>>()) t.placeholders.insert(p);
        t.output_schema = j.at("output_schema").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw where(e.what());
    }
    if (t.name.empty()) throw where("empty task name");
    if (t.templates.empty()) throw where("task '" + t.name + "' has no templates");
    if (t.input_types.empty()) throw where("task '" + t.name + "' has no input types");
    for (const auto& ty : t.input_types)
        if (!kInputTypes.count(ty)) throw where("unknown input type '" + ty + "'");
    for (const auto& p : t.placeholders)
        if (!known_placeholders().count(p)) throw where("unknown placeholder '" + p + "'");

    std::set<std::string> seen;
    auto check_text = [&](const std::string& text) {
        for (const auto& p : find_placeholders(text)) {
            if (!t.placeholders.count(p))
                throw where("task '" + t.name + "' uses " + p + " outside its placeholder set");
            seen.insert(p);
        }
    };
    for (const auto& tpl : t.templates) check_text(tpl);
    check_text(t.output_schema);
    for (const auto& p : t.placeholders)
        if (!seen.count(p)) throw where("task '" + t.name + "' declares " + p + " but never uses it");
    if (find_placeholders(t.output_schema).empty()) throw where("task '" + t.name + "' has an empty output schema");

    // Motion may not be generated from detailed text alone.
    if (t.motion_output() && t.needs_script() && !t.needs_caption())
        throw where("task '" + t.name + "' generates motion from a motion script without a caption");
    return t;
}

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return splitmix(splitmix(a) ^ (b + 0x632be59bd9b4e019ULL)); }

TaskRegistry TaskRegistry::parse(std::string_view jsonl) {
    TaskRegistry reg;
    std::set<std::string> names;
    std::size_t line_no = 0, start = 0;
    while (start < jsonl.size()) {
        std::size_t end = jsonl.find('\n', start);
        if (end == std::string_view::npos) end = jsonl.size();
        ++line_no;
        const std::string_view line = jsonl.substr(start, end - start);
        start = end + 1;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw SchemaError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        TaskSpec t = parse_task(j, line_no);
        if (!names.insert(t.name).second) throw SchemaError("duplicate task '" + t.name + "'");
        reg.tasks_.push_back(std::move(t));
    }
    if (reg.tasks_.empty()) throw SchemaError("manifest has no tasks");
    return reg;
}

const TaskRegistry& TaskRegistry::builtin() {
    static const TaskRegistry reg = parse(builtin_manifest());
    return reg;
}

const TaskSpec& TaskRegistry::find(std::string_view name) const { return tasks_[static_cast<std::size_t>(index_of(name))]; }

int TaskRegistry::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < tasks_.size(); ++i)
        if (tasks_[i].name == name) return static_cast<int>(i);
    throw LookupError("unknown task '" + std::string(name) + "'");
}

void Sample::validate() const {
    if (tokens.empty()) throw InvalidArgument("sample '" + id + "' has no motion tokens");
    if (down_rate < 1) throw InvalidArgument("sample '" + id + "' has a non-positive down rate");
    if (grid.size() < 1) throw InvalidArgument("sample '" + id + "' has an empty snippet grid");
    const int expected = (grid.num_frames + down_rate - 1) / down_rate;
    if (static_cast<int>(tokens.size()) != expected)
        throw InvalidArgument("sample '" + id + "' has " + std::to_string(tokens.size()) + " tokens for " +
                              std::to_string(grid.num_frames) + " frames");
    if (script && script->size() != grid.size())
        throw InvalidArgument("sample '" + id + "' script has " + std::to_string(script->size()) +
                              " snippets, grid has " + std::to_string(grid.size()));
}

std::pair<int, int> Sample::token_range(int first_snippet, int last_snippet) const {
    const auto [f0, f1] = grid.frame_range(first_snippet, last_snippet);
    const int n = static_cast<int>(tokens.size());
    const int t0 = std::min(f0 / down_rate, n - 1);
    const int t1 = std::min((f1 + down_rate - 1) / down_rate, n);
    return {t0, std::max(t1, t0 + 1)};
}

bool Sample::can_bind(const TaskSpec& task) const {
    if (task.needs_caption() && captions.empty()) return false;
    if (task.needs_script() && !script) return false;
    return !tokens.empty();
}

AuxBindings derive_aux(const Sample& sample, std::uint64_t seed, bool relative_to_span, const AuxOptions& options) {
    if (sample.tokens.empty()) throw InvalidArgument("sample '" + sample.id + "' has no motion tokens");
    std::mt19937_64 rng(seed);
    AuxBindings aux;
    const long s = sample.grid.size();
    std::uniform_int_distribution<long> pick_span(0, s * (s + 1) / 2 - 1);
    long k = pick_span(rng);
    int a = 0;
    while (k >= s - a) {
        k -= s - a;
        ++a;
    }
    aux.first_snippet = a;
    aux.last_snippet = a + 1 + static_cast<int>(k);
    aux.span = span_from_snippets(aux.first_snippet, aux.last_snippet, sample.grid.snippet_seconds);
    const auto [t0, t1] = sample.token_range(aux.first_snippet, aux.last_snippet);
    aux.span_tokens.assign(sample.tokens.begin() + t0, sample.tokens.begin() + t1);

    const std::vector<int>& base = relative_to_span ? aux.span_tokens : sample.tokens;
    const int n = static_cast<int>(base.size());
    const int edge = std::clamp(static_cast<int>(std::ceil(options.edge_fraction * n - 1e-9)), 1, n);
    aux.head.assign(base.begin(), base.begin() + edge);
    aux.tail.assign(base.end() - edge, base.end());
    std::uniform_int_distribution<int> pick_k(1, std::max(1, n / 4));
    const int count = pick_k(rng);
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < count; ++i) {
        std::uniform_int_distribution<int> pick(i, n - 1);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    idx.resize(static_cast<std::size_t>(count));
    std::sort(idx.begin(), idx.end());
    for (int i : idx) aux.random.push_back(base[static_cast<std::size_t>(i)]);
    return aux;
}

std::string fill_template(std::string_view text, const std::map<std::string, std::string>& bindings,
                          std::string_view task) {
    std::string out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t open = text.find('[', pos);
        if (open == std::string::npos) break;
        const std::size_t close = text.find(']', open);
        if (close == std::string::npos) break;
        const std::string name(text.substr(open, close - open + 1));
        if (!known_placeholders().count(name)) {
            out.append(text, pos, open + 1 - pos);
            pos = open + 1;
            continue;
        }
        auto it = bindings.find(name);
        if (it == bindings.end()) throw SchemaError("task '" + std::string(task) + "': no binding for " + name);
        out.append(text, pos, open - pos);
        out += it->second;
        pos = close + 1;
    }
    out.append(text, pos, std::string::npos);
    return out;
}

PromptPair instantiate(const TaskSpec& task, const Sample& sample, std::uint64_t seed,
                       const InstantiateOptions& options) {
    std::mt19937_64 rng(seed);
    PromptPair pair;
    pair.task = task.name;
    pair.motion_id = sample.id;
    pair.seed = seed;
    const int nt = static_cast<int>(task.templates.size());
    if (options.template_index >= nt) throw RangeError("template index out of range for '" + task.name + "'");
    pair.template_index = options.template_index >= 0
                              ? options.template_index
                              : std::uniform_int_distribution<int>(0, nt - 1)(rng);

    std::map<std::string, std::string> b;
    if (task.needs_caption()) {
        if (sample.captions.empty()) throw SchemaError("task '" + task.name + "': sample '" + sample.id + "' binds no [caption]");
        const int nc = static_cast<int>(sample.captions.size());
        if (options.caption_index >= nc) throw RangeError("caption index out of range");
        pair.caption_index = options.caption_index >= 0 ? options.caption_index
                                                        : std::uniform_int_distribution<int>(0, nc - 1)(rng);
        b[std::string(kCaption)] = sample.captions[static_cast<std::size_t>(pair.caption_index)];
    }
    if (task.needs_script() && !sample.script)
        throw SchemaError("task '" + task.name + "': sample '" + sample.id + "' binds no [motion script]");

    const AuxBindings aux = derive_aux(sample, mix_seed(seed, 0xa0c5), task.span_target(), options.aux);
    b[std::string(kMotion)] = wrap_motion_text(task.span_target() ? aux.span_tokens : sample.tokens);
    b[std::string(kHeadMotion)] = wrap_motion_text(aux.head);
    b[std::string(kTailMotion)] = wrap_motion_text(aux.tail);
    b[std::string(kRandomMotions)] = wrap_motion_text(aux.random);
    b[std::string(kSnippetMotion)] = wrap_motion_text(aux.span_tokens);
    b[std::string(kTime)] = format_time_span(aux.span);
    if (sample.script) {
        b[std::string(kMotionScript)] = serialize_script(*sample.script);
        b[std::string(kSnippetMotionScript)] = serialize_script(script_window(*sample.script, aux.span));
    }
    if (task.uses(kTime)) pair.span = aux.span;

    pair.input = fill_template(task.templates[static_cast<std::size_t>(pair.template_index)], b, task.name);
    pair.target = fill_template(task.output_schema, b, task.name);
    if (pair.target.empty()) throw SchemaError("task '" + task.name + "' produced an empty target");
    return pair;
}

bool has_unresolved_placeholder(std::string_view text) {
    static const std::regex re(R"(\[[a-z ']+\])");
    return std::regex_search(text.begin(), text.end(), re);
}

PretrainStream::PretrainStream(const std::vector<Sample>& dataset, const TaskRegistry& registry,
                               const StreamOptions& options)
    : dataset_(dataset), rng_(options.seed), options_(options) {
    if (dataset.empty()) throw ConfigError("pretraining stream needs a nonempty dataset");
    std::set<std::string> wanted(options.tasks.begin(), options.tasks.end());
    std::set<std::string> excluded(options.exclude_tasks.begin(), options.exclude_tasks.end());
    for (const auto& n : wanted) registry.find(n);
    for (const auto& n : excluded) registry.find(n);
    std::vector<double> weights;
    for (const TaskSpec& t : registry.tasks()) {
        if (!wanted.empty() && !wanted.count(t.name)) continue;
        if (excluded.count(t.name)) continue;
        std::vector<int> usable;
        for (std::size_t i = 0; i < dataset.size(); ++i)
            if (dataset[i].can_bind(t)) usable.push_back(static_cast<int>(i));
        if (usable.empty()) throw ConfigError("no sample can bind the placeholders of task '" + t.name + "'");
        auto w = options.weights.find(t.name);
        const double weight = w == options.weights.end() ? 1.0 : w->second;
        if (!(weight >= 0)) throw ConfigError("negative mixture weight for '" + t.name + "'");
        specs_.push_back(&t);
        names_.push_back(t.name);
        weights.push_back(weight);
        order_.push_back(std::move(usable));
        counts_[t.name] = 0;
    }
    if (specs_.empty()) throw ConfigError("task selection is empty");
    if (std::accumulate(weights.begin(), weights.end(), 0.0) <= 0) throw ConfigError("all mixture weights are zero");
    pick_ = std::discrete_distribution<int>(weights.begin(), weights.end());
    cursor_.assign(specs_.size(), 0);
    epoch_.assign(specs_.size(), 0);
    for (std::size_t t = 0; t < specs_.size(); ++t) {
        std::mt19937_64 shuffle_rng(mix_seed(options.seed, mix_seed(t, 0)));
        std::shuffle(order_[t].begin(), order_[t].end(), shuffle_rng);
    }
}

int PretrainStream::next_sample_for(int task) {
    auto& order = order_[static_cast<std::size_t>(task)];
    auto& cur = cursor_[static_cast<std::size_t>(task)];
    if (cur == order.size()) {
        cur = 0;
        auto& ep = epoch_[static_cast<std::size_t>(task)];
        ++ep;
        std::mt19937_64 shuffle_rng(mix_seed(options_.seed, mix_seed(static_cast<std::uint64_t>(task),
                                                                      static_cast<std::uint64_t>(ep))));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
    }
    return order[cur++];
}

PromptPair PretrainStream::next() {
    const int t = pick_(rng_);
    const int s = next_sample_for(t);
    const std::uint64_t seed = mix_seed(options_.seed ^ 0x5eedULL, static_cast<std::uint64_t>(draws_));
    ++draws_;
    ++counts_[names_[static_cast<std::size_t>(t)]];
    InstantiateOptions io;
    io.aux = options_.aux;
    return instantiate(*specs_[static_cast<std::size_t>(t)], dataset_[static_cast<std::size_t>(s)], seed, io);
}

std::uint64_t PretrainStream::mix_hash() const {
    std::vector<std::string> sorted = names_;
    std::sort(sorted.begin(), sorted.end());
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& n : sorted) {
        for (unsigned char c : n) h = (h ^ c) * 1099511628211ULL;
        h = (h ^ 0xff) * 1099511628211ULL;
    }
    return h;
}

std::vector<PromptPair> finetune_set(const std::vector<Sample>& dataset, const TaskRegistry& registry,
                                     std::string_view task_name, int epoch, std::uint64_t seed,
                                     const AuxOptions& aux) {
    const TaskSpec& task = registry.find(task_name);
    std::vector<const Sample*> samples;
    for (const Sample& s : dataset)
        if (s.can_bind(task)) samples.push_back(&s);
    std::stable_sort(samples.begin(), samples.end(), [](const Sample* a, const Sample* b) { return a->id < b->id; });

    std::vector<PromptPair> out;
    const int nt = static_cast<int>(task.templates.size());
    std::uint64_t counter = 0;
    for (const Sample* s : samples) {
        const int rounds = task.needs_caption() ? static_cast<int>(s->captions.size()) : 1;
        for (int c = 0; c < rounds; ++c, ++counter) {
            InstantiateOptions io;
            io.aux = aux;
            io.template_index = static_cast<int>((counter + static_cast<std::uint64_t>(epoch)) % static_cast<std::uint64_t>(nt));
            io.caption_index = task.needs_caption() ? c : -1;
            out.push_back(instantiate(task, *s, mix_seed(mix_seed(seed, static_cast<std::uint64_t>(epoch)), counter), io));
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const PromptPair& a, const PromptPair& b) {
        return std::tie(a.motion_id, a.template_index) < std::tie(b.motion_id, b.template_index);
    });
    return out;
}

std::optional<std::string> prompt_block(std::string_view input, std::string_view header) {
    const std::string framed = "### " + std::string(header) + " ###\n";
    const std::size_t at = input.find(framed);
    if (at == std::string_view::npos) return std::nullopt;
    const std::size_t begin = at + framed.size();
    std::size_t end = input.find("\n###", begin);
    if (end == std::string_view::npos) end = input.size();
    return std::string(input.substr(begin, end - begin));
}

}  // namespace mgm
