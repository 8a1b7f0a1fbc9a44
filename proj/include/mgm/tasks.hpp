#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mgm/motion.hpp"
#include "mgm/script.hpp"

namespace mgm {

enum class Granularity { kCoarse, kFine };

inline constexpr std::string_view kCaption = "[caption]";
inline constexpr std::string_view kMotion = "[motion]";
inline constexpr std::string_view kMotionScript = "[motion script]";
inline constexpr std::string_view kSnippetMotionScript = "[snippet motion script]";
inline constexpr std::string_view kTime = "[time]";
inline constexpr std::string_view kHeadMotion = "[head motion]";
inline constexpr std::string_view kTailMotion = "[tail motion]";
inline constexpr std::string_view kRandomMotions = "[random motions]";
inline constexpr std::string_view kSnippetMotion = "[snippet motion]";

// Every placeholder name a template may use.
const std::set<std::string>& known_placeholders();

// Placeholders occurring in `text`, in order of appearance (with repeats).
std::vector<std::string> find_placeholders(std::string_view text);

struct TaskSpec {
    std::string name;
    Granularity granularity = Granularity::kCoarse;
    std::vector<std::string> input_types;  // subset of {text, time, motion}
    std::vector<std::string> templates;
    std::set<std::string> placeholders;
    std::string output_schema;

    bool uses(std::string_view placeholder) const { return placeholders.count(std::string(placeholder)) > 0; }
    bool needs_script() const { return uses(kMotionScript) || uses(kSnippetMotionScript); }
    bool needs_caption() const { return uses(kCaption); }
    bool motion_output() const;
    // Time-conditioned motion generation: [motion] then names the span's tokens.
    bool span_target() const { return uses(kTime) && output_schema == kMotion; }
};

class TaskRegistry {
public:
    // Parses and validates a line-delimited manifest. Throws SchemaError.
    static TaskRegistry parse(std::string_view jsonl);
    // The manifest compiled into the library.
    static const TaskRegistry& builtin();

    const std::vector<TaskSpec>& tasks() const noexcept { return tasks_; }
    int size() const noexcept { return static_cast<int>(tasks_.size()); }
    // Throws LookupError for unknown names.
    const TaskSpec& find(std::string_view name) const;
    int index_of(std::string_view name) const;

private:
    std::vector<TaskSpec> tasks_;
};

std::string_view builtin_manifest();

// One motion with everything the templates can bind.
struct Sample {
    std::string id;
    std::vector<int> tokens;                 // codebook indices
    std::vector<std::string> captions;
    std::optional<MotionScript> script;
    SnippetGrid grid;
    int down_rate = 4;

    // Throws InvalidArgument when tokens, grid and script disagree.
    void validate() const;
    // Token index range [first, last) covering snippets [first_snippet, last_snippet).
    std::pair<int, int> token_range(int first_snippet, int last_snippet) const;
    bool can_bind(const TaskSpec& task) const;
};

struct AuxOptions {
    double edge_fraction = 0.25;  // r for head/tail
};

struct AuxBindings {
    std::vector<int> head;
    std::vector<int> tail;
    std::vector<int> random;
    int first_snippet = 0;  // [time] span in snippets
    int last_snippet = 1;
    TimeSpan span;
    std::vector<int> span_tokens;
};

// Head/tail/random are cut from `base` (the full token list, or the span's
// tokens for span-target tasks).
AuxBindings derive_aux(const Sample& sample, std::uint64_t seed, bool relative_to_span = false,
                       const AuxOptions& options = {});

struct PromptPair {
    std::string task;
    std::string input;
    std::string target;
    std::string motion_id;
    int template_index = 0;
    int caption_index = -1;
    std::uint64_t seed = 0;
    // Ground-truth span for time-bearing tasks.
    std::optional<TimeSpan> span;
};

struct InstantiateOptions {
    int template_index = -1;  // -1: uniform choice
    int caption_index = -1;   // -1: uniform choice
    AuxOptions aux;
};

// Throws SchemaError naming any placeholder the sample cannot bind.
PromptPair instantiate(const TaskSpec& task, const Sample& sample, std::uint64_t seed,
                       const InstantiateOptions& options = {});

// Single-pass replacement of known placeholders; text produced by a binding is
// never rescanned. Throws SchemaError for a placeholder without a binding.
std::string fill_template(std::string_view text, const std::map<std::string, std::string>& bindings,
                          std::string_view task = {});

// Strict placeholder-hygiene check used by tests and the stream.
bool has_unresolved_placeholder(std::string_view text);

// Deterministic seed mixing.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

struct StreamOptions {
    std::vector<std::string> tasks;          // whitelist; empty = all
    std::vector<std::string> exclude_tasks;  // leave-one-out
    std::map<std::string, double> weights;   // missing = 1
    std::uint64_t seed = 0;
    AuxOptions aux;
};

// Infinite multi-task mixture. Each reader owns its own instance.
class PretrainStream {
public:
    // Throws ConfigError when a selected task cannot be bound by any sample,
    // LookupError for unknown task names.
    PretrainStream(const std::vector<Sample>& dataset, const TaskRegistry& registry, const StreamOptions& options);

    PromptPair next();
    const std::vector<std::string>& active_tasks() const noexcept { return names_; }
    const std::map<std::string, long>& counts() const noexcept { return counts_; }
    long draws() const noexcept { return draws_; }
    // Order-independent hash of the active task names.
    std::uint64_t mix_hash() const;

private:
    int next_sample_for(int task);

    const std::vector<Sample>& dataset_;
    std::vector<const TaskSpec*> specs_;
    std::vector<std::string> names_;
    std::discrete_distribution<int> pick_;
    std::vector<std::vector<int>> order_;  // per task: sample permutation
    std::vector<std::size_t> cursor_;
    std::vector<long> epoch_;
    std::mt19937_64 rng_;
    StreamOptions options_;
    std::map<std::string, long> counts_;
    long draws_ = 0;
};

// One epoch of instruction data for a single task: every sample, and every
// caption for caption-bearing tasks, with templates rotating by epoch.
std::vector<PromptPair> finetune_set(const std::vector<Sample>& dataset, const TaskRegistry& registry,
                                     std::string_view task, int epoch = 0, std::uint64_t seed = 0,
                                     const AuxOptions& aux = {});

// The text a localization prompt shows for its snippet block, and the span a
// target names; used for the span/target consistency law.
std::optional<std::string> prompt_block(std::string_view input, std::string_view header);

}  // namespace mgm
