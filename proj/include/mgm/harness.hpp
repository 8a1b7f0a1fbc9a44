#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mgm/metrics.hpp"
#include "mgm/motion.hpp"
#include "mgm/quantizer.hpp"
#include "mgm/script.hpp"
#include "mgm/seq2seq.hpp"
#include "mgm/synth.hpp"
#include "mgm/tasks.hpp"
#include "mgm/vocabulary.hpp"

namespace mgm {

// ---- configuration ----

// Flat key=value settings with typed defaults. Lines are `key = value`, `#`
// starts a comment, lists are comma separated. Unknown keys and malformed
// values throw ConfigError.
class RunConfig {
public:
    RunConfig();

    static RunConfig parse(std::string_view text);
    static RunConfig load(const std::filesystem::path& path);

    // `key=value`; throws ConfigError.
    void set(const std::string& key, const std::string& value);
    void apply_overrides(const std::vector<std::string>& assignments);
    bool is_set(const std::string& key) const { return explicit_.count(key) > 0; }

    const std::string& str(const std::string& key) const;
    long integer(const std::string& key) const;
    double real(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::vector<std::string> list(const std::string& key) const;
    std::uint64_t seed(const std::string& key) const { return static_cast<std::uint64_t>(integer(key)); }

    // Turns every path-valued key absolute. Empty paths are derived from the
    // cache directory (`cache_dir`, else $MGM_CACHE_DIR, else ./mgm-cache).
    void resolve_paths(const std::filesystem::path& base = std::filesystem::current_path());
    std::filesystem::path path(const std::string& key) const;

    // Every key except `force`, sorted, one `key=value` line each.
    std::string canonical() const;
    // FNV-1a 64 of canonical(), 16 hex digits.
    std::string hash() const;

    static const std::vector<std::string>& keys();

private:
    std::map<std::string, std::string> values_;
    std::map<std::string, bool> explicit_;
};

std::string fnv1a_hex(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

// ---- datasets ----

// One line of a dataset manifest:
// {"id", "motion_path", "captions": [..], "script": [one string per snippet] | null, "split"}.
struct DatasetRecord {
    std::string id;
    std::filesystem::path motion_path;
    std::vector<std::string> captions;
    std::optional<std::vector<std::string>> script;
    std::string split;  // train | val | test
};

// Relative motion paths are resolved against the manifest's directory.
std::vector<DatasetRecord> read_dataset_manifest(const std::filesystem::path& manifest);

struct CorpusEntry {
    DatasetRecord record;
    MotionSequence motion;
};

// Assigns train/val/test by a seeded shuffle: the first `train` fraction,
// then `val`, the rest test.
std::vector<std::string> assign_splits(int count, double train, double val, std::uint64_t seed);

// Synthetic corpus as dataset entries, split per the config.
std::vector<CorpusEntry> synth_entries(const RunConfig& config);

// Writes `manifest.jsonl` and `motions/<id>.mgm` under `dir`.
void write_dataset(const std::filesystem::path& dir, const std::vector<CorpusEntry>& entries);
std::vector<CorpusEntry> read_dataset(const std::filesystem::path& manifest);

// The config's corpus: `corpus_dir`/manifest.jsonl when set, else synthesized.
std::vector<CorpusEntry> load_corpus(const RunConfig& config);

Sample make_sample(const CorpusEntry& entry, const MotionQuantizer& quantizer,
                   double snippet_seconds = kDefaultSnippetSeconds);

// Templates, output schemas, captions, scripts and every canonical time span
// up to `max_snippets`.
std::vector<std::string> vocab_corpus(const std::vector<CorpusEntry>& entries, const TaskRegistry& registry,
                                      int max_snippets, double snippet_seconds = kDefaultSnippetSeconds);

struct Workspace {
    RunConfig config;
    MotionQuantizer quantizer;
    UnifiedVocabulary vocab;
    std::vector<CorpusEntry> corpus;
    std::vector<Sample> train, val, test;
};

// Loads the corpus, the frozen quantizer and the vocabulary (built from the
// training split when no vocabulary file exists). Throws ConfigError when the
// quantizer checkpoint is missing.
Workspace open_workspace(const RunConfig& config);

Seq2SeqConfig model_config(const RunConfig& config, const UnifiedVocabulary& vocab);
QuantizerConfig quantizer_config(const RunConfig& config, int input_dim);
VqTrainSchedule vq_schedule(const RunConfig& config);

// Trains the quantizer on the training split and writes it to `quantizer`
// with the loss curve next to it (`.curve.csv`).
VqTrainResult run_train_vqvae(const RunConfig& config, const std::vector<CorpusEntry>& corpus);

// ---- training ----

struct TrainLogRow {
    long step = 0;
    std::string stage;
    std::string mix_hash;
    double loss = 0;
    double lr = 0;
};

struct EvalLogRow {
    long step = 0;
    std::string task;
    double loss = 0;
};

struct TrainResult {
    std::filesystem::path checkpoint;
    std::string config_hash;
    std::string parent_hash;  // finetune only: hash of the base checkpoint file
    std::string arm;          // pretrain | pretrain+finetune | from-scratch
    std::vector<TrainLogRow> log;
    std::vector<EvalLogRow> evals;
    std::map<std::string, long> task_counts;
    long steps = 0;
    bool early_stopped = false;
    double best_eval = 0;
};

// Writes the checkpoint at `output` (or <cache>/pretrain.mgs) plus
// `.log.csv`, `.eval.csv` and `.mix.csv` next to it.
TrainResult run_pretrain(const Workspace& ws);

// Single-task instruction tuning from `base_model`, or from a fresh model when
// `from_scratch` is set. Throws LookupError for an unknown task and
// ConfigError for a missing base checkpoint.
TrainResult run_finetune(const Workspace& ws);

// Iterations for a finetune run: `caption_iterations` for caption-output
// tasks unless `iterations` was given explicitly.
long finetune_iterations(const RunConfig& config, const TaskSpec& task);

// ---- generation helpers ----

// The task's prompt with explicit bindings (placeholder name -> text).
std::string build_prompt(const TaskSpec& task, const std::map<std::string, std::string>& bindings,
                         int template_index = 0);

// ---- edit round-trip ----

struct ScriptEdit {
    int snippet = 0;
    std::string statement;  // new text
    // When set, only this statement of the snippet is replaced; otherwise the
    // whole snippet text is.
    std::optional<std::string> replace;
};

// Throws RangeError for a bad snippet index and LookupError when `replace`
// does not occur in the snippet.
MotionScript apply_edit(const MotionScript& script, const ScriptEdit& edit);

struct ChannelDelta {
    int snippet = 0;
    int channel = 0;
    double max_abs = 0;
};

// Per-snippet, per-channel maximum absolute difference; frame counts may
// differ, in which case only the common prefix is compared.
std::vector<ChannelDelta> motion_diff(const MotionSequence& before, const MotionSequence& after,
                                      double snippet_seconds = kDefaultSnippetSeconds);

struct EditReport {
    std::string step1_prompt;
    std::vector<int> before_tokens;
    std::string step2_prompt;
    std::string step2_output;
    MotionScript script;
    MotionScript edited;
    std::string step4_prompt;
    std::vector<int> after_tokens;
    std::optional<MotionSequence> before_motion;
    std::optional<MotionSequence> after_motion;
    std::vector<ChannelDelta> deltas;
    std::vector<std::string> warnings;
};

// Text-to-Motion, Motion-to-Motion Script, edit, (Text, Motion Script)-to-Motion.
// Throws DataError carrying the raw step-2 stream when it does not parse.
EditReport edit_roundtrip(const LanguageModel& lm, const MotionQuantizer& quantizer, const std::string& caption,
                          const ScriptEdit& edit, int max_tokens = 0, int fps = kDefaultFps);

// The (Text, Motion Script)-to-Motion prompt the fourth step sends.
std::string edit_prompt(const std::string& caption, const MotionScript& script, int template_index = 0);

std::string diff_report_json(const EditReport& report);

// ---- evaluation ----

struct LocalizationTrial {
    double exact = 0;
    double iou = 0;
    double parsed = 0;
    int n = 0;
};

// Greedy localization on `samples`; trial t draws its spans and templates from
// finetune_set epoch t.
std::vector<LocalizationTrial> evaluate_localization(const LanguageModel& lm, const std::vector<Sample>& samples,
                                                     const std::string& task, int trials, std::uint64_t seed,
                                                     int max_tokens = 24);

// Suites: sanity, localization, captioning, script, generation. Returns the
// rows written (with the config hash) to `report` or <cache>/report-<suite>.jsonl.
std::vector<MetricRow> evaluate_suite(const Workspace& ws, const std::string& suite);

// Sanity rows: every metric of the ground truth against itself, on
// motion_statistics features.
std::vector<MetricRow> self_evaluation(const std::vector<CorpusEntry>& entries, const std::string& config_hash);

// Refuses to overwrite an existing file unless `force`; throws ConfigError.
void check_writable(const std::filesystem::path& path, bool force);

}  // namespace mgm
