#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mgm/nn/graph.hpp"
#include "mgm/nn/optim.hpp"
#include "mgm/tasks.hpp"
#include "mgm/vocabulary.hpp"

namespace mgm {

struct Seq2SeqConfig {
    int vocab_size = 0;
    int width = 64;
    int heads = 4;
    int ffn = 256;
    int enc_layers = 2;
    int dec_layers = 2;
    int max_input = 1024;
    int max_output = 512;
    int start_id = 0;  // decoder start token
    int rel_buckets = 32;  // relative-position bias buckets; 0 disables
    int rel_max_distance = 128;
    // Snippet-index embeddings: every token also embeds the number of <SEP>
    // tokens since the last line break (capped). 0 slots or sep_id < 0 disables.
    int segment_slots = 16;
    int sep_id = -1;
    std::vector<int> line_break_ids;
    std::uint64_t init_seed = 1;

    // Throws ConfigError.
    void validate() const;
    std::string to_json() const;
    static Seq2SeqConfig from_json(const std::string& json);
};

// Pre-norm encoder-decoder transformer with RMSNorm, ReLU feed-forward blocks,
// learned absolute positions, snippet-index embeddings and bucketed
// relative-position biases in the self-attention layers.
template <typename T>
class Seq2Seq {
public:
    explicit Seq2Seq(const Seq2SeqConfig& config);
    Seq2Seq(const Seq2Seq&) = delete;
    Seq2Seq& operator=(const Seq2Seq&) = delete;
    Seq2Seq(Seq2Seq&&) = default;
    Seq2Seq& operator=(Seq2Seq&&) = default;

    const Seq2SeqConfig& config() const noexcept { return config_; }
    nn::ParameterStore<T>& params() noexcept { return params_; }
    const nn::ParameterStore<T>& params() const noexcept { return params_; }

    nn::Var encode(nn::Graph<T>& g, std::span<const int> input);
    // Logits, one row per decoder input position.
    nn::Var decode(nn::Graph<T>& g, nn::Var memory, std::span<const int> decoder_input);

    // Summed cross-entropy of `target` (ending in the end token) under
    // teacher forcing. Entries equal to `ignore` are masked out.
    nn::Var loss(nn::Graph<T>& g, std::span<const int> input, std::span<const int> target, int ignore = -1);

private:
    struct Attention {
        nn::Parameter<T>*wq, *wk, *wv, *wo;
    };
    struct FeedForward {
        nn::Parameter<T>*w1, *w2;
    };
    struct EncoderLayer {
        nn::Parameter<T>* norm1;
        Attention self;
        nn::Parameter<T>* norm2;
        FeedForward ffn;
    };
    struct DecoderLayer {
        nn::Parameter<T>* norm1;
        Attention self;
        nn::Parameter<T>* norm2;
        Attention cross;
        nn::Parameter<T>* norm3;
        FeedForward ffn;
    };

    Attention add_attention(const std::string& prefix, std::uint64_t& seed);
    FeedForward add_ffn(const std::string& prefix, std::uint64_t& seed);
    nn::Parameter<T>* add_norm(const std::string& name);
    nn::Parameter<T>* add_normal(const std::string& name, int rows, int cols, double stddev, std::uint64_t& seed);
    struct Bias {
        nn::Var table;
        std::shared_ptr<const std::vector<int>> index;
    };

    Bias relative_bias(nn::Graph<T>& g, nn::Parameter<T>* table, int length, bool bidirectional) const;
    nn::Var attend(nn::Graph<T>& g, const Attention& a, nn::Var xq, nn::Var xkv, bool causal, const Bias* bias);
    nn::Var feed_forward(nn::Graph<T>& g, const FeedForward& f, nn::Var x);
    nn::Var embed(nn::Graph<T>& g, std::span<const int> ids, nn::Parameter<T>* positions);

    Seq2SeqConfig config_;
    nn::ParameterStore<T> params_;
    nn::Parameter<T>*token_embedding_, *enc_positions_, *dec_positions_, *enc_norm_, *dec_norm_, *output_;
    nn::Parameter<T>* segments_ = nullptr;
    nn::Parameter<T>* enc_rel_ = nullptr;
    nn::Parameter<T>* dec_rel_ = nullptr;
    std::vector<EncoderLayer> encoder_;
    std::vector<DecoderLayer> decoder_;
};

// Per token: <SEP> tokens seen since the last line break, capped at slots - 1.
std::vector<int> segment_indices(std::span<const int> ids, int sep_id, const std::vector<int>& line_breaks, int slots);

// Bucket of key position minus query position, as in T5.
int relative_position_bucket(int relative, bool bidirectional, int buckets, int max_distance);

// Drops the middle of an over-long input, preferring the region between the
// first and last <SEP> (the script body). Returns `ids` unchanged when it fits.
TokenIds truncate_middle(const TokenIds& ids, std::size_t limit, int sep_id, bool* truncated = nullptr);

struct EncodedPair {
    TokenIds input;
    TokenIds target;  // ends with </s>
    std::string task;
};

struct StepStats {
    double loss_sum = 0;  // summed negative log-likelihood over the batch
    long tokens = 0;
    double grad_norm = 0;
    double mean() const { return tokens ? loss_sum / static_cast<double>(tokens) : 0.0; }
};

struct GenerateOptions {
    int max_tokens = 0;        // N_max; 0 uses the model's output limit
    double temperature = 0.0;  // 0 = greedy
    int top_k = 0;             // 0 = full distribution
    std::uint64_t seed = 0;
};

struct Generation {
    TokenIds tokens;          // without the end token
    bool ended = false;       // stopped on </s>
    bool truncated = false;   // stopped on N_max
    std::string text;         // detokenized tokens
    ExtractedMotion motion;   // parsed view of motion spans
};

// The float model bound to its vocabulary: tokenization, training steps,
// evaluation and decoding.
class LanguageModel {
public:
    LanguageModel(UnifiedVocabulary vocab, Seq2SeqConfig config);

    const UnifiedVocabulary& vocab() const noexcept { return vocab_; }
    const Seq2SeqConfig& config() const noexcept { return model_.config(); }
    Seq2Seq<float>& model() noexcept { return model_; }

    // Tokenizes and applies the length limits; truncations are appended to
    // `warnings`. Throws SchemaError for an empty target.
    EncodedPair encode(const PromptPair& pair, std::vector<std::string>* warnings = nullptr) const;
    TokenIds encode_input(std::string_view text, std::vector<std::string>* warnings = nullptr) const;

    // Accumulates gradients over the batch and applies one optimizer step
    // with the gradient divided by the batch's target-token count.
    StepStats train_step(const std::vector<EncodedPair>& batch, nn::AdamW<float>& optimizer);

    // Mean per-token negative log-likelihood; no parameter mutation.
    double eval_loss(const std::vector<EncodedPair>& pairs) const;
    double eval_loss(const std::vector<PromptPair>& pairs) const;

    Generation generate(std::string_view input, const GenerateOptions& options = {}) const;
    Generation generate_ids(const TokenIds& input, const GenerateOptions& options = {}) const;

    // P(. | input, prefix) over the whole vocabulary.
    std::vector<double> next_token_probs(const TokenIds& input, const TokenIds& prefix) const;

    // Checkpoint `MGS1`. `metadata` is an arbitrary JSON object kept verbatim.
    void save(const std::filesystem::path& path, const std::string& metadata = "{}") const;
    static LanguageModel load(const std::filesystem::path& path, std::string* metadata = nullptr);

private:
    UnifiedVocabulary vocab_;
    mutable Seq2Seq<float> model_;
};

// Default desk-scale configuration for a vocabulary.
Seq2SeqConfig desk_config(const UnifiedVocabulary& vocab);

}  // namespace mgm
