#include "mgm/seq2seq.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

#include <json.hpp>

#include "mgm/binary_io.hpp"
#include "mgm/errors.hpp"
#include "mgm/nn/checkpoint.hpp"

namespace mgm {

using nn::Graph;
using nn::Var;

void Seq2SeqConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("seq2seq config: " + what); };
    if (vocab_size < 1) fail("vocab_size must be positive");
    if (width < 1 || heads < 1 || width % heads != 0) fail("width must be a positive multiple of heads");
    if (ffn < 1) fail("ffn must be positive");
    if (enc_layers < 0 || dec_layers < 0) fail("layer counts must be non-negative");
    if (max_input < 1 || max_output < 1) fail("length limits must be positive");
    if (start_id < 0 || start_id >= vocab_size) fail("start_id outside the vocabulary");
    if (segment_slots < 0) fail("segment_slots must be non-negative");
    if (sep_id >= vocab_size) fail("sep_id outside the vocabulary");
    for (int id : line_break_ids)
        if (id < 0 || id >= vocab_size) fail("line break id outside the vocabulary");
    if (rel_buckets < 0 || (rel_buckets > 0 && (rel_buckets < 4 || rel_max_distance <= rel_buckets / 2)))
        fail("relative-position buckets need at least 4 buckets and max_distance above half of them");
}

std::string Seq2SeqConfig::to_json() const {
    nlohmann::json j = {{"vocab_size", vocab_size}, {"width", width},         {"heads", heads},
                        {"ffn", ffn},               {"enc_layers", enc_layers}, {"dec_layers", dec_layers},
                        {"max_input", max_input},   {"max_output", max_output}, {"start_id", start_id},
                        {"rel_buckets", rel_buckets}, {"rel_max_distance", rel_max_distance},
                        {"segment_slots", segment_slots}, {"sep_id", sep_id}, {"line_break_ids", line_break_ids},
                        {"init_seed", init_seed}};
    return j.dump();
}

Seq2SeqConfig Seq2SeqConfig::from_json(const std::string& json) {
    Seq2SeqConfig c;
    try {
        const auto j = nlohmann::json::parse(json);
        c.vocab_size = j.at("vocab_size").get<int>();
        c.width = j.at("width").get<int>();
        c.heads = j.at("heads").get<int>();
        c.ffn = j.at("ffn").get<int>();
        c.enc_layers = j.at("enc_layers").get<int>();
        c.dec_layers = j.at("dec_layers").get<int>();
        c.max_input = j.at("max_input").get<int>();
        c.max_output = j.at("max_output").get<int>();
        c.start_id = j.at("start_id").get<int>();
        c.rel_buckets = j.value("rel_buckets", 0);
        c.rel_max_distance = j.value("rel_max_distance", 128);
        c.segment_slots = j.value("segment_slots", 0);
        c.sep_id = j.value("sep_id", -1);
        c.line_break_ids = j.value("line_break_ids", std::vector<int>{});
        c.init_seed = j.value("init_seed", std::uint64_t{1});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("seq2seq config: ") + e.what(), 0);
    }
    c.validate();
    return c;
}

template <typename T>
Seq2Seq<T>::Seq2Seq(const Seq2SeqConfig& config) : config_(config) {
    config_.validate();
    std::uint64_t seed = config_.init_seed;
    const int d = config_.width;
    token_embedding_ = add_normal("embed.tokens", config_.vocab_size, d, 1.0, seed);
    enc_positions_ = add_normal("embed.enc_pos", config_.max_input, d, 0.1, seed);
    dec_positions_ = add_normal("embed.dec_pos", config_.max_output, d, 0.1, seed);
    if (config_.segment_slots > 0 && config_.sep_id >= 0)
        segments_ = add_normal("embed.segments", config_.segment_slots, d, 1.0, seed);
    if (config_.rel_buckets > 0) {
        enc_rel_ = &params_.add("enc.rel_bias", nn::Matrix<T>::Zero(config_.rel_buckets, config_.heads));
        dec_rel_ = &params_.add("dec.rel_bias", nn::Matrix<T>::Zero(config_.rel_buckets, config_.heads));
    }
    for (int l = 0; l < config_.enc_layers; ++l) {
        const std::string p = "enc." + std::to_string(l) + ".";
        EncoderLayer layer;
        layer.norm1 = add_norm(p + "norm1");
        layer.self = add_attention(p + "self", seed);
        layer.norm2 = add_norm(p + "norm2");
        layer.ffn = add_ffn(p + "ffn", seed);
        encoder_.push_back(layer);
    }
    enc_norm_ = add_norm("enc.norm");
    for (int l = 0; l < config_.dec_layers; ++l) {
        const std::string p = "dec." + std::to_string(l) + ".";
        DecoderLayer layer;
        layer.norm1 = add_norm(p + "norm1");
        layer.self = add_attention(p + "self", seed);
        layer.norm2 = add_norm(p + "norm2");
        layer.cross = add_attention(p + "cross", seed);
        layer.norm3 = add_norm(p + "norm3");
        layer.ffn = add_ffn(p + "ffn", seed);
        decoder_.push_back(layer);
    }
    dec_norm_ = add_norm("dec.norm");
    // Small output weights: an untrained model predicts a near-uniform distribution.
    output_ = add_normal("output", d, config_.vocab_size, 1e-3, seed);
}

template <typename T>
nn::Parameter<T>* Seq2Seq<T>::add_normal(const std::string& name, int rows, int cols, double stddev,
                                         std::uint64_t& seed) {
    std::mt19937_64 rng(seed++);
    std::normal_distribution<double> n(0.0, stddev);
    nn::Matrix<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(n(rng));
    return &params_.add(name, std::move(m));
}

template <typename T>
nn::Parameter<T>* Seq2Seq<T>::add_norm(const std::string& name) {
    return &params_.add(name, nn::Matrix<T>::Ones(1, config_.width));
}

template <typename T>
typename Seq2Seq<T>::Attention Seq2Seq<T>::add_attention(const std::string& prefix, std::uint64_t& seed) {
    const int d = config_.width;
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    return {add_normal(prefix + ".q", d, d, s, seed), add_normal(prefix + ".k", d, d, s, seed),
            add_normal(prefix + ".v", d, d, s, seed), add_normal(prefix + ".o", d, d, s, seed)};
}

template <typename T>
typename Seq2Seq<T>::FeedForward Seq2Seq<T>::add_ffn(const std::string& prefix, std::uint64_t& seed) {
    const int d = config_.width, f = config_.ffn;
    return {add_normal(prefix + ".in", d, f, std::sqrt(2.0 / d), seed),
            add_normal(prefix + ".out", f, d, 1.0 / std::sqrt(static_cast<double>(f)), seed)};
}

std::vector<int> segment_indices(std::span<const int> ids, int sep_id, const std::vector<int>& line_breaks, int slots) {
    std::vector<int> out;
    out.reserve(ids.size());
    int count = 0;
    for (int id : ids) {
        out.push_back(std::min(count, std::max(slots - 1, 0)));
        if (id == sep_id) {
            ++count;
        } else if (std::find(line_breaks.begin(), line_breaks.end(), id) != line_breaks.end()) {
            count = 0;
        }
    }
    return out;
}

int relative_position_bucket(int relative, bool bidirectional, int buckets, int max_distance) {
    int ret = 0;
    int n = -relative;
    if (bidirectional) {
        buckets /= 2;
        if (n < 0) ret += buckets;
        n = std::abs(n);
    } else {
        n = std::max(n, 0);
    }
    const int exact = buckets / 2;
    if (n < exact) return ret + n;
    const int large = exact + static_cast<int>(std::log(static_cast<double>(n) / exact) /
                                               std::log(static_cast<double>(max_distance) / exact) * (buckets - exact));
    return ret + std::min(large, buckets - 1);
}

template <typename T>
typename Seq2Seq<T>::Bias Seq2Seq<T>::relative_bias(Graph<T>& g, nn::Parameter<T>* table, int length,
                                                    bool bidirectional) const {
    auto index = std::make_shared<std::vector<int>>(static_cast<std::size_t>(length) * static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i)
        for (int j = 0; j < length; ++j)
            (*index)[static_cast<std::size_t>(i) * static_cast<std::size_t>(length) + static_cast<std::size_t>(j)] =
                relative_position_bucket(j - i, bidirectional, config_.rel_buckets, config_.rel_max_distance);
    return {g.param(*table), std::move(index)};
}

template <typename T>
Var Seq2Seq<T>::attend(Graph<T>& g, const Attention& a, Var xq, Var xkv, bool causal, const Bias* bias) {
    const Var q = g.matmul(xq, g.param(*a.wq));
    const Var k = g.matmul(xkv, g.param(*a.wk));
    const Var v = g.matmul(xkv, g.param(*a.wv));
    const int h = config_.heads, dh = config_.width / config_.heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<Var> heads;
    for (int i = 0; i < h; ++i) {
        const Var qi = h == 1 ? q : g.cols(q, i * dh, dh);
        const Var ki = h == 1 ? k : g.cols(k, i * dh, dh);
        const Var vi = h == 1 ? v : g.cols(v, i * dh, dh);
        Var scores = g.scale(g.matmul_nt(qi, ki), scale);
        if (bias) scores = g.add_table_bias(scores, bias->table, bias->index, i);
        const Var p = g.softmax_rows(scores, causal);
        heads.push_back(g.matmul(p, vi));
    }
    const Var o = h == 1 ? heads[0] : g.concat_cols(heads);
    return g.matmul(o, g.param(*a.wo));
}

template <typename T>
Var Seq2Seq<T>::feed_forward(Graph<T>& g, const FeedForward& f, Var x) {
    return g.matmul(g.relu(g.matmul(x, g.param(*f.w1))), g.param(*f.w2));
}

template <typename T>
Var Seq2Seq<T>::embed(Graph<T>& g, std::span<const int> ids, nn::Parameter<T>* positions) {
    if (static_cast<Eigen::Index>(ids.size()) > positions->value.rows())
        throw InvalidArgument("sequence of " + std::to_string(ids.size()) + " tokens exceeds the limit of " +
                              std::to_string(positions->value.rows()));
    for (int id : ids)
        if (id < 0 || id >= config_.vocab_size) throw InvalidToken("token id " + std::to_string(id) + " outside the vocabulary");
    const Var tok = g.gather_rows(g.param(*token_embedding_), ids);
    const Var pos = g.rows(g.param(*positions), 0, static_cast<Eigen::Index>(ids.size()));
    if (!segments_) return g.add(tok, pos);
    const auto seg = segment_indices(ids, config_.sep_id, config_.line_break_ids, config_.segment_slots);
    return g.add(g.add(tok, pos), g.gather_rows(g.param(*segments_), seg));
}

template <typename T>
Var Seq2Seq<T>::encode(Graph<T>& g, std::span<const int> input) {
    if (input.empty()) throw InvalidArgument("empty encoder input");
    Var x = embed(g, input, enc_positions_);
    std::optional<Bias> bias;
    if (enc_rel_ && !encoder_.empty()) bias = relative_bias(g, enc_rel_, static_cast<int>(input.size()), true);
    for (const EncoderLayer& l : encoder_) {
        const Var n1 = g.rms_norm(x, g.param(*l.norm1));
        x = g.add(x, attend(g, l.self, n1, n1, false, bias ? &*bias : nullptr));
        x = g.add(x, feed_forward(g, l.ffn, g.rms_norm(x, g.param(*l.norm2))));
    }
    return g.rms_norm(x, g.param(*enc_norm_));
}

template <typename T>
Var Seq2Seq<T>::decode(Graph<T>& g, Var memory, std::span<const int> decoder_input) {
    if (decoder_input.empty()) throw InvalidArgument("empty decoder input");
    Var x = embed(g, decoder_input, dec_positions_);
    std::optional<Bias> bias;
    if (dec_rel_ && !decoder_.empty()) bias = relative_bias(g, dec_rel_, static_cast<int>(decoder_input.size()), false);
    for (const DecoderLayer& l : decoder_) {
        const Var n1 = g.rms_norm(x, g.param(*l.norm1));
        x = g.add(x, attend(g, l.self, n1, n1, true, bias ? &*bias : nullptr));
        x = g.add(x, attend(g, l.cross, g.rms_norm(x, g.param(*l.norm2)), memory, false, nullptr));
        x = g.add(x, feed_forward(g, l.ffn, g.rms_norm(x, g.param(*l.norm3))));
    }
    return g.matmul(g.rms_norm(x, g.param(*dec_norm_)), g.param(*output_));
}

template <typename T>
Var Seq2Seq<T>::loss(Graph<T>& g, std::span<const int> input, std::span<const int> target, int ignore) {
    if (target.empty()) throw SchemaError("empty target sequence");
    std::vector<int> dec_in;
    dec_in.reserve(target.size());
    dec_in.push_back(config_.start_id);
    for (std::size_t i = 0; i + 1 < target.size(); ++i) dec_in.push_back(target[i] == ignore ? config_.start_id : target[i]);
    const Var memory = encode(g, input);
    return g.cross_entropy_sum(decode(g, memory, dec_in), target, ignore);
}

template class Seq2Seq<float>;
template class Seq2Seq<double>;

TokenIds truncate_middle(const TokenIds& ids, std::size_t limit, int sep_id, bool* truncated) {
    if (truncated) *truncated = ids.size() > limit;
    if (ids.size() <= limit) return ids;
    const std::size_t excess = ids.size() - limit;
    std::size_t lo = 0, hi = ids.size();
    const auto first = std::find(ids.begin(), ids.end(), sep_id);
    const auto last = std::find(ids.rbegin(), ids.rend(), sep_id);
    if (first != ids.end()) {
        const std::size_t a = static_cast<std::size_t>(first - ids.begin());
        const std::size_t b = ids.size() - 1 - static_cast<std::size_t>(last - ids.rbegin());
        if (b > a && b - a - 1 >= excess) {
            lo = a + 1;
            hi = b;
        }
    }
    const std::size_t cut = lo + (hi - lo - excess) / 2;
    TokenIds out(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(cut));
    out.insert(out.end(), ids.begin() + static_cast<std::ptrdiff_t>(cut + excess), ids.end());
    return out;
}

Seq2SeqConfig desk_config(const UnifiedVocabulary& vocab) {
    Seq2SeqConfig c;
    c.vocab_size = vocab.size();
    c.start_id = vocab.pad_id();
    c.sep_id = vocab.sep_id();
    for (int id = 0; id < vocab.text_size(); ++id)
        if (vocab.surface(id).find('\n') != std::string::npos) c.line_break_ids.push_back(id);
    return c;
}

LanguageModel::LanguageModel(UnifiedVocabulary vocab, Seq2SeqConfig config)
    : vocab_(std::move(vocab)), model_(config) {
    if (config.vocab_size != vocab_.size())
        throw ConfigError("model vocab_size " + std::to_string(config.vocab_size) + " does not match vocabulary size " +
                          std::to_string(vocab_.size()));
}

TokenIds LanguageModel::encode_input(std::string_view text, std::vector<std::string>* warnings) const {
    bool cut = false;
    TokenIds ids = truncate_middle(vocab_.tokenize(text), static_cast<std::size_t>(config().max_input), vocab_.sep_id(), &cut);
    if (cut && warnings) warnings->push_back("input truncated to " + std::to_string(config().max_input) + " tokens");
    if (ids.empty()) ids.push_back(vocab_.unk_id());
    return ids;
}

EncodedPair LanguageModel::encode(const PromptPair& pair, std::vector<std::string>* warnings) const {
    if (pair.target.empty()) throw SchemaError("prompt pair for '" + pair.task + "' has an empty target");
    EncodedPair e;
    e.task = pair.task;
    e.input = encode_input(pair.input, warnings);
    e.target = vocab_.tokenize(pair.target);
    const std::size_t limit = static_cast<std::size_t>(config().max_output);
    if (e.target.size() + 1 > limit) {
        e.target.resize(limit - 1);
        if (warnings) warnings->push_back("target of '" + pair.task + "' truncated to " + std::to_string(limit) + " tokens");
    }
    e.target.push_back(vocab_.eos_id());
    return e;
}

StepStats LanguageModel::train_step(const std::vector<EncodedPair>& batch, nn::AdamW<float>& optimizer) {
    StepStats stats;
    if (batch.empty()) return stats;
    model_.params().zero_grad();
    for (const EncodedPair& p : batch) {
        Graph<float> g(true);
        const Var l = model_.loss(g, p.input, p.target);
        const double v = g.scalar(l);
        if (!std::isfinite(v)) throw NumericError("seq2seq", "non-finite loss on task '" + p.task + "'");
        stats.loss_sum += v;
        stats.tokens += static_cast<long>(p.target.size());
        g.backward(l);
    }
    stats.grad_norm = optimizer.step(1.0 / static_cast<double>(stats.tokens));
    return stats;
}

double LanguageModel::eval_loss(const std::vector<EncodedPair>& pairs) const {
    if (pairs.empty()) throw InvalidArgument("eval_loss needs at least one pair");
    double sum = 0;
    long tokens = 0;
    for (const EncodedPair& p : pairs) {
        if (p.target.empty()) throw SchemaError("empty target in evaluation pair");
        Graph<float> g(false);
        sum += g.scalar(model_.loss(g, p.input, p.target));
        tokens += static_cast<long>(p.target.size());
    }
    return sum / static_cast<double>(tokens);
}

double LanguageModel::eval_loss(const std::vector<PromptPair>& pairs) const {
    std::vector<EncodedPair> enc;
    enc.reserve(pairs.size());
    for (const auto& p : pairs) enc.push_back(encode(p));
    return eval_loss(enc);
}

std::vector<double> LanguageModel::next_token_probs(const TokenIds& input, const TokenIds& prefix) const {
    Graph<float> g(false);
    const Var memory = model_.encode(g, input);
    TokenIds dec_in = {config().start_id};
    dec_in.insert(dec_in.end(), prefix.begin(), prefix.end());
    const auto& logits = g.value(model_.decode(g, memory, dec_in));
    const Eigen::Index last = logits.rows() - 1;
    std::vector<double> p(static_cast<std::size_t>(logits.cols()));
    const double mx = logits.row(last).maxCoeff();
    double sum = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) sum += p[static_cast<std::size_t>(c)] = std::exp(logits(last, c) - mx);
    for (double& v : p) v /= sum;
    return p;
}

Generation LanguageModel::generate(std::string_view input, const GenerateOptions& options) const {
    return generate_ids(encode_input(input), options);
}

Generation LanguageModel::generate_ids(const TokenIds& input, const GenerateOptions& options) const {
    const int limit = options.max_tokens > 0 ? std::min(options.max_tokens, config().max_output) : config().max_output;
    Graph<float> enc_graph(false);
    const nn::Matrix<float> memory = enc_graph.value(model_.encode(enc_graph, input));
    std::mt19937_64 rng(options.seed);
    Generation out;
    TokenIds dec_in = {config().start_id};
    while (static_cast<int>(out.tokens.size()) < limit) {
        Graph<float> g(false);
        const auto& logits = g.value(model_.decode(g, g.constant(memory), dec_in));
        const Eigen::Index last = logits.rows() - 1;
        int next = 0;
        if (options.temperature <= 0) {
            logits.row(last).maxCoeff(&next);
        } else {
            std::vector<int> order(static_cast<std::size_t>(logits.cols()));
            std::iota(order.begin(), order.end(), 0);
            std::size_t keep = order.size();
            if (options.top_k > 0 && static_cast<std::size_t>(options.top_k) < keep) {
                keep = static_cast<std::size_t>(options.top_k);
                std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                                  [&](int a, int b) { return logits(last, a) > logits(last, b) || (logits(last, a) == logits(last, b) && a < b); });
                order.resize(keep);
            }
            double mx = -std::numeric_limits<double>::infinity();
            for (int c : order) mx = std::max(mx, static_cast<double>(logits(last, c)));
            std::vector<double> w;
            for (int c : order) w.push_back(std::exp((logits(last, c) - mx) / options.temperature));
            std::discrete_distribution<int> pick(w.begin(), w.end());
            next = order[static_cast<std::size_t>(pick(rng))];
        }
        if (next == vocab_.eos_id()) {
            out.ended = true;
            break;
        }
        out.tokens.push_back(next);
        dec_in.push_back(next);
    }
    out.truncated = !out.ended;
    out.text = vocab_.detokenize(out.tokens);
    out.motion = extract_motion_spans(out.tokens, vocab_);
    return out;
}

void LanguageModel::save(const std::filesystem::path& path, const std::string& metadata) const {
    nlohmann::json j;
    j["model"] = nlohmann::json::parse(config().to_json());
    j["vocab"] = {{"text", vocab_.text_tokens()}, {"motion", vocab_.motion_size()}};
    j["meta"] = nlohmann::json::parse(metadata);
    write_file_bytes(path, nn::encode_checkpoint("MGS1", j.dump(), model_.params()));
}

LanguageModel LanguageModel::load(const std::filesystem::path& path, std::string* metadata) {
    const auto contents = nn::decode_checkpoint("MGS1", read_file_bytes(path));
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(contents.config);
        UnifiedVocabulary vocab(j.at("vocab").at("text").get<std::vector<std::string>>(),
                                j.at("vocab").at("motion").get<int>());
        LanguageModel lm(std::move(vocab), Seq2SeqConfig::from_json(j.at("model").dump()));
        nn::load_into(contents, lm.model_.params());
        if (metadata) *metadata = j.value("meta", nlohmann::json::object()).dump();
        return lm;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("seq2seq checkpoint config: ") + e.what(), 0);
    }
}

}  // namespace mgm
