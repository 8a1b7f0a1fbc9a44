#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mgm/seq2seq.hpp"
#include "vq_check.hpp"

namespace mgm::testing {

inline Seq2SeqConfig tiny_seq2seq_config() {
    Seq2SeqConfig c;
    c.vocab_size = 11;
    c.width = 8;
    c.heads = 2;
    c.ffn = 16;
    c.enc_layers = 1;
    c.dec_layers = 1;
    c.max_input = 16;
    c.max_output = 8;
    c.start_id = 10;
    c.rel_buckets = 8;
    c.rel_max_distance = 16;
    c.segment_slots = 4;
    c.sep_id = 9;
    c.line_break_ids = {8};
    c.init_seed = 4;
    return c;
}

// Summed cross-entropy gradient of every parameter against central differences.
inline GradCheckResult seq2seq_gradient_check(std::uint64_t seed, double h = 1e-5) {
    Seq2SeqConfig c = tiny_seq2seq_config();
    c.init_seed = seed;
    Seq2Seq<double> model(c);
    // Larger output weights so gradients reach the lower layers at a measurable scale.
    model.params().find("output")->value *= 300.0;

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> tok(0, 9);
    std::vector<int> input(12), target(6);
    for (int& t : input) t = tok(rng);
    input[3] = 9;
    input[7] = 9;
    input[9] = 8;
    for (int& t : target) t = tok(rng);

    model.params().zero_grad();
    {
        nn::Graph<double> g;
        g.backward(model.loss(g, input, target));
    }
    auto value = [&] {
        nn::Graph<double> g(false);
        return g.scalar(model.loss(g, input, target));
    };
    GradCheckResult out;
    for (auto& p : model.params()) {
        for (Eigen::Index i = 0; i < p.value.size(); ++i) {
            double& v = p.value.data()[i];
            const double saved = v;
            v = saved + h;
            const double up = value();
            v = saved - h;
            const double down = value();
            v = saved;
            const double err = relative_error(p.grad.data()[i], (up - down) / (2 * h));
            ++out.checked;
            if (err > out.max_rel) {
                out.max_rel = err;
                out.worst = p.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return out;
}

struct MemorizeResult {
    int steps = 0;
    double loss = 0;
    int exact = 0;
};

// Full-batch training on `pairs` until the mean token loss drops below
// `target_loss`, then greedy decoding of every input.
inline MemorizeResult memorize(LanguageModel& lm, const std::vector<PromptPair>& pairs, int max_steps,
                               double target_loss, double lr = 3e-3) {
    std::vector<EncodedPair> batch;
    for (const auto& p : pairs) batch.push_back(lm.encode(p));
    nn::AdamWConfig ac;
    ac.lr = lr;
    nn::AdamW<float> opt(lm.model().params(), ac);
    MemorizeResult r;
    r.loss = lm.eval_loss(batch);
    while (r.steps < max_steps && r.loss >= target_loss) {
        lm.train_step(batch, opt);
        ++r.steps;
        if (r.steps % 10 == 0) r.loss = lm.eval_loss(batch);
    }
    r.loss = lm.eval_loss(batch);
    for (const auto& p : pairs) r.exact += lm.generate(p.input).text == p.target;
    return r;
}

inline std::vector<PromptPair> memorization_pairs(int n) {
    static const std::vector<std::string> words = {"raise", "your", "left", "right", "arm", "leg", "bend",
                                                   "knee", "turn", "walk", "forward", "back", "slowly"};
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(words.size()) - 1), len(2, 6);
    std::vector<PromptPair> out;
    for (int i = 0; i < n; ++i) {
        PromptPair p;
        p.task = "memorize";
        p.input = "item " + std::to_string(i) + ":";
        const int k = len(rng);
        for (int j = 0; j < k; ++j) p.target += (j ? " " : "") + words[pick(rng)];
        out.push_back(p);
    }
    return out;
}

inline UnifiedVocabulary memorization_vocab(const std::vector<PromptPair>& pairs) {
    std::vector<std::string> corpus;
    for (const auto& p : pairs) {
        corpus.push_back(p.input);
        corpus.push_back(p.target);
    }
    return build_vocab(corpus, 8);
}

}  // namespace mgm::testing
