#pragma once

// Generators shared by the unit tests and the acceptance binary.

#include <random>
#include <string>
#include <vector>

#include "mgm/script.hpp"
#include "mgm/synth.hpp"
#include "mgm/tasks.hpp"

namespace mgm::testing {

inline std::string random_statement(std::mt19937_64& rng) {
    static const std::vector<std::string> words = {"raise", "your", "left", "arm", "slowly", "turn", "back",
                                                    "knee", ",", "and", "step", "forward", "hips", "3", "."};
    std::uniform_int_distribution<int> len(1, 9), pick(0, static_cast<int>(words.size()) - 1);
    std::string s;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
        const std::string& w = words[pick(rng)];
        if (i && w != "," && w != ".") s += ' ';
        s += w;
    }
    return s;
}

// Mixes empty and nonempty snippets; `mode` 1 forces all-empty, 2 a single snippet.
inline MotionScript random_script(std::mt19937_64& rng, int mode = 0) {
    std::uniform_int_distribution<int> count(1, 20);
    std::bernoulli_distribution empty(0.3);
    MotionScript s;
    const int n = mode == 2 ? 1 : count(rng);
    for (int i = 0; i < n; ++i) s.snippets.push_back(mode == 1 || empty(rng) ? std::string{} : random_statement(rng));
    return s;
}

// Sample bound to a synthetic motion, tokens faked from the grid so the
// quantizer is not needed.
inline Sample synthetic_sample(const SynthItem& item, int down_rate = 4) {
    Sample s;
    s.id = item.id;
    const int frames = item.motion.num_frames();
    const int tokens = (frames + down_rate - 1) / down_rate;
    for (int i = 0; i < tokens; ++i) s.tokens.push_back((i * 7 + static_cast<int>(item.id.size())) % 64);
    s.captions = item.captions;
    MotionScript script;
    for (const auto& st : item.statements) script.snippets.push_back(join_statements(st));
    s.script = script;
    s.grid = make_snippet_grid(item.motion, kDefaultSnippetSeconds);
    s.down_rate = down_rate;
    s.validate();
    return s;
}

inline std::vector<Sample> synthetic_samples(int count, std::uint64_t seed, bool unique = false) {
    CorpusOptions options;
    options.unique_per_snippet = unique;
    std::vector<Sample> out;
    for (const auto& item : synth_corpus(count, seed, options)) out.push_back(synthetic_sample(item));
    return out;
}

}  // namespace mgm::testing
