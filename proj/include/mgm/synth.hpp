#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mgm/motion.hpp"

namespace mgm {

// Procedural motions with exact per-snippet ground truth. Each feature column
// is one named body-part channel; a primitive drives one channel with a linear
// ramp from rest towards +1 or -1 over whole snippets, and every statement is
// phrased "verb + your + body part + direction".

enum class Direction { kPositive, kNegative };

struct ChannelPhrase {
    std::string verb;
    std::string direction;
    std::string caption;  // third-person phrase for coarse captions
};

struct Channel {
    std::string name;
    std::string body_part;
    ChannelPhrase positive;
    ChannelPhrase negative;

    const ChannelPhrase& phrase(Direction d) const {
        return d == Direction::kPositive ? positive : negative;
    }
};

using ChannelLayout = std::vector<Channel>;

// Eight channels: two per limb group (arms, legs, upper/lower body) plus the
// root's forward and lateral position.
const ChannelLayout& default_channel_layout();

std::string statement_text(const Channel& channel, Direction direction);

struct Primitive {
    int channel = 0;
    Direction direction = Direction::kPositive;
    int start_snippet = 0;
    int num_snippets = 1;
};

struct SyntheticSpec {
    std::vector<Primitive> primitives;
    int num_snippets = 1;
    // 0 means num_snippets whole snippets; otherwise the last snippet may be partial.
    int num_frames = 0;
    int fps = kDefaultFps;
    double snippet_seconds = kDefaultSnippetSeconds;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    ChannelLayout layout = default_channel_layout();

    int total_frames() const;
};

// Builds a spec whose primitives run back to back, each starting where the
// previous one ended.
SyntheticSpec sequential_spec(const std::vector<Primitive>& primitives, int trailing_still_snippets = 0);

// Per-snippet statements in canonical (channel-major) order.
using SnippetStatements = std::vector<std::vector<std::string>>;

struct SynthResult {
    MotionSequence motion;
    SnippetStatements statements;
};

SynthResult synth_motion(const SyntheticSpec& spec);

// Joins one snippet's statements into the single string stored per snippet.
std::string join_statements(const std::vector<std::string>& statements);
std::vector<std::string> split_statements(const std::string& snippet_text);

// Inverse oracle: renders a motion from per-snippet statement strings. Runs of
// identical statements in consecutive snippets become one primitive. Unknown
// statements throw InvalidArgument naming the snippet.
MotionSequence render_statements(const std::vector<std::string>& snippet_texts, const SyntheticSpec& base);

std::vector<std::string> synth_captions(const SyntheticSpec& spec);

struct CorpusOptions {
    int min_snippets = 3;
    int max_snippets = 8;
    int max_primitives = 4;
    int max_primitive_snippets = 3;
    // One distinct single-snippet statement per snippet; used for localization.
    bool unique_per_snippet = false;
    double noise_sigma = 0.01;
    int fps = kDefaultFps;
    double snippet_seconds = kDefaultSnippetSeconds;
};

SyntheticSpec random_spec(std::mt19937_64& rng, const CorpusOptions& options);

struct SynthItem {
    std::string id;
    SyntheticSpec spec;
    MotionSequence motion;
    SnippetStatements statements;
    std::vector<std::string> captions;
};

std::vector<SynthItem> synth_corpus(int count, std::uint64_t seed, const CorpusOptions& options);

}  // namespace mgm
