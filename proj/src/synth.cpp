#include "mgm/synth.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <tuple>

#include "mgm/errors.hpp"

namespace mgm {

const ChannelLayout& default_channel_layout() {
    static const ChannelLayout layout = {
        {"left_arm", "left arm", {"raise", "upward", "raises the left arm"},
         {"lower", "downward", "lowers the left arm"}},
        {"right_arm", "right arm", {"raise", "upward", "raises the right arm"},
         {"lower", "downward", "lowers the right arm"}},
        {"left_leg", "left leg", {"swing", "forward", "swings the left leg forward"},
         {"swing", "backward", "swings the left leg back"}},
        {"right_leg", "right leg", {"swing", "forward", "swings the right leg forward"},
         {"swing", "backward", "swings the right leg back"}},
        {"upper_body", "upper body", {"bend", "forward", "bends forward"},
         {"bend", "backward", "leans backward"}},
        {"lower_body", "lower body", {"twist", "left", "twists the hips to the left"},
         {"twist", "right", "twists the hips to the right"}},
        {"root_x", "whole body", {"move", "forward", "walks forward"},
         {"move", "backward", "walks backward"}},
        {"root_y", "whole body", {"shift", "left", "steps to the left"},
         {"shift", "right", "steps to the right"}},
    };
    return layout;
}

std::string statement_text(const Channel& channel, Direction direction) {
    const ChannelPhrase& p = channel.phrase(direction);
    return p.verb + " your " + channel.body_part + " " + p.direction;
}

int SyntheticSpec::total_frames() const {
    const int sf = snippet_frame_count(snippet_seconds, fps);
    if (num_frames == 0) return num_snippets * sf;
    return num_frames;
}

SyntheticSpec sequential_spec(const std::vector<Primitive>& primitives, int trailing_still_snippets) {
    SyntheticSpec spec;
    int cursor = 0;
    for (Primitive p : primitives) {
        p.start_snippet = cursor;
        cursor += p.num_snippets;
        spec.primitives.push_back(p);
    }
    spec.num_snippets = std::max(1, cursor + trailing_still_snippets);
    return spec;
}

namespace {

void validate(const SyntheticSpec& spec) {
    if (spec.num_snippets < 1) throw InvalidArgument("synthetic spec needs at least one snippet");
    if (spec.layout.empty()) throw InvalidArgument("synthetic spec needs at least one channel");
    const int sf = snippet_frame_count(spec.snippet_seconds, spec.fps);
    if (spec.num_frames != 0 &&
        (spec.num_frames <= (spec.num_snippets - 1) * sf || spec.num_frames > spec.num_snippets * sf))
        throw InvalidArgument("num_frames inconsistent with num_snippets");
    for (const Primitive& p : spec.primitives) {
        if (p.channel < 0 || p.channel >= static_cast<int>(spec.layout.size()))
            throw InvalidArgument("primitive channel " + std::to_string(p.channel) + " out of range");
        if (p.num_snippets < 1) throw InvalidArgument("primitive must span at least one snippet");
        if (p.start_snippet < 0 || p.start_snippet + p.num_snippets > spec.num_snippets)
            throw InvalidArgument("primitive extends outside the snippet grid");
    }
}

FrameMatrix render(const std::vector<Primitive>& primitives, const SyntheticSpec& spec) {
    const int frames = spec.total_frames();
    const SnippetGrid grid = make_snippet_grid(frames, spec.fps, spec.snippet_seconds);
    FrameMatrix m = FrameMatrix::Zero(frames, static_cast<Eigen::Index>(spec.layout.size()));
    for (const Primitive& p : primitives) {
        const auto [begin, end] = grid.frame_range(p.start_snippet, p.start_snippet + p.num_snippets);
        const int len = end - begin;
        const float sign = p.direction == Direction::kPositive ? 1.0f : -1.0f;
        for (int j = 0; j < len; ++j)
            m(begin + j, p.channel) += sign * static_cast<float>(j + 1) / static_cast<float>(len);
    }
    if (spec.noise_sigma > 0) {
        std::mt19937_64 rng(spec.seed);
        std::normal_distribution<double> noise(0.0, spec.noise_sigma);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += static_cast<float>(noise(rng));
    }
    return m;
}

}  // namespace

SynthResult synth_motion(const SyntheticSpec& spec) {
    validate(spec);
    SnippetStatements statements(spec.num_snippets);
    std::vector<std::vector<std::pair<int, Direction>>> active(spec.num_snippets);
    for (const Primitive& p : spec.primitives)
        for (int s = p.start_snippet; s < p.start_snippet + p.num_snippets; ++s)
            active[s].emplace_back(p.channel, p.direction);
    for (int s = 0; s < spec.num_snippets; ++s) {
        auto& a = active[s];
        std::sort(a.begin(), a.end());
        a.erase(std::unique(a.begin(), a.end()), a.end());
        for (const auto& [channel, direction] : a)
            statements[s].push_back(statement_text(spec.layout[channel], direction));
    }
    return {MotionSequence(render(spec.primitives, spec), spec.fps), std::move(statements)};
}

std::string join_statements(const std::vector<std::string>& statements) {
    std::string out;
    for (std::size_t i = 0; i < statements.size(); ++i) {
        if (i) out += ", ";
        out += statements[i];
    }
    return out;
}

std::vector<std::string> split_statements(const std::string& snippet_text) {
    std::vector<std::string> out;
    if (snippet_text.empty()) return out;
    std::size_t pos = 0;
    while (true) {
        const std::size_t next = snippet_text.find(", ", pos);
        out.push_back(snippet_text.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
        if (next == std::string::npos) break;
        pos = next + 2;
    }
    return out;
}

MotionSequence render_statements(const std::vector<std::string>& snippet_texts, const SyntheticSpec& base) {
    std::map<std::string, std::pair<int, Direction>> lookup;
    for (int c = 0; c < static_cast<int>(base.layout.size()); ++c)
        for (Direction d : {Direction::kPositive, Direction::kNegative})
            lookup.emplace(statement_text(base.layout[c], d), std::make_pair(c, d));

    SyntheticSpec spec = base;
    spec.num_snippets = static_cast<int>(snippet_texts.size());
    if (spec.num_frames != 0 && spec.num_snippets != base.num_snippets) spec.num_frames = 0;
    spec.primitives.clear();

    // Open runs keyed by (channel, direction) -> start snippet.
    std::map<std::pair<int, Direction>, int> open;
    for (int s = 0; s <= spec.num_snippets; ++s) {
        std::vector<std::pair<int, Direction>> here;
        if (s < spec.num_snippets) {
            for (const std::string& st : split_statements(snippet_texts[s])) {
                auto it = lookup.find(st);
                if (it == lookup.end())
                    throw InvalidArgument("snippet " + std::to_string(s) + ": unknown statement '" + st + "'");
                here.push_back(it->second);
            }
        }
        for (auto it = open.begin(); it != open.end();) {
            if (std::find(here.begin(), here.end(), it->first) == here.end()) {
                spec.primitives.push_back({it->first.first, it->first.second, it->second, s - it->second});
                it = open.erase(it);
            } else {
                ++it;
            }
        }
        for (const auto& key : here) open.emplace(key, s);
    }
    return synth_motion(spec).motion;
}

std::vector<std::string> synth_captions(const SyntheticSpec& spec) {
    std::vector<Primitive> ordered = spec.primitives;
    std::stable_sort(ordered.begin(), ordered.end(), [](const Primitive& a, const Primitive& b) {
        return std::tie(a.start_snippet, a.channel) < std::tie(b.start_snippet, b.channel);
    });
    std::vector<std::string> phrases;
    for (const Primitive& p : ordered) {
        const std::string& phrase = spec.layout[p.channel].phrase(p.direction).caption;
        if (std::find(phrases.begin(), phrases.end(), phrase) == phrases.end()) phrases.push_back(phrase);
        if (phrases.size() == 3) break;
    }
    if (phrases.empty())
        return {"a person stands still", "someone stays motionless", "the person does not move"};
    auto join = [&](const std::string& sep) {
        std::string out = phrases[0];
        for (std::size_t i = 1; i < phrases.size(); ++i) out += sep + phrases[i];
        return out;
    };
    return {"a person " + join(" and then "), "someone " + join(", then "),
            "the person " + join(" and ") + " in sequence"};
}

SyntheticSpec random_spec(std::mt19937_64& rng, const CorpusOptions& options) {
    if (options.min_snippets < 1 || options.max_snippets < options.min_snippets)
        throw InvalidArgument("invalid snippet count range");
    SyntheticSpec spec;
    spec.fps = options.fps;
    spec.snippet_seconds = options.snippet_seconds;
    spec.noise_sigma = options.noise_sigma;
    spec.seed = rng();
    const int channels = static_cast<int>(spec.layout.size());
    spec.num_snippets = std::uniform_int_distribution<int>(options.min_snippets, options.max_snippets)(rng);

    if (options.unique_per_snippet) {
        if (spec.num_snippets > 2 * channels)
            throw InvalidArgument("not enough distinct statements for one per snippet");
        std::vector<int> pool(2 * channels);
        std::iota(pool.begin(), pool.end(), 0);
        std::shuffle(pool.begin(), pool.end(), rng);
        for (int s = 0; s < spec.num_snippets; ++s) {
            const int code = pool[s];
            spec.primitives.push_back({code / 2, code % 2 == 0 ? Direction::kPositive : Direction::kNegative, s, 1});
        }
        return spec;
    }

    const int count = std::uniform_int_distribution<int>(0, options.max_primitives)(rng);
    for (int i = 0; i < count; ++i) {
        Primitive p;
        p.channel = std::uniform_int_distribution<int>(0, channels - 1)(rng);
        p.direction = std::bernoulli_distribution(0.5)(rng) ? Direction::kPositive : Direction::kNegative;
        p.num_snippets = std::uniform_int_distribution<int>(
            1, std::min(options.max_primitive_snippets, spec.num_snippets))(rng);
        p.start_snippet = std::uniform_int_distribution<int>(0, spec.num_snippets - p.num_snippets)(rng);
        spec.primitives.push_back(p);
    }
    return spec;
}

std::vector<SynthItem> synth_corpus(int count, std::uint64_t seed, const CorpusOptions& options) {
    std::mt19937_64 rng(seed);
    std::vector<SynthItem> items;
    items.reserve(static_cast<std::size_t>(std::max(count, 0)));
    for (int i = 0; i < count; ++i) {
        SyntheticSpec spec = random_spec(rng, options);
        SynthResult r = synth_motion(spec);
        char id[32];
        std::snprintf(id, sizeof id, "synth_%06d", i);
        items.push_back({id, spec, std::move(r.motion), std::move(r.statements), synth_captions(spec)});
    }
    return items;
}

}  // namespace mgm
