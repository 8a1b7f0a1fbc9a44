#include "mgm/vocabulary.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "mgm/errors.hpp"

namespace mgm {

namespace {

constexpr std::string_view kMotionIdPrefix = "<motion_id_";

bool is_ws(char c) { return c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v'; }
bool is_letter(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) != 0 || static_cast<unsigned char>(c) >= 0x80;
}

// Length of the unit starting at s[i]: a letter run, or one character.
std::size_t unit_length(std::string_view s, std::size_t i) {
    if (!is_letter(s[i])) return 1;
    std::size_t j = i;
    while (j < s.size() && is_letter(s[j])) ++j;
    return j - i;
}

// Matches a special token or <motion_id_k> at `pos`. Returns the matched
// length; `special` receives the index into kSpecialTokens or -1 for motion ids.
std::size_t match_marker(std::string_view text, std::size_t pos, int& special, long& motion_index) {
    for (std::size_t k = 0; k < kSpecialTokens.size(); ++k) {
        if (text.substr(pos, kSpecialTokens[k].size()) == kSpecialTokens[k]) {
            special = static_cast<int>(k);
            return kSpecialTokens[k].size();
        }
    }
    if (text.substr(pos, kMotionIdPrefix.size()) == kMotionIdPrefix) {
        std::size_t j = pos + kMotionIdPrefix.size();
        const std::size_t digits_at = j;
        long v = 0;
        while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j])) && j - digits_at < 9)
            v = v * 10 + (text[j++] - '0');
        if (j > digits_at && j < text.size() && text[j] == '>') {
            special = -1;
            motion_index = v;
            return j + 1 - pos;
        }
    }
    return 0;
}

std::string escape_line(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case '\r': out += "\\r"; break;
            default: out += c;
        }
    }
    return out;
}

std::string unescape_line(const std::string& s, std::size_t line_no) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\') {
            out += s[i];
            continue;
        }
        if (++i == s.size()) throw FormatError("dangling escape on vocabulary line " + std::to_string(line_no), line_no);
        switch (s[i]) {
            case '\\': out += '\\'; break;
            case 'n': out += '\n'; break;
            case 't': out += '\t'; break;
            case 'r': out += '\r'; break;
            default: throw FormatError("unknown escape on vocabulary line " + std::to_string(line_no), line_no);
        }
    }
    return out;
}

}  // namespace

std::vector<std::string> split_text_pieces(std::string_view s) {
    std::vector<std::string> pieces;
    std::size_t i = 0;
    while (i < s.size()) {
        if (s[i] == ' ' && i + 1 < s.size() && !is_ws(s[i + 1])) {
            const std::size_t n = unit_length(s, i + 1);
            pieces.emplace_back(s.substr(i, n + 1));
            i += n + 1;
        } else if (is_ws(s[i])) {
            std::size_t j = i;
            while (j < s.size() && is_ws(s[j])) ++j;
            // Leave a trailing single space for the next piece to absorb.
            if (j < s.size() && j - i > 1 && s[j - 1] == ' ') --j;
            pieces.emplace_back(s.substr(i, j - i));
            i = j;
        } else {
            const std::size_t n = unit_length(s, i);
            pieces.emplace_back(s.substr(i, n));
            i += n;
        }
    }
    return pieces;
}

UnifiedVocabulary::UnifiedVocabulary(std::vector<std::string> text_tokens, int motion_tokens)
    : text_(std::move(text_tokens)), motion_size_(motion_tokens) {
    if (motion_tokens < 1) throw InvalidArgument("motion vocabulary size must be positive");
    if (text_.empty() || text_[0] != kUnkToken) throw InvalidArgument("text vocabulary must start with <unk>");
    for (std::size_t i = 0; i < text_.size(); ++i) {
        if (text_[i].empty()) throw InvalidArgument("empty text token at id " + std::to_string(i));
        if (!text_ids_.emplace(text_[i], static_cast<int>(i)).second)
            throw InvalidArgument("duplicate text token '" + text_[i] + "'");
    }
}

int UnifiedVocabulary::motion_token_id(int codebook_index) const {
    if (codebook_index < 0 || codebook_index >= motion_size_)
        throw InvalidToken("motion index " + std::to_string(codebook_index) + " outside [0, " +
                           std::to_string(motion_size_) + ")");
    return text_size() + codebook_index;
}

int UnifiedVocabulary::codebook_index(int id) const {
    if (!is_motion(id)) throw InvalidToken("token id " + std::to_string(id) + " is not a motion token");
    return id - text_size();
}

std::string UnifiedVocabulary::surface(int id) const {
    if (is_text(id)) return text_[static_cast<std::size_t>(id)];
    if (is_motion(id)) return std::string(kMotionIdPrefix) + std::to_string(id - text_size()) + ">";
    if (is_special(id)) return std::string(kSpecialTokens[static_cast<std::size_t>(id - special_base())]);
    throw InvalidToken("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
}

TokenIds UnifiedVocabulary::tokenize(std::string_view text) const {
    TokenIds ids;
    auto flush = [&](std::string_view segment) {
        for (const std::string& p : split_text_pieces(segment)) {
            auto it = text_ids_.find(p);
            ids.push_back(it == text_ids_.end() ? unk_id() : it->second);
        }
    };
    std::size_t seg_start = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '<') {
            int special = 0;
            long motion = 0;
            const std::size_t n = match_marker(text, i, special, motion);
            if (n > 0 && (special >= 0 || motion < motion_size_)) {
                flush(text.substr(seg_start, i - seg_start));
                ids.push_back(special >= 0 ? special_base() + special : text_size() + static_cast<int>(motion));
                i += n;
                seg_start = i;
                continue;
            }
        }
        ++i;
    }
    flush(text.substr(seg_start));
    return ids;
}

std::string UnifiedVocabulary::detokenize(const TokenIds& ids) const {
    std::string out;
    for (int id : ids) out += surface(id);
    return out;
}

std::vector<std::string> UnifiedVocabulary::unknown_pieces(std::string_view text) const {
    std::vector<std::string> unknown;
    std::size_t seg_start = 0, i = 0;
    auto scan = [&](std::string_view segment) {
        for (const std::string& p : split_text_pieces(segment))
            if (!text_ids_.count(p)) unknown.push_back(p);
    };
    while (i < text.size()) {
        int special = 0;
        long motion = 0;
        const std::size_t n = text[i] == '<' ? match_marker(text, i, special, motion) : 0;
        if (n > 0 && (special >= 0 || motion < motion_size_)) {
            scan(text.substr(seg_start, i - seg_start));
            i += n;
            seg_start = i;
        } else {
            ++i;
        }
    }
    scan(text.substr(seg_start));
    return unknown;
}

void UnifiedVocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "# mgm-vocab K_t=" << text_size() << " K_m=" << motion_size_ << " V_s=" << special_size() << '\n';
    for (int id = 0; id < size(); ++id) out << escape_line(surface(id)) << '\n';
    if (!out) throw DataError("write failed for " + path.string());
}

UnifiedVocabulary UnifiedVocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string header;
    std::getline(in, header);
    int kt = -1, km = -1, vs = -1;
    if (std::sscanf(header.c_str(), "# mgm-vocab K_t=%d K_m=%d V_s=%d", &kt, &km, &vs) != 3 || kt < 1 || km < 1)
        throw FormatError("bad vocabulary header", 0);
    if (vs != static_cast<int>(kSpecialTokens.size()))
        throw FormatError("vocabulary declares " + std::to_string(vs) + " special tokens", 0);
    std::vector<std::string> text;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (static_cast<int>(text.size()) < kt) text.push_back(unescape_line(line, line_no));
    }
    if (static_cast<int>(line_no - 1) != kt + km + vs)
        throw FormatError("vocabulary has " + std::to_string(line_no - 1) + " token lines, header implies " +
                              std::to_string(kt + km + vs),
                          line_no);
    return UnifiedVocabulary(std::move(text), km);
}

UnifiedVocabulary build_vocab(const std::vector<std::string>& corpus, int motion_tokens) {
    if (motion_tokens < 1) throw InvalidArgument("codebook size K must be positive");
    if (corpus.empty()) throw InvalidArgument("vocabulary corpus is empty");
    std::vector<std::string> text = {std::string(kUnkToken)};
    for (char d = '0'; d <= '9'; ++d) {
        text.emplace_back(1, d);
        text.push_back(std::string(" ") + d);
    }
    text.emplace_back(".");
    std::map<std::string, long> counts;
    for (const std::string& doc : corpus) {
        const std::string_view s = doc;
        std::size_t seg_start = 0, i = 0;
        auto count = [&](std::string_view seg) {
            for (const std::string& p : split_text_pieces(seg)) ++counts[p];
        };
        while (i < s.size()) {
            int special = 0;
            long motion = 0;
            const std::size_t n = s[i] == '<' ? match_marker(s, i, special, motion) : 0;
            if (n > 0) {
                count(s.substr(seg_start, i - seg_start));
                i += n;
                seg_start = i;
            } else {
                ++i;
            }
        }
        count(s.substr(seg_start));
    }
    for (const std::string& t : text) counts.erase(t);
    std::vector<std::pair<std::string, long>> ordered(counts.begin(), counts.end());
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (auto& [piece, n] : ordered) text.push_back(piece);
    return UnifiedVocabulary(std::move(text), motion_tokens);
}

TokenIds wrap_motion(const std::vector<int>& codebook_indices, const UnifiedVocabulary& vocab) {
    TokenIds ids;
    ids.reserve(codebook_indices.size() + 2);
    ids.push_back(vocab.motion_open_id());
    for (int k : codebook_indices) ids.push_back(vocab.motion_token_id(k));
    ids.push_back(vocab.motion_close_id());
    return ids;
}

std::string wrap_motion_text(const std::vector<int>& codebook_indices) {
    std::string out(kMotionOpen);
    for (int k : codebook_indices) {
        if (k < 0) throw InvalidToken("negative motion index");
        out += kMotionIdPrefix;
        out += std::to_string(k);
        out += '>';
    }
    out += kMotionClose;
    return out;
}

ExtractedMotion extract_motion_spans(const TokenIds& stream, const UnifiedVocabulary& vocab) {
    ExtractedMotion out;
    bool open = false;
    std::size_t open_at = 0;
    std::vector<int> current;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        const int id = stream[i];
        if (id == vocab.motion_open_id()) {
            if (open) {
                out.diagnostics.push_back({i, "nested <Motion Tokens>; previous span closed here"});
                out.spans.push_back(std::move(current));
                current.clear();
            }
            open = true;
            open_at = i;
        } else if (id == vocab.motion_close_id()) {
            if (!open) {
                out.diagnostics.push_back({i, "</Motion Tokens> without an opening marker dropped"});
                continue;
            }
            out.spans.push_back(std::move(current));
            current.clear();
            open = false;
        } else if (vocab.is_motion(id)) {
            if (open) {
                current.push_back(vocab.codebook_index(id));
            } else {
                out.diagnostics.push_back({i, "motion token outside markers dropped"});
            }
        } else {
            if (open) out.diagnostics.push_back({i, "non-motion token inside motion span kept as text"});
            out.residual.push_back(id);
        }
    }
    if (open) {
        out.diagnostics.push_back({open_at, "unclosed <Motion Tokens> closed at end of stream"});
        out.spans.push_back(std::move(current));
    }
    return out;
}

}  // namespace mgm
