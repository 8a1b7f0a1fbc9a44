#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mgm/diagnostic.hpp"

namespace mgm {

using TokenIds = std::vector<int>;

inline constexpr std::string_view kMotionOpen = "<Motion Tokens>";
inline constexpr std::string_view kMotionClose = "</Motion Tokens>";
inline constexpr std::string_view kEosToken = "</s>";
inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";

// Order defines the special-token ids.
inline constexpr std::array<std::string_view, 6> kSpecialTokens = {
    kMotionOpen, kMotionClose, "<SEP>", "<Motionless>", kEosToken, kPadToken};

// Splits plain text (no special tokens) into vocabulary pieces: letter runs,
// single digits and single punctuation characters. A lone space in front of a
// piece is glued to it; every other whitespace run is its own piece, so
// concatenating the pieces reproduces the input.
std::vector<std::string> split_text_pieces(std::string_view text);

// Text, motion and special tokens in three disjoint id ranges:
//   [0, K_t) text (id 0 is <unk>), [K_t, K_t + K) <motion_id_k>,
//   then <Motion Tokens>, </Motion Tokens>, <SEP>, <Motionless>, </s>, <pad>.
class UnifiedVocabulary {
public:
    UnifiedVocabulary(std::vector<std::string> text_tokens, int motion_tokens);

    int text_size() const noexcept { return static_cast<int>(text_.size()); }
    int motion_size() const noexcept { return motion_size_; }
    int special_size() const noexcept { return static_cast<int>(kSpecialTokens.size()); }
    int size() const noexcept { return text_size() + motion_size_ + special_size(); }

    bool is_text(int id) const noexcept { return id >= 0 && id < text_size(); }
    bool is_motion(int id) const noexcept { return id >= text_size() && id < text_size() + motion_size_; }
    bool is_special(int id) const noexcept { return id >= text_size() + motion_size_ && id < size(); }

    int unk_id() const noexcept { return 0; }
    int motion_open_id() const noexcept { return special_base(); }
    int motion_close_id() const noexcept { return special_base() + 1; }
    int sep_id() const noexcept { return special_base() + 2; }
    int motionless_id() const noexcept { return special_base() + 3; }
    int eos_id() const noexcept { return special_base() + 4; }
    int pad_id() const noexcept { return special_base() + 5; }

    // Throws InvalidToken for indices outside [0, K).
    int motion_token_id(int codebook_index) const;
    int codebook_index(int id) const;

    std::string surface(int id) const;
    TokenIds tokenize(std::string_view text) const;
    std::string detokenize(const TokenIds& ids) const;

    const std::vector<std::string>& text_tokens() const noexcept { return text_; }

    void save(const std::filesystem::path& path) const;
    static UnifiedVocabulary load(const std::filesystem::path& path);

    // Pieces of `text` that the vocabulary does not know.
    std::vector<std::string> unknown_pieces(std::string_view text) const;

    friend bool operator==(const UnifiedVocabulary& a, const UnifiedVocabulary& b) {
        return a.text_ == b.text_ && a.motion_size_ == b.motion_size_;
    }

private:
    int special_base() const noexcept { return text_size() + motion_size_; }

    std::vector<std::string> text_;
    int motion_size_;
    std::unordered_map<std::string, int> text_ids_;
};

// Text region: <unk>, the digits (bare and space-prefixed), '.', then every
// other piece of the corpus ordered by descending count, ties by byte order.
UnifiedVocabulary build_vocab(const std::vector<std::string>& corpus, int motion_tokens);

// <Motion Tokens> <motion_id_...> </Motion Tokens>
TokenIds wrap_motion(const std::vector<int>& codebook_indices, const UnifiedVocabulary& vocab);
std::string wrap_motion_text(const std::vector<int>& codebook_indices);

struct ExtractedMotion {
    std::vector<std::vector<int>> spans;  // codebook indices per span
    TokenIds residual;                    // the stream with every span removed
    std::vector<Diagnostic> diagnostics;  // positions are token indices
};

// Pulls every marker-delimited motion span out of a (possibly malformed)
// stream. Unclosed spans are closed at the end; motion ids outside markers
// are dropped; both are reported.
ExtractedMotion extract_motion_spans(const TokenIds& stream, const UnifiedVocabulary& vocab);

}  // namespace mgm
