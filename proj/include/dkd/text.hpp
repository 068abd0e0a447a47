#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dkd {

struct Passage;
struct Query;

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kClsId = 2;
inline constexpr TokenId kSepId = 3;
inline constexpr TokenId kMaskId = 4;
inline constexpr std::size_t kNumSpecialTokens = 5;

// Token -> id mapping with the fixed specials PAD=0 UNK=1 CLS=2 SEP=3 MASK=4.
// Immutable once built; all non-special ids are >= 5.
class Vocab {
public:
    Vocab();

    // Inserts a non-special token with the next free id. Throws on duplicates.
    TokenId add(const std::string& token);

    TokenId id_of(std::string_view token) const; // kUnkId when absent
    const std::string& token_of(TokenId id) const;
    bool contains(std::string_view token) const;

    std::size_t size() const { return tokens_.size(); }

private:
    std::unordered_map<std::string, TokenId> ids_;
    std::vector<std::string> tokens_;
};

// Lowercase + whitespace-split word list. Splits on ASCII whitespace and the
// common Unicode space code points; lowercasing is ASCII-only.
std::vector<std::string> split_words(std::string_view text);

// Frequency-ranked vocabulary over the corpus text, ties broken
// lexicographically, ids 5..max_size-1. max_size <= 5 is a config error.
Vocab build_vocab(const std::vector<Passage>& passages,
                  const std::vector<Query>& queries, std::size_t max_size);

TokenSeq tokenize(const Vocab& vocab, std::string_view text);
std::string detokenize(const Vocab& vocab, const TokenSeq& seq);

TokenSeq truncate(TokenSeq seq, std::size_t max_len);

void write_vocab_tsv(const Vocab& vocab, const std::string& path);

} // namespace dkd
