#include "dkd/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "dkd/corpus.hpp"
#include "dkd/error.hpp"

namespace dkd {

namespace {

const char* kSpecialNames[kNumSpecialTokens] = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
};

// Unicode whitespace beyond ASCII that shows up in real passage text.
bool is_space_codepoint(std::uint32_t cp) {
    switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
        return true;
    default:
        return cp >= 0x2000 && cp <= 0x200A;
    }
}

// Decodes one UTF-8 code point; malformed bytes are treated as Latin-1 so
// tokenization never fails.
std::uint32_t decode_utf8(std::string_view s, std::size_t& i) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = c;
    if (c >= 0xF0) { extra = 3; cp = c & 0x07u; }
    else if (c >= 0xE0) { extra = 2; cp = c & 0x0Fu; }
    else if (c >= 0xC0) { extra = 1; cp = c & 0x1Fu; }
    if (i + extra >= s.size()) { ++i; return c; }
    for (std::size_t k = 1; k <= extra; ++k) {
        unsigned char cc = static_cast<unsigned char>(s[i + k]);
        if ((cc & 0xC0u) != 0x80u) { ++i; return c; }
        cp = (cp << 6) | (cc & 0x3Fu);
    }
    i += extra + 1;
    return cp;
}

} // namespace

Vocab::Vocab() {
    tokens_.reserve(kNumSpecialTokens);
    for (std::size_t i = 0; i < kNumSpecialTokens; ++i) {
        tokens_.emplace_back(kSpecialNames[i]);
        ids_.emplace(kSpecialNames[i], static_cast<TokenId>(i));
    }
}

TokenId Vocab::add(const std::string& token) {
    auto [it, inserted] = ids_.emplace(token, static_cast<TokenId>(tokens_.size()));
    if (!inserted) {
        throw Error(ErrorKind::validation, "duplicate vocab token: " + token);
    }
    tokens_.push_back(token);
    return it->second;
}

TokenId Vocab::id_of(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token_of(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw Error(ErrorKind::validation, "token id out of range: " + std::to_string(id));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(std::string_view token) const {
    return ids_.count(std::string(token)) != 0;
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t start = i;
        std::uint32_t cp = decode_utf8(text, i);
        if (is_space_codepoint(cp)) {
            if (!current.empty()) {
                words.push_back(std::move(current));
                current.clear();
            }
            continue;
        }
        for (std::size_t k = start; k < i; ++k) {
            char c = text[k];
            if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
            current.push_back(c);
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

Vocab build_vocab(const std::vector<Passage>& passages,
                  const std::vector<Query>& queries, std::size_t max_size) {
    if (max_size <= kNumSpecialTokens) {
        throw Error(ErrorKind::config,
                    "vocab max_size must exceed " + std::to_string(kNumSpecialTokens));
    }
    // std::map keys give the lexicographic tie-break for free.
    std::map<std::string, std::size_t> freq;
    for (const auto& p : passages) {
        for (auto& w : split_words(p.text)) ++freq[w];
    }
    for (const auto& q : queries) {
        for (auto& w : split_words(q.text)) ++freq[w];
    }

    std::vector<std::pair<std::string_view, std::size_t>> ranked;
    ranked.reserve(freq.size());
    for (const auto& [tok, n] : freq) ranked.emplace_back(tok, n);
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    Vocab vocab;
    for (const auto& [tok, n] : ranked) {
        if (vocab.size() >= max_size) break;
        vocab.add(std::string(tok));
    }
    return vocab;
}

TokenSeq tokenize(const Vocab& vocab, std::string_view text) {
    TokenSeq seq;
    for (const auto& w : split_words(text)) {
        seq.push_back(vocab.id_of(w));
    }
    return seq;
}

std::string detokenize(const Vocab& vocab, const TokenSeq& seq) {
    std::string out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i > 0) out += ' ';
        out += vocab.token_of(seq[i]);
    }
    return out;
}

TokenSeq truncate(TokenSeq seq, std::size_t max_len) {
    if (max_len < 1) {
        throw Error(ErrorKind::usage, "truncate: max_len must be >= 1");
    }
    if (seq.size() > max_len) seq.resize(max_len);
    return seq;
}

void write_vocab_tsv(const Vocab& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::data, "cannot open for writing: " + path);
    for (std::size_t id = 0; id < vocab.size(); ++id) {
        out << vocab.token_of(static_cast<TokenId>(id)) << '\t' << id << '\n';
    }
}

} // namespace dkd
