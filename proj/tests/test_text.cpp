#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "dkd/corpus.hpp"
#include "dkd/error.hpp"
#include "dkd/rng.hpp"
#include "dkd/text.hpp"

using namespace dkd;

namespace {

std::vector<Passage> passages_of(const std::vector<std::string>& texts) {
    std::vector<Passage> out;
    for (std::size_t i = 0; i < texts.size(); ++i) out.push_back({(Id)i, texts[i]});
    return out;
}

} // namespace

TEST_CASE("specials are pinned") {
    Vocab v;
    CHECK(v.size() == 5);
    CHECK(v.id_of("[PAD]") == 0);
    CHECK(v.id_of("[UNK]") == 1);
    CHECK(v.id_of("[CLS]") == 2);
    CHECK(v.id_of("[SEP]") == 3);
    CHECK(v.id_of("[MASK]") == 4);
}

TEST_CASE("build_vocab ranks by frequency") {
    Vocab v = build_vocab(passages_of({"a a b"}), {}, 7);
    CHECK(v.id_of("a") == 5);
    CHECK(v.id_of("b") == 6);
}

TEST_CASE("build_vocab breaks frequency ties lexicographically") {
    Vocab v = build_vocab(passages_of({"b a"}), {}, 7);
    CHECK(v.id_of("a") == 5);
    CHECK(v.id_of("b") == 6);
}

TEST_CASE("build_vocab on empty corpus keeps only specials") {
    Vocab v = build_vocab({}, {}, 100);
    CHECK(v.size() == 5);
}

TEST_CASE("build_vocab rejects max_size <= 5") {
    CHECK_THROWS_AS(build_vocab({}, {}, 5), Error);
    try {
        build_vocab({}, {}, 3);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
    }
}

TEST_CASE("build_vocab caps at max_size") {
    Vocab v = build_vocab(passages_of({"a a a b b c"}), {}, 7);
    CHECK(v.size() == 7);
    CHECK(v.id_of("a") == 5);
    CHECK(v.id_of("b") == 6);
    CHECK(v.id_of("c") == kUnkId); // over the cap
}

TEST_CASE("tokenize lowercases and maps OOV to UNK") {
    Vocab v = build_vocab(passages_of({"a a b"}), {}, 7);
    CHECK(tokenize(v, "A b") == TokenSeq{5, 6});
    CHECK(tokenize(v, "a z") == TokenSeq{5, 1});
    CHECK(tokenize(v, "").empty());
}

TEST_CASE("tokenize splits on unicode whitespace") {
    Vocab v = build_vocab(passages_of({"a b"}), {}, 7);
    // U+00A0 no-break space and U+3000 ideographic space between the words
    CHECK(tokenize(v, "a\xc2\xa0\x62") == TokenSeq{5, 6});
    CHECK(tokenize(v, "a\xe3\x80\x80" "b") == TokenSeq{5, 6});
}

TEST_CASE("detokenize then tokenize is identity on in-vocab text") {
    Vocab v = build_vocab(passages_of({"lorem ipsum dolor sit amet"}), {}, 50);
    Rng rng(7);
    for (int iter = 0; iter < 50; ++iter) {
        TokenSeq seq;
        for (std::size_t i = 0; i < 1 + rng.below(12); ++i) {
            seq.push_back(static_cast<TokenId>(5 + rng.below(v.size() - 5)));
        }
        CHECK(tokenize(v, detokenize(v, seq)) == seq);
    }
}

TEST_CASE("truncate keeps the head") {
    CHECK(dkd::truncate({5, 6, 7}, 2) == TokenSeq{5, 6});
    CHECK(dkd::truncate({5}, 32) == TokenSeq{5});
    CHECK(dkd::truncate(TokenSeq{}, 128).empty());
}

TEST_CASE("truncate is idempotent") {
    Rng rng(3);
    for (int iter = 0; iter < 100; ++iter) {
        TokenSeq seq;
        for (std::size_t i = 0; i < rng.below(40); ++i) {
            seq.push_back(static_cast<TokenId>(rng.below(1000)));
        }
        std::size_t k = 1 + rng.below(30);
        CHECK(truncate(truncate(seq, k), k) == truncate(seq, k));
    }
}

TEST_CASE("vocab tsv export lists specials and ids") {
    Vocab v = build_vocab(passages_of({"z y"}), {}, 7);
    auto path = std::filesystem::temp_directory_path() / "dkd_vocab_test.tsv";
    write_vocab_tsv(v, path.string());
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "[PAD]\t0");
    std::getline(in, line);
    CHECK(line == "[UNK]\t1");
    std::getline(in, line);
    std::getline(in, line);
    std::getline(in, line);
    CHECK(line == "[MASK]\t4");
    std::getline(in, line);
    CHECK(line == "y\t5");
    std::filesystem::remove(path);
}
