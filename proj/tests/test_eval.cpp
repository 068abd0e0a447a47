#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dkd/error.hpp"
#include "dkd/eval.hpp"
#include "dkd/rng.hpp"

using namespace dkd;

namespace {

RankedList ranked_of(Id qid, const std::vector<Id>& pids) {
    RankedList list;
    list.query_id = qid;
    double score = static_cast<double>(pids.size());
    for (Id pid : pids) list.entries.push_back({pid, score--});
    return list;
}

// Independent full-scan scorer: recomputes every inner product and ranks with
// a stable comparator. Shares nothing with retrieve() beyond the corpus data.
std::vector<Id> naive_ranking(std::span<const double> q_vec, const CorpusMatrix& corpus,
                              std::size_t k) {
    struct Scored {
        Id pid;
        double score;
    };
    std::vector<Scored> scored;
    for (std::size_t i = 0; i < corpus.pids.size(); ++i) {
        double acc = 0.0;
        for (std::size_t d = 0; d < corpus.h; ++d) {
            acc += q_vec[d] * corpus.rows[i * corpus.h + d];
        }
        scored.push_back({corpus.pids[i], acc});
    }
    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.pid < b.pid;
    });
    std::vector<Id> out;
    for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) {
        out.push_back(scored[i].pid);
    }
    return out;
}

} // namespace

TEST_CASE("encode_corpus shape and consistency with de_encode") {
    std::vector<Passage> passages = {{0, "a b"}, {1, "b"}, {2, "a b"}};
    Vocab vocab = build_vocab(passages, {}, 10);
    DualEncoderParams params = init_dual_params(vocab.size(), 4, 3);
    CorpusMatrix m = encode_corpus(params, passages, vocab, 128);
    CHECK(m.pids.size() == 3);
    CHECK(m.rows.size() == 12);

    auto direct = de_encode(params, tokenize(vocab, "a b"));
    for (std::size_t d = 0; d < 4; ++d) {
        CHECK(m.row(0)[d] == direct[d]);
        CHECK(m.row(2)[d] == direct[d]); // identical passages, identical rows
    }
}

TEST_CASE("encode_corpus names the pid of an untokenizable passage") {
    std::vector<Passage> passages = {{7, "??"}};
    // vocabulary without '??' still tokenizes to [UNK]; craft emptiness with
    // whitespace-only text instead, which the loader would normally reject.
    passages[0].text = "   ";
    Vocab vocab = build_vocab({}, {}, 10);
    DualEncoderParams params = init_dual_params(vocab.size(), 2, 1);
    try {
        encode_corpus(params, passages, vocab, 128);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("7") != std::string::npos);
    }
}

TEST_CASE("retrieve breaks score ties by ascending pid") {
    CorpusMatrix corpus;
    corpus.h = 1;
    corpus.pids = {3, 1, 2};
    corpus.rows = {0.1, 0.9, 0.9};
    std::vector<double> q = {1.0};
    RankedList top = retrieve(q, corpus, 2);
    REQUIRE(top.entries.size() == 2);
    CHECK(top.entries[0].pid == 1);
    CHECK(top.entries[1].pid == 2);

    RankedList one = retrieve(q, corpus, 1);
    CHECK(one.entries[0].pid == 1);

    RankedList all = retrieve(q, corpus, 99); // k beyond corpus: full ranking
    CHECK(all.entries.size() == 3);
    CHECK(all.entries[2].pid == 3);
}

TEST_CASE("retrieve matches the naive oracle on 50 random corpora") {
    Rng rng(2077);
    for (int iter = 0; iter < 50; ++iter) {
        const std::size_t n = 1 + rng.below(200);
        const std::size_t h = 1 + rng.below(8);
        CorpusMatrix corpus;
        corpus.h = h;
        for (std::size_t i = 0; i < n; ++i) {
            corpus.pids.push_back(static_cast<Id>(rng.below(10000)));
            for (std::size_t d = 0; d < h; ++d) {
                // quantized values make exact score ties common
                corpus.rows.push_back(static_cast<double>(rng.below(5)) * 0.25);
            }
        }
        std::sort(corpus.pids.begin(), corpus.pids.end());
        corpus.pids.erase(std::unique(corpus.pids.begin(), corpus.pids.end()),
                          corpus.pids.end());
        corpus.rows.resize(corpus.pids.size() * h);

        std::vector<double> q(h);
        for (auto& x : q) x = static_cast<double>(rng.below(7)) * 0.5 - 1.0;
        const std::size_t k = 1 + rng.below(corpus.pids.size() + 10);

        RankedList got = retrieve(q, corpus, k);
        std::vector<Id> expected = naive_ranking(q, corpus, k);
        REQUIRE(got.entries.size() == expected.size());
        for (std::size_t i = 0; i < expected.size(); ++i) {
            CHECK(got.entries[i].pid == expected[i]);
        }
        for (std::size_t i = 1; i < got.entries.size(); ++i) {
            CHECK(got.entries[i - 1].score >= got.entries[i].score);
        }
    }
}

TEST_CASE("mrr closed forms") {
    Qrels qrels;
    qrels[1] = {10};
    CHECK(mrr_at_k({ranked_of(1, {10, 11, 12})}, qrels, 10).value ==
          doctest::Approx(1.0));
    CHECK(mrr_at_k({ranked_of(1, {11, 12, 10})}, qrels, 10).value ==
          doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    std::vector<Id> eleven;
    for (Id p = 20; p < 30; ++p) eleven.push_back(p);
    eleven.push_back(10); // gold at rank 11
    CHECK(mrr_at_k({ranked_of(1, eleven)}, qrels, 10).value == doctest::Approx(0.0));
}

TEST_CASE("recall closed forms") {
    Qrels qrels;
    qrels[1] = {10};
    CHECK(recall_at_k({ranked_of(1, {10, 11})}, qrels, 10).value == doctest::Approx(1.0));
    qrels[1] = {10, 99};
    CHECK(recall_at_k({ranked_of(1, {10, 11})}, qrels, 10).value == doctest::Approx(0.5));
    qrels[1] = {98, 99};
    CHECK(recall_at_k({ranked_of(1, {10, 11})}, qrels, 10).value == doctest::Approx(0.0));
}

TEST_CASE("ndcg closed forms") {
    Qrels qrels;
    qrels[1] = {10};
    CHECK(ndcg_at_k({ranked_of(1, {10, 11})}, qrels, 10).value == doctest::Approx(1.0));
    const double rank2 = ndcg_at_k({ranked_of(1, {11, 10})}, qrels, 10).value;
    CHECK(rank2 == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));
    CHECK(std::abs(rank2 - 0.6309297535714574) <= 1e-9);
    CHECK(ndcg_at_k({ranked_of(1, {11, 12})}, qrels, 10).value == doctest::Approx(0.0));
}

TEST_CASE("metrics exclude unjudged queries with a warning count") {
    Qrels qrels;
    qrels[1] = {10};
    std::vector<RankedList> ranked = {ranked_of(1, {10}), ranked_of(2, {10})};
    MetricValue v = mrr_at_k(ranked, qrels, 10);
    CHECK(v.value == doctest::Approx(1.0));
    CHECK(v.n_used == 1);
    CHECK(v.n_skipped == 1);
}

TEST_CASE("metrics are bounded and permutation invariant") {
    Rng rng(55);
    for (int iter = 0; iter < 30; ++iter) {
        Qrels qrels;
        std::vector<RankedList> ranked;
        for (Id q = 0; q < 6; ++q) {
            std::vector<Id> pids;
            for (Id p = 0; p < 20; ++p) pids.push_back(p);
            shuffle(pids, rng);
            ranked.push_back(ranked_of(q, pids));
            std::set<Id> rel;
            for (std::size_t r = 0; r < 1 + rng.below(3); ++r) {
                rel.insert(static_cast<Id>(rng.below(25)));
            }
            qrels[q] = rel;
        }
        for (std::size_t k : {1, 5, 10}) {
            for (auto metric : {mrr_at_k, recall_at_k, ndcg_at_k}) {
                double v = metric(ranked, qrels, k).value;
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                std::vector<RankedList> shuffled = ranked;
                shuffle(shuffled, rng);
                CHECK(metric(shuffled, qrels, k).value == doctest::Approx(v).epsilon(1e-15));
            }
        }
    }
}

TEST_CASE("histogram buckets scores and clamps outliers") {
    HistogramSpec spec;
    spec.lo = -1.0;
    spec.hi = 1.0;
    spec.width = 0.5;
    spec.groups = {"positive", "hard_negative"};
    CHECK(spec.n_buckets() == 4);

    // one instance; teacher returns b2 only, so scores equal the bias
    CrossEncoderParams teacher;
    teacher.vocab_size = 10;
    teacher.h = 2;
    teacher.d_hid = 2;
    teacher.embed.assign(20, 0.0);
    teacher.w1.assign(7 * 2, 0.0);
    teacher.b1.assign(2, 0.0);
    teacher.w2.assign(2, 0.0);
    teacher.b2 = {0.2};

    TokenizedData tokens;
    tokens.query_tokens = {{5}};
    tokens.qid_to_row = {{0, 0}};
    tokens.passage_tokens = {{6}, {7}};
    tokens.pid_to_row = {{0, 0}, {1, 1}};
    TrainInstance inst{0, 0, {1}};
    DarkSet empty_dark;

    Histogram hist = score_histogram(teacher, {inst}, {empty_dark}, tokens, spec);
    CHECK(hist.counts.at("positive")[2] == 1); // 0.2 lands in [0, 0.5)
    CHECK(hist.counts.at("hard_negative")[2] == 1);
    std::size_t total = 0;
    for (auto c : hist.counts.at("positive")) total += c;
    CHECK(total == 1);

    // clamped outlier
    teacher.b2 = {99.0};
    Histogram clamped = score_histogram(teacher, {inst}, {empty_dark}, tokens, spec);
    CHECK(clamped.counts.at("positive")[3] == 1);
    teacher.b2 = {-99.0};
    Histogram low = score_histogram(teacher, {inst}, {empty_dark}, tokens, spec);
    CHECK(low.counts.at("positive")[0] == 1);
}

TEST_CASE("histogram csv lists every group with range header") {
    HistogramSpec spec;
    spec.lo = -1.0;
    spec.hi = 1.0;
    spec.width = 1.0;
    spec.groups = {"positive", "hard_negative"};
    Histogram hist;
    hist.spec = spec;
    hist.counts["positive"] = {1, 0};
    hist.counts["hard_negative"] = {0, 2};
    hist.score_sum["positive"] = -0.5;
    hist.score_count["positive"] = 1;
    hist.score_sum["hard_negative"] = 1.0;
    hist.score_count["hard_negative"] = 2;

    auto path = std::filesystem::temp_directory_path() / "dkd_hist.csv";
    write_histogram_csv(hist, path.string());
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line.find("# range=[-1,1) width=1") != std::string::npos);
    std::getline(in, line);
    CHECK(line == "group,bucket_lo,bucket_hi,count");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 4); // 2 groups x 2 buckets
    std::filesystem::remove(path);
}

TEST_CASE("histogram distribution overlap behaves like a similarity") {
    HistogramSpec spec;
    spec.lo = 0.0;
    spec.hi = 4.0;
    spec.width = 1.0;
    Histogram hist;
    hist.spec = spec;
    hist.counts["positive"] = {4, 0, 0, 0};
    hist.counts["mix"] = {2, 2, 0, 0};
    hist.counts["hard_negative"] = {0, 0, 2, 2};
    hist.score_count["positive"] = 4;
    hist.score_count["mix"] = 4;
    hist.score_count["hard_negative"] = 4;
    CHECK(hist.distribution_overlap("positive", "mix") == doctest::Approx(0.5));
    CHECK(hist.distribution_overlap("positive", "hard_negative") == doctest::Approx(0.0));
    CHECK(hist.distribution_overlap("mix", "mix") == doctest::Approx(1.0));
}
