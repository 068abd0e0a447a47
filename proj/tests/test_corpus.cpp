#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "dkd/corpus.hpp"
#include "dkd/error.hpp"

using namespace dkd;

namespace {

namespace fs = std::filesystem;

struct TempFile {
    fs::path path;
    explicit TempFile(const std::string& content) {
        static int counter = 0;
        path = fs::temp_directory_path() / ("dkd_corpus_" + std::to_string(counter++) + ".txt");
        std::ofstream out(path, std::ios::binary);
        out << content;
    }
    ~TempFile() { fs::remove(path); }
};

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected dkd::Error");
    return ErrorKind::usage;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

SynthConfig small_cfg() {
    SynthConfig cfg;
    cfg.vocab_size = 325; // 5 + 20 topics * 16 tokens
    cfg.n_topics = 20;
    cfg.topic_token_count = 16;
    cfg.query_len = 6;
    cfg.passage_len = 32;
    cfg.positive_topic_fraction = 0.8;
    cfg.hard_overlap_fraction = 0.4;
    cfg.n_queries = 40;
    cfg.negatives_per_query = 3;
    cfg.seed = 11;
    return cfg;
}

} // namespace

TEST_CASE("load_collection parses pid<TAB>text") {
    TempFile f("0\thello world\n1\tfoo\n");
    auto passages = load_collection(f.path.string());
    REQUIRE(passages.size() == 2);
    CHECK(passages[0].id == 0);
    CHECK(passages[0].text == "hello world");
    CHECK(passages[1].id == 1);
    CHECK(passages[1].text == "foo");
}

TEST_CASE("load_collection on empty file") {
    TempFile f("");
    CHECK(load_collection(f.path.string()).empty());
}

TEST_CASE("load_collection rejects non-integer ids with line number") {
    TempFile f("x\ttext\n");
    try {
        load_collection(f.path.string());
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::parse);
        CHECK(std::string(e.what()).find(":1") != std::string::npos);
    }
}

TEST_CASE("load_collection rejects duplicates and bad field counts") {
    TempFile dup("0\ta\n0\tb\n");
    CHECK(kind_of([&] { load_collection(dup.path.string()); }) == ErrorKind::validation);
    TempFile wide("0\ta\tb\n");
    CHECK(kind_of([&] { load_collection(wide.path.string()); }) == ErrorKind::parse);
}

TEST_CASE("load_queries parses and validates") {
    TempFile f("7\twhat is rust\n");
    auto queries = load_queries(f.path.string());
    REQUIRE(queries.size() == 1);
    CHECK(queries[0].id == 7);
    CHECK(queries[0].text == "what is rust");

    TempFile dup("1\ta\n1\tb\n");
    CHECK(kind_of([&] { load_queries(dup.path.string()); }) == ErrorKind::validation);
    TempFile wide("1\ta\tb\n");
    CHECK(kind_of([&] { load_queries(wide.path.string()); }) == ErrorKind::parse);
}

TEST_CASE("load_qrels keeps only positive judgments") {
    TempFile f("3 0 17 1\n");
    Qrels q = load_qrels(f.path.string());
    REQUIRE(q.size() == 1);
    CHECK(q[3] == std::set<Id>{17});

    TempFile zero("3 0 17 0\n");
    CHECK(load_qrels(zero.path.string()).empty());

    TempFile multi("3 0 17 1\n3 0 9 1\n");
    Qrels m = load_qrels(multi.path.string());
    CHECK(m[3] == std::set<Id>{9, 17});
}

TEST_CASE("load_qrels rejects malformed lines") {
    TempFile narrow("3 0 17\n");
    CHECK(kind_of([&] { load_qrels(narrow.path.string()); }) == ErrorKind::parse);
    TempFile bad("3 0 x 1\n");
    CHECK(kind_of([&] { load_qrels(bad.path.string()); }) == ErrorKind::parse);
}

TEST_CASE("load_instances parses negatives in order") {
    TempFile f("1\t10\t20,21\n");
    auto instances = load_instances(f.path.string());
    REQUIRE(instances.size() == 1);
    CHECK(instances[0].query_id == 1);
    CHECK(instances[0].positive_pid == 10);
    CHECK(instances[0].negative_pids == std::vector<Id>{20, 21});
}

TEST_CASE("load_instances validates the negative list") {
    TempFile pos_in_negs("1\t10\t10,21\n");
    CHECK(kind_of([&] { load_instances(pos_in_negs.path.string()); }) ==
          ErrorKind::validation);
    TempFile empty_negs("1\t10\t\n");
    CHECK(kind_of([&] { load_instances(empty_negs.path.string()); }) ==
          ErrorKind::validation);
    TempFile dup_negs("1\t10\t20,20\n");
    CHECK(kind_of([&] { load_instances(dup_negs.path.string()); }) == ErrorKind::validation);
}

TEST_CASE("gen_synthetic honors counts") {
    SynthConfig cfg = small_cfg();
    cfg.n_queries = 10;
    cfg.negatives_per_query = 10;
    SynthOutput out = gen_synthetic(cfg);
    CHECK(out.data.instances.size() == 10);
    for (const auto& inst : out.data.instances) {
        CHECK(inst.negative_pids.size() == 10);
    }
    CHECK(out.data.passages.size() == 10 * 11);
    CHECK(out.data.qrels.size() == 10);
    for (const auto& inst : out.data.instances) {
        CHECK(out.data.qrels.at(inst.query_id) == std::set<Id>{inst.positive_pid});
    }
    validate_dataset(out.data);
}

TEST_CASE("gen_synthetic is deterministic, serialized byte for byte") {
    SynthConfig cfg = small_cfg();
    auto dir = fs::temp_directory_path() / "dkd_gen_det";
    fs::create_directories(dir);
    std::string bytes[2];
    for (int run = 0; run < 2; ++run) {
        SynthOutput out = gen_synthetic(cfg);
        auto base = dir / ("run" + std::to_string(run));
        save_collection(out.data.passages, (base.string() + "_c.tsv"));
        save_queries(out.data.queries, (base.string() + "_q.tsv"));
        save_qrels(out.data.qrels, (base.string() + "_r.txt"));
        save_instances(out.data.instances, (base.string() + "_i.tsv"));
        bytes[run] = file_bytes(base.string() + "_c.tsv") + file_bytes(base.string() + "_q.tsv") +
                     file_bytes(base.string() + "_r.txt") + file_bytes(base.string() + "_i.tsv");
    }
    CHECK(bytes[0] == bytes[1]);
    fs::remove_all(dir);
}

TEST_CASE("gen_synthetic round-trips through the writers and loaders") {
    SynthConfig cfg = small_cfg();
    SynthOutput out = gen_synthetic(cfg);
    auto dir = fs::temp_directory_path() / "dkd_gen_rt";
    fs::create_directories(dir);
    save_collection(out.data.passages, (dir / "c.tsv").string());
    save_queries(out.data.queries, (dir / "q.tsv").string());
    save_qrels(out.data.qrels, (dir / "r.txt").string());
    save_instances(out.data.instances, (dir / "i.tsv").string());

    auto passages = load_collection((dir / "c.tsv").string());
    auto queries = load_queries((dir / "q.tsv").string());
    Qrels qrels = load_qrels((dir / "r.txt").string());
    auto instances = load_instances((dir / "i.tsv").string());

    REQUIRE(passages.size() == out.data.passages.size());
    for (std::size_t i = 0; i < passages.size(); ++i) {
        CHECK(passages[i].id == out.data.passages[i].id);
        CHECK(passages[i].text == out.data.passages[i].text);
    }
    REQUIRE(queries.size() == out.data.queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        CHECK(queries[i].text == out.data.queries[i].text);
    }
    CHECK(qrels == out.data.qrels);
    REQUIRE(instances.size() == out.data.instances.size());
    for (std::size_t i = 0; i < instances.size(); ++i) {
        CHECK(instances[i].query_id == out.data.instances[i].query_id);
        CHECK(instances[i].positive_pid == out.data.instances[i].positive_pid);
        CHECK(instances[i].negative_pids == out.data.instances[i].negative_pids);
    }
    fs::remove_all(dir);
}

// Monte-Carlo check of the generative mixture: with hard_overlap_fraction
// 0.4, the fraction of hard-negative tokens drawn from the query's topic set
// has expectation 0.4 exactly (off-topic draws come from a disjoint topic).
TEST_CASE("gen_synthetic hard-negative topical fraction matches config") {
    SynthConfig cfg = small_cfg();
    cfg.n_queries = 1000;
    cfg.negatives_per_query = 3;
    cfg.hard_overlap_fraction = 0.4;
    cfg.positive_topic_fraction = 0.8;
    SynthOutput out = gen_synthetic(cfg);

    auto pid_index = build_pid_index(out.data.passages);
    double frac_sum = 0.0;
    std::size_t n_negs = 0;
    double pos_overlap_sum = 0.0;
    double neg_overlap_sum = 0.0;
    for (std::size_t i = 0; i < out.data.instances.size(); ++i) {
        const auto& inst = out.data.instances[i];
        std::set<std::string> topic_words;
        for (std::size_t w : out.topic_words[out.query_topic[i]]) {
            topic_words.insert("w" + std::to_string(w));
        }
        auto in_topic_fraction = [&](const std::string& text) {
            std::istringstream ss(text);
            std::string tok;
            std::size_t total = 0, hits = 0;
            while (ss >> tok) {
                ++total;
                if (topic_words.count(tok)) ++hits;
            }
            return static_cast<double>(hits) / static_cast<double>(total);
        };
        pos_overlap_sum +=
            in_topic_fraction(out.data.passages[pid_index.at(inst.positive_pid)].text);
        for (Id pid : inst.negative_pids) {
            double f = in_topic_fraction(out.data.passages[pid_index.at(pid)].text);
            frac_sum += f;
            neg_overlap_sum += f;
            ++n_negs;
        }
    }
    const double mean = frac_sum / static_cast<double>(n_negs);
    CHECK(mean == doctest::Approx(0.4).epsilon(0.125)); // +-0.05 absolute
    CHECK(std::abs(mean - 0.4) <= 0.05);

    // Positives are more topical than hard negatives by construction.
    CHECK(pos_overlap_sum / static_cast<double>(out.data.instances.size()) >
          neg_overlap_sum / static_cast<double>(n_negs));
}

TEST_CASE("gen_synthetic rejects infeasible configs") {
    SynthConfig cfg = small_cfg();
    cfg.n_topics = 100;
    cfg.topic_token_count = 100; // 10000 > vocab - 5
    CHECK(kind_of([&] { gen_synthetic(cfg); }) == ErrorKind::config);

    SynthConfig bad_frac = small_cfg();
    bad_frac.hard_overlap_fraction = 0.9; // >= positive fraction
    CHECK(kind_of([&] { gen_synthetic(bad_frac); }) == ErrorKind::config);
}

TEST_CASE("validate_dataset catches dangling references") {
    SynthOutput out = gen_synthetic(small_cfg());
    Dataset broken = out.data;
    broken.instances[0].negative_pids[0] = 999999;
    CHECK(kind_of([&] { validate_dataset(broken); }) == ErrorKind::validation);
}
