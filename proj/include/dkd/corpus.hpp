#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace dkd {

using Id = std::int64_t;

struct Passage {
    Id id = 0;
    std::string text;
};

struct Query {
    Id id = 0;
    std::string text;
};

// query id -> relevant passage ids. Ordered containers keep every
// serialization of qrels deterministic.
using Qrels = std::map<Id, std::set<Id>>;

struct TrainInstance {
    Id query_id = 0;
    Id positive_pid = 0;
    std::vector<Id> negative_pids;
};

struct SynthConfig {
    std::size_t vocab_size = 8005;      // includes the 5 reserved specials
    std::size_t n_topics = 1000;
    std::size_t topic_token_count = 8;
    std::size_t query_len = 6;
    std::size_t passage_len = 48;
    double positive_topic_fraction = 0.65;
    double hard_overlap_fraction = 0.30;
    std::size_t n_queries = 2000;
    std::size_t negatives_per_query = 10;
    std::uint64_t seed = 1;

    void validate() const; // throws config errors
};

struct Dataset {
    std::vector<Passage> passages;
    std::vector<Query> queries;
    Qrels qrels;
    std::vector<TrainInstance> instances;
};

// Generation metadata kept for inspection; the on-disk interface is only the
// four data files.
struct SynthOutput {
    Dataset data;
    std::vector<std::vector<std::size_t>> topic_words; // word index per topic
    std::vector<std::size_t> query_topic;              // per query
};

std::vector<Passage> load_collection(const std::string& path);
std::vector<Query> load_queries(const std::string& path);
Qrels load_qrels(const std::string& path);
std::vector<TrainInstance> load_instances(const std::string& path);

void save_collection(const std::vector<Passage>& passages, const std::string& path);
void save_queries(const std::vector<Query>& queries, const std::string& path);
void save_qrels(const Qrels& qrels, const std::string& path);
void save_instances(const std::vector<TrainInstance>& instances, const std::string& path);

// Cross-checks that qrels and instances only reference loaded ids and that
// instance invariants hold.
void validate_dataset(const Dataset& data);

// Pure function of the config; identical config (incl. seed) reproduces the
// output byte for byte.
SynthOutput gen_synthetic(const SynthConfig& cfg);

std::unordered_map<Id, std::size_t> build_pid_index(const std::vector<Passage>& passages);
std::unordered_map<Id, std::size_t> build_qid_index(const std::vector<Query>& queries);

} // namespace dkd
