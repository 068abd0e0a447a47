#pragma once

#include <map>
#include <string>
#include <vector>

#include "dkd/corpus.hpp"
#include "dkd/dark.hpp"
#include "dkd/model.hpp"

namespace dkd {

struct RankedEntry {
    Id pid = 0;
    double score = 0.0;
};

// Scores non-increasing, ties broken by pid ascending.
struct RankedList {
    Id query_id = 0;
    std::vector<RankedEntry> entries;
};

struct CorpusMatrix {
    std::size_t h = 0;
    std::vector<Id> pids;      // row order
    std::vector<double> rows;  // pids.size() x h

    std::span<const double> row(std::size_t i) const {
        return {rows.data() + i * h, h};
    }
};

CorpusMatrix encode_corpus(const DualEncoderParams& params,
                           const std::vector<Passage>& passages, const Vocab& vocab,
                           std::size_t max_passage_len, int threads = 1);

// Exact top-k by inner product over the full matrix; k larger than the corpus
// returns the full ranking.
RankedList retrieve(std::span<const double> q_vec, const CorpusMatrix& corpus,
                    std::size_t k);

struct MetricValue {
    double value = 0.0;
    std::size_t n_used = 0;    // queries with relevance judgments
    std::size_t n_skipped = 0; // queries excluded for lack of judgments
};

MetricValue mrr_at_k(const std::vector<RankedList>& ranked, const Qrels& qrels,
                     std::size_t k);
MetricValue recall_at_k(const std::vector<RankedList>& ranked, const Qrels& qrels,
                        std::size_t k);
// Binary gains: DCG = sum 1/log2(rank+1) over relevant hits, normalized by
// the ideal DCG.
MetricValue ndcg_at_k(const std::vector<RankedList>& ranked, const Qrels& qrels,
                      std::size_t k);

struct HistogramSpec {
    double lo = -10.0;
    double hi = 10.0;
    double width = 0.5;
    std::vector<std::string> groups = {"positive", "hard_negative", "mix", "mask"};

    std::size_t n_buckets() const;
    void validate() const;
};

struct Histogram {
    HistogramSpec spec;
    // group -> per-bucket counts; parallel sums/counts give the group means.
    std::map<std::string, std::vector<std::size_t>> counts;
    std::map<std::string, double> score_sum;
    std::map<std::string, std::size_t> score_count;

    double group_mean(const std::string& group) const;
    // Overlap of two normalized bucket distributions: sum of min masses.
    double distribution_overlap(const std::string& a, const std::string& b) const;
};

// Teacher scores of every (query, candidate) pair, bucketed per group.
// Out-of-range scores clamp into the boundary buckets.
Histogram score_histogram(const CrossEncoderParams& teacher,
                          const std::vector<TrainInstance>& instances,
                          const std::vector<DarkSet>& dark_sets,
                          const TokenizedData& tokens, const HistogramSpec& spec,
                          int threads = 1);

// CSV rows `group,bucket_lo,bucket_hi,count` under a header comment echoing
// range and width.
void write_histogram_csv(const Histogram& hist, const std::string& path);

void write_metrics_json(const std::string& path, double mrr_at_10, double recall_at_50,
                        double recall_at_1000, double ndcg_at_10, std::size_t n_queries);

} // namespace dkd
