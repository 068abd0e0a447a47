#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dkd/corpus.hpp"
#include "dkd/text.hpp"

namespace dkd {

class Rng;

enum class CandidateKind { hard_negative, mix, mask };

const char* to_string(CandidateKind kind);

// Dark examples for one training instance: one mixed sequence per hard
// negative plus one masked positive per masking ratio.
struct DarkSet {
    std::vector<TokenSeq> mix;
    std::vector<std::pair<double, TokenSeq>> mask; // (ratio, sequence), ratio ascending
};

struct Candidate {
    CandidateKind kind;
    TokenSeq tokens;
};

// Distillation candidate list: hard negatives in instance order, then mix in
// negative order, then mask in ratio order. The original positive is never a
// member.
using CandidateSet = std::vector<Candidate>;

inline const std::vector<double> kDefaultMaskRatios = {0.1, 0.2, 0.3, 0.4, 0.5};

// positive ++ [SEP] ++ negative, truncated to max_len (tail dropped).
TokenSeq mix_with_positive(const TokenSeq& pos_seq, const TokenSeq& neg_seq,
                           std::size_t max_len);

std::size_t mask_count(double ratio, std::size_t len); // round-half-up(ratio*len)

// Replaces exactly mask_count(ratio, len) positions with [MASK]. Positions are
// the first k entries of a Fisher-Yates shuffle of 0..len-1 driven by rng.
TokenSeq mask_positive(const TokenSeq& pos_seq, double ratio, Rng& rng);

// Prefix variant: masks the first mask_count(ratio, len) positions of a given
// position order. Sharing one order across ratios nests the masked sets.
TokenSeq mask_with_order(const TokenSeq& pos_seq, double ratio,
                         const std::vector<std::size_t>& order);

std::vector<std::size_t> draw_position_order(std::size_t len, Rng& rng);

struct DarkOptions {
    std::vector<double> mask_ratios = kDefaultMaskRatios;
    std::size_t max_passage_len = 128;
    bool mix_enabled = true;
    bool mask_enabled = true;
};

// Tokenized view of the corpus shared by dark construction, training and
// evaluation. Sequences are stored already truncated.
struct TokenizedData {
    std::vector<TokenSeq> passage_tokens; // parallel to passages
    std::vector<TokenSeq> query_tokens;   // parallel to queries
    std::unordered_map<Id, std::size_t> pid_to_row;
    std::unordered_map<Id, std::size_t> qid_to_row;

    const TokenSeq& passage(Id pid) const;
    const TokenSeq& query(Id qid) const;
};

TokenizedData tokenize_dataset(const Dataset& data, const Vocab& vocab,
                               std::size_t max_query_len, std::size_t max_passage_len);

DarkSet build_dark_set(const TrainInstance& instance, const TokenizedData& tokens,
                       const DarkOptions& options, Rng& rng);

CandidateSet assemble_candidates(const TrainInstance& instance, const DarkSet& dark,
                                 const TokenizedData& tokens);

// JSON-lines shard: one record per instance, {"qid":..,"candidates":[{"kind":..,"ids":[..]}]}.
void write_candidate_shards(const std::string& path,
                            const std::vector<TrainInstance>& instances,
                            const std::vector<CandidateSet>& candidate_sets);

} // namespace dkd
