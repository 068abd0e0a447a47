#include "dkd/dark.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "dkd/error.hpp"
#include "dkd/rng.hpp"
#include "json.hpp"

namespace dkd {

const char* to_string(CandidateKind kind) {
    switch (kind) {
    case CandidateKind::hard_negative: return "hard_negative";
    case CandidateKind::mix: return "mix";
    case CandidateKind::mask: return "mask";
    }
    return "unknown";
}

TokenSeq mix_with_positive(const TokenSeq& pos_seq, const TokenSeq& neg_seq,
                           std::size_t max_len) {
    TokenSeq out;
    out.reserve(pos_seq.size() + 1 + neg_seq.size());
    out.insert(out.end(), pos_seq.begin(), pos_seq.end());
    out.push_back(kSepId);
    out.insert(out.end(), neg_seq.begin(), neg_seq.end());
    return truncate(std::move(out), max_len);
}

std::size_t mask_count(double ratio, std::size_t len) {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(len) + 0.5));
}

std::vector<std::size_t> draw_position_order(std::size_t len, Rng& rng) {
    std::vector<std::size_t> order(len);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);
    return order;
}

TokenSeq mask_with_order(const TokenSeq& pos_seq, double ratio,
                         const std::vector<std::size_t>& order) {
    TokenSeq out = pos_seq;
    std::size_t k = mask_count(ratio, pos_seq.size());
    for (std::size_t i = 0; i < k; ++i) {
        out[order[i]] = kMaskId;
    }
    return out;
}

TokenSeq mask_positive(const TokenSeq& pos_seq, double ratio, Rng& rng) {
    if (ratio < 0.0 || ratio > 1.0) {
        throw Error(ErrorKind::usage, "mask ratio must be in [0, 1]");
    }
    // A partial shuffle taking the first k positions consumes the same draws
    // as the prefix of a full shuffle, so this matches mask_with_order over a
    // freshly drawn order.
    std::size_t len = pos_seq.size();
    std::size_t k = mask_count(ratio, len);
    std::vector<std::size_t> idx(len);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    TokenSeq out = pos_seq;
    for (std::size_t i = 0; i < k && i + 1 < len; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(len - i));
        std::swap(idx[i], idx[j]);
    }
    for (std::size_t i = 0; i < k; ++i) out[idx[i]] = kMaskId;
    return out;
}

const TokenSeq& TokenizedData::passage(Id pid) const {
    auto it = pid_to_row.find(pid);
    if (it == pid_to_row.end()) {
        throw Error(ErrorKind::data, "unknown passage id " + std::to_string(pid));
    }
    return passage_tokens[it->second];
}

const TokenSeq& TokenizedData::query(Id qid) const {
    auto it = qid_to_row.find(qid);
    if (it == qid_to_row.end()) {
        throw Error(ErrorKind::data, "unknown query id " + std::to_string(qid));
    }
    return query_tokens[it->second];
}

TokenizedData tokenize_dataset(const Dataset& data, const Vocab& vocab,
                               std::size_t max_query_len, std::size_t max_passage_len) {
    TokenizedData out;
    out.passage_tokens.reserve(data.passages.size());
    out.query_tokens.reserve(data.queries.size());
    for (std::size_t i = 0; i < data.passages.size(); ++i) {
        out.passage_tokens.push_back(
            truncate(tokenize(vocab, data.passages[i].text), max_passage_len));
        out.pid_to_row.emplace(data.passages[i].id, i);
    }
    for (std::size_t i = 0; i < data.queries.size(); ++i) {
        out.query_tokens.push_back(
            truncate(tokenize(vocab, data.queries[i].text), max_query_len));
        out.qid_to_row.emplace(data.queries[i].id, i);
    }
    return out;
}

DarkSet build_dark_set(const TrainInstance& instance, const TokenizedData& tokens,
                       const DarkOptions& options, Rng& rng) {
    for (std::size_t i = 1; i < options.mask_ratios.size(); ++i) {
        if (!(options.mask_ratios[i - 1] < options.mask_ratios[i])) {
            throw Error(ErrorKind::usage, "mask ratios must be strictly increasing");
        }
    }
    const TokenSeq& pos = tokens.passage(instance.positive_pid);

    DarkSet dark;
    if (options.mix_enabled) {
        dark.mix.reserve(instance.negative_pids.size());
        for (Id neg_pid : instance.negative_pids) {
            dark.mix.push_back(
                mix_with_positive(pos, tokens.passage(neg_pid), options.max_passage_len));
        }
    }
    if (options.mask_enabled && !options.mask_ratios.empty()) {
        // One position order per positive, shared across ratios, so the
        // masked sets are nested along the ratio ladder.
        std::vector<std::size_t> order = draw_position_order(pos.size(), rng);
        dark.mask.reserve(options.mask_ratios.size());
        for (double ratio : options.mask_ratios) {
            if (ratio < 0.0 || ratio > 1.0) {
                throw Error(ErrorKind::usage, "mask ratio must be in [0, 1]");
            }
            dark.mask.emplace_back(ratio, mask_with_order(pos, ratio, order));
        }
    }
    return dark;
}

CandidateSet assemble_candidates(const TrainInstance& instance, const DarkSet& dark,
                                 const TokenizedData& tokens) {
    CandidateSet out;
    out.reserve(instance.negative_pids.size() + dark.mix.size() + dark.mask.size());
    for (Id neg_pid : instance.negative_pids) {
        out.push_back({CandidateKind::hard_negative, tokens.passage(neg_pid)});
    }
    for (const auto& seq : dark.mix) {
        out.push_back({CandidateKind::mix, seq});
    }
    for (const auto& [ratio, seq] : dark.mask) {
        out.push_back({CandidateKind::mask, seq});
    }
    return out;
}

void write_candidate_shards(const std::string& path,
                            const std::vector<TrainInstance>& instances,
                            const std::vector<CandidateSet>& candidate_sets) {
    if (instances.size() != candidate_sets.size()) {
        throw Error(ErrorKind::usage, "instances / candidate sets size mismatch");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::data, "cannot open for writing: " + path);
    for (std::size_t i = 0; i < instances.size(); ++i) {
        nlohmann::json rec;
        rec["qid"] = instances[i].query_id;
        auto& arr = rec["candidates"] = nlohmann::json::array();
        for (const auto& cand : candidate_sets[i]) {
            arr.push_back({{"kind", to_string(cand.kind)}, {"ids", cand.tokens}});
        }
        out << rec.dump() << '\n';
    }
}

} // namespace dkd
