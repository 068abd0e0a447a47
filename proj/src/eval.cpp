#include "dkd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include "dkd/error.hpp"
#include "dkd/parallel.hpp"
#include "json.hpp"

namespace dkd {

CorpusMatrix encode_corpus(const DualEncoderParams& params,
                           const std::vector<Passage>& passages, const Vocab& vocab,
                           std::size_t max_passage_len, int threads) {
    CorpusMatrix out;
    out.h = params.h;
    out.pids.resize(passages.size());
    out.rows.assign(passages.size() * params.h, 0.0);
    parallel_for(passages.size(), threads, [&](std::size_t i) {
        out.pids[i] = passages[i].id;
        TokenSeq seq = truncate(tokenize(vocab, passages[i].text), max_passage_len);
        if (seq.empty()) {
            throw Error(ErrorKind::data, "passage " + std::to_string(passages[i].id) +
                                             " is empty after tokenization");
        }
        std::vector<double> vec = de_encode(params, seq);
        std::copy(vec.begin(), vec.end(), out.rows.begin() + i * params.h);
    });
    return out;
}

RankedList retrieve(std::span<const double> q_vec, const CorpusMatrix& corpus,
                    std::size_t k) {
    if (k < 1) throw Error(ErrorKind::usage, "retrieve: k must be >= 1");
    const std::size_t n = corpus.pids.size();
    RankedList out;
    out.entries.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.entries[i] = {corpus.pids[i], de_score(q_vec, corpus.row(i))};
    }
    auto better = [](const RankedEntry& a, const RankedEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.pid < b.pid;
    };
    const std::size_t keep = std::min(k, n);
    std::partial_sort(out.entries.begin(), out.entries.begin() + keep, out.entries.end(),
                      better);
    out.entries.resize(keep);
    return out;
}

namespace {

const std::set<Id>* relevant_for(const Qrels& qrels, Id qid) {
    auto it = qrels.find(qid);
    if (it == qrels.end() || it->second.empty()) return nullptr;
    return &it->second;
}

MetricValue finish(double total, std::size_t used, std::size_t skipped,
                   const char* name) {
    if (skipped > 0) {
        std::cerr << "warning: " << name << ": " << skipped
                  << " queries without relevance judgments excluded\n";
    }
    MetricValue v;
    v.n_used = used;
    v.n_skipped = skipped;
    v.value = used == 0 ? 0.0 : total / static_cast<double>(used);
    return v;
}

} // namespace

MetricValue mrr_at_k(const std::vector<RankedList>& ranked, const Qrels& qrels,
                     std::size_t k) {
    if (k < 1) throw Error(ErrorKind::usage, "mrr_at_k: k must be >= 1");
    double total = 0.0;
    std::size_t used = 0, skipped = 0;
    for (const auto& list : ranked) {
        const auto* rel = relevant_for(qrels, list.query_id);
        if (rel == nullptr) {
            ++skipped;
            continue;
        }
        ++used;
        const std::size_t limit = std::min(k, list.entries.size());
        for (std::size_t i = 0; i < limit; ++i) {
            if (rel->count(list.entries[i].pid)) {
                total += 1.0 / static_cast<double>(i + 1);
                break;
            }
        }
    }
    return finish(total, used, skipped, "mrr");
}

MetricValue recall_at_k(const std::vector<RankedList>& ranked, const Qrels& qrels,
                        std::size_t k) {
    if (k < 1) throw Error(ErrorKind::usage, "recall_at_k: k must be >= 1");
    double total = 0.0;
    std::size_t used = 0, skipped = 0;
    for (const auto& list : ranked) {
        const auto* rel = relevant_for(qrels, list.query_id);
        if (rel == nullptr) {
            ++skipped;
            continue;
        }
        ++used;
        const std::size_t limit = std::min(k, list.entries.size());
        std::size_t hits = 0;
        for (std::size_t i = 0; i < limit; ++i) {
            if (rel->count(list.entries[i].pid)) ++hits;
        }
        total += static_cast<double>(hits) / static_cast<double>(rel->size());
    }
    return finish(total, used, skipped, "recall");
}

MetricValue ndcg_at_k(const std::vector<RankedList>& ranked, const Qrels& qrels,
                      std::size_t k) {
    if (k < 1) throw Error(ErrorKind::usage, "ndcg_at_k: k must be >= 1");
    double total = 0.0;
    std::size_t used = 0, skipped = 0;
    for (const auto& list : ranked) {
        const auto* rel = relevant_for(qrels, list.query_id);
        if (rel == nullptr) {
            ++skipped;
            continue;
        }
        ++used;
        const std::size_t limit = std::min(k, list.entries.size());
        double dcg = 0.0;
        for (std::size_t i = 0; i < limit; ++i) {
            if (rel->count(list.entries[i].pid)) {
                dcg += 1.0 / std::log2(static_cast<double>(i + 2));
            }
        }
        double ideal = 0.0;
        const std::size_t ideal_hits = std::min(k, rel->size());
        for (std::size_t i = 0; i < ideal_hits; ++i) {
            ideal += 1.0 / std::log2(static_cast<double>(i + 2));
        }
        total += dcg / ideal;
    }
    return finish(total, used, skipped, "ndcg");
}

std::size_t HistogramSpec::n_buckets() const {
    return static_cast<std::size_t>(std::ceil((hi - lo) / width));
}

void HistogramSpec::validate() const {
    if (!(width > 0.0)) throw Error(ErrorKind::config, "histogram width must be > 0");
    if (!(lo < hi)) throw Error(ErrorKind::config, "histogram range must have lo < hi");
    if (groups.empty()) throw Error(ErrorKind::config, "histogram needs at least one group");
    for (const auto& g : groups) {
        if (g != "positive" && g != "hard_negative" && g != "mix" && g != "mask") {
            throw Error(ErrorKind::config, "unknown histogram group '" + g + "'");
        }
    }
}

double Histogram::group_mean(const std::string& group) const {
    auto it = score_count.find(group);
    if (it == score_count.end() || it->second == 0) return 0.0;
    return score_sum.at(group) / static_cast<double>(it->second);
}

double Histogram::distribution_overlap(const std::string& a, const std::string& b) const {
    const auto& ca = counts.at(a);
    const auto& cb = counts.at(b);
    const double na = static_cast<double>(score_count.at(a));
    const double nb = static_cast<double>(score_count.at(b));
    if (na == 0.0 || nb == 0.0) return 0.0;
    double overlap = 0.0;
    for (std::size_t i = 0; i < ca.size(); ++i) {
        overlap += std::min(static_cast<double>(ca[i]) / na,
                            static_cast<double>(cb[i]) / nb);
    }
    return overlap;
}

Histogram score_histogram(const CrossEncoderParams& teacher,
                          const std::vector<TrainInstance>& instances,
                          const std::vector<DarkSet>& dark_sets,
                          const TokenizedData& tokens, const HistogramSpec& spec,
                          int threads) {
    spec.validate();
    if (instances.size() != dark_sets.size()) {
        throw Error(ErrorKind::usage, "score_histogram: instances / dark sets mismatch");
    }
    Histogram hist;
    hist.spec = spec;
    const std::size_t nb = spec.n_buckets();
    for (const auto& g : spec.groups) {
        hist.counts[g].assign(nb, 0);
        hist.score_sum[g] = 0.0;
        hist.score_count[g] = 0;
    }
    const bool want_pos = hist.counts.count("positive") != 0;
    const bool want_hard = hist.counts.count("hard_negative") != 0;
    const bool want_mix = hist.counts.count("mix") != 0;
    const bool want_mask = hist.counts.count("mask") != 0;

    // Scores per instance and group, computed in parallel slots, merged in
    // instance order.
    struct Slot {
        std::vector<double> pos, hard, mix, mask;
    };
    std::vector<Slot> slots(instances.size());
    parallel_for(instances.size(), threads, [&](std::size_t i) {
        const TrainInstance& inst = instances[i];
        const TokenSeq& q = tokens.query(inst.query_id);
        Slot& slot = slots[i];
        if (want_pos) {
            slot.pos.push_back(ce_score(teacher, q, tokens.passage(inst.positive_pid)));
        }
        if (want_hard) {
            for (Id pid : inst.negative_pids) {
                slot.hard.push_back(ce_score(teacher, q, tokens.passage(pid)));
            }
        }
        if (want_mix) {
            for (const auto& seq : dark_sets[i].mix) {
                slot.mix.push_back(ce_score(teacher, q, seq));
            }
        }
        if (want_mask) {
            for (const auto& [ratio, seq] : dark_sets[i].mask) {
                slot.mask.push_back(ce_score(teacher, q, seq));
            }
        }
    });

    auto add = [&](const std::string& group, const std::vector<double>& scores) {
        auto& buckets = hist.counts[group];
        for (double s : scores) {
            double pos = (s - spec.lo) / spec.width;
            long b = static_cast<long>(std::floor(pos));
            b = std::clamp(b, 0L, static_cast<long>(nb) - 1);
            ++buckets[static_cast<std::size_t>(b)];
            hist.score_sum[group] += s;
            ++hist.score_count[group];
        }
    };
    for (const auto& slot : slots) {
        if (want_pos) add("positive", slot.pos);
        if (want_hard) add("hard_negative", slot.hard);
        if (want_mix) add("mix", slot.mix);
        if (want_mask) add("mask", slot.mask);
    }
    return hist;
}

void write_histogram_csv(const Histogram& hist, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::data, "cannot open for writing: " + path);
    out << "# range=[" << hist.spec.lo << "," << hist.spec.hi << ") width="
        << hist.spec.width << "\n";
    out << "group,bucket_lo,bucket_hi,count\n";
    for (const auto& group : hist.spec.groups) {
        const auto& buckets = hist.counts.at(group);
        for (std::size_t b = 0; b < buckets.size(); ++b) {
            const double lo = hist.spec.lo + static_cast<double>(b) * hist.spec.width;
            out << group << ',' << lo << ',' << (lo + hist.spec.width) << ','
                << buckets[b] << '\n';
        }
    }
}

void write_metrics_json(const std::string& path, double mrr_at_10, double recall_at_50,
                        double recall_at_1000, double ndcg_at_10, std::size_t n_queries) {
    nlohmann::json j;
    j["mrr_at_10"] = mrr_at_10;
    j["recall_at_50"] = recall_at_50;
    j["recall_at_1000"] = recall_at_1000;
    j["ndcg_at_10"] = ndcg_at_10;
    j["n_queries"] = n_queries;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::data, "cannot open for writing: " + path);
    out << j.dump(2) << '\n';
}

} // namespace dkd
