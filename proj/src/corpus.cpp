#include "dkd/corpus.hpp"

#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "dkd/error.hpp"
#include "dkd/rng.hpp"

namespace dkd {

namespace {

Id parse_id(std::string_view field, const std::string& path, std::size_t line_no) {
    Id value = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size() || value < 0) {
        throw Error(ErrorKind::parse, path + ":" + std::to_string(line_no) +
                                          ": expected non-negative integer id, got '" +
                                          std::string(field) + "'");
    }
    return value;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        std::size_t tab = line.find('\t', start);
        if (tab == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return fields;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

// Reads lines keeping a 1-based line counter; strips a trailing '\r' so CRLF
// files load too.
template <typename Fn>
void for_each_line(const std::string& path, Fn&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::data, "cannot open file: " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        fn(line, line_no);
    }
}

} // namespace

std::vector<Passage> load_collection(const std::string& path) {
    std::vector<Passage> passages;
    std::unordered_set<Id> seen;
    for_each_line(path, [&](const std::string& line, std::size_t line_no) {
        auto fields = split_tabs(line);
        if (fields.size() != 2) {
            throw Error(ErrorKind::parse, path + ":" + std::to_string(line_no) +
                                              ": expected 2 tab-separated fields, got " +
                                              std::to_string(fields.size()));
        }
        Passage p;
        p.id = parse_id(fields[0], path, line_no);
        p.text = std::string(fields[1]);
        if (!seen.insert(p.id).second) {
            throw Error(ErrorKind::validation, path + ":" + std::to_string(line_no) +
                                                   ": duplicate passage id " +
                                                   std::to_string(p.id));
        }
        if (trim(p.text).empty()) {
            throw Error(ErrorKind::validation, path + ":" + std::to_string(line_no) +
                                                   ": empty passage text");
        }
        passages.push_back(std::move(p));
    });
    return passages;
}

std::vector<Query> load_queries(const std::string& path) {
    std::vector<Query> queries;
    std::unordered_set<Id> seen;
    for_each_line(path, [&](const std::string& line, std::size_t line_no) {
        auto fields = split_tabs(line);
        if (fields.size() != 2) {
            throw Error(ErrorKind::parse, path + ":" + std::to_string(line_no) +
                                              ": expected 2 tab-separated fields, got " +
                                              std::to_string(fields.size()));
        }
        Query q;
        q.id = parse_id(fields[0], path, line_no);
        q.text = std::string(fields[1]);
        if (!seen.insert(q.id).second) {
            throw Error(ErrorKind::validation, path + ":" + std::to_string(line_no) +
                                                   ": duplicate query id " +
                                                   std::to_string(q.id));
        }
        if (trim(q.text).empty()) {
            throw Error(ErrorKind::validation, path + ":" + std::to_string(line_no) +
                                                   ": empty query text");
        }
        queries.push_back(std::move(q));
    });
    return queries;
}

Qrels load_qrels(const std::string& path) {
    Qrels qrels;
    for_each_line(path, [&](const std::string& line, std::size_t line_no) {
        std::istringstream ss(line);
        std::string f0, f1, f2, f3, extra;
        if (!(ss >> f0 >> f1 >> f2 >> f3) || (ss >> extra)) {
            throw Error(ErrorKind::parse, path + ":" + std::to_string(line_no) +
                                              ": expected 'qid 0 pid rel'");
        }
        Id qid = parse_id(f0, path, line_no);
        parse_id(f1, path, line_no); // TREC iteration column, value ignored
        Id pid = parse_id(f2, path, line_no);
        long long rel = 0;
        auto [ptr, ec] = std::from_chars(f3.data(), f3.data() + f3.size(), rel);
        if (ec != std::errc{} || ptr != f3.data() + f3.size()) {
            throw Error(ErrorKind::parse, path + ":" + std::to_string(line_no) +
                                              ": non-integer relevance '" + f3 + "'");
        }
        if (rel > 0) qrels[qid].insert(pid);
    });
    return qrels;
}

std::vector<TrainInstance> load_instances(const std::string& path) {
    std::vector<TrainInstance> instances;
    for_each_line(path, [&](const std::string& line, std::size_t line_no) {
        auto fields = split_tabs(line);
        if (fields.size() != 3) {
            throw Error(ErrorKind::parse, path + ":" + std::to_string(line_no) +
                                              ": expected 'qid<TAB>pos<TAB>neg1,neg2,...'");
        }
        TrainInstance inst;
        inst.query_id = parse_id(fields[0], path, line_no);
        inst.positive_pid = parse_id(fields[1], path, line_no);

        std::string_view negs = fields[2];
        std::unordered_set<Id> seen;
        std::size_t start = 0;
        while (start <= negs.size()) {
            std::size_t comma = negs.find(',', start);
            std::string_view piece = comma == std::string_view::npos
                                         ? negs.substr(start)
                                         : negs.substr(start, comma - start);
            if (piece.empty()) {
                throw Error(ErrorKind::validation,
                            path + ":" + std::to_string(line_no) + ": empty negative list entry");
            }
            Id pid = parse_id(piece, path, line_no);
            if (pid == inst.positive_pid) {
                throw Error(ErrorKind::validation,
                            path + ":" + std::to_string(line_no) +
                                ": positive id appears in negative list");
            }
            if (!seen.insert(pid).second) {
                throw Error(ErrorKind::validation,
                            path + ":" + std::to_string(line_no) +
                                ": duplicate negative id " + std::to_string(pid));
            }
            inst.negative_pids.push_back(pid);
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (inst.negative_pids.empty()) {
            throw Error(ErrorKind::validation,
                        path + ":" + std::to_string(line_no) + ": empty negative list");
        }
        instances.push_back(std::move(inst));
    });
    return instances;
}

void save_collection(const std::vector<Passage>& passages, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::data, "cannot open for writing: " + path);
    for (const auto& p : passages) out << p.id << '\t' << p.text << '\n';
}

void save_queries(const std::vector<Query>& queries, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::data, "cannot open for writing: " + path);
    for (const auto& q : queries) out << q.id << '\t' << q.text << '\n';
}

void save_qrels(const Qrels& qrels, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::data, "cannot open for writing: " + path);
    for (const auto& [qid, pids] : qrels) {
        for (Id pid : pids) out << qid << " 0 " << pid << " 1\n";
    }
}

void save_instances(const std::vector<TrainInstance>& instances, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::data, "cannot open for writing: " + path);
    for (const auto& inst : instances) {
        out << inst.query_id << '\t' << inst.positive_pid << '\t';
        for (std::size_t j = 0; j < inst.negative_pids.size(); ++j) {
            if (j > 0) out << ',';
            out << inst.negative_pids[j];
        }
        out << '\n';
    }
}

void validate_dataset(const Dataset& data) {
    auto pids = build_pid_index(data.passages);
    auto qids = build_qid_index(data.queries);
    for (const auto& [qid, rel] : data.qrels) {
        if (!qids.count(qid)) {
            throw Error(ErrorKind::validation, "qrels references unknown query " + std::to_string(qid));
        }
        for (Id pid : rel) {
            if (!pids.count(pid)) {
                throw Error(ErrorKind::validation,
                            "qrels references unknown passage " + std::to_string(pid));
            }
        }
    }
    for (const auto& inst : data.instances) {
        if (!qids.count(inst.query_id)) {
            throw Error(ErrorKind::validation,
                        "instance references unknown query " + std::to_string(inst.query_id));
        }
        if (!pids.count(inst.positive_pid)) {
            throw Error(ErrorKind::validation,
                        "instance references unknown passage " + std::to_string(inst.positive_pid));
        }
        for (Id pid : inst.negative_pids) {
            if (!pids.count(pid)) {
                throw Error(ErrorKind::validation,
                            "instance references unknown passage " + std::to_string(pid));
            }
        }
    }
}

void SynthConfig::validate() const {
    if (vocab_size <= 5) throw Error(ErrorKind::config, "vocab_size must exceed 5");
    if (n_topics < 2) throw Error(ErrorKind::config, "n_topics must be >= 2");
    if (topic_token_count < 1 || query_len < 1 || passage_len < 1 || n_queries < 1 ||
        negatives_per_query < 1) {
        throw Error(ErrorKind::config, "all synthetic counts must be positive");
    }
    if (!(hard_overlap_fraction >= 0.0 && hard_overlap_fraction < positive_topic_fraction &&
          positive_topic_fraction <= 1.0)) {
        throw Error(ErrorKind::config,
                    "need 0 <= hard_overlap_fraction < positive_topic_fraction <= 1");
    }
    if (n_topics * topic_token_count > vocab_size - 5) {
        throw Error(ErrorKind::config, "topic tokens exceed vocabulary: n_topics * "
                                       "topic_token_count must be <= vocab_size - 5");
    }
}

SynthOutput gen_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);

    const std::size_t n_words = cfg.vocab_size - 5;
    std::vector<std::size_t> pool(n_words);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    shuffle(pool, rng);

    SynthOutput out;
    out.topic_words.resize(cfg.n_topics);
    for (std::size_t t = 0; t < cfg.n_topics; ++t) {
        out.topic_words[t].assign(pool.begin() + t * cfg.topic_token_count,
                                  pool.begin() + (t + 1) * cfg.topic_token_count);
    }

    auto word = [](std::size_t idx) { return "w" + std::to_string(idx); };
    auto append_word = [&](std::string& s, std::size_t idx) {
        if (!s.empty()) s += ' ';
        s += word(idx);
    };

    Id next_pid = 0;
    out.data.passages.reserve(cfg.n_queries * (1 + cfg.negatives_per_query));
    out.data.queries.reserve(cfg.n_queries);
    out.query_topic.reserve(cfg.n_queries);

    for (std::size_t qi = 0; qi < cfg.n_queries; ++qi) {
        const std::size_t topic = qi % cfg.n_topics;
        const auto& topical = out.topic_words[topic];
        out.query_topic.push_back(topic);

        Query q;
        q.id = static_cast<Id>(qi);
        for (std::size_t k = 0; k < cfg.query_len; ++k) {
            append_word(q.text, topical[rng.below(topical.size())]);
        }
        out.data.queries.push_back(std::move(q));

        Passage pos;
        pos.id = next_pid++;
        for (std::size_t k = 0; k < cfg.passage_len; ++k) {
            if (rng.real() < cfg.positive_topic_fraction) {
                append_word(pos.text, topical[rng.below(topical.size())]);
            } else {
                append_word(pos.text, pool[rng.below(n_words)]);
            }
        }
        Id pos_pid = pos.id;
        out.data.passages.push_back(std::move(pos));

        TrainInstance inst;
        inst.query_id = static_cast<Id>(qi);
        inst.positive_pid = pos_pid;
        // Per-negative hardness is jittered uniformly around the configured
        // fraction (mean exactly hard_overlap_fraction), so hard negatives
        // span a relevance spectrum instead of collapsing onto one point of
        // the teacher's score axis.
        const double jitter =
            std::min(cfg.hard_overlap_fraction, 1.0 - cfg.hard_overlap_fraction);
        for (std::size_t j = 0; j < cfg.negatives_per_query; ++j) {
            std::size_t other = rng.below(cfg.n_topics - 1);
            if (other >= topic) ++other;
            const auto& off_topic = out.topic_words[other];
            const double hardness =
                cfg.hard_overlap_fraction + jitter * (2.0 * rng.real() - 1.0);

            Passage neg;
            neg.id = next_pid++;
            for (std::size_t k = 0; k < cfg.passage_len; ++k) {
                if (rng.real() < hardness) {
                    append_word(neg.text, topical[rng.below(topical.size())]);
                } else {
                    append_word(neg.text, off_topic[rng.below(off_topic.size())]);
                }
            }
            inst.negative_pids.push_back(neg.id);
            out.data.passages.push_back(std::move(neg));
        }
        out.data.qrels[inst.query_id].insert(pos_pid);
        out.data.instances.push_back(std::move(inst));
    }
    return out;
}

std::unordered_map<Id, std::size_t> build_pid_index(const std::vector<Passage>& passages) {
    std::unordered_map<Id, std::size_t> index;
    index.reserve(passages.size());
    for (std::size_t i = 0; i < passages.size(); ++i) index.emplace(passages[i].id, i);
    return index;
}

std::unordered_map<Id, std::size_t> build_qid_index(const std::vector<Query>& queries) {
    std::unordered_map<Id, std::size_t> index;
    index.reserve(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) index.emplace(queries[i].id, i);
    return index;
}

} // namespace dkd
