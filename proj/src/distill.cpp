#include "dkd/distill.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "dkd/error.hpp"
#include "dkd/parallel.hpp"
#include "dkd/rng.hpp"

namespace dkd {

namespace {

double log_sum_exp(std::span<const double> s) {
    double m = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double x : s) z += std::exp(x - m);
    return m + std::log(z);
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Teacher scores over the epoch-invariant part of the candidate list, filled
// lazily and reused across epochs.
struct StaticScoreCache {
    std::vector<char> ready;
    std::vector<std::vector<double>> scores;

    explicit StaticScoreCache(std::size_t n) : ready(n, 0), scores(n) {}
};

} // namespace

NegativesMode negatives_mode_from_string(const std::string& s) {
    if (s == "rand") return NegativesMode::rand;
    if (s == "hard") return NegativesMode::hard;
    if (s == "dark") return NegativesMode::dark;
    throw Error(ErrorKind::config, "unknown negatives mode '" + s + "' (rand|hard|dark)");
}

const char* to_string(NegativesMode mode) {
    switch (mode) {
    case NegativesMode::rand: return "rand";
    case NegativesMode::hard: return "hard";
    case NegativesMode::dark: return "dark";
    }
    return "unknown";
}

void DistillConfig::validate() const {
    if (lambda_sup < 0.0) throw Error(ErrorKind::config, "lambda must be >= 0");
    if (negatives_per_query < 1) throw Error(ErrorKind::config, "m must be >= 1");
    if (batch_size < 1) throw Error(ErrorKind::config, "batch_size must be >= 1");
    if (max_query_len < 1 || max_passage_len < 1) {
        throw Error(ErrorKind::config, "max lengths must be >= 1");
    }
    if (hidden_dim < 1 || mlp_hidden < 1) {
        throw Error(ErrorKind::config, "model dimensions must be >= 1");
    }
    for (std::size_t i = 0; i < mask_ratios.size(); ++i) {
        if (mask_ratios[i] < 0.0 || mask_ratios[i] > 1.0) {
            throw Error(ErrorKind::config, "mask ratios must lie in [0, 1]");
        }
        if (i > 0 && !(mask_ratios[i - 1] < mask_ratios[i])) {
            throw Error(ErrorKind::config, "mask ratios must be strictly increasing");
        }
    }
}

std::size_t plan_size(std::size_t n, std::size_t t, std::size_t total_epochs) {
    // ceil((1 - t/(2T)) * n) in exact integer arithmetic.
    const std::size_t den = 2 * total_epochs;
    return (n * (den - t) + den - 1) / den;
}

EpochPlan plan_epoch(const std::vector<ConfidenceRecord>& confidences, std::size_t t,
                     std::size_t total_epochs) {
    if (total_epochs < 1 || t < 1 || t > total_epochs) {
        throw Error(ErrorKind::usage, "plan_epoch: need 1 <= t <= total_epochs");
    }
    const std::size_t n = confidences.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (confidences[a].confidence != confidences[b].confidence) {
            return confidences[a].confidence > confidences[b].confidence;
        }
        return confidences[a].instance_index < confidences[b].instance_index;
    });

    EpochPlan plan;
    plan.epoch = t;
    plan.total_epochs = total_epochs;
    const std::size_t k = plan_size(n, t, total_epochs);
    plan.selected.reserve(k);
    plan.is_selected.assign(n, 0);
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t idx = confidences[order[i]].instance_index;
        plan.selected.push_back(idx);
        if (idx < n) plan.is_selected[idx] = 1;
    }
    return plan;
}

double sup_loss(const DualEncoderParams& params, const TokenSeq& q_seq,
                const TokenSeq& pos_seq, const std::vector<TokenSeq>& neg_seqs) {
    if (neg_seqs.empty()) {
        throw Error(ErrorKind::usage, "sup_loss: need at least one negative");
    }
    std::vector<double> q_vec = de_encode(params, q_seq);
    std::vector<double> scores;
    scores.reserve(1 + neg_seqs.size());
    scores.push_back(de_score(q_vec, de_encode(params, pos_seq)));
    for (const auto& neg : neg_seqs) {
        scores.push_back(de_score(q_vec, de_encode(params, neg)));
    }
    return log_sum_exp(scores) - scores[0];
}

double sup_loss(const DualEncoderParams& params, const TrainInstance& instance,
                const TokenizedData& tokens) {
    std::vector<TokenSeq> negs;
    negs.reserve(instance.negative_pids.size());
    for (Id pid : instance.negative_pids) negs.push_back(tokens.passage(pid));
    return sup_loss(params, tokens.query(instance.query_id),
                    tokens.passage(instance.positive_pid), negs);
}

double kd_loss(const DualEncoderParams& params, const Distribution& teacher_dist,
               const std::vector<TokenSeq>& candidate_seqs, const TokenSeq& q_seq) {
    if (teacher_dist.size() != candidate_seqs.size()) {
        throw Error(ErrorKind::shape, "kd_loss: distribution/candidate length mismatch");
    }
    teacher_dist.validate();
    std::vector<double> q_vec = de_encode(params, q_seq);
    std::vector<double> scores;
    scores.reserve(candidate_seqs.size());
    for (const auto& cand : candidate_seqs) {
        scores.push_back(de_score(q_vec, de_encode(params, cand)));
    }
    const double lse = log_sum_exp(scores);
    double kl = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double p = teacher_dist.p[i];
        if (p > 0.0) kl += p * (std::log(p) - (scores[i] - lse));
    }
    return kl;
}

ConfidenceRecord teacher_confidence(const CrossEncoderParams& teacher,
                                    const TrainInstance& instance,
                                    const TokenizedData& tokens,
                                    std::size_t instance_index) {
    const TokenSeq& q = tokens.query(instance.query_id);
    std::vector<double> scores;
    scores.reserve(1 + instance.negative_pids.size());
    scores.push_back(ce_score(teacher, q, tokens.passage(instance.positive_pid)));
    for (Id pid : instance.negative_pids) {
        scores.push_back(ce_score(teacher, q, tokens.passage(pid)));
    }
    return {instance_index, scores[0] - log_sum_exp(scores)};
}

std::vector<ConfidenceRecord> compute_confidences(const CrossEncoderParams& teacher,
                                                  const std::vector<TrainInstance>& instances,
                                                  const TokenizedData& tokens, int threads) {
    std::vector<ConfidenceRecord> out(instances.size());
    parallel_for(instances.size(), threads, [&](std::size_t i) {
        out[i] = teacher_confidence(teacher, instances[i], tokens, i);
    });
    return out;
}

double joint_loss(const DualEncoderParams& params, const std::vector<BatchItem>& batch,
                  const TokenizedData& tokens, double lambda_sup, bool supervised) {
    double total = 0.0;
    for (const auto& item : batch) {
        const TokenSeq& q = tokens.query(item.instance->query_id);
        if (supervised && lambda_sup != 0.0) {
            std::vector<TokenSeq> negs;
            negs.reserve(item.negatives.size());
            for (Id pid : item.negatives) negs.push_back(tokens.passage(pid));
            total += lambda_sup *
                     sup_loss(params, q, tokens.passage(item.instance->positive_pid), negs);
        }
        if (item.in_plan && !item.candidates.empty()) {
            total += kd_loss(params, item.teacher_dist, item.candidates, q);
        }
    }
    return total;
}

double joint_loss_grad(const DualEncoderParams& params, const std::vector<BatchItem>& batch,
                       const TokenizedData& tokens, double lambda_sup, bool supervised,
                       Gradients& grads, double* sup_part, double* kd_part) {
    Tape tape;
    DualEncoderLeaves leaves = make_leaves(tape, params, grads);
    std::vector<Tape::Node*> terms;
    double sup_total = 0.0;
    double kd_total = 0.0;
    for (const auto& item : batch) {
        const TokenSeq& q = tokens.query(item.instance->query_id);
        Tape::Node* q_vec = de_encode_node(tape, leaves, q);
        if (supervised && lambda_sup != 0.0) {
            std::vector<Tape::Node*> scores;
            scores.reserve(1 + item.negatives.size());
            scores.push_back(de_score_node(
                tape, q_vec,
                de_encode_node(tape, leaves, tokens.passage(item.instance->positive_pid))));
            for (Id pid : item.negatives) {
                scores.push_back(de_score_node(
                    tape, q_vec, de_encode_node(tape, leaves, tokens.passage(pid))));
            }
            Tape::Node* sup = tape.neg_log_softmax_at(tape.stack_scalars(scores), 0);
            Tape::Node* weighted = tape.scale(sup, lambda_sup);
            sup_total += weighted->scalar();
            terms.push_back(weighted);
        }
        if (item.in_plan && !item.candidates.empty()) {
            item.teacher_dist.validate();
            std::vector<Tape::Node*> scores;
            scores.reserve(item.candidates.size());
            for (const auto& cand : item.candidates) {
                scores.push_back(
                    de_score_node(tape, q_vec, de_encode_node(tape, leaves, cand)));
            }
            Tape::Node* kd =
                tape.kl_from_fixed(item.teacher_dist.p, tape.stack_scalars(scores));
            kd_total += kd->scalar();
            terms.push_back(kd);
        }
    }
    if (sup_part) *sup_part = sup_total;
    if (kd_part) *kd_part = kd_total;
    if (terms.empty()) return 0.0;
    Tape::Node* root = tape.sum_scalars(terms);
    tape.backward(root);
    return root->scalar();
}

CrossEncoderParams train_teacher(const TeacherTrainConfig& cfg,
                                 const std::vector<TrainInstance>& instances,
                                 const TokenizedData& tokens, std::size_t vocab_size,
                                 const TrainHooks& hooks, AdamWState* opt_state_out) {
    CrossEncoderParams params = init_cross_params(vocab_size, cfg.hidden_dim, cfg.mlp_hidden,
                                                  derive_seed(cfg.seed, "teacher-init"));
    auto refs = params.tensors();
    AdamWConfig adamw_cfg;
    adamw_cfg.weight_decay = cfg.weight_decay;
    AdamWState opt = AdamWState::like(refs, adamw_cfg);
    Gradients grads = Gradients::zeros_like(refs);

    const std::size_t n = instances.size();
    if (cfg.epochs > 0 && n > 0) {
        const std::size_t n_batches = ceil_div(n, cfg.batch_size);
        const std::size_t total_steps = cfg.epochs * n_batches;
        const std::uint64_t shuffle_base = derive_seed(cfg.seed, "shuffle");
        std::size_t step = 0;

        std::vector<std::size_t> order(n);
        for (std::size_t t = 1; t <= cfg.epochs; ++t) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            Rng shuffle_rng(derive_seed(shuffle_base, static_cast<std::uint64_t>(t)));
            shuffle(order, shuffle_rng);

            for (std::size_t start = 0; start < n; start += cfg.batch_size) {
                ++step;
                const double lr = lr_at(step, cfg.warmup_steps, cfg.peak_lr, total_steps);
                const std::size_t end = std::min(n, start + cfg.batch_size);

                grads.zero();
                Tape tape;
                CrossEncoderLeaves leaves = make_leaves(tape, params, grads);
                std::vector<Tape::Node*> terms;
                for (std::size_t b = start; b < end; ++b) {
                    const TrainInstance& inst = instances[order[b]];
                    const TokenSeq& q = tokens.query(inst.query_id);
                    std::vector<Tape::Node*> scores;
                    scores.reserve(1 + inst.negative_pids.size());
                    scores.push_back(
                        ce_score_node(tape, leaves, q, tokens.passage(inst.positive_pid)));
                    for (Id pid : inst.negative_pids) {
                        scores.push_back(ce_score_node(tape, leaves, q, tokens.passage(pid)));
                    }
                    terms.push_back(tape.neg_log_softmax_at(tape.stack_scalars(scores), 0));
                }
                Tape::Node* root = tape.sum_scalars(terms);
                const double loss = root->scalar();
                if (!std::isfinite(loss)) {
                    throw Error(ErrorKind::training,
                                "teacher training diverged at epoch " + std::to_string(t) +
                                    " step " + std::to_string(step));
                }
                tape.backward(root);
                adamw_step(opt, refs, grads, lr);
                if (hooks.on_step) hooks.on_step(t, step, lr, loss, loss, 0.0);
            }
        }
    }
    if (opt_state_out) *opt_state_out = std::move(opt);
    return params;
}

namespace {

std::vector<std::vector<Id>> effective_negatives(const DistillConfig& cfg,
                                                 const StudentTrainInputs& in) {
    const auto& instances = *in.instances;
    std::vector<std::vector<Id>> negs(instances.size());
    if (cfg.mode != NegativesMode::rand) {
        for (std::size_t i = 0; i < instances.size(); ++i) {
            negs[i] = instances[i].negative_pids;
        }
        return negs;
    }
    if (in.all_pids.size() <= cfg.negatives_per_query) {
        throw Error(ErrorKind::data, "rand mode: not enough passages to sample negatives");
    }
    Rng rng(derive_seed(cfg.seed, "rand-negs"));
    for (std::size_t i = 0; i < instances.size(); ++i) {
        std::unordered_set<Id> chosen;
        auto& out = negs[i];
        while (out.size() < cfg.negatives_per_query) {
            Id pid = in.all_pids[rng.below(in.all_pids.size())];
            if (pid == instances[i].positive_pid || !chosen.insert(pid).second) continue;
            out.push_back(pid);
        }
    }
    return negs;
}

// Resolves distillation inputs for the in-plan members of one batch: builds
// candidates and runs the frozen teacher. Static candidate scores (hard
// negatives, mix; or positive + negatives outside dark mode) are cached
// across epochs; mask candidates are rescored each epoch.
void resolve_batch_distillation(std::vector<BatchItem>& items, const DistillConfig& cfg,
                                const StudentTrainInputs& in, StaticScoreCache& cache,
                                std::uint64_t mask_epoch_base) {
    const auto& tokens = *in.tokens;
    const CrossEncoderParams& teacher = *in.teacher;
    parallel_for(items.size(), in.threads, [&](std::size_t bi) {
        BatchItem& item = items[bi];
        if (!item.in_plan) return;
        const TrainInstance& inst = *item.instance;
        const TokenSeq& q = tokens.query(inst.query_id);

        if (cfg.mode == NegativesMode::dark) {
            DarkOptions opts;
            opts.mask_ratios = cfg.mask_enabled ? cfg.mask_ratios : std::vector<double>{};
            opts.max_passage_len = cfg.max_passage_len;
            opts.mix_enabled = cfg.mix_enabled;
            opts.mask_enabled = cfg.mask_enabled;
            Rng mask_rng(derive_seed(mask_epoch_base,
                                     static_cast<std::uint64_t>(item.instance_index)));
            DarkSet dark = build_dark_set(inst, tokens, opts, mask_rng);
            CandidateSet cands = assemble_candidates(inst, dark, tokens);

            item.candidates.clear();
            item.candidates.reserve(cands.size());
            for (auto& c : cands) item.candidates.push_back(std::move(c.tokens));

            const std::size_t n_static = inst.negative_pids.size() + dark.mix.size();
            if (!cache.ready[item.instance_index]) {
                auto& st = cache.scores[item.instance_index];
                st.reserve(n_static);
                for (std::size_t i = 0; i < n_static; ++i) {
                    st.push_back(ce_score(teacher, q, item.candidates[i]));
                }
                cache.ready[item.instance_index] = 1;
            }
            std::vector<double> scores = cache.scores[item.instance_index];
            for (std::size_t i = n_static; i < item.candidates.size(); ++i) {
                scores.push_back(ce_score(teacher, q, item.candidates[i]));
            }
            item.teacher_dist = softmax_over_candidates(scores);
        } else {
            // rand/hard distillation keeps the classical candidate set:
            // the positive followed by the negatives.
            item.candidates.clear();
            item.candidates.reserve(1 + item.negatives.size());
            item.candidates.push_back(tokens.passage(inst.positive_pid));
            for (Id pid : item.negatives) item.candidates.push_back(tokens.passage(pid));
            if (!cache.ready[item.instance_index]) {
                auto& st = cache.scores[item.instance_index];
                st.reserve(item.candidates.size());
                for (const auto& cand : item.candidates) {
                    st.push_back(ce_score(teacher, q, cand));
                }
                cache.ready[item.instance_index] = 1;
            }
            item.teacher_dist = softmax_over_candidates(cache.scores[item.instance_index]);
        }
    });
}

} // namespace

DualEncoderParams train_student(const DistillConfig& cfg, const StudentTrainInputs& in,
                                std::size_t vocab_size, const TrainHooks& hooks,
                                AdamWState* opt_state_out) {
    cfg.validate();
    if (in.instances == nullptr || in.tokens == nullptr || in.teacher == nullptr) {
        throw Error(ErrorKind::usage, "train_student: missing inputs");
    }
    const auto& instances = *in.instances;
    const std::size_t n = instances.size();

    DualEncoderParams params =
        in.init ? *in.init
                : init_dual_params(vocab_size, cfg.hidden_dim,
                                   derive_seed(cfg.seed, "student-init"));
    if (params.vocab_size != vocab_size || params.h != cfg.hidden_dim) {
        throw Error(ErrorKind::shape, "train_student: init checkpoint shape mismatch");
    }

    auto refs = params.tensors();
    AdamWConfig adamw_cfg;
    adamw_cfg.weight_decay = cfg.weight_decay;
    AdamWState opt = AdamWState::like(refs, adamw_cfg);
    Gradients grads = Gradients::zeros_like(refs);

    const bool use_adaptive = cfg.mode == NegativesMode::dark && cfg.adaptive;
    if (use_adaptive &&
        (in.confidences == nullptr || in.confidences->size() != n)) {
        throw Error(ErrorKind::usage, "train_student: adaptive mode needs confidences");
    }

    std::vector<std::vector<Id>> negatives = effective_negatives(cfg, in);
    StaticScoreCache cache(n);
    const std::uint64_t mask_base = derive_seed(cfg.seed, "masks");
    const std::uint64_t shuffle_base = derive_seed(cfg.seed, "shuffle");

    if (cfg.epochs > 0 && n > 0) {
        const std::size_t n_batches = ceil_div(n, cfg.batch_size);
        const std::size_t total_steps = cfg.epochs * n_batches;
        std::size_t step = 0;
        std::vector<std::size_t> order(n);

        for (std::size_t t = 1; t <= cfg.epochs; ++t) {
            EpochPlan plan;
            if (use_adaptive) {
                plan = plan_epoch(*in.confidences, t, cfg.epochs);
            } else {
                plan.epoch = t;
                plan.total_epochs = cfg.epochs;
                plan.selected.resize(n);
                std::iota(plan.selected.begin(), plan.selected.end(), std::size_t{0});
                plan.is_selected.assign(n, 1);
            }
            if (hooks.on_plan) hooks.on_plan(plan);

            std::iota(order.begin(), order.end(), std::size_t{0});
            Rng shuffle_rng(derive_seed(shuffle_base, static_cast<std::uint64_t>(t)));
            shuffle(order, shuffle_rng);
            const std::uint64_t mask_epoch_base =
                derive_seed(mask_base, static_cast<std::uint64_t>(t));

            for (std::size_t start = 0; start < n; start += cfg.batch_size) {
                ++step;
                const double lr = lr_at(step, cfg.warmup_steps, cfg.peak_lr, total_steps);
                const std::size_t end = std::min(n, start + cfg.batch_size);

                std::vector<BatchItem> items;
                items.reserve(end - start);
                for (std::size_t b = start; b < end; ++b) {
                    BatchItem item;
                    item.instance_index = order[b];
                    item.instance = &instances[order[b]];
                    item.negatives = negatives[order[b]];
                    item.in_plan = plan.contains(order[b]);
                    items.push_back(std::move(item));
                }
                resolve_batch_distillation(items, cfg, in, cache, mask_epoch_base);

                const bool has_sup = cfg.supervised && cfg.lambda_sup != 0.0;
                const bool has_kd =
                    std::any_of(items.begin(), items.end(), [](const BatchItem& it) {
                        return it.in_plan && !it.candidates.empty();
                    });
                if (!has_sup && !has_kd) {
                    // Loss has no parameter dependence; applying the optimizer
                    // would still decay weights, so the step is skipped.
                    if (hooks.on_step) hooks.on_step(t, step, lr, 0.0, 0.0, 0.0);
                    continue;
                }

                grads.zero();
                double sup_part = 0.0;
                double kd_part = 0.0;
                const double loss =
                    joint_loss_grad(params, items, *in.tokens, cfg.lambda_sup,
                                    cfg.supervised, grads, &sup_part, &kd_part);
                if (!std::isfinite(loss)) {
                    throw Error(ErrorKind::training,
                                "student training diverged at epoch " + std::to_string(t) +
                                    " step " + std::to_string(step));
                }
                adamw_step(opt, refs, grads, lr);
                if (hooks.on_step) hooks.on_step(t, step, lr, loss, sup_part, kd_part);
            }
        }
    }
    if (opt_state_out) *opt_state_out = std::move(opt);
    return params;
}

void write_confidence_tsv(const std::string& path,
                          const std::vector<ConfidenceRecord>& records,
                          const std::vector<TrainInstance>& instances) {
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (records[a].confidence != records[b].confidence) {
            return records[a].confidence > records[b].confidence;
        }
        return instances[records[a].instance_index].query_id <
               instances[records[b].instance_index].query_id;
    });
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::data, "cannot open for writing: " + path);
    for (std::size_t i : order) {
        out << instances[records[i].instance_index].query_id << '\t'
            << format_double(records[i].confidence) << '\n';
    }
}

std::vector<ConfidenceRecord> load_confidence_tsv(const std::string& path,
                                                  const std::vector<TrainInstance>& instances) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::data, "cannot open confidence file: " + path);

    std::unordered_map<Id, double> by_qid;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw Error(ErrorKind::parse,
                        path + ":" + std::to_string(line_no) + ": expected qid<TAB>confidence");
        }
        Id qid = 0;
        auto [p1, e1] = std::from_chars(line.data(), line.data() + tab, qid);
        if (e1 != std::errc{} || p1 != line.data() + tab) {
            throw Error(ErrorKind::parse, path + ":" + std::to_string(line_no) + ": bad qid");
        }
        errno = 0;
        char* endp = nullptr;
        double conf = std::strtod(line.c_str() + tab + 1, &endp);
        if (endp == line.c_str() + tab + 1 || *endp != '\0') {
            throw Error(ErrorKind::parse,
                        path + ":" + std::to_string(line_no) + ": bad confidence value");
        }
        if (!by_qid.emplace(qid, conf).second) {
            throw Error(ErrorKind::validation,
                        path + ":" + std::to_string(line_no) + ": duplicate qid");
        }
    }

    std::vector<ConfidenceRecord> records;
    records.reserve(instances.size());
    for (std::size_t i = 0; i < instances.size(); ++i) {
        auto it = by_qid.find(instances[i].query_id);
        if (it == by_qid.end()) {
            throw Error(ErrorKind::data, path + ": missing confidence for query " +
                                             std::to_string(instances[i].query_id));
        }
        records.push_back({i, it->second});
    }
    return records;
}

} // namespace dkd
