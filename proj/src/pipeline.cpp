#include "dkd/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dkd/error.hpp"
#include "dkd/parallel.hpp"
#include "dkd/rng.hpp"
#include "json.hpp"

namespace dkd {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw Error(ErrorKind::data, "cannot create directory " + path + ": " + ec.message());
}

void write_manifest(const RunConfig& cfg, const std::string& dir,
                    const std::vector<std::string>& files) {
    nlohmann::json j;
    j["config"] = nlohmann::json::parse(run_config_to_json(cfg));
    j["files"] = files;
    std::ofstream out(dir + "/manifest.json", std::ios::binary);
    if (!out) throw Error(ErrorKind::data, "cannot write manifest in " + dir);
    out << j.dump(2) << '\n';
}

bool data_files_present(const RunConfig& cfg) {
    return fs::exists(collection_path(cfg)) && fs::exists(queries_path(cfg)) &&
           fs::exists(qrels_path(cfg)) && fs::exists(instances_path(cfg));
}

class JsonlLogger {
public:
    explicit JsonlLogger(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw Error(ErrorKind::data, "cannot open log file: " + path);
    }

    void log_step(std::size_t epoch, std::size_t step, double lr, double loss,
                  double sup_part, double kd_part) {
        nlohmann::json j;
        j["epoch"] = epoch;
        j["step"] = step;
        j["lr"] = lr;
        j["loss"] = loss;
        j["sup"] = sup_part;
        j["kd"] = kd_part;
        out_ << j.dump() << '\n';
    }

private:
    std::ofstream out_;
};

void run_stage(const char* name, const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        throw Error(e.kind(), std::string("stage ") + name + " failed: " + e.what());
    }
}

CrossEncoderParams load_teacher(const RunConfig& cfg) {
    const std::string path = teacher_checkpoint_path(cfg);
    if (!fs::exists(path)) {
        throw Error(ErrorKind::data,
                    "missing teacher checkpoint " + path + " (run train-teacher first)");
    }
    return cross_from_checkpoint(read_checkpoint(path));
}

DualEncoderParams load_student(const RunConfig& cfg) {
    const std::string path = student_checkpoint_path(cfg);
    if (!fs::exists(path)) {
        throw Error(ErrorKind::data,
                    "missing student checkpoint " + path + " (run distill first)");
    }
    return dual_from_checkpoint(read_checkpoint(path));
}

} // namespace

std::string collection_path(const RunConfig& cfg) { return cfg.data_dir + "/collection.tsv"; }
std::string queries_path(const RunConfig& cfg) { return cfg.data_dir + "/queries.tsv"; }
std::string qrels_path(const RunConfig& cfg) { return cfg.data_dir + "/qrels.txt"; }
std::string instances_path(const RunConfig& cfg) { return cfg.data_dir + "/instances.tsv"; }
std::string teacher_checkpoint_path(const RunConfig& cfg) {
    return cfg.checkpoints() + "/teacher.ckpt";
}
std::string student_checkpoint_path(const RunConfig& cfg) {
    return cfg.checkpoints() + "/student.ckpt";
}
std::string confidence_path(const RunConfig& cfg) { return cfg.out_dir + "/confidence.tsv"; }
std::string metrics_path(const RunConfig& cfg) { return cfg.out_dir + "/metrics.json"; }
std::string histogram_path(const RunConfig& cfg) { return cfg.out_dir + "/histogram.csv"; }

PreparedData load_prepared(const RunConfig& cfg) {
    PreparedData out;
    out.data.passages = load_collection(collection_path(cfg));
    out.data.queries = load_queries(queries_path(cfg));
    out.data.qrels = load_qrels(qrels_path(cfg));
    out.data.instances = load_instances(instances_path(cfg));
    validate_dataset(out.data);
    out.vocab = build_vocab(out.data.passages, out.data.queries, cfg.effective_vocab_size());
    out.tokens = tokenize_dataset(out.data, out.vocab, cfg.distill.max_query_len,
                                  cfg.distill.max_passage_len);
    return out;
}

void cmd_gen_synth(const RunConfig& cfg) {
    if (!cfg.has_synth) {
        throw Error(ErrorKind::config, "gen-synth requires a 'synth' config section");
    }
    SynthOutput out = gen_synthetic(cfg.synth);
    ensure_dir(cfg.data_dir);
    save_collection(out.data.passages, collection_path(cfg));
    save_queries(out.data.queries, queries_path(cfg));
    save_qrels(out.data.qrels, qrels_path(cfg));
    save_instances(out.data.instances, instances_path(cfg));
    write_manifest(cfg, cfg.data_dir,
                   {"collection.tsv", "queries.tsv", "qrels.txt", "instances.tsv"});
}

void cmd_ingest(const RunConfig& cfg) {
    if (!cfg.ingest) {
        throw Error(ErrorKind::config, "ingest requires an 'ingest' config section with paths");
    }
    Dataset data;
    data.passages = load_collection(cfg.ingest->collection);
    data.queries = load_queries(cfg.ingest->queries);
    data.qrels = load_qrels(cfg.ingest->qrels);
    data.instances = load_instances(cfg.ingest->instances);
    validate_dataset(data);
    ensure_dir(cfg.data_dir);
    save_collection(data.passages, collection_path(cfg));
    save_queries(data.queries, queries_path(cfg));
    save_qrels(data.qrels, qrels_path(cfg));
    save_instances(data.instances, instances_path(cfg));
    write_manifest(cfg, cfg.data_dir,
                   {"collection.tsv", "queries.tsv", "qrels.txt", "instances.tsv"});
}

void cmd_train_teacher(const RunConfig& cfg) {
    PreparedData prep = load_prepared(cfg);
    ensure_dir(cfg.out_dir);
    ensure_dir(cfg.out_dir + "/logs");
    ensure_dir(cfg.checkpoints());
    write_vocab_tsv(prep.vocab, cfg.out_dir + "/vocab.tsv");

    JsonlLogger logger(cfg.out_dir + "/logs/teacher_train.jsonl");
    TrainHooks hooks;
    hooks.on_step = [&](std::size_t epoch, std::size_t step, double lr, double loss,
                        double sup_part, double kd_part) {
        logger.log_step(epoch, step, lr, loss, sup_part, kd_part);
    };
    AdamWState opt_state;
    CrossEncoderParams teacher = train_teacher(cfg.teacher, prep.data.instances,
                                               prep.tokens, prep.vocab.size(), hooks,
                                               &opt_state);
    write_checkpoint(teacher_checkpoint_path(cfg),
                     to_checkpoint(teacher, run_config_to_json(cfg), &opt_state));
    write_manifest(cfg, cfg.out_dir, {"checkpoints/teacher.ckpt", "vocab.tsv"});
}

void cmd_score_confidence(const RunConfig& cfg) {
    PreparedData prep = load_prepared(cfg);
    CrossEncoderParams teacher = load_teacher(cfg);
    ensure_dir(cfg.out_dir);
    auto records =
        compute_confidences(teacher, prep.data.instances, prep.tokens, cfg.threads);
    write_confidence_tsv(confidence_path(cfg), records, prep.data.instances);
}

void cmd_distill(const RunConfig& cfg) {
    PreparedData prep = load_prepared(cfg);
    CrossEncoderParams teacher = load_teacher(cfg);
    ensure_dir(cfg.out_dir);
    ensure_dir(cfg.out_dir + "/logs");
    ensure_dir(cfg.out_dir + "/plans");
    ensure_dir(cfg.checkpoints());

    StudentTrainInputs inputs;
    inputs.instances = &prep.data.instances;
    inputs.tokens = &prep.tokens;
    inputs.teacher = &teacher;
    inputs.threads = cfg.threads;

    std::vector<ConfidenceRecord> confidences;
    if (cfg.distill.mode == NegativesMode::dark && cfg.distill.adaptive) {
        if (!fs::exists(confidence_path(cfg))) {
            throw Error(ErrorKind::data, "missing " + confidence_path(cfg) +
                                             " (run score-confidence first)");
        }
        confidences = load_confidence_tsv(confidence_path(cfg), prep.data.instances);
        inputs.confidences = &confidences;
    }
    if (cfg.distill.mode == NegativesMode::rand) {
        inputs.all_pids.reserve(prep.data.passages.size());
        for (const auto& p : prep.data.passages) inputs.all_pids.push_back(p.id);
    }
    if (!cfg.init_checkpoint.empty()) {
        inputs.init = dual_from_checkpoint(read_checkpoint(cfg.init_checkpoint));
    }

    JsonlLogger logger(cfg.out_dir + "/logs/student_train.jsonl");
    TrainHooks hooks;
    hooks.on_step = [&](std::size_t epoch, std::size_t step, double lr, double loss,
                        double sup_part, double kd_part) {
        logger.log_step(epoch, step, lr, loss, sup_part, kd_part);
    };
    hooks.on_plan = [&](const EpochPlan& plan) {
        nlohmann::json j;
        j["epoch"] = plan.epoch;
        j["total_epochs"] = plan.total_epochs;
        auto& qids = j["selected_qids"] = nlohmann::json::array();
        for (std::size_t idx : plan.selected) {
            qids.push_back(prep.data.instances[idx].query_id);
        }
        std::ofstream out(cfg.out_dir + "/plans/plan_epoch_" + std::to_string(plan.epoch) +
                              ".json",
                          std::ios::binary);
        out << j.dump(2) << '\n';
    };

    AdamWState opt_state;
    DualEncoderParams student =
        train_student(cfg.distill, inputs, prep.vocab.size(), hooks, &opt_state);
    write_checkpoint(student_checkpoint_path(cfg),
                     to_checkpoint(student, run_config_to_json(cfg), &opt_state));

    if (cfg.export_candidates && cfg.distill.mode == NegativesMode::dark) {
        // Epoch-1 candidate sets under the same derived mask seeds training uses.
        DarkOptions opts;
        opts.mask_ratios = cfg.distill.mask_enabled ? cfg.distill.mask_ratios
                                                    : std::vector<double>{};
        opts.max_passage_len = cfg.distill.max_passage_len;
        opts.mix_enabled = cfg.distill.mix_enabled;
        opts.mask_enabled = cfg.distill.mask_enabled;
        const std::uint64_t base =
            derive_seed(derive_seed(cfg.distill.seed, "masks"), std::uint64_t{1});
        std::vector<CandidateSet> sets;
        sets.reserve(prep.data.instances.size());
        for (std::size_t i = 0; i < prep.data.instances.size(); ++i) {
            Rng rng(derive_seed(base, static_cast<std::uint64_t>(i)));
            DarkSet dark = build_dark_set(prep.data.instances[i], prep.tokens, opts, rng);
            sets.push_back(assemble_candidates(prep.data.instances[i], dark, prep.tokens));
        }
        write_candidate_shards(cfg.out_dir + "/candidates.jsonl", prep.data.instances, sets);
    }
    write_manifest(cfg, cfg.out_dir, {"checkpoints/student.ckpt"});
}

void cmd_eval(const RunConfig& cfg) {
    PreparedData prep = load_prepared(cfg);
    DualEncoderParams student = load_student(cfg);
    ensure_dir(cfg.out_dir);

    CorpusMatrix corpus = encode_corpus(student, prep.data.passages, prep.vocab,
                                        cfg.distill.max_passage_len, cfg.threads);
    const std::size_t k = std::min<std::size_t>(1000, corpus.pids.size());
    std::vector<RankedList> ranked(prep.data.queries.size());
    parallel_for(prep.data.queries.size(), cfg.threads, [&](std::size_t i) {
        std::vector<double> q_vec =
            de_encode(student, prep.tokens.query(prep.data.queries[i].id));
        ranked[i] = retrieve(q_vec, corpus, k);
        ranked[i].query_id = prep.data.queries[i].id;
    });

    MetricValue mrr = mrr_at_k(ranked, prep.data.qrels, 10);
    MetricValue r50 = recall_at_k(ranked, prep.data.qrels, 50);
    MetricValue r1000 = recall_at_k(ranked, prep.data.qrels, 1000);
    MetricValue ndcg = ndcg_at_k(ranked, prep.data.qrels, 10);
    write_metrics_json(metrics_path(cfg), mrr.value, r50.value, r1000.value, ndcg.value,
                       mrr.n_used);
}

void cmd_export_hist(const RunConfig& cfg) {
    PreparedData prep = load_prepared(cfg);
    CrossEncoderParams teacher = load_teacher(cfg);
    ensure_dir(cfg.out_dir);

    DarkOptions opts;
    opts.mask_ratios = cfg.distill.mask_ratios;
    opts.max_passage_len = cfg.distill.max_passage_len;
    const std::uint64_t base = derive_seed(cfg.seed, "hist-masks");
    std::vector<DarkSet> dark_sets;
    dark_sets.reserve(prep.data.instances.size());
    for (std::size_t i = 0; i < prep.data.instances.size(); ++i) {
        Rng rng(derive_seed(base, static_cast<std::uint64_t>(i)));
        dark_sets.push_back(build_dark_set(prep.data.instances[i], prep.tokens, opts, rng));
    }
    Histogram hist = score_histogram(teacher, prep.data.instances, dark_sets, prep.tokens,
                                     cfg.hist, cfg.threads);
    write_histogram_csv(hist, histogram_path(cfg));
}

void cmd_pipeline(const RunConfig& cfg) {
    if (!data_files_present(cfg)) {
        if (!cfg.has_synth) {
            throw Error(ErrorKind::data,
                        "pipeline: data files missing under " + cfg.data_dir +
                            " and no 'synth' section to generate them");
        }
        run_stage("gen-synth", [&] { cmd_gen_synth(cfg); });
    }
    run_stage("train-teacher", [&] { cmd_train_teacher(cfg); });
    run_stage("score-confidence", [&] { cmd_score_confidence(cfg); });
    run_stage("distill", [&] { cmd_distill(cfg); });
    run_stage("eval", [&] { cmd_eval(cfg); });
}

void cmd_sweep_m(const RunConfig& cfg, const std::vector<std::size_t>& m_values) {
    if (m_values.empty()) {
        throw Error(ErrorKind::usage, "sweep-m: need at least one m value");
    }
    std::vector<std::size_t> ms = m_values;
    std::sort(ms.begin(), ms.end());
    ms.erase(std::unique(ms.begin(), ms.end()), ms.end());

    ensure_dir(cfg.out_dir);
    std::vector<std::pair<std::size_t, double>> rows;
    for (std::size_t m : ms) {
        RunConfig sub = cfg;
        sub.out_dir = cfg.out_dir + "/m_" + std::to_string(m);
        sub.checkpoint_dir.clear();
        sub.data_dir = sub.out_dir + "/data";
        sub.synth.negatives_per_query = m;
        sub.distill.negatives_per_query = m;
        sub.distill.adaptive = false; // sweep isolates the negative count
        sub.apply_seed();
        cmd_pipeline(sub);

        std::ifstream in(metrics_path(sub), std::ios::binary);
        if (!in) throw Error(ErrorKind::data, "sweep-m: missing " + metrics_path(sub));
        nlohmann::json j = nlohmann::json::parse(in);
        rows.emplace_back(m, j.at("mrr_at_10").get<double>());
    }

    std::ofstream out(cfg.out_dir + "/sweep_m.csv", std::ios::binary);
    if (!out) throw Error(ErrorKind::data, "cannot write sweep_m.csv");
    out << "m,mrr_at_10\n";
    for (const auto& [m, mrr] : rows) out << m << ',' << mrr << '\n';
}

} // namespace dkd
