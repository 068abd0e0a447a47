#include "dkd/config.hpp"

#include <fstream>
#include <sstream>

#include "dkd/error.hpp"
#include "dkd/rng.hpp"
#include "json.hpp"

namespace dkd {

namespace {

using nlohmann::json;

template <typename T>
void get_to(const json& j, const char* key, T& out, const std::string& origin) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        it->get_to(out);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::config, origin + ": bad value for '" + key + "': " + e.what());
    }
}

void parse_synth(const json& j, SynthConfig& cfg, const std::string& origin) {
    get_to(j, "vocab_size", cfg.vocab_size, origin);
    get_to(j, "n_topics", cfg.n_topics, origin);
    get_to(j, "topic_token_count", cfg.topic_token_count, origin);
    get_to(j, "query_len", cfg.query_len, origin);
    get_to(j, "passage_len", cfg.passage_len, origin);
    get_to(j, "positive_topic_fraction", cfg.positive_topic_fraction, origin);
    get_to(j, "hard_overlap_fraction", cfg.hard_overlap_fraction, origin);
    get_to(j, "n_queries", cfg.n_queries, origin);
    get_to(j, "negatives_per_query", cfg.negatives_per_query, origin);
}

void parse_distill(const json& j, DistillConfig& cfg, const std::string& origin) {
    get_to(j, "negatives_per_query", cfg.negatives_per_query, origin);
    get_to(j, "mask_ratios", cfg.mask_ratios, origin);
    get_to(j, "lambda", cfg.lambda_sup, origin);
    get_to(j, "batch_size", cfg.batch_size, origin);
    get_to(j, "epochs", cfg.epochs, origin);
    get_to(j, "peak_lr", cfg.peak_lr, origin);
    get_to(j, "warmup_steps", cfg.warmup_steps, origin);
    get_to(j, "max_query_len", cfg.max_query_len, origin);
    get_to(j, "max_passage_len", cfg.max_passage_len, origin);
    get_to(j, "hidden_dim", cfg.hidden_dim, origin);
    get_to(j, "mlp_hidden", cfg.mlp_hidden, origin);
    get_to(j, "weight_decay", cfg.weight_decay, origin);
}

void parse_teacher(const json& j, TeacherTrainConfig& cfg, const std::string& origin) {
    get_to(j, "epochs", cfg.epochs, origin);
    get_to(j, "peak_lr", cfg.peak_lr, origin);
    get_to(j, "warmup_steps", cfg.warmup_steps, origin);
    get_to(j, "batch_size", cfg.batch_size, origin);
    get_to(j, "weight_decay", cfg.weight_decay, origin);
}

} // namespace

void RunConfig::apply_seed() {
    synth.seed = derive_seed(seed, "data");
    teacher.seed = derive_seed(seed, "teacher");
    distill.seed = derive_seed(seed, "student");
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::config, "cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str(), path);
}

RunConfig parse_run_config(const std::string& json_text, const std::string& origin) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::config, origin + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) {
        throw Error(ErrorKind::config, origin + ": config root must be an object");
    }

    RunConfig cfg;
    get_to(j, "seed", cfg.seed, origin);
    get_to(j, "threads", cfg.threads, origin);
    get_to(j, "data_dir", cfg.data_dir, origin);
    get_to(j, "out_dir", cfg.out_dir, origin);
    get_to(j, "checkpoint_dir", cfg.checkpoint_dir, origin);
    get_to(j, "init_checkpoint", cfg.init_checkpoint, origin);
    get_to(j, "export_candidates", cfg.export_candidates, origin);
    get_to(j, "vocab_max_size", cfg.vocab_max_size, origin);

    if (auto it = j.find("synth"); it != j.end()) {
        parse_synth(*it, cfg.synth, origin);
    } else {
        cfg.has_synth = false;
    }
    if (auto it = j.find("distill"); it != j.end()) parse_distill(*it, cfg.distill, origin);
    if (auto it = j.find("teacher"); it != j.end()) parse_teacher(*it, cfg.teacher, origin);

    if (auto it = j.find("mode"); it != j.end()) {
        cfg.distill.mode = negatives_mode_from_string(it->get<std::string>());
    }
    if (auto it = j.find("toggles"); it != j.end()) {
        get_to(*it, "mix", cfg.distill.mix_enabled, origin);
        get_to(*it, "mask", cfg.distill.mask_enabled, origin);
        get_to(*it, "adaptive", cfg.distill.adaptive, origin);
        get_to(*it, "supervised", cfg.distill.supervised, origin);
    }
    if (auto it = j.find("hist"); it != j.end()) {
        get_to(*it, "lo", cfg.hist.lo, origin);
        get_to(*it, "hi", cfg.hist.hi, origin);
        get_to(*it, "width", cfg.hist.width, origin);
        get_to(*it, "groups", cfg.hist.groups, origin);
    }
    if (auto it = j.find("ingest"); it != j.end()) {
        IngestPaths paths;
        get_to(*it, "collection", paths.collection, origin);
        get_to(*it, "queries", paths.queries, origin);
        get_to(*it, "qrels", paths.qrels, origin);
        get_to(*it, "instances", paths.instances, origin);
        cfg.ingest = std::move(paths);
    }

    // Teacher and synthetic generation follow the distillation geometry
    // unless overridden explicitly.
    cfg.teacher.hidden_dim = cfg.distill.hidden_dim;
    cfg.teacher.mlp_hidden = cfg.distill.mlp_hidden;
    cfg.teacher.max_query_len = cfg.distill.max_query_len;
    cfg.teacher.max_passage_len = cfg.distill.max_passage_len;
    if (j.find("synth") == j.end() ||
        j["synth"].find("negatives_per_query") == j["synth"].end()) {
        cfg.synth.negatives_per_query = cfg.distill.negatives_per_query;
    }

    cfg.apply_seed();
    cfg.distill.validate();
    return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    j["data_dir"] = cfg.data_dir;
    j["out_dir"] = cfg.out_dir;
    j["checkpoint_dir"] = cfg.checkpoints();
    j["mode"] = to_string(cfg.distill.mode);
    j["toggles"] = {{"mix", cfg.distill.mix_enabled},
                    {"mask", cfg.distill.mask_enabled},
                    {"adaptive", cfg.distill.adaptive},
                    {"supervised", cfg.distill.supervised}};
    if (cfg.has_synth) {
        j["synth"] = {{"vocab_size", cfg.synth.vocab_size},
                      {"n_topics", cfg.synth.n_topics},
                      {"topic_token_count", cfg.synth.topic_token_count},
                      {"query_len", cfg.synth.query_len},
                      {"passage_len", cfg.synth.passage_len},
                      {"positive_topic_fraction", cfg.synth.positive_topic_fraction},
                      {"hard_overlap_fraction", cfg.synth.hard_overlap_fraction},
                      {"n_queries", cfg.synth.n_queries},
                      {"negatives_per_query", cfg.synth.negatives_per_query},
                      {"derived_seed", cfg.synth.seed}};
    }
    j["distill"] = {{"negatives_per_query", cfg.distill.negatives_per_query},
                    {"mask_ratios", cfg.distill.mask_ratios},
                    {"lambda", cfg.distill.lambda_sup},
                    {"batch_size", cfg.distill.batch_size},
                    {"epochs", cfg.distill.epochs},
                    {"peak_lr", cfg.distill.peak_lr},
                    {"warmup_steps", cfg.distill.warmup_steps},
                    {"max_query_len", cfg.distill.max_query_len},
                    {"max_passage_len", cfg.distill.max_passage_len},
                    {"hidden_dim", cfg.distill.hidden_dim},
                    {"mlp_hidden", cfg.distill.mlp_hidden},
                    {"weight_decay", cfg.distill.weight_decay},
                    {"derived_seed", cfg.distill.seed}};
    j["teacher"] = {{"epochs", cfg.teacher.epochs},
                    {"peak_lr", cfg.teacher.peak_lr},
                    {"warmup_steps", cfg.teacher.warmup_steps},
                    {"batch_size", cfg.teacher.batch_size},
                    {"weight_decay", cfg.teacher.weight_decay},
                    {"derived_seed", cfg.teacher.seed}};
    j["hist"] = {{"lo", cfg.hist.lo},
                 {"hi", cfg.hist.hi},
                 {"width", cfg.hist.width},
                 {"groups", cfg.hist.groups}};
    if (!cfg.init_checkpoint.empty()) j["init_checkpoint"] = cfg.init_checkpoint;
    j["export_candidates"] = cfg.export_candidates;
    return j.dump(2);
}

} // namespace dkd
