#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "dkd/corpus.hpp"
#include "dkd/distill.hpp"
#include "dkd/eval.hpp"

namespace dkd {

// Paths to externally produced data files for the ingest command.
struct IngestPaths {
    std::string collection;
    std::string queries;
    std::string qrels;
    std::string instances;
};

// One JSON config drives every command. The top-level seed fans out into the
// named sub-seeds (data, teacher, student, masks, rand-negs) so modes and
// ablations share data and teacher for a given seed.
struct RunConfig {
    std::uint64_t seed = 1;
    int threads = 1;
    std::string data_dir = "data";
    std::string out_dir = "out";
    std::string checkpoint_dir; // defaults to <out_dir>/checkpoints

    SynthConfig synth;
    bool has_synth = true;
    DistillConfig distill;
    TeacherTrainConfig teacher;
    HistogramSpec hist;
    std::optional<IngestPaths> ingest;

    std::string init_checkpoint; // optional student warm start
    bool export_candidates = false;
    std::size_t vocab_max_size = 0; // 0 = synth vocab size, or 32768 for ingested data

    std::string checkpoints() const {
        return checkpoint_dir.empty() ? out_dir + "/checkpoints" : checkpoint_dir;
    }

    std::size_t effective_vocab_size() const {
        if (vocab_max_size > 0) return vocab_max_size;
        return has_synth ? synth.vocab_size : 32768;
    }

    void apply_seed(); // re-derives all sub-seeds from `seed`
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text, const std::string& origin);
std::string run_config_to_json(const RunConfig& cfg);

} // namespace dkd
