#pragma once

#include <string>
#include <vector>

#include "dkd/config.hpp"

namespace dkd {

// Bundled inputs every training/eval stage needs.
struct PreparedData {
    Dataset data;
    Vocab vocab;
    TokenizedData tokens;
};

PreparedData load_prepared(const RunConfig& cfg);

void cmd_gen_synth(const RunConfig& cfg);
void cmd_ingest(const RunConfig& cfg);
void cmd_train_teacher(const RunConfig& cfg);
void cmd_score_confidence(const RunConfig& cfg);
void cmd_distill(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
void cmd_export_hist(const RunConfig& cfg);
void cmd_sweep_m(const RunConfig& cfg, const std::vector<std::size_t>& m_values);
void cmd_pipeline(const RunConfig& cfg);

// Artifact locations under a config's directories.
std::string collection_path(const RunConfig& cfg);
std::string queries_path(const RunConfig& cfg);
std::string qrels_path(const RunConfig& cfg);
std::string instances_path(const RunConfig& cfg);
std::string teacher_checkpoint_path(const RunConfig& cfg);
std::string student_checkpoint_path(const RunConfig& cfg);
std::string confidence_path(const RunConfig& cfg);
std::string metrics_path(const RunConfig& cfg);
std::string histogram_path(const RunConfig& cfg);

} // namespace dkd
