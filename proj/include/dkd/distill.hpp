#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dkd/dark.hpp"
#include "dkd/model.hpp"

namespace dkd {

enum class NegativesMode { rand, hard, dark };

NegativesMode negatives_mode_from_string(const std::string& s);
const char* to_string(NegativesMode mode);

struct ConfidenceRecord {
    std::size_t instance_index = 0;
    double confidence = 0.0; // log-probability of the positive, <= 0
};

// Self-paced selection for epoch t of T: the ceil((1 - t/(2T)) * n) highest
// confidence instances, ties broken by instance index.
struct EpochPlan {
    std::size_t epoch = 1;
    std::size_t total_epochs = 1;
    std::vector<std::size_t> selected;  // instance indices, confidence-descending
    std::vector<char> is_selected;      // indexed by instance

    bool contains(std::size_t instance_index) const {
        return instance_index < is_selected.size() &&
               is_selected[instance_index] != 0;
    }
};

std::size_t plan_size(std::size_t n, std::size_t t, std::size_t total_epochs);
EpochPlan plan_epoch(const std::vector<ConfidenceRecord>& confidences, std::size_t t,
                     std::size_t total_epochs);

struct DistillConfig {
    std::size_t negatives_per_query = 10; // m
    std::vector<double> mask_ratios = kDefaultMaskRatios;
    double lambda_sup = 0.01;
    std::size_t batch_size = 8;
    std::size_t epochs = 8;
    double peak_lr = 5e-5;
    std::size_t warmup_steps = 100;
    std::size_t max_query_len = 32;
    std::size_t max_passage_len = 128;
    std::size_t hidden_dim = 64; // h
    std::size_t mlp_hidden = 64; // d_hid
    double weight_decay = 0.01;
    std::uint64_t seed = 1;

    NegativesMode mode = NegativesMode::dark;
    bool mix_enabled = true;
    bool mask_enabled = true;
    bool adaptive = true;
    bool supervised = true;

    void validate() const;
};

struct TeacherTrainConfig {
    std::size_t epochs = 4;
    double peak_lr = 2e-3;
    std::size_t warmup_steps = 100;
    std::size_t batch_size = 8;
    double weight_decay = 0.01;
    std::size_t hidden_dim = 64;
    std::size_t mlp_hidden = 64;
    std::size_t max_query_len = 32;
    std::size_t max_passage_len = 128;
    std::uint64_t seed = 1;
};

// --- losses ----------------------------------------------------------------

// Contrastive loss over {positive} + negatives: -log softmax(scores)[positive].
double sup_loss(const DualEncoderParams& params, const TrainInstance& instance,
                const TokenizedData& tokens);
double sup_loss(const DualEncoderParams& params, const TokenSeq& q_seq,
                const TokenSeq& pos_seq, const std::vector<TokenSeq>& neg_seqs);

// KL(teacher || student) with the student distribution computed over the same
// ordered candidates.
double kd_loss(const DualEncoderParams& params, const Distribution& teacher_dist,
               const std::vector<TokenSeq>& candidate_seqs, const TokenSeq& q_seq);

ConfidenceRecord teacher_confidence(const CrossEncoderParams& teacher,
                                    const TrainInstance& instance,
                                    const TokenizedData& tokens,
                                    std::size_t instance_index);

std::vector<ConfidenceRecord> compute_confidences(const CrossEncoderParams& teacher,
                                                  const std::vector<TrainInstance>& instances,
                                                  const TokenizedData& tokens,
                                                  int threads = 1);

// One batch member with its distillation inputs resolved (teacher already
// scored) so losses are pure functions of the student parameters.
struct BatchItem {
    std::size_t instance_index = 0;
    const TrainInstance* instance = nullptr;
    std::vector<Id> negatives;            // effective negatives for this run
    bool in_plan = false;
    std::vector<TokenSeq> candidates;     // distillation candidates, teacher order
    Distribution teacher_dist;
};

double joint_loss(const DualEncoderParams& params, const std::vector<BatchItem>& batch,
                  const TokenizedData& tokens, double lambda_sup, bool supervised = true);

// Same objective through the tape; accumulates into grads and returns the
// loss value. The weighted supervised and distillation parts are reported
// separately when requested.
double joint_loss_grad(const DualEncoderParams& params, const std::vector<BatchItem>& batch,
                       const TokenizedData& tokens, double lambda_sup, bool supervised,
                       Gradients& grads, double* sup_part = nullptr,
                       double* kd_part = nullptr);

// --- training --------------------------------------------------------------

using StepLogger = std::function<void(std::size_t epoch, std::size_t step, double lr,
                                      double loss, double sup_part, double kd_part)>;

struct TrainHooks {
    StepLogger on_step;                                      // optional
    std::function<void(const EpochPlan&)> on_plan;           // optional
};

CrossEncoderParams train_teacher(const TeacherTrainConfig& cfg,
                                 const std::vector<TrainInstance>& instances,
                                 const TokenizedData& tokens, std::size_t vocab_size,
                                 const TrainHooks& hooks = {},
                                 AdamWState* opt_state_out = nullptr);

struct StudentTrainInputs {
    const std::vector<TrainInstance>* instances = nullptr;
    const TokenizedData* tokens = nullptr;
    const CrossEncoderParams* teacher = nullptr;
    const std::vector<ConfidenceRecord>* confidences = nullptr;
    std::vector<Id> all_pids; // sampling pool for rand mode
    int threads = 1;
    std::optional<DualEncoderParams> init; // fresh init from seed when absent
};

DualEncoderParams train_student(const DistillConfig& cfg, const StudentTrainInputs& in,
                                std::size_t vocab_size, const TrainHooks& hooks = {},
                                AdamWState* opt_state_out = nullptr);

// confidence.tsv: qid<TAB>confidence, sorted descending (ties by qid).
void write_confidence_tsv(const std::string& path,
                          const std::vector<ConfidenceRecord>& records,
                          const std::vector<TrainInstance>& instances);
std::vector<ConfidenceRecord> load_confidence_tsv(const std::string& path,
                                                  const std::vector<TrainInstance>& instances);

} // namespace dkd
