#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dkd/autodiff.hpp"
#include "dkd/optim.hpp"
#include "dkd/text.hpp"

namespace dkd {

// Student: bag-of-words mean pooling followed by an affine projection;
// relevance is the plain inner product of query and passage vectors.
struct DualEncoderParams {
    std::size_t vocab_size = 0;
    std::size_t h = 0;
    std::vector<double> embed;  // vocab_size x h, row-major
    std::vector<double> proj_w; // h x h
    std::vector<double> proj_b; // h

    std::vector<std::vector<double>*> tensors();
    std::vector<const std::vector<double>*> tensors() const;
};

// Teacher: scores the pair through features the factored student cannot
// express — the elementwise product of the two mean embeddings and the
// lexical overlap — fed to a one-hidden-layer tanh MLP.
struct CrossEncoderParams {
    std::size_t vocab_size = 0;
    std::size_t h = 0;
    std::size_t d_hid = 0;
    std::vector<double> embed; // vocab_size x h
    std::vector<double> w1;    // (3h+1) x d_hid
    std::vector<double> b1;    // d_hid
    std::vector<double> w2;    // d_hid
    std::vector<double> b2;    // 1

    std::size_t feature_dim() const { return 3 * h + 1; }
    std::vector<std::vector<double>*> tensors();
    std::vector<const std::vector<double>*> tensors() const;
};

DualEncoderParams init_dual_params(std::size_t vocab_size, std::size_t h,
                                   std::uint64_t seed);
CrossEncoderParams init_cross_params(std::size_t vocab_size, std::size_t h,
                                     std::size_t d_hid, std::uint64_t seed);

// Normalized relevance probabilities over an ordered candidate list.
struct Distribution {
    std::vector<double> p;

    std::size_t size() const { return p.size(); }
    void validate() const; // entries in [0,1], sum within 1e-9 of 1
};

Distribution softmax_over_candidates(std::span<const double> scores);

std::vector<double> de_encode(const DualEncoderParams& params, const TokenSeq& seq);
double de_score(std::span<const double> q_vec, std::span<const double> p_vec);

// |token-multiset intersection| / |q_seq|.
double overlap_feature(const TokenSeq& q_seq, const TokenSeq& p_seq);
double ce_score(const CrossEncoderParams& params, const TokenSeq& q_seq,
                const TokenSeq& p_seq);

// --- differentiable path -------------------------------------------------
// Leaves wire parameter tensors (and their gradient buffers) into a tape;
// the node builders mirror the plain scoring functions exactly.

struct DualEncoderLeaves {
    Tape::Node* embed = nullptr;
    Tape::Node* proj_w = nullptr;
    Tape::Node* proj_b = nullptr;
    std::size_t h = 0;
};

struct CrossEncoderLeaves {
    Tape::Node* embed = nullptr;
    Tape::Node* w1 = nullptr;
    Tape::Node* b1 = nullptr;
    Tape::Node* w2 = nullptr;
    Tape::Node* b2 = nullptr;
    std::size_t h = 0;
    std::size_t d_hid = 0;
};

DualEncoderLeaves make_leaves(Tape& tape, const DualEncoderParams& params,
                              Gradients& grads);
CrossEncoderLeaves make_leaves(Tape& tape, const CrossEncoderParams& params,
                               Gradients& grads);

Tape::Node* de_encode_node(Tape& tape, const DualEncoderLeaves& leaves,
                           const TokenSeq& seq);
Tape::Node* de_score_node(Tape& tape, Tape::Node* q_vec, Tape::Node* p_vec);
Tape::Node* ce_score_node(Tape& tape, const CrossEncoderLeaves& leaves,
                          const TokenSeq& q_seq, const TokenSeq& p_seq);

// --- checkpoints ----------------------------------------------------------
// Versioned little-endian binary container: named shaped tensors plus the
// JSON config they were trained with; loads reject shape mismatches.

struct CheckpointTensor {
    std::string name;
    std::vector<std::size_t> dims;
    std::vector<double> data;
};

struct Checkpoint {
    std::string kind; // "dual_encoder" | "cross_encoder"
    std::string config_json;
    std::vector<CheckpointTensor> tensors;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

// Optimizer state rides along (m.<name>, v.<name>, adamw.step) so training
// can resume.
Checkpoint to_checkpoint(const DualEncoderParams& params, const std::string& config_json,
                         const AdamWState* opt_state = nullptr);
Checkpoint to_checkpoint(const CrossEncoderParams& params, const std::string& config_json,
                         const AdamWState* opt_state = nullptr);
DualEncoderParams dual_from_checkpoint(const Checkpoint& ckpt,
                                       AdamWState* opt_state = nullptr);
CrossEncoderParams cross_from_checkpoint(const Checkpoint& ckpt,
                                         AdamWState* opt_state = nullptr);

} // namespace dkd
