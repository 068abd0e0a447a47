#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "dkd/text.hpp"

namespace dkd {

// Tensor-level reverse-mode tape. Nodes are created in topological order, so
// one reverse sweep over the creation order is a valid backward pass.
//
// Parameter tensors enter as external leaves referencing caller-owned value
// and gradient storage; backward() accumulates into those buffers, which the
// caller zeroes between batches. A tape is single-shot: build, backward once,
// discard.
class Tape {
public:
    struct Node {
        const double* val = nullptr;
        double* grad = nullptr;
        std::size_t size = 0;
        std::vector<double> val_store;  // owned storage for interior nodes
        std::vector<double> grad_store;
        std::function<void()> backprop; // adds into parent grads; null for leaves

        std::span<const double> value() const { return {val, size}; }
        double scalar() const;
    };

    // External leaf over caller-owned parameter values and gradient buffer.
    Node* leaf(const double* values, double* grad, std::size_t n);

    // Constant input; gradient is tracked but goes nowhere.
    Node* constant(std::vector<double> values);
    Node* constant_scalar(double v);

    // Mean of the embedding rows for `ids` from a vocab*h table.
    Node* embedding_mean(Node* table, const TokenSeq& ids, std::size_t h);

    // y = W x + b with W row-major (out x in).
    Node* linear_wx(Node* w, Node* x, Node* b, std::size_t out_dim, std::size_t in_dim);

    // y = x^T W + b with W row-major (in x out).
    Node* linear_xtw(Node* w, Node* x, Node* b, std::size_t in_dim, std::size_t out_dim);

    Node* dot(Node* a, Node* b);
    Node* mul(Node* a, Node* b);
    Node* tanh(Node* a);
    Node* add(Node* a, Node* b);
    Node* scale(Node* a, double c);
    Node* concat(std::span<Node* const> parts);
    Node* stack_scalars(std::span<Node* const> scalars);
    Node* sum_scalars(std::span<Node* const> scalars);

    // -log softmax(scores)[index], max-shifted.
    Node* neg_log_softmax_at(Node* scores, std::size_t index);

    // KL(p || softmax(scores)) for a fixed distribution p; zero-probability
    // entries of p contribute nothing.
    Node* kl_from_fixed(std::vector<double> p, Node* scores);

    // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse creation
    // order. Root must be scalar.
    void backward(Node* root);

    std::size_t node_count() const { return nodes_.size(); }

private:
    Node* make_interior(std::size_t n);
    std::deque<Node> nodes_;
    bool consumed_ = false;
};

} // namespace dkd
