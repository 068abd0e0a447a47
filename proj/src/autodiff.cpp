#include "dkd/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "dkd/error.hpp"

namespace dkd {

namespace {

void check_finite(std::span<const double> xs, const char* what) {
    for (double x : xs) {
        if (!std::isfinite(x)) {
            throw Error(ErrorKind::numeric, std::string(what) + ": non-finite input");
        }
    }
}

std::vector<double> softmax_shifted(std::span<const double> s) {
    double m = *std::max_element(s.begin(), s.end());
    std::vector<double> p(s.size());
    double z = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        p[i] = std::exp(s[i] - m);
        z += p[i];
    }
    for (double& x : p) x /= z;
    return p;
}

double log_sum_exp(std::span<const double> s) {
    double m = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double x : s) z += std::exp(x - m);
    return m + std::log(z);
}

} // namespace

double Tape::Node::scalar() const {
    if (size != 1) throw Error(ErrorKind::usage, "node is not scalar");
    return val[0];
}

Tape::Node* Tape::make_interior(std::size_t n) {
    Node& node = nodes_.emplace_back();
    node.val_store.assign(n, 0.0);
    node.grad_store.assign(n, 0.0);
    node.val = node.val_store.data();
    node.grad = node.grad_store.data();
    node.size = n;
    return &node;
}

Tape::Node* Tape::leaf(const double* values, double* grad, std::size_t n) {
    Node& node = nodes_.emplace_back();
    node.val = values;
    node.grad = grad;
    node.size = n;
    return &node;
}

Tape::Node* Tape::constant(std::vector<double> values) {
    Node& node = nodes_.emplace_back();
    node.val_store = std::move(values);
    node.grad_store.assign(node.val_store.size(), 0.0);
    node.val = node.val_store.data();
    node.grad = node.grad_store.data();
    node.size = node.val_store.size();
    return &node;
}

Tape::Node* Tape::constant_scalar(double v) { return constant(std::vector<double>{v}); }

Tape::Node* Tape::embedding_mean(Node* table, const TokenSeq& ids, std::size_t h) {
    if (ids.empty()) {
        throw Error(ErrorKind::data, "embedding_mean: empty token sequence");
    }
    Node* out = make_interior(h);
    const double inv = 1.0 / static_cast<double>(ids.size());
    for (TokenId id : ids) {
        const double* row = table->val + static_cast<std::size_t>(id) * h;
        for (std::size_t d = 0; d < h; ++d) out->val_store[d] += row[d];
    }
    for (std::size_t d = 0; d < h; ++d) out->val_store[d] *= inv;
    out->backprop = [out, table, ids, h, inv] {
        for (TokenId id : ids) {
            double* grow = table->grad + static_cast<std::size_t>(id) * h;
            for (std::size_t d = 0; d < h; ++d) grow[d] += out->grad[d] * inv;
        }
    };
    return out;
}

Tape::Node* Tape::linear_wx(Node* w, Node* x, Node* b, std::size_t out_dim,
                            std::size_t in_dim) {
    if (w->size != out_dim * in_dim || x->size != in_dim || b->size != out_dim) {
        throw Error(ErrorKind::shape, "linear_wx: shape mismatch");
    }
    Node* out = make_interior(out_dim);
    for (std::size_t i = 0; i < out_dim; ++i) {
        double acc = b->val[i];
        const double* row = w->val + i * in_dim;
        for (std::size_t j = 0; j < in_dim; ++j) acc += row[j] * x->val[j];
        out->val_store[i] = acc;
    }
    out->backprop = [out, w, x, b, out_dim, in_dim] {
        for (std::size_t i = 0; i < out_dim; ++i) {
            const double g = out->grad[i];
            const double* row = w->val + i * in_dim;
            double* grow = w->grad + i * in_dim;
            for (std::size_t j = 0; j < in_dim; ++j) {
                grow[j] += g * x->val[j];
                x->grad[j] += g * row[j];
            }
            b->grad[i] += g;
        }
    };
    return out;
}

Tape::Node* Tape::linear_xtw(Node* w, Node* x, Node* b, std::size_t in_dim,
                             std::size_t out_dim) {
    if (w->size != in_dim * out_dim || x->size != in_dim || b->size != out_dim) {
        throw Error(ErrorKind::shape, "linear_xtw: shape mismatch");
    }
    Node* out = make_interior(out_dim);
    for (std::size_t j = 0; j < out_dim; ++j) out->val_store[j] = b->val[j];
    for (std::size_t i = 0; i < in_dim; ++i) {
        const double xi = x->val[i];
        const double* row = w->val + i * out_dim;
        for (std::size_t j = 0; j < out_dim; ++j) out->val_store[j] += xi * row[j];
    }
    out->backprop = [out, w, x, b, in_dim, out_dim] {
        for (std::size_t i = 0; i < in_dim; ++i) {
            const double xi = x->val[i];
            const double* row = w->val + i * out_dim;
            double* grow = w->grad + i * out_dim;
            double acc = 0.0;
            for (std::size_t j = 0; j < out_dim; ++j) {
                grow[j] += xi * out->grad[j];
                acc += row[j] * out->grad[j];
            }
            x->grad[i] += acc;
        }
        for (std::size_t j = 0; j < out_dim; ++j) b->grad[j] += out->grad[j];
    };
    return out;
}

Tape::Node* Tape::dot(Node* a, Node* b) {
    if (a->size != b->size) throw Error(ErrorKind::shape, "dot: dimension mismatch");
    Node* out = make_interior(1);
    double acc = 0.0;
    for (std::size_t i = 0; i < a->size; ++i) acc += a->val[i] * b->val[i];
    out->val_store[0] = acc;
    out->backprop = [out, a, b] {
        const double g = out->grad[0];
        for (std::size_t i = 0; i < a->size; ++i) {
            a->grad[i] += g * b->val[i];
            b->grad[i] += g * a->val[i];
        }
    };
    return out;
}

Tape::Node* Tape::mul(Node* a, Node* b) {
    if (a->size != b->size) throw Error(ErrorKind::shape, "mul: dimension mismatch");
    Node* out = make_interior(a->size);
    for (std::size_t i = 0; i < a->size; ++i) out->val_store[i] = a->val[i] * b->val[i];
    out->backprop = [out, a, b] {
        for (std::size_t i = 0; i < a->size; ++i) {
            a->grad[i] += out->grad[i] * b->val[i];
            b->grad[i] += out->grad[i] * a->val[i];
        }
    };
    return out;
}

Tape::Node* Tape::tanh(Node* a) {
    Node* out = make_interior(a->size);
    for (std::size_t i = 0; i < a->size; ++i) out->val_store[i] = std::tanh(a->val[i]);
    out->backprop = [out, a] {
        for (std::size_t i = 0; i < a->size; ++i) {
            const double y = out->val[i];
            a->grad[i] += out->grad[i] * (1.0 - y * y);
        }
    };
    return out;
}

Tape::Node* Tape::add(Node* a, Node* b) {
    if (a->size != b->size) throw Error(ErrorKind::shape, "add: dimension mismatch");
    Node* out = make_interior(a->size);
    for (std::size_t i = 0; i < a->size; ++i) out->val_store[i] = a->val[i] + b->val[i];
    out->backprop = [out, a, b] {
        for (std::size_t i = 0; i < a->size; ++i) {
            a->grad[i] += out->grad[i];
            b->grad[i] += out->grad[i];
        }
    };
    return out;
}

Tape::Node* Tape::scale(Node* a, double c) {
    Node* out = make_interior(a->size);
    for (std::size_t i = 0; i < a->size; ++i) out->val_store[i] = c * a->val[i];
    out->backprop = [out, a, c] {
        for (std::size_t i = 0; i < a->size; ++i) a->grad[i] += c * out->grad[i];
    };
    return out;
}

Tape::Node* Tape::concat(std::span<Node* const> parts) {
    std::size_t total = 0;
    for (Node* p : parts) total += p->size;
    Node* out = make_interior(total);
    std::size_t off = 0;
    for (Node* p : parts) {
        std::copy(p->val, p->val + p->size, out->val_store.begin() + off);
        off += p->size;
    }
    std::vector<Node*> held(parts.begin(), parts.end());
    out->backprop = [out, held = std::move(held)] {
        std::size_t off = 0;
        for (Node* p : held) {
            for (std::size_t i = 0; i < p->size; ++i) p->grad[i] += out->grad[off + i];
            off += p->size;
        }
    };
    return out;
}

Tape::Node* Tape::stack_scalars(std::span<Node* const> scalars) {
    Node* out = make_interior(scalars.size());
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i]->size != 1) {
            throw Error(ErrorKind::usage, "stack_scalars: non-scalar element");
        }
        out->val_store[i] = scalars[i]->val[0];
    }
    std::vector<Node*> held(scalars.begin(), scalars.end());
    out->backprop = [out, held = std::move(held)] {
        for (std::size_t i = 0; i < held.size(); ++i) held[i]->grad[0] += out->grad[i];
    };
    return out;
}

Tape::Node* Tape::sum_scalars(std::span<Node* const> scalars) {
    Node* out = make_interior(1);
    double acc = 0.0;
    for (Node* s : scalars) {
        if (s->size != 1) throw Error(ErrorKind::usage, "sum_scalars: non-scalar element");
        acc += s->val[0];
    }
    out->val_store[0] = acc;
    std::vector<Node*> held(scalars.begin(), scalars.end());
    out->backprop = [out, held = std::move(held)] {
        for (Node* s : held) s->grad[0] += out->grad[0];
    };
    return out;
}

Tape::Node* Tape::neg_log_softmax_at(Node* scores, std::size_t index) {
    if (index >= scores->size) {
        throw Error(ErrorKind::usage, "neg_log_softmax_at: index out of range");
    }
    check_finite(scores->value(), "neg_log_softmax_at");
    Node* out = make_interior(1);
    out->val_store[0] = log_sum_exp(scores->value()) - scores->val[index];
    auto probs = softmax_shifted(scores->value());
    out->backprop = [out, scores, index, probs = std::move(probs)] {
        const double g = out->grad[0];
        for (std::size_t j = 0; j < scores->size; ++j) {
            scores->grad[j] += g * (probs[j] - (j == index ? 1.0 : 0.0));
        }
    };
    return out;
}

Tape::Node* Tape::kl_from_fixed(std::vector<double> p, Node* scores) {
    if (p.size() != scores->size) {
        throw Error(ErrorKind::shape, "kl_from_fixed: distribution/score length mismatch");
    }
    check_finite(scores->value(), "kl_from_fixed");
    Node* out = make_interior(1);
    const double lse = log_sum_exp(scores->value());
    double value = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) value += p[i] * (std::log(p[i]) - (scores->val[i] - lse));
    }
    out->val_store[0] = value;
    auto probs = softmax_shifted(scores->value());
    out->backprop = [out, scores, p = std::move(p), probs = std::move(probs)] {
        const double g = out->grad[0];
        for (std::size_t j = 0; j < scores->size; ++j) {
            scores->grad[j] += g * (probs[j] - p[j]);
        }
    };
    return out;
}

void Tape::backward(Node* root) {
    if (root == nullptr || root->size != 1) {
        throw Error(ErrorKind::usage, "backward: root must be a scalar node");
    }
    if (consumed_) {
        throw Error(ErrorKind::usage, "backward: tape already consumed");
    }
    consumed_ = true;
    root->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->backprop) it->backprop();
    }
}

} // namespace dkd
