#include "dkd/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "dkd/error.hpp"
#include "dkd/rng.hpp"

namespace dkd {

namespace {

constexpr double kInitRange = 0.05;
constexpr char kCheckpointMagic[8] = {'D', 'K', 'D', 'C', 'K', 'P', 'T', '0'};
constexpr std::uint32_t kCheckpointVersion = 1;

void fill_uniform(std::vector<double>& t, Rng& rng) {
    for (double& x : t) x = rng.real(-kInitRange, kInitRange);
}

TokenSeq drop_pad(const TokenSeq& seq) {
    TokenSeq out;
    out.reserve(seq.size());
    for (TokenId id : seq) {
        if (id != kPadId) out.push_back(id);
    }
    return out;
}

std::vector<double> mean_embedding(const std::vector<double>& table, std::size_t h,
                                   const TokenSeq& seq) {
    std::vector<double> u(h, 0.0);
    for (TokenId id : seq) {
        const double* row = table.data() + static_cast<std::size_t>(id) * h;
        for (std::size_t d = 0; d < h; ++d) u[d] += row[d];
    }
    const double inv = 1.0 / static_cast<double>(seq.size());
    for (double& x : u) x *= inv;
    return u;
}

} // namespace

std::vector<std::vector<double>*> DualEncoderParams::tensors() {
    return {&embed, &proj_w, &proj_b};
}
std::vector<const std::vector<double>*> DualEncoderParams::tensors() const {
    return {&embed, &proj_w, &proj_b};
}

std::vector<std::vector<double>*> CrossEncoderParams::tensors() {
    return {&embed, &w1, &b1, &w2, &b2};
}
std::vector<const std::vector<double>*> CrossEncoderParams::tensors() const {
    return {&embed, &w1, &b1, &w2, &b2};
}

DualEncoderParams init_dual_params(std::size_t vocab_size, std::size_t h,
                                   std::uint64_t seed) {
    DualEncoderParams p;
    p.vocab_size = vocab_size;
    p.h = h;
    p.embed.resize(vocab_size * h);
    p.proj_w.resize(h * h);
    p.proj_b.assign(h, 0.0);
    Rng rng(seed);
    fill_uniform(p.embed, rng);
    fill_uniform(p.proj_w, rng);
    return p;
}

CrossEncoderParams init_cross_params(std::size_t vocab_size, std::size_t h,
                                     std::size_t d_hid, std::uint64_t seed) {
    CrossEncoderParams p;
    p.vocab_size = vocab_size;
    p.h = h;
    p.d_hid = d_hid;
    p.embed.resize(vocab_size * h);
    p.w1.resize((3 * h + 1) * d_hid);
    p.b1.assign(d_hid, 0.0);
    p.w2.resize(d_hid);
    p.b2.assign(1, 0.0);
    Rng rng(seed);
    fill_uniform(p.embed, rng);
    fill_uniform(p.w1, rng);
    fill_uniform(p.w2, rng);
    return p;
}

void Distribution::validate() const {
    double sum = 0.0;
    for (double x : p) {
        if (!(x >= 0.0 && x <= 1.0)) {
            throw Error(ErrorKind::numeric, "distribution entry outside [0, 1]");
        }
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw Error(ErrorKind::numeric, "distribution does not sum to 1");
    }
}

Distribution softmax_over_candidates(std::span<const double> scores) {
    if (scores.empty()) {
        throw Error(ErrorKind::usage, "softmax over empty score list");
    }
    for (double s : scores) {
        if (!std::isfinite(s)) {
            throw Error(ErrorKind::numeric, "softmax: non-finite score");
        }
    }
    const double m = *std::max_element(scores.begin(), scores.end());
    Distribution dist;
    dist.p.resize(scores.size());
    double z = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        dist.p[i] = std::exp(scores[i] - m);
        z += dist.p[i];
    }
    for (double& x : dist.p) x /= z;
    return dist;
}

std::vector<double> de_encode(const DualEncoderParams& params, const TokenSeq& seq) {
    TokenSeq effective = drop_pad(seq);
    if (effective.empty()) {
        throw Error(ErrorKind::data, "de_encode: empty sequence after PAD removal");
    }
    std::vector<double> u = mean_embedding(params.embed, params.h, effective);
    std::vector<double> out(params.h, 0.0);
    for (std::size_t i = 0; i < params.h; ++i) {
        double acc = params.proj_b[i];
        const double* row = params.proj_w.data() + i * params.h;
        for (std::size_t j = 0; j < params.h; ++j) acc += row[j] * u[j];
        out[i] = acc;
    }
    return out;
}

double de_score(std::span<const double> q_vec, std::span<const double> p_vec) {
    if (q_vec.size() != p_vec.size()) {
        throw Error(ErrorKind::shape, "de_score: dimension mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < q_vec.size(); ++i) acc += q_vec[i] * p_vec[i];
    return acc;
}

double overlap_feature(const TokenSeq& q_seq, const TokenSeq& p_seq) {
    if (q_seq.empty()) return 0.0;
    std::unordered_map<TokenId, std::size_t> counts;
    for (TokenId id : p_seq) ++counts[id];
    std::size_t hits = 0;
    for (TokenId id : q_seq) {
        auto it = counts.find(id);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(q_seq.size());
}

double ce_score(const CrossEncoderParams& params, const TokenSeq& q_seq,
                const TokenSeq& p_seq) {
    if (q_seq.empty() || p_seq.empty()) {
        throw Error(ErrorKind::data, "ce_score: empty sequence");
    }
    const std::size_t h = params.h;
    std::vector<double> u = mean_embedding(params.embed, h, q_seq);
    std::vector<double> v = mean_embedding(params.embed, h, p_seq);

    std::vector<double> features(params.feature_dim());
    for (std::size_t d = 0; d < h; ++d) {
        features[d] = u[d];
        features[h + d] = v[d];
        features[2 * h + d] = u[d] * v[d];
    }
    features[3 * h] = overlap_feature(q_seq, p_seq);

    double score = params.b2[0];
    for (std::size_t j = 0; j < params.d_hid; ++j) {
        double pre = params.b1[j];
        for (std::size_t i = 0; i < features.size(); ++i) {
            pre += features[i] * params.w1[i * params.d_hid + j];
        }
        score += params.w2[j] * std::tanh(pre);
    }
    return score;
}

DualEncoderLeaves make_leaves(Tape& tape, const DualEncoderParams& params,
                              Gradients& grads) {
    if (grads.tensors.size() != 3) {
        throw Error(ErrorKind::shape, "dual-encoder gradients: expected 3 tensors");
    }
    DualEncoderLeaves leaves;
    leaves.h = params.h;
    leaves.embed = tape.leaf(params.embed.data(), grads.tensors[0].data(), params.embed.size());
    leaves.proj_w = tape.leaf(params.proj_w.data(), grads.tensors[1].data(), params.proj_w.size());
    leaves.proj_b = tape.leaf(params.proj_b.data(), grads.tensors[2].data(), params.proj_b.size());
    return leaves;
}

CrossEncoderLeaves make_leaves(Tape& tape, const CrossEncoderParams& params,
                               Gradients& grads) {
    if (grads.tensors.size() != 5) {
        throw Error(ErrorKind::shape, "cross-encoder gradients: expected 5 tensors");
    }
    CrossEncoderLeaves leaves;
    leaves.h = params.h;
    leaves.d_hid = params.d_hid;
    leaves.embed = tape.leaf(params.embed.data(), grads.tensors[0].data(), params.embed.size());
    leaves.w1 = tape.leaf(params.w1.data(), grads.tensors[1].data(), params.w1.size());
    leaves.b1 = tape.leaf(params.b1.data(), grads.tensors[2].data(), params.b1.size());
    leaves.w2 = tape.leaf(params.w2.data(), grads.tensors[3].data(), params.w2.size());
    leaves.b2 = tape.leaf(params.b2.data(), grads.tensors[4].data(), params.b2.size());
    return leaves;
}

Tape::Node* de_encode_node(Tape& tape, const DualEncoderLeaves& leaves,
                           const TokenSeq& seq) {
    TokenSeq effective = drop_pad(seq);
    if (effective.empty()) {
        throw Error(ErrorKind::data, "de_encode: empty sequence after PAD removal");
    }
    Tape::Node* u = tape.embedding_mean(leaves.embed, effective, leaves.h);
    return tape.linear_wx(leaves.proj_w, u, leaves.proj_b, leaves.h, leaves.h);
}

Tape::Node* de_score_node(Tape& tape, Tape::Node* q_vec, Tape::Node* p_vec) {
    return tape.dot(q_vec, p_vec);
}

Tape::Node* ce_score_node(Tape& tape, const CrossEncoderLeaves& leaves,
                          const TokenSeq& q_seq, const TokenSeq& p_seq) {
    if (q_seq.empty() || p_seq.empty()) {
        throw Error(ErrorKind::data, "ce_score: empty sequence");
    }
    Tape::Node* u = tape.embedding_mean(leaves.embed, q_seq, leaves.h);
    Tape::Node* v = tape.embedding_mean(leaves.embed, p_seq, leaves.h);
    Tape::Node* uv = tape.mul(u, v);
    Tape::Node* ov = tape.constant_scalar(overlap_feature(q_seq, p_seq));
    std::vector<Tape::Node*> parts = {u, v, uv, ov};
    Tape::Node* features = tape.concat(parts);
    Tape::Node* hidden = tape.tanh(
        tape.linear_xtw(leaves.w1, features, leaves.b1, 3 * leaves.h + 1, leaves.d_hid));
    return tape.add(tape.dot(leaves.w2, hidden), leaves.b2);
}

// --- checkpoint container --------------------------------------------------

namespace {

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error(ErrorKind::data, "truncated checkpoint: " + path);
    return v;
}

void write_string(std::ofstream& out, const std::string& s) {
    write_pod<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in, const std::string& path) {
    auto n = read_pod<std::uint64_t>(in, path);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw Error(ErrorKind::data, "truncated checkpoint: " + path);
    return s;
}

std::size_t dim_product(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return n;
}

const CheckpointTensor& find_tensor(const Checkpoint& ckpt, const std::string& name,
                                    const std::vector<std::size_t>& dims) {
    for (const auto& t : ckpt.tensors) {
        if (t.name == name) {
            if (t.dims != dims) {
                throw Error(ErrorKind::data, "checkpoint tensor '" + name + "' has wrong shape");
            }
            return t;
        }
    }
    throw Error(ErrorKind::data, "checkpoint missing tensor '" + name + "'");
}

const CheckpointTensor* find_optional(const Checkpoint& ckpt, const std::string& name) {
    for (const auto& t : ckpt.tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

void append_opt_state(Checkpoint& ckpt, const AdamWState& opt,
                      const std::vector<std::string>& names) {
    if (opt.m.size() != names.size()) {
        throw Error(ErrorKind::shape, "optimizer state tensor count mismatch");
    }
    ckpt.tensors.push_back({"adamw.step", {1}, {static_cast<double>(opt.step)}});
    ckpt.tensors.push_back({"adamw.weight_decay", {1}, {opt.config.weight_decay}});
    for (std::size_t i = 0; i < names.size(); ++i) {
        ckpt.tensors.push_back({"adamw.m." + names[i], {opt.m[i].size()}, opt.m[i]});
        ckpt.tensors.push_back({"adamw.v." + names[i], {opt.v[i].size()}, opt.v[i]});
    }
}

void restore_opt_state(const Checkpoint& ckpt, AdamWState* opt,
                       const std::vector<std::string>& names,
                       const std::vector<std::vector<double>*>& params) {
    if (opt == nullptr) return;
    const CheckpointTensor* step = find_optional(ckpt, "adamw.step");
    if (step == nullptr) return; // checkpoint saved without optimizer state
    *opt = AdamWState::like(params);
    opt->step = static_cast<std::size_t>(step->data.at(0));
    if (const auto* wd = find_optional(ckpt, "adamw.weight_decay")) {
        opt->config.weight_decay = wd->data.at(0);
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
        opt->m[i] = find_tensor(ckpt, "adamw.m." + names[i], {params[i]->size()}).data;
        opt->v[i] = find_tensor(ckpt, "adamw.v." + names[i], {params[i]->size()}).data;
    }
}

} // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::data, "cannot open for writing: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_pod<std::uint32_t>(out, kCheckpointVersion);
    write_string(out, ckpt.kind);
    write_string(out, ckpt.config_json);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        write_string(out, t.name);
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
        for (std::size_t d : t.dims) write_pod<std::uint64_t>(out, d);
        if (t.data.size() != dim_product(t.dims)) {
            throw Error(ErrorKind::shape, "checkpoint tensor '" + t.name + "' dims/data mismatch");
        }
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!out) throw Error(ErrorKind::data, "write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::data, "cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw Error(ErrorKind::data, "not a checkpoint file: " + path);
    }
    auto version = read_pod<std::uint32_t>(in, path);
    if (version != kCheckpointVersion) {
        throw Error(ErrorKind::data, "unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.kind = read_string(in, path);
    ckpt.config_json = read_string(in, path);
    auto n_tensors = read_pod<std::uint32_t>(in, path);
    ckpt.tensors.reserve(n_tensors);
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        CheckpointTensor t;
        t.name = read_string(in, path);
        auto ndim = read_pod<std::uint32_t>(in, path);
        t.dims.reserve(ndim);
        for (std::uint32_t d = 0; d < ndim; ++d) {
            t.dims.push_back(static_cast<std::size_t>(read_pod<std::uint64_t>(in, path)));
        }
        t.data.resize(dim_product(t.dims));
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!in) throw Error(ErrorKind::data, "truncated checkpoint: " + path);
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

Checkpoint to_checkpoint(const DualEncoderParams& params, const std::string& config_json,
                         const AdamWState* opt_state) {
    Checkpoint ckpt;
    ckpt.kind = "dual_encoder";
    ckpt.config_json = config_json;
    ckpt.tensors.push_back({"embed", {params.vocab_size, params.h}, params.embed});
    ckpt.tensors.push_back({"proj_w", {params.h, params.h}, params.proj_w});
    ckpt.tensors.push_back({"proj_b", {params.h}, params.proj_b});
    if (opt_state) append_opt_state(ckpt, *opt_state, {"embed", "proj_w", "proj_b"});
    return ckpt;
}

Checkpoint to_checkpoint(const CrossEncoderParams& params, const std::string& config_json,
                         const AdamWState* opt_state) {
    Checkpoint ckpt;
    ckpt.kind = "cross_encoder";
    ckpt.config_json = config_json;
    ckpt.tensors.push_back({"embed", {params.vocab_size, params.h}, params.embed});
    ckpt.tensors.push_back({"w1", {3 * params.h + 1, params.d_hid}, params.w1});
    ckpt.tensors.push_back({"b1", {params.d_hid}, params.b1});
    ckpt.tensors.push_back({"w2", {params.d_hid}, params.w2});
    ckpt.tensors.push_back({"b2", {1}, params.b2});
    if (opt_state) append_opt_state(ckpt, *opt_state, {"embed", "w1", "b1", "w2", "b2"});
    return ckpt;
}

DualEncoderParams dual_from_checkpoint(const Checkpoint& ckpt, AdamWState* opt_state) {
    if (ckpt.kind != "dual_encoder") {
        throw Error(ErrorKind::data, "expected dual_encoder checkpoint, got '" + ckpt.kind + "'");
    }
    const auto* embed = find_optional(ckpt, "embed");
    if (embed == nullptr || embed->dims.size() != 2) {
        throw Error(ErrorKind::data, "checkpoint missing 2-d tensor 'embed'");
    }
    DualEncoderParams p;
    p.vocab_size = embed->dims[0];
    p.h = embed->dims[1];
    p.embed = embed->data;
    p.proj_w = find_tensor(ckpt, "proj_w", {p.h, p.h}).data;
    p.proj_b = find_tensor(ckpt, "proj_b", {p.h}).data;
    restore_opt_state(ckpt, opt_state, {"embed", "proj_w", "proj_b"}, p.tensors());
    return p;
}

CrossEncoderParams cross_from_checkpoint(const Checkpoint& ckpt, AdamWState* opt_state) {
    if (ckpt.kind != "cross_encoder") {
        throw Error(ErrorKind::data, "expected cross_encoder checkpoint, got '" + ckpt.kind + "'");
    }
    const auto* embed = find_optional(ckpt, "embed");
    if (embed == nullptr || embed->dims.size() != 2) {
        throw Error(ErrorKind::data, "checkpoint missing 2-d tensor 'embed'");
    }
    const auto* w2 = find_optional(ckpt, "w2");
    if (w2 == nullptr || w2->dims.size() != 1) {
        throw Error(ErrorKind::data, "checkpoint missing 1-d tensor 'w2'");
    }
    CrossEncoderParams p;
    p.vocab_size = embed->dims[0];
    p.h = embed->dims[1];
    p.d_hid = w2->dims[0];
    p.embed = embed->data;
    p.w1 = find_tensor(ckpt, "w1", {3 * p.h + 1, p.d_hid}).data;
    p.b1 = find_tensor(ckpt, "b1", {p.d_hid}).data;
    p.w2 = w2->data;
    p.b2 = find_tensor(ckpt, "b2", {1}).data;
    restore_opt_state(ckpt, opt_state, {"embed", "w1", "b1", "w2", "b2"}, p.tensors());
    return p;
}

} // namespace dkd
