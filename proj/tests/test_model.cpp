#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "dkd/error.hpp"
#include "dkd/model.hpp"
#include "dkd/rng.hpp"

using namespace dkd;

namespace {

DualEncoderParams tiny_dual() {
    // 8-token vocab, h=2, identity projection.
    DualEncoderParams p;
    p.vocab_size = 8;
    p.h = 2;
    p.embed.assign(16, 0.0);
    p.proj_w = {1, 0, 0, 1};
    p.proj_b = {0, 0};
    return p;
}

TokenSeq random_seq(Rng& rng, std::size_t vocab, std::size_t max_len) {
    TokenSeq seq;
    for (std::size_t i = 0; i < 1 + rng.below(max_len); ++i) {
        seq.push_back(static_cast<TokenId>(5 + rng.below(vocab - 5)));
    }
    return seq;
}

} // namespace

TEST_CASE("de_encode means embeddings then projects") {
    DualEncoderParams p = tiny_dual();
    p.embed[5 * 2 + 0] = 1.0; // token 5 -> [1, 0]
    p.embed[6 * 2 + 1] = 2.0; // token 6 -> [0, 2]
    auto v = de_encode(p, {5, 6});
    CHECK(v[0] == doctest::Approx(0.5));
    CHECK(v[1] == doctest::Approx(1.0));

    auto single = de_encode(p, {6});
    CHECK(single[0] == doctest::Approx(0.0));
    CHECK(single[1] == doctest::Approx(2.0));
}

TEST_CASE("de_encode with zero table returns the bias") {
    DualEncoderParams p = tiny_dual();
    p.proj_b = {0.25, -1.5};
    auto v = de_encode(p, {5, 6, 7});
    CHECK(v[0] == doctest::Approx(0.25));
    CHECK(v[1] == doctest::Approx(-1.5));
}

TEST_CASE("de_encode ignores PAD and rejects all-PAD input") {
    DualEncoderParams p = tiny_dual();
    p.embed[5 * 2 + 0] = 1.0;
    auto with_pad = de_encode(p, {5, kPadId, kPadId});
    CHECK(with_pad[0] == doctest::Approx(1.0));
    CHECK_THROWS_AS(de_encode(p, {kPadId, kPadId}), Error);
    CHECK_THROWS_AS(de_encode(p, {}), Error);
}

TEST_CASE("de_score is a plain inner product") {
    CHECK(de_score(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}) ==
          doctest::Approx(0.5));
    CHECK(de_score(std::vector<double>{3, 4}, std::vector<double>{3, 4}) ==
          doctest::Approx(25.0));
    CHECK(de_score(std::vector<double>{1, 0}, std::vector<double>{0, 7}) ==
          doctest::Approx(0.0));
    CHECK_THROWS_AS(de_score(std::vector<double>{1}, std::vector<double>{1, 2}), Error);
}

TEST_CASE("de_score is symmetric") {
    Rng rng(17);
    for (int iter = 0; iter < 100; ++iter) {
        std::vector<double> a(4), b(4);
        for (auto& x : a) x = rng.real(-2, 2);
        for (auto& x : b) x = rng.real(-2, 2);
        CHECK(de_score(a, b) == doctest::Approx(de_score(b, a)).epsilon(1e-15));
    }
}

TEST_CASE("softmax closed forms") {
    Distribution half = softmax_over_candidates(std::vector<double>{0.0, 0.0});
    CHECK(half.p[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(half.p[1] == doctest::Approx(0.5).epsilon(1e-12));

    Distribution quarters =
        softmax_over_candidates(std::vector<double>{std::log(3.0), 0.0});
    CHECK(quarters.p[0] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(quarters.p[1] == doctest::Approx(0.25).epsilon(1e-12));

    Distribution one = softmax_over_candidates(std::vector<double>{123.0});
    CHECK(one.p[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("softmax rejects non-finite scores and validates") {
    CHECK_THROWS_AS(
        softmax_over_candidates(std::vector<double>{1.0, std::nan("")}), Error);
    CHECK_THROWS_AS(softmax_over_candidates(std::vector<double>{
                        1.0, std::numeric_limits<double>::infinity()}),
                    Error);
    Distribution bad;
    bad.p = {0.5, 0.6};
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("softmax sums to one and is shift invariant") {
    Rng rng(31);
    for (int iter = 0; iter < 1000; ++iter) {
        std::size_t n = 1 + rng.below(30);
        std::vector<double> scores(n);
        for (auto& s : scores) s = rng.real(-20, 20);
        Distribution d = softmax_over_candidates(scores);
        d.validate();
        double sum = 0.0;
        for (double x : d.p) sum += x;
        CHECK(std::abs(sum - 1.0) <= 1e-9);

        const double shift = rng.real(-30, 30);
        std::vector<double> shifted = scores;
        for (auto& s : shifted) s += shift;
        Distribution d2 = softmax_over_candidates(shifted);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(std::abs(d.p[i] - d2.p[i]) <= 1e-12);
        }
    }
}

TEST_CASE("ce_score zero network returns bias2") {
    CrossEncoderParams p;
    p.vocab_size = 8;
    p.h = 2;
    p.d_hid = 3;
    p.embed.assign(16, 0.0);
    p.w1.assign((3 * 2 + 1) * 3, 0.0);
    p.b1.assign(3, 0.0);
    p.w2.assign(3, 0.0);
    p.b2 = {0.0};
    CHECK(ce_score(p, {5, 6}, {7}) == doctest::Approx(0.0));
    p.b2 = {1.0};
    CHECK(ce_score(p, {5, 6}, {5, 6}) == doctest::Approx(1.0));
}

TEST_CASE("ce_score matches a longhand single-hidden-unit evaluation") {
    // 2 usable tokens, h=1, d_hid=1; every weight hand-set.
    CrossEncoderParams p;
    p.vocab_size = 7;
    p.h = 1;
    p.d_hid = 1;
    p.embed.assign(7, 0.0);
    p.embed[5] = 0.3;
    p.embed[6] = -0.2;
    p.w1 = {0.1, 0.2, 0.4, -0.5}; // features: u, v, u*v, overlap
    p.b1 = {0.05};
    p.w2 = {2.0};
    p.b2 = {-0.1};

    // q = [5, 6], passage = [6, 6, 5]
    const double u = (0.3 + -0.2) / 2.0;
    const double v = (-0.2 + -0.2 + 0.3) / 3.0;
    const double overlap = 2.0 / 2.0; // both query tokens appear in the passage
    const double pre = 0.1 * u + 0.2 * v + 0.4 * (u * v) + (-0.5) * overlap + 0.05;
    const double expected = 2.0 * std::tanh(pre) - 0.1;
    CHECK(ce_score(p, {5, 6}, {6, 6, 5}) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("ce_score is invariant to token permutations") {
    CrossEncoderParams p = init_cross_params(40, 8, 6, 5);
    Rng rng(77);
    for (int iter = 0; iter < 50; ++iter) {
        TokenSeq q = random_seq(rng, 40, 10);
        TokenSeq pas = random_seq(rng, 40, 20);
        double base = ce_score(p, q, pas);
        shuffle(q, rng);
        shuffle(pas, rng);
        CHECK(ce_score(p, q, pas) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("overlap feature counts the token multiset intersection") {
    CHECK(overlap_feature({5, 5, 6}, {5, 7}) == doctest::Approx(1.0 / 3.0));
    CHECK(overlap_feature({5, 5}, {5, 5, 5}) == doctest::Approx(1.0));
    CHECK(overlap_feature({5, 6}, {7, 8}) == doctest::Approx(0.0));
}

TEST_CASE("init_params is deterministic, bounded, zero-biased") {
    DualEncoderParams a = init_dual_params(30, 4, 9);
    DualEncoderParams b = init_dual_params(30, 4, 9);
    CHECK(a.embed == b.embed);
    CHECK(a.proj_w == b.proj_w);
    for (double x : a.embed) CHECK(std::abs(x) <= 0.05);
    for (double x : a.proj_w) CHECK(std::abs(x) <= 0.05);
    for (double x : a.proj_b) CHECK(x == 0.0);

    CrossEncoderParams c = init_cross_params(30, 4, 6, 9);
    CrossEncoderParams d = init_cross_params(30, 4, 6, 9);
    CHECK(c.w1 == d.w1);
    for (double x : c.w1) CHECK(std::abs(x) <= 0.05);
    for (double x : c.b1) CHECK(x == 0.0);
    CHECK(c.b2[0] == 0.0);

    DualEncoderParams e = init_dual_params(30, 4, 10);
    CHECK(a.embed != e.embed);
}

TEST_CASE("graph scoring matches the plain path bit for bit") {
    DualEncoderParams dual = init_dual_params(50, 6, 21);
    CrossEncoderParams cross = init_cross_params(50, 6, 5, 22);
    Rng rng(23);
    for (int iter = 0; iter < 30; ++iter) {
        TokenSeq q = random_seq(rng, 50, 8);
        TokenSeq pas = random_seq(rng, 50, 16);

        Tape tape;
        Gradients dg = Gradients::zeros_like(dual.tensors());
        DualEncoderLeaves dl = make_leaves(tape, dual, dg);
        Tape::Node* qv = de_encode_node(tape, dl, q);
        Tape::Node* pv = de_encode_node(tape, dl, pas);
        CHECK(de_score_node(tape, qv, pv)->scalar() ==
              doctest::Approx(de_score(de_encode(dual, q), de_encode(dual, pas)))
                  .epsilon(1e-15));

        Gradients cg = Gradients::zeros_like(cross.tensors());
        CrossEncoderLeaves cl = make_leaves(tape, cross, cg);
        CHECK(ce_score_node(tape, cl, q, pas)->scalar() ==
              doctest::Approx(ce_score(cross, q, pas)).epsilon(1e-15));
    }
}

TEST_CASE("backward rejects non-scalar roots") {
    DualEncoderParams dual = init_dual_params(10, 3, 1);
    Tape tape;
    Gradients g = Gradients::zeros_like(dual.tensors());
    DualEncoderLeaves leaves = make_leaves(tape, dual, g);
    Tape::Node* vec = de_encode_node(tape, leaves, {5, 6});
    try {
        tape.backward(vec);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::usage);
    }
}

TEST_CASE("checkpoints round-trip params, config and optimizer state") {
    namespace fs = std::filesystem;
    auto path = fs::temp_directory_path() / "dkd_model_ckpt.bin";

    DualEncoderParams dual = init_dual_params(20, 4, 3);
    AdamWState opt = AdamWState::like(dual.tensors());
    opt.step = 17;
    opt.m[0][5] = 0.25;
    opt.v[2][1] = 0.5;
    write_checkpoint(path.string(), to_checkpoint(dual, "{\"h\":4}", &opt));

    AdamWState opt_back;
    DualEncoderParams back = dual_from_checkpoint(read_checkpoint(path.string()), &opt_back);
    CHECK(back.vocab_size == 20);
    CHECK(back.h == 4);
    CHECK(back.embed == dual.embed);
    CHECK(back.proj_w == dual.proj_w);
    CHECK(opt_back.step == 17);
    CHECK(opt_back.m[0][5] == 0.25);
    CHECK(opt_back.v[2][1] == 0.5);
    CHECK(read_checkpoint(path.string()).config_json == "{\"h\":4}");

    CrossEncoderParams cross = init_cross_params(20, 4, 6, 3);
    write_checkpoint(path.string(), to_checkpoint(cross, "{}"));
    CrossEncoderParams cross_back = cross_from_checkpoint(read_checkpoint(path.string()));
    CHECK(cross_back.w1 == cross.w1);
    CHECK(cross_back.d_hid == 6);

    // kind mismatch rejected
    CHECK_THROWS_AS(dual_from_checkpoint(read_checkpoint(path.string())), Error);

    // shape tampering rejected
    Checkpoint broken = to_checkpoint(dual, "{}");
    broken.tensors[1].dims = {3, 3};
    broken.tensors[1].data.assign(9, 0.0);
    write_checkpoint(path.string(), broken);
    CHECK_THROWS_AS(dual_from_checkpoint(read_checkpoint(path.string())), Error);
    fs::remove(path);
}
