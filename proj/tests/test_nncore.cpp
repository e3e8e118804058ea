#include <doctest.h>

#include <cmath>
#include <cstring>

#include "mgeo/nn/checkpoint.hpp"
#include "mgeo/nn/gradcheck.hpp"
#include "mgeo/nn/optimizer.hpp"
#include "mgeo/nn/tape.hpp"
#include "mgeo/nn/transformer.hpp"
#include "mgeo/rng.hpp"
#include "testutil.hpp"

using namespace mgeo;
using namespace mgeo::nn;

namespace {

Mat random_mat(Rng& rng, int r, int c, double scale = 1.0) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(-scale, scale);
    return m;
}

std::vector<unsigned char> offdiag(int n) {
    std::vector<unsigned char> mask(static_cast<size_t>(n) * n, 1);
    for (int i = 0; i < n; ++i) mask[static_cast<size_t>(i) * n + i] = 0;
    return mask;
}

}  // namespace

TEST_CASE("parameter initialization depends only on seed and name") {
    ParameterStore a(42), b(42), c(43);
    a.add("alpha", {3, 4});
    a.add("beta", {2, 2});
    b.add("beta", {2, 2});  // reversed creation order
    b.add("alpha", {3, 4});
    c.add("alpha", {3, 4});

    CHECK(a.at("alpha").values == b.at("alpha").values);
    CHECK(a.at("beta").values == b.at("beta").values);
    CHECK(a.at("alpha").values != c.at("alpha").values);

    // Truncated-normal init: |x| <= 2 std, not all zero.
    bool nonzero = false;
    for (Real v : a.at("alpha").values) {
        CHECK(std::fabs(v) <= 2.0 * 0.02 + 1e-12);
        nonzero |= v != 0.0;
    }
    CHECK(nonzero);

    ParameterStore d(1);
    d.add("zeros", {1, 4}, Init::ZEROS);
    d.add("ones", {1, 4}, Init::ONES);
    for (Real v : d.at("zeros").values) CHECK(v == 0.0);
    for (Real v : d.at("ones").values) CHECK(v == 1.0);

    CHECK_THROWS_AS(d.add("zeros", {1, 1}), NnError);
    CHECK_THROWS_AS(d.at("missing"), NnError);
}

TEST_CASE("cross entropy against a directly coded log-sum-exp") {
    Tape tape;

    // Uniform logits over V classes -> ln V.
    Mat uniform = Mat::Constant(1, 11, 0.37);
    CHECK(tape.val(tape.ce_loss(tape.constant(uniform), 3))(0, 0) ==
          doctest::Approx(std::log(11.0)).epsilon(1e-12));

    // One hot logit: loss -> 0 as the magnitude grows.
    double prev = 1e9;
    for (double mag : {2.0, 8.0, 32.0}) {
        Mat z = Mat::Zero(1, 5);
        z(0, 2) = mag;
        double loss = tape.val(tape.ce_loss(tape.constant(z), 2))(0, 0);
        CHECK(loss < prev);
        prev = loss;
    }
    CHECK(prev < 1e-10);

    // Random 7-class instances vs independent evaluation.
    Rng rng(11);
    for (int rep = 0; rep < 100; ++rep) {
        Mat z = random_mat(rng, 1, 7, 4.0);
        int target = rng.index(7);
        double got = tape.val(tape.ce_loss(tape.constant(z), target))(0, 0);

        double mx = z.maxCoeff();
        double sum = 0.0;
        for (int i = 0; i < 7; ++i) sum += std::exp(z(0, i) - mx);
        double want = -(z(0, target) - mx - std::log(sum));
        CHECK(std::fabs(got - want) <= 1e-12);
    }

    CHECK_THROWS_AS(tape.ce_loss(tape.constant(Mat::Zero(1, 5)), 5), NnError);
    CHECK_THROWS_AS(tape.ce_loss(tape.constant(Mat::Zero(1, 5)), -1), NnError);
}

TEST_CASE("plain kl divergence") {
    Eigen::RowVectorXd p(2), q(2);
    p << 0.5, 0.5;
    q << 0.5, 0.5;
    CHECK(kl_divergence(p, q) == doctest::Approx(0.0).epsilon(1e-15));

    q << 0.9, 0.1;
    double hand = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
    CHECK(kl_divergence(p, q) == doctest::Approx(hand).epsilon(1e-12));
    CHECK(kl_divergence(p, q) == doctest::Approx(0.5108).epsilon(1e-4));

    Rng rng(12);
    for (int rep = 0; rep < 200; ++rep) {
        int n = 2 + rng.index(6);
        Eigen::RowVectorXd a(n), b(n);
        double sa = 0, sb = 0;
        for (int i = 0; i < n; ++i) {
            a(i) = rng.uniform(0.05, 1.0);
            b(i) = rng.uniform(0.05, 1.0);
            sa += a(i);
            sb += b(i);
        }
        a /= sa;
        b /= sb;
        CHECK(kl_divergence(a, b) >= -1e-12);
    }

    Eigen::RowVectorXd bad(2);
    bad << 0.9, 0.2;  // sums to 1.1
    CHECK_THROWS_AS(kl_divergence(p, bad), NnError);
    Eigen::RowVectorXd zero(2);
    zero << 1.0, 0.0;
    CHECK_THROWS_AS(kl_divergence(p, zero), NnError);
    Eigen::RowVectorXd three = Eigen::RowVectorXd::Constant(3, 1.0 / 3);
    CHECK_THROWS_AS(kl_divergence(p, three), NnError);
}

TEST_CASE("softmax rows: normalization, positivity, masked equals shortened") {
    Tape tape;
    Rng rng(13);
    Mat x = random_mat(rng, 4, 6, 3.0);

    int soft = tape.softmax_rows(tape.constant(x));
    const Mat& sv = tape.val(soft);
    for (int i = 0; i < sv.rows(); ++i) {
        CHECK(sv.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
        for (int j = 0; j < sv.cols(); ++j) CHECK(sv(i, j) > 0.0);
    }

    // Masking keys 4 and 5 reproduces the softmax of the first four columns.
    std::vector<unsigned char> mask{1, 1, 1, 1, 0, 0};
    int masked = tape.softmax_rows(tape.constant(x), mask);
    int shortened = tape.softmax_rows(tape.constant(x.leftCols(4)));
    const Mat& mv = tape.val(masked);
    const Mat& sh = tape.val(shortened);
    for (int i = 0; i < mv.rows(); ++i) {
        for (int j = 0; j < 4; ++j) CHECK(mv(i, j) == doctest::Approx(sh(i, j)).epsilon(1e-9));
        CHECK(mv(i, 4) <= 1e-12);
        CHECK(mv(i, 5) <= 1e-12);
    }
}

TEST_CASE("transformer with zero layers returns its input") {
    ParameterStore ps(7);
    TransformerConfig cfg{0, 8, 2, 2, 16};
    add_transformer_params(ps, "enc", cfg);
    Tape tape;
    Rng rng(14);
    Mat x = random_mat(rng, 3, 8);
    int out = transformer_encode(tape, ps, "enc", cfg, tape.constant(x));
    CHECK(tape.val(out) == x);
}

TEST_CASE("transformer permutation equivariance without positional signal") {
    ParameterStore ps(8);
    TransformerConfig cfg{2, 8, 2, 2, 16};
    add_transformer_params(ps, "enc", cfg);
    Rng rng(15);
    Mat x = random_mat(rng, 4, 8);

    Tape t1;
    Mat base = t1.val(transformer_encode(t1, ps, "enc", cfg, t1.constant(x)));

    Mat perm = x;
    perm.row(1).swap(perm.row(3));
    Tape t2;
    Mat swapped = t2.val(transformer_encode(t2, ps, "enc", cfg, t2.constant(perm)));

    CHECK((base.row(0) - swapped.row(0)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((base.row(1) - swapped.row(3)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((base.row(2) - swapped.row(2)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((base.row(3) - swapped.row(1)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("transformer masked keys match a physically shortened sequence") {
    ParameterStore ps(9);
    TransformerConfig cfg{2, 8, 2, 2, 16};
    add_transformer_params(ps, "enc", cfg);
    Rng rng(16);
    Mat x = random_mat(rng, 5, 8);

    Tape t1;
    std::vector<unsigned char> mask{1, 1, 1, 0, 0};
    Mat full = t1.val(transformer_encode(t1, ps, "enc", cfg, t1.constant(x), mask));

    Tape t2;
    Mat shortened = t2.val(
        transformer_encode(t2, ps, "enc", cfg, t2.constant(x.topRows(3)), {1, 1, 1}));

    CHECK((full.topRows(3) - shortened).cwiseAbs().maxCoeff() <= 1e-9);

    CHECK_THROWS_AS(
        transformer_encode(t2, ps, "enc", cfg, t2.constant(random_mat(rng, 2, 4))), NnError);
    CHECK_THROWS_AS(transformer_encode(t2, ps, "enc", cfg, t2.constant(x), {1, 1}), NnError);
}

TEST_CASE("gradient check: quadratic loss is near machine precision") {
    ParameterStore ps(20);
    ps.add("w", {1, 8});
    auto loss = [](ParameterStore& s) {
        Tape tape;
        int w = tape.param(s, "w");
        return tape.backward(tape.matmul_nt(w, w));
    };
    auto report = grad_check(ps, loss, 1e-5);
    CHECK(report.max_rel_err < 1e-9);
    CHECK(report.checked == 8);
}

TEST_CASE("gradient check: transformer layer with cross entropy") {
    ParameterStore ps(21);
    TransformerConfig cfg{1, 8, 2, 2, 16};
    add_transformer_params(ps, "enc", cfg);
    ps.add("head", {8, 13});
    Rng rng(22);
    Mat x = random_mat(rng, 3, 8);
    std::vector<unsigned char> mask{1, 1, 0};

    auto loss = [&](ParameterStore& s) {
        Tape tape;
        int enc = transformer_encode(tape, s, "enc", cfg, tape.constant(x), mask);
        int cls = tape.slice_rows(enc, 0, 1);
        int logits = tape.matmul(cls, tape.param(s, "head"));
        return tape.backward(tape.ce_loss(logits, 5));
    };
    auto report = grad_check(ps, loss, 1e-5);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("gradient check: kl of softmax rows over normalized dot products") {
    ParameterStore ps(23);
    ps.add("latent", {3, 4}, Init::TRUNC_NORMAL, 0.5);
    Rng rng(24);
    Mat target = random_mat(rng, 3, 3);
    auto mask = offdiag(3);

    auto loss = [&](ParameterStore& s) {
        Tape tape;
        int z = tape.l2_normalize_rows(tape.param(s, "latent"));
        int scores = tape.matmul_nt(z, z);
        return tape.backward(tape.kl_softmax_rows(target, scores, mask));
    };
    auto report = grad_check(ps, loss, 1e-5);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("gradient check: cosine similarity and gelu") {
    ParameterStore ps(25);
    ps.add("u", {1, 6}, Init::TRUNC_NORMAL, 0.5);
    ps.add("v", {1, 6}, Init::TRUNC_NORMAL, 0.5);
    auto loss = [](ParameterStore& s) {
        Tape tape;
        int c = tape.cosine(tape.gelu(tape.param(s, "u")), tape.param(s, "v"));
        return tape.backward(c);
    };
    auto report = grad_check(ps, loss, 1e-5);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("adamw: fixed point, descent and convergence") {
    // Zero gradients, zero decay: parameters unchanged.
    {
        ParameterStore ps(30);
        ps.add("w", {2, 3});
        auto before = ps.at("w").values;
        ps.at("w").ensure_grad();
        ps.at("w").zero_grad();
        AdamWConfig cfg;
        cfg.weight_decay = 0.0;
        adamw_step(ps, cfg);
        CHECK(ps.at("w").values == before);
    }

    // One step on f(w) = w^2 at w=1 with lr 0.1 decreases w.
    {
        ParameterStore ps(31);
        ps.add("w", {2, 1}, Init::ZEROS);  // 2 rows so decay applies; second row idle
        ps.at("w").values[0] = 1.0;
        Tape tape;
        int w = tape.param(ps, "w");
        tape.backward(tape.matmul_nt(tape.slice_rows(w, 0, 1), tape.slice_rows(w, 0, 1)));
        AdamWConfig cfg;
        cfg.lr = 0.1;
        cfg.weight_decay = 0.0;
        adamw_step(ps, cfg);
        CHECK(ps.at("w").values[0] < 1.0);
        CHECK(ps.at("w").values[0] > 0.7);
    }

    // 200 steps on a 2-d convex bowl drive the norm below 1e-2.
    {
        ParameterStore ps(32);
        ps.add("w", {2, 2}, Init::ZEROS);
        ps.at("w").values = {0.7, -0.4, 0.3, 0.9};
        AdamWConfig cfg;
        cfg.lr = 0.05;
        cfg.weight_decay = 0.0;
        for (int step = 0; step < 200; ++step) {
            ps.zero_grads();
            Tape tape;
            int w = tape.param(ps, "w");
            int flat = tape.concat_cols({tape.slice_rows(w, 0, 1), tape.slice_rows(w, 1, 1)});
            tape.backward(tape.matmul_nt(flat, flat));
            adamw_step(ps, cfg);
        }
        double norm = 0;
        for (Real v : ps.at("w").values) norm += v * v;
        CHECK(std::sqrt(norm) < 1e-2);
    }
}

TEST_CASE("adamw: missing gradients error and 1-row decay exemption") {
    ParameterStore ps(33);
    ps.add("w", {2, 2});
    AdamWConfig defaults;
    CHECK_THROWS_WITH_AS(adamw_step(ps, defaults), doctest::Contains("missing gradients"),
                         NnError);

    ParameterStore ps2(34);
    ps2.add("bias", {1, 4}, Init::ONES);
    ps2.add("weight", {2, 4}, Init::ONES);
    for (const char* n : {"bias", "weight"}) {
        ps2.at(n).ensure_grad();
        ps2.at(n).zero_grad();
    }
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.5;
    adamw_step(ps2, cfg);
    for (Real v : ps2.at("bias").values) CHECK(v == 1.0);
    for (Real v : ps2.at("weight").values) CHECK(v == doctest::Approx(0.95).epsilon(1e-12));
}

TEST_CASE("adamw: gradient clipping caps the global step") {
    ParameterStore ps(35);
    ps.add("w", {2, 1}, Init::ZEROS);
    ps.at("w").ensure_grad();
    ps.at("w").grad = {300.0, 400.0};  // global norm 500
    AdamWConfig cfg;
    cfg.lr = 1.0;
    cfg.weight_decay = 0.0;
    cfg.clip_norm = 5.0;
    adamw_step(ps, cfg);
    // Clip scales both grads by 0.01; Adam then normalizes per-element, so the
    // direction must match the (clipped) gradient sign and be finite.
    CHECK(std::isfinite(ps.at("w").values[0]));
    CHECK(ps.at("w").values[0] < 0.0);
    CHECK(ps.at("w").values[1] < 0.0);
}

TEST_CASE("training updates are bitwise deterministic") {
    auto run = [] {
        ParameterStore ps(77);
        ps.add("w", {3, 5});
        AdamWConfig cfg;
        for (int step = 0; step < 5; ++step) {
            ps.zero_grads();
            Tape tape;
            int w = tape.param(ps, "w");
            int sq = tape.matmul_nt(w, w);  // 3x3
            int row = tape.slice_rows(sq, 0, 1);
            tape.backward(tape.ce_loss(row, 1));
            adamw_step(ps, cfg);
        }
        return ps.at("w").values;
    };
    auto a = run();
    auto b = run();
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(Real)) == 0);
}

TEST_CASE("checkpoint round trip with metadata") {
    testutil::TempDir dir;
    std::string path = dir.file("model.ckpt");

    ParameterStore ps(40);
    ps.add("emb", {4, 3});
    ps.add("bias", {1, 3}, Init::ZEROS);
    ps.at("bias").values = {0.25, -0.5, 1.75};
    std::map<std::string, std::string> meta{{"stage", "unit"}, {"config_hash", "abc123"}};
    save_checkpoint(ps, path, meta);

    ParameterStore fresh(41);  // different seed: loaded values must win
    fresh.add("emb", {4, 3});
    fresh.add("bias", {1, 3});
    auto got = load_checkpoint(fresh, path);
    CHECK(got == meta);
    CHECK(fresh.at("emb").values == ps.at("emb").values);
    CHECK(fresh.at("bias").values == ps.at("bias").values);

    CHECK(read_checkpoint_meta(path) == meta);
}

TEST_CASE("checkpoint loading validates names, shapes and magic") {
    testutil::TempDir dir;
    std::string path = dir.file("model.ckpt");
    ParameterStore ps(42);
    ps.add("emb", {4, 3});
    save_checkpoint(ps, path, {});

    ParameterStore wrong_shape(43);
    wrong_shape.add("emb", {3, 4});
    CHECK_THROWS_WITH_AS(load_checkpoint(wrong_shape, path), doctest::Contains("shape mismatch"),
                         NnError);

    ParameterStore extra(44);
    extra.add("emb", {4, 3});
    extra.add("other", {1, 2});
    CHECK_THROWS_WITH_AS(load_checkpoint(extra, path),
                         doctest::Contains("parameter count mismatch"), NnError);

    ParameterStore renamed(45);
    renamed.add("embx", {4, 3});
    CHECK_THROWS_WITH_AS(load_checkpoint(renamed, path), doctest::Contains("unknown parameter"),
                         NnError);

    std::string garbage = dir.file("garbage.ckpt");
    testutil::write_file(garbage, "definitely not a checkpoint");
    ParameterStore any(46);
    any.add("emb", {4, 3});
    CHECK_THROWS_WITH_AS(load_checkpoint(any, garbage), doctest::Contains("not a checkpoint file"),
                         NnError);

    CHECK_THROWS_WITH_AS(load_checkpoint(any, dir.file("absent.ckpt")),
                         doctest::Contains("missing checkpoint"), NnError);
}

TEST_CASE("grad_check subsampling bounds the probe count") {
    ParameterStore ps(47);
    ps.add("w", {10, 10});
    auto loss = [](ParameterStore& s) {
        Tape tape;
        int w = tape.param(s, "w");
        int sq = tape.matmul_nt(w, w);
        int row = tape.slice_rows(sq, 0, 1);
        return tape.backward(tape.slice_cols(row, 0, 1));
    };
    // An even-stride subsample: exact when the cap divides the entry count,
    // otherwise at most one extra probe per stride rounding.
    auto exact = grad_check(ps, loss, 1e-5, 10);
    CHECK(exact.checked == 10);
    CHECK(exact.max_rel_err < 1e-6);

    auto report = grad_check(ps, loss, 1e-5, 7);
    CHECK(report.checked >= 7);
    CHECK(report.checked <= 13);
    CHECK(report.max_rel_err < 1e-6);
}
