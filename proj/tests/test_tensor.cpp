#include <catch2/catch_amalgamated.hpp>

#include "test_helpers.hpp"
#include "tsfg/nn.hpp"
#include "tsfg/tensor.hpp"

using namespace tsfg;
using namespace tsfg::nn;
using tsfg_test::fd_max_rel_err;
using Catch::Approx;

namespace {

Tensor rand_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("softmax basics") {
    auto x = Tensor::from_vector({1, 2}, {0.0, 0.0});
    auto p = softmax_rows(x);
    CHECK(p.data()[0] == Approx(0.5).margin(1e-12));
    CHECK(p.data()[1] == Approx(0.5).margin(1e-12));

    // logits [ln 2, 0] at T = 1 -> [2/3, 1/3]
    auto y = Tensor::from_vector({1, 2}, {std::log(2.0), 0.0});
    auto q = softmax_rows(y, 1.0);
    CHECK(q.data()[0] == Approx(2.0 / 3.0).margin(1e-12));
    CHECK(q.data()[1] == Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("softmax sums to one and stays positive") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = rand_tensor({3, 9}, rng, -30.0, 30.0);
        auto p = softmax_rows(x, rng.uniform(0.05, 3.0));
        for (std::size_t r = 0; r < 3; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < 9; ++c) {
                s += p.at(r, c);
                CHECK(p.at(r, c) > 0.0);
            }
            CHECK(s == Approx(1.0).margin(1e-9));
        }
    }
}

TEST_CASE("temperature monotonicity: higher T lowers the max probability") {
    Rng rng(11);
    auto x = rand_tensor({1, 6}, rng, -1.0, 1.0);
    x.data()[2] = 2.5;  // unique argmax
    double prev = 1.0;
    for (double t : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
        const double pmax = softmax_rows(x, t).data()[2];
        CHECK(pmax < prev);
        prev = pmax;
    }
}

TEST_CASE("layer norm maps a constant row to zeros pre-affine") {
    auto x = Tensor::from_vector({1, 5}, {3.0, 3.0, 3.0, 3.0, 3.0});
    auto gamma = Tensor::full({5}, 1.0);
    auto beta = Tensor::zeros({5});
    auto y = layer_norm_rows(x, gamma, beta);
    for (double v : y.data()) CHECK(v == Approx(0.0).margin(1e-12));
}

TEST_CASE("backward requires a scalar") {
    auto x = Tensor::from_vector({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(x.backward(), TsfgError);
}

TEST_CASE("linearity: d sum(w*x) / dw = x") {
    auto w = Tensor::from_vector({3}, {0.5, -1.0, 2.0}, true);
    auto x = Tensor::from_vector({3}, {3.0, 4.0, 5.0});
    auto loss = sum(mul(w, x));
    loss.backward();
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == Approx(x.data()[i]));
}

TEST_CASE("detached tensors receive no gradient") {
    auto w = Tensor::from_vector({3}, {1.0, 2.0, 3.0}, true);
    auto d = w.detach();
    auto loss = sum(mul(d, w));
    loss.backward();
    CHECK(d.grad()[0] == 0.0);
    CHECK(w.grad()[0] == Approx(1.0));  // only through the non-detached path
}

TEST_CASE("repeated backward accumulates") {
    auto w = Tensor::from_vector({2}, {1.0, 1.0}, true);
    auto loss = sum(w);
    loss.backward();
    loss.backward();
    CHECK(w.grad()[0] == Approx(2.0));
}

TEST_CASE("no-grad mode builds plain tensors") {
    auto w = Tensor::from_vector({2}, {1.0, 2.0}, true);
    NoGradGuard ng;
    auto y = mul_scalar(w, 3.0);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("shape mismatch reports both shapes") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({3, 3});
    CHECK_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("[2x3]") &&
                                     Catch::Matchers::ContainsSubstring("[3x3]"));
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), TsfgError);
}

TEST_CASE("finite differences: elementwise and reduction ops") {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        Rng rng(seed);
        auto a = rand_tensor({3, 4}, rng);
        auto b = rand_tensor({3, 4}, rng, 0.5, 2.0);  // positive: safe divisor / log input
        auto w = rand_tensor({4}, rng);

        CHECK(fd_max_rel_err({a, b}, [&] { return sum(mul(add(a, b), sub(a, b))); }) < 1e-4);
        CHECK(fd_max_rel_err({a, b}, [&] { return mean(div(a, b)); }) < 1e-4);
        CHECK(fd_max_rel_err({a, b}, [&] { return sum(ln(exp_t(mul(a, b)))); }) < 1e-4);
        CHECK(fd_max_rel_err({a, w}, [&] { return mean(add_rowvec(a, w)); }) < 1e-4);
        CHECK(fd_max_rel_err({a}, [&] { return sum(mul_scalar(add_scalar(a, 1.5), -2.0)); }) < 1e-4);
        CHECK(fd_max_rel_err({a}, [&] { return sum(gelu(a)); }) < 1e-4);
        CHECK(fd_max_rel_err({a}, [&] { return mean(sum_rows(mul(a, a))); }) < 1e-4);
        CHECK(fd_max_rel_err({b}, [&] { return sum(ln(b)); }) < 1e-4);
    }
}

TEST_CASE("finite differences: relu, clip and min away from kinks") {
    Rng rng(41);
    auto a = rand_tensor({4, 4}, rng);
    auto b = rand_tensor({4, 4}, rng);
    // keep all entries at least 0.05 from the kink locations
    for (auto& v : a.data())
        if (std::fabs(v) < 0.05) v = 0.1;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::fabs(a.data()[i] - b.data()[i]) < 0.05) b.data()[i] += 0.2;

    CHECK(fd_max_rel_err({a}, [&] { return sum(relu(a)); }) < 1e-4);
    CHECK(fd_max_rel_err({a, b}, [&] { return sum(min_elem(a, b)); }) < 1e-4);
    CHECK(fd_max_rel_err({a}, [&] { return sum(clip(a, -1.0, 1.0)); }) < 1e-4);
}

TEST_CASE("finite differences: shape ops") {
    for (std::uint64_t seed : {10u, 20u, 30u, 40u, 50u}) {
        Rng rng(seed);
        auto a = rand_tensor({3, 4}, rng);
        auto b = rand_tensor({2, 4}, rng);
        auto c = rand_tensor({3, 2}, rng);
        auto w = rand_tensor({4, 3}, rng);

        CHECK(fd_max_rel_err({a, w}, [&] { return sum(matmul(a, w)); }) < 1e-4);
        CHECK(fd_max_rel_err({a}, [&] { return sum(transpose(a)); }) < 1e-4);
        CHECK(fd_max_rel_err({a}, [&] { return sum(mul(reshape(a, {4, 3}), reshape(a, {4, 3}))); }) < 1e-4);
        CHECK(fd_max_rel_err({a, b}, [&] { return sum(mul(concat_rows({a, b}), concat_rows({a, b}))); }) < 1e-4);
        CHECK(fd_max_rel_err({a, c}, [&] { return sum(mul(concat_cols({a, c}), concat_cols({a, c}))); }) < 1e-4);
        CHECK(fd_max_rel_err({a}, [&] { return sum(slice_rows(a, 1, 3)); }) < 1e-4);
        CHECK(fd_max_rel_err({a}, [&] { return sum(mul(slice_cols(a, 1, 3), slice_cols(a, 0, 2))); }) < 1e-4);
    }
}

TEST_CASE("finite differences: lookup and gather") {
    Rng rng(77);
    auto table = rand_tensor({6, 5}, rng);
    const std::vector<std::size_t> ids{0, 3, 3, 5};
    CHECK(fd_max_rel_err({table}, [&] { return sum(embedding_lookup(table, ids)); }) < 1e-4);

    auto m = rand_tensor({4, 5}, rng);
    const std::vector<std::size_t> cols{1, 0, 4, 2};
    CHECK(fd_max_rel_err({m}, [&] { return sum(gather_rows(m, cols)); }) < 1e-4);
}

TEST_CASE("finite differences: softmax family") {
    for (std::uint64_t seed : {3u, 5u, 7u, 9u, 11u}) {
        Rng rng(seed);
        auto x = rand_tensor({3, 6}, rng);
        auto w = rand_tensor({3, 6}, rng);
        Tensor mask = Tensor::zeros({3, 6});
        mask.data()[2] = -1e30;  // one excluded entry
        const double t = rng.uniform(0.3, 2.0);
        const std::vector<std::size_t> picks{1, 4, 3};

        CHECK(fd_max_rel_err({x}, [&] { return sum(mul(w.detach(), softmax_rows(x, t))); }) < 1e-4);
        CHECK(fd_max_rel_err({x}, [&] { return mean(gather_rows(log_softmax_rows(x, t, mask), picks)); }) < 1e-4);
        CHECK(fd_max_rel_err({x}, [&] { return sum(entropy_rows(log_softmax_rows(x, t, mask))); }) < 1e-4);
    }
}

TEST_CASE("finite differences: layer norm with affine parameters") {
    for (std::uint64_t seed : {2u, 4u, 6u, 8u, 10u}) {
        Rng rng(seed);
        auto x = rand_tensor({3, 8}, rng);
        auto gamma = rand_tensor({8}, rng, 0.5, 1.5);
        auto beta = rand_tensor({8}, rng, -0.5, 0.5);
        CHECK(fd_max_rel_err({x, gamma, beta}, [&] {
                  return sum(mul(layer_norm_rows(x, gamma, beta), layer_norm_rows(x, gamma, beta)));
              }) < 1e-4);
    }
}

TEST_CASE("finite differences: dropout with a fixed mask") {
    Rng rng(99);
    auto x = rand_tensor({4, 4}, rng);
    auto build = [&] {
        Rng drop(1234);  // identical mask on every rebuild
        return sum(dropout(x, 0.4, true, drop));
    };
    CHECK(fd_max_rel_err({x}, build) < 1e-4);

    Rng drop(5);
    auto y = dropout(x, 0.3, false, drop);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("dropout preserves the mean in expectation") {
    Rng rng(123);
    auto x = Tensor::full({50, 20}, 1.0);
    double total = 0.0;
    const int reps = 40;
    for (int i = 0; i < reps; ++i) {
        auto y = dropout(x, 0.25, true, rng);
        for (double v : y.data()) total += v;
    }
    total /= static_cast<double>(reps) * static_cast<double>(x.size());
    CHECK(total == Approx(1.0).margin(0.02));
}

TEST_CASE("multi-head attention: single position reduces to projected value") {
    Rng rng(17);
    ParameterSet params;
    MultiHeadAttention attn(params, "attn", 8, 2, rng);
    auto x = rand_tensor({1, 8}, rng);
    auto out = attn(x, x, x, true);
    // attention over one key has weight 1: out = wo(wv(x))
    auto expect = attn.wo()(attn.wv()(x));
    for (std::size_t i = 0; i < 8; ++i) CHECK(out.data()[i] == Approx(expect.data()[i]).margin(1e-12));
}

TEST_CASE("multi-head attention honors the causal mask") {
    Rng rng(19);
    ParameterSet params;
    MultiHeadAttention attn(params, "attn", 8, 2, rng);
    auto x = rand_tensor({4, 8}, rng);
    auto base = attn(x, x, x, true);
    // perturb a later position; earlier outputs must not move
    auto x2 = x.detach();
    x2.data()[3 * 8 + 2] += 1.5;
    auto out = attn(x2, x2, x2, true);
    for (std::size_t c = 0; c < 8; ++c) {
        CHECK(out.at(0, c) == Approx(base.at(0, c)).margin(1e-12));
        CHECK(out.at(1, c) == Approx(base.at(1, c)).margin(1e-12));
        CHECK(out.at(2, c) == Approx(base.at(2, c)).margin(1e-12));
    }
    CHECK(std::fabs(out.at(3, 0) - base.at(3, 0)) > 0.0);
}

TEST_CASE("multi-head attention rejects indivisible head dims") {
    Rng rng(3);
    ParameterSet params;
    CHECK_THROWS_AS(MultiHeadAttention(params, "bad", 10, 4, rng), TsfgError);
}

TEST_CASE("finite differences: multi-head attention, batch of two 3x16 inputs") {
    for (std::uint64_t seed : {21u, 22u, 23u, 24u, 25u}) {
        Rng rng(seed);
        ParameterSet params;
        MultiHeadAttention attn(params, "attn", 16, 4, rng);
        auto x0 = rand_tensor({3, 16}, rng, -1.0, 1.0);
        auto x1 = rand_tensor({3, 16}, rng, -1.0, 1.0);
        std::vector<Tensor> leaves{x0, x1};
        for (const auto& p : params.tensors()) leaves.push_back(p);
        auto build = [&] {
            return add(sum(mul(attn(x0, x0, x0, true), attn(x0, x0, x0, true))),
                       sum(attn(x1, x1, x1, true)));
        };
        CHECK(fd_max_rel_err(leaves, build, 1e-4, 24) < 1e-4);
    }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParameterSet params;
    Rng rng(1);
    Tensor w = params.add("w", Tensor::randn({4}, rng));
    const auto before = w.data();
    w.zero_grad();
    Adam opt(AdamConfig{1e-2, 0.9, 0.999, 1e-8});
    opt.step(params);
    for (std::size_t i = 0; i < 4; ++i) CHECK(w.data()[i] == Approx(before[i]).margin(1e-15));
}

TEST_CASE("adam: first step moves by about -lr * sign(g)") {
    ParameterSet params;
    Tensor w = params.add("w", Tensor::from_vector({3}, {1.0, -2.0, 0.5}));
    const auto before = w.data();
    w.grad() = {0.3, -4.0, 1e-3};
    Adam opt(AdamConfig{1e-2, 0.9, 0.999, 1e-8});
    opt.step(params);
    // bias-corrected m/sqrt(v) = g/|g| on the first step (up to eps)
    CHECK(w.data()[0] == Approx(before[0] - 1e-2).epsilon(1e-4));
    CHECK(w.data()[1] == Approx(before[1] + 1e-2).epsilon(1e-4));
    CHECK(w.data()[2] == Approx(before[2] - 1e-2).epsilon(1e-3));
}

TEST_CASE("adam: cloned state gives identical updates") {
    auto run = [](std::vector<double>& out) {
        ParameterSet params;
        Tensor w = params.add("w", Tensor::from_vector({3}, {1.0, 2.0, 3.0}));
        Adam opt(AdamConfig{1e-3, 0.9, 0.999, 1e-8});
        for (int i = 0; i < 5; ++i) {
            w.grad() = {0.1 * i, -0.2, 0.05};
            opt.step(params);
            w.zero_grad();
        }
        out = w.data();
    };
    std::vector<double> a, b;
    run(a);
    run(b);
    CHECK(a == b);
}

TEST_CASE("gradient clipping caps the global norm") {
    ParameterSet params;
    Tensor w = params.add("w", Tensor::zeros({4}));
    w.grad() = {3.0, 0.0, 4.0, 0.0};  // norm 5
    const double pre = clip_grad_norm(params, 1.0);
    CHECK(pre == Approx(5.0));
    double sq = 0.0;
    for (double g : w.grad()) sq += g * g;
    CHECK(std::sqrt(sq) == Approx(1.0).margin(1e-12));
}

TEST_CASE("checkpoint round trip with optimizer state") {
    const std::string path = "test_ckpt.bin";
    ParameterSet params;
    Rng rng(9);
    Tensor a = params.add("a", Tensor::randn({3, 4}, rng));
    Tensor b = params.add("b", Tensor::randn({4}, rng));
    Adam opt;
    a.grad() = std::vector<double>(12, 0.5);
    b.grad() = std::vector<double>(4, -0.25);
    opt.step(params);
    save_checkpoint(path, params, 0xfeedULL, &opt);

    ParameterSet params2;
    Tensor a2 = params2.add("a", Tensor::zeros({3, 4}));
    Tensor b2 = params2.add("b", Tensor::zeros({4}));
    Adam opt2;
    load_checkpoint(path, params2, 0xfeedULL, &opt2);
    CHECK(a2.data() == a.data());
    CHECK(b2.data() == b.data());
    CHECK(opt2.step_count() == 1);
    CHECK(opt2.first_moments()[0] == opt.first_moments()[0]);

    ParameterSet params3;
    params3.add("a", Tensor::zeros({3, 4}));
    params3.add("b", Tensor::zeros({4}));
    CHECK_THROWS_AS(load_checkpoint(path, params3, 0xbadULL), SchemaError);

    ParameterSet params4;
    params4.add("a", Tensor::zeros({4, 3}));
    params4.add("b", Tensor::zeros({4}));
    CHECK_THROWS_AS(load_checkpoint(path, params4, 0xfeedULL), SchemaError);
    std::remove(path.c_str());
}

TEST_CASE("rng determinism") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c = a.fork(7), d = b.fork(7);
    for (int i = 0; i < 10; ++i) CHECK(c.normal() == d.normal());
}
