#include <catch2/catch_amalgamated.hpp>

#include "test_helpers.hpp"
#include "tsfg/evaluators.hpp"

using namespace tsfg;
using namespace tsfg::eval;
using Catch::Approx;

namespace {

// ---------------------------------------------------------------------------
// naive reference metrics: direct transcription of the definitions,
// independent of the production implementations

double ref_accuracy(const std::vector<double>& p, const std::vector<double>& a) {
    double hits = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] == a[i]) hits += 1;
    return hits / static_cast<double>(p.size());
}

double ref_precision_class(const std::vector<double>& p, const std::vector<double>& a, double cls) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == cls && a[i] == cls) tp += 1;
        if (p[i] == cls && a[i] != cls) fp += 1;
    }
    return tp + fp > 0 ? tp / (tp + fp) : 0.0;
}

double ref_recall_class(const std::vector<double>& p, const std::vector<double>& a, double cls) {
    double tp = 0, fn = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == cls && a[i] == cls) tp += 1;
        if (p[i] != cls && a[i] == cls) fn += 1;
    }
    return tp + fn > 0 ? tp / (tp + fn) : 0.0;
}

double ref_macro_precision(const std::vector<double>& p, const std::vector<double>& a, std::size_t k) {
    double s = 0;
    for (std::size_t c = 0; c < k; ++c) s += ref_precision_class(p, a, static_cast<double>(c));
    return s / static_cast<double>(k);
}

double ref_macro_f1(const std::vector<double>& p, const std::vector<double>& a, std::size_t k) {
    double s = 0;
    for (std::size_t c = 0; c < k; ++c) {
        const double pr = ref_precision_class(p, a, static_cast<double>(c));
        const double rc = ref_recall_class(p, a, static_cast<double>(c));
        s += pr + rc > 0 ? 2 * pr * rc / (pr + rc) : 0.0;
    }
    return s / static_cast<double>(k);
}

double ref_one_minus_rae(const std::vector<double>& p, const std::vector<double>& a) {
    double mean = 0;
    for (double v : a) mean += v;
    mean /= static_cast<double>(a.size());
    double num = 0, den = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        num += std::fabs(p[i] - a[i]);
        den += std::fabs(a[i] - mean);
    }
    if (den == 0) return num == 0 ? 1.0 : 0.0;
    return 1.0 - num / den;
}

double ref_r2(const std::vector<double>& p, const std::vector<double>& a) {
    double mean = 0;
    for (double v : a) mean += v;
    mean /= static_cast<double>(a.size());
    double res = 0, tot = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        res += (p[i] - a[i]) * (p[i] - a[i]);
        tot += (a[i] - mean) * (a[i] - mean);
    }
    if (tot == 0) return res == 0 ? 1.0 : 0.0;
    return 1.0 - res / tot;
}

// Gaussian blob pair with the given center separation (in units of sigma).
TabularDataset blob_dataset(std::size_t rows, double separation, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> x1, x2, y;
    for (std::size_t i = 0; i < rows; ++i) {
        const double cls = static_cast<double>(i % 2);
        const double cx = cls == 0.0 ? 0.0 : separation;
        x1.push_back(rng.normal(cx, 1.0));
        x2.push_back(rng.normal(-cx, 1.0));
        y.push_back(cls);
    }
    auto ds = tsfg_test::make_dataset({x1, x2}, y);
    return split_dataset(ds, 0.6, 0.2, 0.2, seed);
}

}  // namespace

TEST_CASE("metric basics") {
    CHECK(accuracy({1, 0, 1}, {1, 0, 0}) == Approx(2.0 / 3.0));
    // perfect predictions
    CHECK(one_minus_rae({1, 2, 3}, {1, 2, 3}) == 1.0);
    CHECK(r_squared({1, 2, 3}, {1, 2, 3}) == 1.0);
    // predicting the mean
    CHECK(one_minus_rae({2, 2, 2}, {1, 2, 3}) == 0.0);
    CHECK(r_squared({2, 2, 2}, {1, 2, 3}) == 0.0);
}

TEST_CASE("metric oracle: 200 random vectors match the references within 1e-12") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 5 + rng.uniform_int(60);
        const std::size_t k = 2 + rng.uniform_int(4);
        std::vector<double> pred_c(n), act_c(n), pred_r(n), act_r(n);
        for (std::size_t i = 0; i < n; ++i) {
            pred_c[i] = static_cast<double>(rng.uniform_int(k));
            act_c[i] = static_cast<double>(rng.uniform_int(k));
            pred_r[i] = rng.normal() * 3.0;
            act_r[i] = rng.normal() * 3.0;
        }
        CHECK(accuracy(pred_c, act_c) == Approx(ref_accuracy(pred_c, act_c)).margin(1e-12));
        CHECK(macro_precision(pred_c, act_c, k) == Approx(ref_macro_precision(pred_c, act_c, k)).margin(1e-12));
        CHECK(macro_f1(pred_c, act_c, k) == Approx(ref_macro_f1(pred_c, act_c, k)).margin(1e-12));
        CHECK(one_minus_rae(pred_r, act_r) == Approx(ref_one_minus_rae(pred_r, act_r)).margin(1e-12));
        CHECK(r_squared(pred_r, act_r) == Approx(ref_r2(pred_r, act_r)).margin(1e-12));
    }
}

TEST_CASE("metric_delta") {
    CHECK(metric_delta(0.5, 0.5) == 0.0);
    CHECK(metric_delta(0.7582, 0.719) == Approx(0.0392).margin(1e-12));
    CHECK(metric_delta(0.70, 0.75) == Approx(-0.05).margin(1e-12));
}

TEST_CASE("surrogate: separable blobs reach val accuracy > 0.95") {
    auto ds = standardize(blob_dataset(400, 4.0, 21));
    auto mlp = train_surrogate(ds, ds.num_features() + 4, 7);
    const auto val = ds.rows_in(Split::val);
    const double acc = accuracy(mlp.predict(ds, val), labels_of(ds, val));
    CHECK(acc > 0.95);
    CHECK(mlp.frozen());
}

TEST_CASE("surrogate: near-linear regression reaches val R^2 > 0.99") {
    Rng rng(3);
    std::vector<double> x, y;
    for (int i = 0; i < 400; ++i) {
        x.push_back(rng.uniform(-2, 2));
        y.push_back(2.0 * x.back() + rng.normal(0.0, 0.01));
    }
    auto ds = tsfg_test::make_dataset({x}, y);
    ds.task_kind = TaskKind::regression;
    ds.num_classes = 0;
    ds = standardize(split_dataset(ds, 0.6, 0.2, 0.2, 5));
    auto mlp = train_surrogate(ds, 3, 7);
    const auto val = ds.rows_in(Split::val);
    CHECK(r_squared(mlp.predict(ds, val), labels_of(ds, val)) > 0.99);
}

TEST_CASE("surrogate loss: forced values") {
    // binary predictions at 0.5 -> CE = ln 2; zeroed weights give equal logits
    auto ds = tsfg_test::make_dataset({{0, 0, 0, 0}}, {0, 1, 0, 1});
    SurrogateMLP mlp(2, TaskKind::classification, 2, 1);
    for (const auto& p : mlp.parameters().tensors()) {
        nn::Tensor t = p;
        std::fill(t.data().begin(), t.data().end(), 0.0);
    }
    const double ce = mlp.loss_on(ds, {0, 1, 2, 3});
    CHECK(ce == Approx(std::log(2.0)).margin(1e-12));

    // regression: predictions equal to targets -> MSE 0
    auto dreg = tsfg_test::make_dataset({{1, 2, 3, 4}}, {0, 0, 0, 0});
    dreg.task_kind = TaskKind::regression;
    SurrogateMLP mreg(2, TaskKind::regression, 0, 1);
    for (const auto& p : mreg.parameters().tensors()) {
        nn::Tensor t = p;
        std::fill(t.data().begin(), t.data().end(), 0.0);
    }
    CHECK(mreg.loss_on(dreg, {0, 1, 2, 3}) == Approx(0.0).margin(1e-12));
}

TEST_CASE("surrogate loss: width overflow is an error") {
    auto ds = tsfg_test::make_dataset({{1, 2}, {3, 4}, {5, 6}}, {0, 1});
    SurrogateMLP mlp(2, TaskKind::classification, 2, 1);
    CHECK_THROWS_WITH(mlp.loss_on(ds, {0, 1}), Catch::Matchers::ContainsSubstring("overflow"));
}

TEST_CASE("random forest: determinism and importances") {
    auto ds = standardize(blob_dataset(300, 2.5, 8));
    auto r1 = evaluate_downstream(DownstreamKind::random_forest, ds, Split::val, 42);
    auto r2 = evaluate_downstream(DownstreamKind::random_forest, ds, Split::val, 42);
    CHECK(r1.macro_f1 == r2.macro_f1);
    CHECK(r1.accuracy == r2.accuracy);
    CHECK(r1.importances == r2.importances);

    double total = 0.0;
    for (double v : r1.importances) {
        CHECK(v >= 0.0);
        total += v;
    }
    CHECK(total == Approx(1.0).margin(1e-9));

    auto r3 = evaluate_downstream(DownstreamKind::random_forest, ds, Split::val, 43);
    CHECK((r3.macro_f1 != r1.macro_f1 || r3.importances != r1.importances));
}

TEST_CASE("random forest: learns blobs comfortably") {
    auto ds = standardize(blob_dataset(400, 3.0, 10));
    auto report = evaluate_downstream(DownstreamKind::random_forest, ds, Split::test, 3);
    CHECK(report.accuracy > 0.9);
    CHECK(report.macro_f1 > 0.9);
}

TEST_CASE("random forest: regression sanity") {
    Rng rng(17);
    std::vector<double> x, z, y;
    for (int i = 0; i < 400; ++i) {
        x.push_back(rng.uniform(-2, 2));
        z.push_back(rng.normal());
        y.push_back(3.0 * x.back() + rng.normal(0.0, 0.1));
    }
    auto ds = tsfg_test::make_dataset({x, z}, y);
    ds.task_kind = TaskKind::regression;
    ds.num_classes = 0;
    ds = standardize(split_dataset(ds, 0.6, 0.2, 0.2, 4));
    auto report = evaluate_downstream(DownstreamKind::random_forest, ds, Split::test, 3);
    CHECK(report.r_squared > 0.8);
    CHECK(report.one_minus_rae > 0.5);
    // the informative feature dominates importances
    CHECK(report.importances[0] > 0.8);
}

TEST_CASE("random forest: single-class train split is an error") {
    auto ds = tsfg_test::make_dataset({{1, 2, 3, 4}}, {0, 0, 0, 1});
    ds.split = {Split::train, Split::train, Split::train, Split::val};
    CHECK_THROWS_AS(evaluate_downstream(DownstreamKind::random_forest, ds, Split::val, 1), TsfgError);
}

TEST_CASE("random forest: pure-noise column barely moves the metric") {
    Rng noise_rng(5);
    double max_shift = 0.0;
    for (std::uint64_t seed : {101u, 102u, 103u, 104u, 105u}) {
        auto ds = standardize(blob_dataset(500, 2.0, seed));
        auto base = evaluate_downstream(DownstreamKind::random_forest, ds, Split::val, seed);
        auto noisy = ds;
        FeatureColumn junk;
        junk.name = "noise";
        junk.kind = FeatureKind::continuous;
        for (std::size_t i = 0; i < ds.num_rows(); ++i) junk.values.push_back(noise_rng.normal());
        junk.stats = compute_stats(junk.values);
        noisy.columns.push_back(junk);
        auto with_noise = evaluate_downstream(DownstreamKind::random_forest, noisy, Split::val, seed);
        max_shift = std::max(max_shift, std::fabs(with_noise.macro_f1 - base.macro_f1));
    }
    CHECK(max_shift < 0.05);
}

TEST_CASE("downstream mlp: learns blobs") {
    auto ds = standardize(blob_dataset(300, 3.0, 12));
    auto report = evaluate_downstream(DownstreamKind::mlp, ds, Split::test, 3);
    CHECK(report.accuracy > 0.9);
    CHECK(report.importances.empty());  // importances are a forest feature
}

TEST_CASE("evaluate_downstream is deterministic per seed for the mlp too") {
    auto ds = standardize(blob_dataset(200, 2.0, 13));
    auto a = evaluate_downstream(DownstreamKind::mlp, ds, Split::val, 5);
    auto b = evaluate_downstream(DownstreamKind::mlp, ds, Split::val, 5);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.macro_f1 == b.macro_f1);
}
