#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <functional>

#include "test_helpers.hpp"
#include "tsfg/dataset.hpp"

using namespace tsfg;
using Catch::Approx;

namespace {

struct TempCsv {
    std::string path;
    explicit TempCsv(const std::string& name, const std::string& content) : path(name) {
        std::ofstream os(path);
        os << content;
    }
    ~TempCsv() { std::remove(path.c_str()); }
};

std::string rows_csv(std::size_t n, const std::function<std::string(std::size_t)>& row) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += row(i) + "\n";
    return s;
}

}  // namespace

TEST_CASE("load_csv: binary target yields a two-class dataset") {
    TempCsv f("ds_basic.csv", "a,b,y\n" + rows_csv(30, [](std::size_t i) {
                  return std::to_string(0.5 * i) + "," + std::to_string(2.0 - 0.1 * i) + "," +
                         std::to_string(i % 2);
              }));
    auto ds = load_csv(f.path, "y", TaskKind::classification);
    CHECK(ds.num_classes == 2);
    CHECK(ds.num_rows() == 30);
    CHECK(ds.num_features() == 2);
    CHECK(ds.columns[0].kind == FeatureKind::continuous);
}

TEST_CASE("load_csv: few distinct integers make a discrete column") {
    std::string body;
    for (std::size_t i = 0; i < 1000; ++i) {
        body += std::to_string(1 + (i * 7) % 10) + "," + std::to_string(0.001 * i) + "," +
                std::to_string(i % 2) + "\n";
    }
    TempCsv f("ds_disc.csv", "d,c,y\n" + body);
    auto ds = load_csv(f.path, "y", TaskKind::classification);
    CHECK(ds.columns[0].kind == FeatureKind::discrete);
    CHECK(ds.columns[1].kind == FeatureKind::continuous);
    // codes contiguous 0..9
    CHECK(ds.columns[0].stats.min == 0.0);
    CHECK(ds.columns[0].stats.max == 9.0);
    CHECK(ds.columns[0].stats.distinct_count == 10);

    // override forces continuous
    LoadOptions opt;
    opt.kind_overrides["d"] = FeatureKind::continuous;
    auto ds2 = load_csv(f.path, "y", TaskKind::classification, opt);
    CHECK(ds2.columns[0].kind == FeatureKind::continuous);
}

TEST_CASE("load_csv error cases") {
    CHECK_THROWS_AS(load_csv("no_such_file.csv", "y", TaskKind::classification), IoError);

    TempCsv f("ds_err1.csv", "a,b\n" + rows_csv(25, [](std::size_t i) {
                  return std::to_string(i) + "," + std::to_string(i % 2);
              }));
    CHECK_THROWS_WITH(load_csv(f.path, "y", TaskKind::classification),
                      Catch::Matchers::ContainsSubstring("target not found"));

    TempCsv g("ds_err2.csv", "a,y\n" + rows_csv(25, [](std::size_t i) {
                  return std::to_string(i) + ",1";
              }));
    CHECK_THROWS_WITH(load_csv(g.path, "y", TaskKind::classification),
                      Catch::Matchers::ContainsSubstring("constant"));

    TempCsv h("ds_err3.csv", "a,y\nx1,0\n" + rows_csv(24, [](std::size_t i) {
                  return std::to_string(0.5 * i) + "," + std::to_string(i % 2);
              }));
    CHECK_THROWS_WITH(load_csv(h.path, "y", TaskKind::classification),
                      Catch::Matchers::ContainsSubstring("non-numeric"));

    TempCsv tiny("ds_err4.csv", "a,y\n1,0\n2,1\n");
    CHECK_THROWS_WITH(load_csv(tiny.path, "y", TaskKind::classification),
                      Catch::Matchers::ContainsSubstring("20 rows"));
}

TEST_CASE("load_csv: missing values are imputed") {
    TempCsv f("ds_miss.csv", "a,d,y\n" + rows_csv(40, [](std::size_t i) {
                  std::string a = (i % 5 == 0) ? "" : std::to_string(static_cast<double>(i));
                  std::string d = (i % 7 == 0) ? "" : std::to_string(1 + (i % 3));
                  return a + "," + d + "," + std::to_string(i % 2);
              }));
    auto ds = load_csv(f.path, "y", TaskKind::classification);
    for (double v : ds.columns[0].values) CHECK(std::isfinite(v));
    CHECK(ds.columns[0].stats.fraction_missing == Approx(8.0 / 40.0));
    // discrete missing becomes its own category (highest code)
    CHECK(ds.columns[1].kind == FeatureKind::discrete);
    CHECK(ds.columns[1].stats.distinct_count == 4);  // 1,2,3 + missing
}

TEST_CASE("split: sizes, determinism and partition") {
    auto ds = tsfg_test::make_dataset(
        {{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0});
    ds.task_kind = TaskKind::regression;
    ds.num_classes = 0;

    auto s1 = split_dataset(ds, 0.6, 0.2, 0.2, 7);
    CHECK(s1.rows_in(Split::train).size() == 6);
    CHECK(s1.rows_in(Split::val).size() == 2);
    CHECK(s1.rows_in(Split::test).size() == 2);

    auto s2 = split_dataset(ds, 0.6, 0.2, 0.2, 7);
    CHECK(s1.split == s2.split);

    auto s3 = split_dataset(ds, 0.6, 0.2, 0.2, 8);
    CHECK(s1.split != s3.split);  // different seed, different shuffle

    CHECK(s1.rows_in(Split::train).size() + s1.rows_in(Split::val).size() +
              s1.rows_in(Split::test).size() ==
          10);
}

TEST_CASE("split: bad fractions and tiny classes") {
    auto ds = tsfg_test::make_dataset({{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}});
    CHECK_THROWS_AS(split_dataset(ds, 0.5, 0.5, 0.5, 1), ConfigError);

    // class 1 has two rows only
    auto ds2 = tsfg_test::make_dataset({{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}},
                                       {0, 0, 0, 0, 0, 0, 0, 0, 1, 1});
    CHECK_THROWS_AS(split_dataset(ds2, 0.6, 0.2, 0.2, 1), ConfigError);
}

TEST_CASE("split: stratification keeps class balance") {
    std::vector<double> col, labels;
    for (std::size_t i = 0; i < 100; ++i) {
        col.push_back(static_cast<double>(i));
        labels.push_back(i < 80 ? 0.0 : 1.0);
    }
    auto ds = tsfg_test::make_dataset({col}, labels);
    auto s = split_dataset(ds, 0.6, 0.2, 0.2, 3);
    std::size_t train_minority = 0;
    for (auto r : s.rows_in(Split::train))
        if (s.labels[r] == 1.0) ++train_minority;
    CHECK(train_minority == 12);  // 20 * 0.6
}

TEST_CASE("standardize: hand-computed example and constant column") {
    auto ds = tsfg_test::make_dataset({{1, 2, 3}, {5, 5, 5}}, {0, 1, 0});
    auto out = standardize(ds);
    // (x - 2) / sqrt(2/3)
    CHECK(out.columns[0].values[0] == Approx(-1.2247448713915890).margin(1e-10));
    CHECK(out.columns[0].values[1] == Approx(0.0).margin(1e-12));
    CHECK(out.columns[0].values[2] == Approx(1.2247448713915890).margin(1e-10));
    for (double v : out.columns[1].values) CHECK(v == 0.0);
}

TEST_CASE("standardize: discrete columns untouched, train stats used") {
    auto ds = tsfg_test::make_dataset({{1, 2, 3, 4, 5, 6}, {0, 1, 2, 0, 1, 2}}, {0, 1, 0, 1, 0, 1},
                                      {FeatureKind::continuous, FeatureKind::discrete});
    ds.split = {Split::train, Split::train, Split::train, Split::val, Split::val, Split::test};
    auto out = standardize(ds);
    CHECK(out.columns[1].values == ds.columns[1].values);
    // train mean 2, train std sqrt(2/3); val row 4 -> (4-2)/0.8165
    CHECK(out.columns[0].values[3] == Approx(2.0 / std::sqrt(2.0 / 3.0)).margin(1e-10));

    // standardized train columns: mean ~ 0, std ~ 1
    std::vector<double> train_vals{out.columns[0].values[0], out.columns[0].values[1],
                                   out.columns[0].values[2]};
    auto st = compute_stats(train_vals);
    CHECK(std::fabs(st.mean) < 1e-9);
    CHECK(std::fabs(st.std - 1.0) < 1e-9);
}

TEST_CASE("standardize requires a train split") {
    auto ds = tsfg_test::make_dataset({{1, 2, 3}});
    ds.split.assign(3, Split::test);
    CHECK_THROWS_AS(standardize(ds), ConfigError);
}

TEST_CASE("csv round trip preserves values") {
    Rng rng(5);
    std::vector<double> a, b, y;
    for (int i = 0; i < 50; ++i) {
        a.push_back(rng.normal() * 1e3);
        b.push_back(rng.uniform(-1, 1) * 1e-7);
        y.push_back(static_cast<double>(i % 2));
    }
    auto ds = tsfg_test::make_dataset({a, b}, y);
    write_csv(ds, "roundtrip.csv", "y");
    auto back = load_csv("roundtrip.csv", "y", TaskKind::classification);
    REQUIRE(back.num_rows() == 50);
    for (std::size_t i = 0; i < 50; ++i) {
        CHECK(back.columns[0].values[i] == Approx(a[i]).margin(1e-12 * std::fabs(a[i])));
        CHECK(back.columns[1].values[i] == Approx(b[i]).margin(1e-12));
    }
    std::remove("roundtrip.csv");
}

TEST_CASE("stats are row-order invariant") {
    auto s1 = compute_stats({3.1, -2.7, 0.4, 9.9, -5.5});
    auto s2 = compute_stats({9.9, 0.4, -5.5, 3.1, -2.7});
    CHECK(s1.mean == s2.mean);
    CHECK(s1.std == s2.std);
    CHECK(s1.min == s2.min);
    CHECK(s1.max == s2.max);
    CHECK(s1.distinct_count == s2.distinct_count);
}

TEST_CASE("schema fingerprint tracks N and kinds") {
    auto a = tsfg_test::make_dataset({{1, 2}, {3, 4}});
    auto b = tsfg_test::make_dataset({{1, 2}, {3, 4}});
    CHECK(a.schema_fingerprint() == b.schema_fingerprint());
    auto c = tsfg_test::make_dataset({{1, 2}, {3, 4}}, {},
                                     {FeatureKind::continuous, FeatureKind::discrete});
    CHECK(a.schema_fingerprint() != c.schema_fingerprint());
    auto d = tsfg_test::make_dataset({{1, 2}});
    CHECK(a.schema_fingerprint() != d.schema_fingerprint());
}
