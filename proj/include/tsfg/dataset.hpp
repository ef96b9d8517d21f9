#pragma once

// Tabular data ingestion: CSV parsing, feature-kind inference, imputation,
// deterministic (optionally stratified) splits, and train-statistics
// standardization. All operations return new datasets; nothing is mutated.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tsfg/common.hpp"

namespace tsfg {

enum class TaskKind { classification, regression };
enum class FeatureKind { continuous, discrete };
enum class Split { train, val, test };

inline std::string to_string(TaskKind k) {
    return k == TaskKind::classification ? "classification" : "regression";
}
inline std::string to_string(FeatureKind k) {
    return k == FeatureKind::continuous ? "continuous" : "discrete";
}
inline std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        default: return "test";
    }
}

struct FeatureStats {
    double mean = 0.0;
    double std = 0.0;
    double min = 0.0;
    double max = 0.0;
    std::size_t distinct_count = 1;
    double fraction_missing = 0.0;
};

struct FeatureColumn {
    std::string name;
    FeatureKind kind = FeatureKind::continuous;
    std::vector<double> values;  // discrete columns hold category codes
    FeatureStats stats;
};

// Statistics are computed over a sorted copy so they are invariant to row
// order (floating-point summation order is pinned by the value order).
inline FeatureStats compute_stats(const std::vector<double>& values, double fraction_missing = 0.0) {
    FeatureStats s;
    s.fraction_missing = fraction_missing;
    if (values.empty()) return s;
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    s.min = sorted.front();
    s.max = sorted.back();
    double sum = 0.0;
    for (double v : sorted) sum += v;
    s.mean = sum / static_cast<double>(sorted.size());
    double sq = 0.0;
    for (double v : sorted) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(sorted.size()));  // population std
    s.distinct_count = 1;
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i] != sorted[i - 1]) ++s.distinct_count;
    return s;
}

struct TabularDataset {
    std::vector<FeatureColumn> columns;
    std::vector<double> labels;  // class index (as double) or regression target
    TaskKind task_kind = TaskKind::classification;
    std::size_t num_classes = 0;  // classification only
    std::vector<Split> split;

    std::size_t num_rows() const { return labels.size(); }
    std::size_t num_features() const { return columns.size(); }

    std::vector<std::size_t> rows_in(Split s) const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < split.size(); ++i)
            if (split[i] == s) idx.push_back(i);
        return idx;
    }

    // Hash of (N, feature kinds); binds trained models to a schema.
    std::uint64_t schema_fingerprint() const {
        std::string repr = std::to_string(columns.size()) + ":";
        for (const auto& c : columns) repr += c.kind == FeatureKind::discrete ? 'd' : 'c';
        return fnv1a64(repr);
    }

    void recompute_stats() {
        for (auto& c : columns) {
            const double missing = c.stats.fraction_missing;
            c.stats = compute_stats(c.values, missing);
        }
    }
};

struct LoadOptions {
    // distinct_count <= max(20, discrete_fraction * rows) and integer-valued
    // => discrete, unless overridden per column.
    std::size_t discrete_distinct_floor = 20;
    double discrete_fraction = 0.05;
    std::map<std::string, FeatureKind> kind_overrides;
};

namespace csv_detail {

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    cells.push_back(cur);
    return cells;
}

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

inline bool parse_double(const std::string& cell, double& out) {
    const std::string t = trim(cell);
    if (t.empty()) return false;
    char* end = nullptr;
    out = std::strtod(t.c_str(), &end);
    return end == t.c_str() + t.size();
}

inline bool is_integer_valued(double v) {
    return std::isfinite(v) && v == std::floor(v) && std::fabs(v) < 1e15;
}

}  // namespace csv_detail

struct RawTable {
    std::vector<std::string> header;
    // column-major; NaN marks a missing cell
    std::vector<std::vector<double>> columns;
    std::size_t rows = 0;
};

// Parses the file without imputation or typing; missing cells become NaN.
inline RawTable read_csv_table(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open CSV file: " + path);
    RawTable t;
    std::string line;
    if (!std::getline(is, line)) throw IoError("empty CSV file: " + path);
    for (auto& h : csv_detail::split_line(line)) t.header.push_back(csv_detail::trim(h));
    t.columns.resize(t.header.size());
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cells = csv_detail::split_line(line);
        if (cells.size() != t.header.size()) {
            throw IoError(path + ":" + std::to_string(line_no) + ": expected " +
                          std::to_string(t.header.size()) + " cells, got " + std::to_string(cells.size()));
        }
        for (std::size_t c = 0; c < cells.size(); ++c) {
            double v = std::numeric_limits<double>::quiet_NaN();
            const std::string trimmed = csv_detail::trim(cells[c]);
            if (!trimmed.empty() && !csv_detail::parse_double(trimmed, v)) {
                throw IoError(path + ":" + std::to_string(line_no) + ": non-numeric cell '" + trimmed +
                              "' in column '" + t.header[c] + "'");
            }
            t.columns[c].push_back(v);
        }
        ++t.rows;
    }
    return t;
}

// Per-column preprocessing state captured at training time: discrete
// value-to-code maps, imputation values, and (after standardization) the
// train-split mean/std. Saved next to a program so `transform` can replay the
// exact encoding on new data.
struct ColumnCodec {
    std::string name;
    FeatureKind kind = FeatureKind::continuous;
    // continuous
    double impute_value = 0.0;
    bool standardized = false;
    double mean = 0.0;
    double std = 0.0;
    // discrete: raw value -> code; missing and unseen values -> missing_code
    std::map<double, double> value_codes;
    double missing_code = 0.0;
};

struct DatasetCodec {
    std::string target_name;
    TaskKind task = TaskKind::classification;
    std::size_t num_classes = 0;
    std::map<double, double> label_codes;  // classification target remap
    std::vector<ColumnCodec> columns;
};

namespace dataset_detail {

// Remap values to contiguous codes 0..C-1 ordered by value; NaN (missing)
// gets a dedicated final category.
inline std::vector<double> encode_discrete(const std::vector<double>& raw, ColumnCodec& codec) {
    std::set<double> uniq;
    for (double v : raw) {
        if (!std::isnan(v)) uniq.insert(v);
    }
    codec.value_codes.clear();
    double next = 0.0;
    for (double v : uniq) codec.value_codes[v] = next++;
    codec.missing_code = next;
    std::vector<double> out;
    out.reserve(raw.size());
    for (double v : raw)
        out.push_back(std::isnan(v) ? codec.missing_code : codec.value_codes.at(v));
    return out;
}

inline bool kind_is_discrete(const std::vector<double>& raw, const LoadOptions& opt) {
    std::set<double> uniq;
    for (double v : raw) {
        if (std::isnan(v)) continue;
        if (!csv_detail::is_integer_valued(v)) return false;
        uniq.insert(v);
    }
    if (uniq.empty()) return false;
    const double threshold = std::max(static_cast<double>(opt.discrete_distinct_floor),
                                      opt.discrete_fraction * static_cast<double>(raw.size()));
    return static_cast<double>(uniq.size()) <= threshold;
}

}  // namespace dataset_detail

struct LoadedDataset {
    TabularDataset dataset;
    DatasetCodec codec;
    RawTable raw;  // as parsed, missing cells as NaN
};

// Loads a CSV into a typed dataset. Feature kinds are inferred (overridable),
// classification targets are remapped to contiguous 0..K-1, missing
// continuous cells are imputed with the mean over rows currently assigned to
// train (all rows at load time), and missing discrete cells become their own
// category. The codec records every encoding decision for later replay.
inline LoadedDataset load_csv_detailed(const std::string& path, const std::string& target,
                                       TaskKind task, const LoadOptions& opt = {}) {
    const RawTable t = read_csv_table(path);
    if (t.rows < 20) throw IoError(path + ": need at least 20 rows, got " + std::to_string(t.rows));

    std::size_t target_idx = t.header.size();
    for (std::size_t c = 0; c < t.header.size(); ++c)
        if (t.header[c] == target) target_idx = c;
    if (target_idx == t.header.size()) throw SchemaError("target not found: '" + target + "' in " + path);

    const auto& raw_target = t.columns[target_idx];
    for (double v : raw_target)
        if (std::isnan(v)) throw SchemaError(path + ": target column has missing values");
    {
        std::set<double> uniq(raw_target.begin(), raw_target.end());
        if (uniq.size() < 2) throw SchemaError(path + ": target column is constant");
    }

    LoadedDataset out;
    TabularDataset& ds = out.dataset;
    DatasetCodec& codec = out.codec;
    codec.target_name = target;
    codec.task = task;
    ds.task_kind = task;
    ds.split.assign(t.rows, Split::train);

    if (task == TaskKind::classification) {
        std::set<double> uniq(raw_target.begin(), raw_target.end());
        double next = 0.0;
        for (double v : uniq) codec.label_codes[v] = next++;
        ds.num_classes = uniq.size();
        codec.num_classes = uniq.size();
        ds.labels.reserve(t.rows);
        for (double v : raw_target) ds.labels.push_back(codec.label_codes.at(v));
    } else {
        ds.labels = raw_target;
    }

    for (std::size_t c = 0; c < t.header.size(); ++c) {
        if (c == target_idx) continue;
        const auto& raw = t.columns[c];
        FeatureColumn col;
        ColumnCodec cc;
        col.name = t.header[c];
        cc.name = t.header[c];

        std::size_t n_missing = 0;
        for (double v : raw)
            if (std::isnan(v)) ++n_missing;
        const double frac_missing = static_cast<double>(n_missing) / static_cast<double>(t.rows);

        auto ov = opt.kind_overrides.find(col.name);
        const bool discrete = ov != opt.kind_overrides.end() ? ov->second == FeatureKind::discrete
                                                             : dataset_detail::kind_is_discrete(raw, opt);
        if (discrete) {
            col.kind = FeatureKind::discrete;
            cc.kind = FeatureKind::discrete;
            col.values = dataset_detail::encode_discrete(raw, cc);
        } else {
            col.kind = FeatureKind::continuous;
            cc.kind = FeatureKind::continuous;
            double sum = 0.0;
            std::size_t n = 0;
            for (double v : raw) {
                if (!std::isnan(v)) {
                    sum += v;
                    ++n;
                }
            }
            cc.impute_value = n > 0 ? sum / static_cast<double>(n) : 0.0;
            col.values.reserve(raw.size());
            for (double v : raw) col.values.push_back(std::isnan(v) ? cc.impute_value : v);
        }
        col.stats = compute_stats(col.values, frac_missing);
        ds.columns.push_back(std::move(col));
        codec.columns.push_back(std::move(cc));
    }
    if (ds.columns.empty()) throw SchemaError(path + ": no feature columns besides the target");
    return out;
}

inline TabularDataset load_csv(const std::string& path, const std::string& target, TaskKind task,
                               const LoadOptions& opt = {}) {
    return load_csv_detailed(path, target, task, opt).dataset;
}

// Re-encode a raw table through a saved codec: fixed kinds, fixed discrete
// codes (unseen values fall into the missing category), training-time
// imputation and standardization. Column order follows the codec, located by
// name in the table.
inline TabularDataset apply_codec(const DatasetCodec& codec, const RawTable& t,
                                  const std::string& origin) {
    if (t.rows == 0) throw IoError(origin + ": no data rows");
    auto find_column = [&](const std::string& name) -> const std::vector<double>& {
        for (std::size_t c = 0; c < t.header.size(); ++c)
            if (t.header[c] == name) return t.columns[c];
        throw SchemaError(origin + ": column '" + name + "' required by the saved program is missing");
    };

    TabularDataset ds;
    ds.task_kind = codec.task;
    ds.num_classes = codec.num_classes;
    ds.split.assign(t.rows, Split::train);

    const auto& raw_target = find_column(codec.target_name);
    ds.labels.reserve(t.rows);
    for (double v : raw_target) {
        if (std::isnan(v)) throw SchemaError(origin + ": target column has missing values");
        if (codec.task == TaskKind::classification) {
            auto it = codec.label_codes.find(v);
            if (it == codec.label_codes.end())
                throw SchemaError(origin + ": unseen class label " + format_double(v));
            ds.labels.push_back(it->second);
        } else {
            ds.labels.push_back(v);
        }
    }

    for (const auto& cc : codec.columns) {
        const auto& raw = find_column(cc.name);
        FeatureColumn col;
        col.name = cc.name;
        col.kind = cc.kind;
        col.values.reserve(t.rows);
        if (cc.kind == FeatureKind::discrete) {
            for (double v : raw) {
                if (std::isnan(v)) {
                    col.values.push_back(cc.missing_code);
                } else {
                    auto it = cc.value_codes.find(v);
                    col.values.push_back(it != cc.value_codes.end() ? it->second : cc.missing_code);
                }
            }
        } else {
            for (double v : raw) {
                double x = std::isnan(v) ? cc.impute_value : v;
                if (cc.standardized) x = cc.std > 0.0 ? (x - cc.mean) / cc.std : 0.0;
                col.values.push_back(x);
            }
        }
        col.stats = compute_stats(col.values);
        ds.columns.push_back(std::move(col));
    }
    return ds;
}

// Deterministic split under `seed`; stratified per class for classification.
inline TabularDataset split_dataset(const TabularDataset& ds, double f_train, double f_val,
                                    double f_test, std::uint64_t seed) {
    if (f_train <= 0.0 || f_val <= 0.0 || f_test <= 0.0 ||
        std::fabs(f_train + f_val + f_test - 1.0) > 1e-9) {
        throw ConfigError("split fractions must be positive and sum to 1");
    }
    const std::size_t n = ds.num_rows();
    TabularDataset out = ds;

    auto assign_group = [&](const std::vector<std::size_t>& rows, Rng& rng) {
        std::vector<std::size_t> order = rows;
        rng.shuffle(order);
        const std::size_t m = order.size();
        std::size_t n_train = static_cast<std::size_t>(std::llround(f_train * static_cast<double>(m)));
        std::size_t n_val = static_cast<std::size_t>(std::llround(f_val * static_cast<double>(m)));
        n_train = std::max<std::size_t>(1, std::min(n_train, m - 2));
        n_val = std::max<std::size_t>(1, std::min(n_val, m - n_train - 1));
        for (std::size_t i = 0; i < m; ++i) {
            out.split[order[i]] =
                i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
        }
    };

    Rng rng(seed);
    if (ds.task_kind == TaskKind::classification) {
        std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
        for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
        for (std::size_t k = 0; k < by_class.size(); ++k) {
            if (by_class[k].size() < 3) {
                throw ConfigError("class " + std::to_string(k) + " has only " +
                                  std::to_string(by_class[k].size()) + " rows; need one per split");
            }
        }
        for (auto& rows : by_class) assign_group(rows, rng);
    } else {
        std::vector<std::size_t> rows(n);
        for (std::size_t i = 0; i < n; ++i) rows[i] = i;
        assign_group(rows, rng);
    }
    return out;
}

// Per-column train-split statistics used for standardization, and for the
// `transform` command the imputation values captured at training time.
struct Scaler {
    struct ColumnScale {
        bool standardized = false;  // continuous columns only
        double mean = 0.0;
        double std = 0.0;  // population std over the train split
    };
    std::vector<ColumnScale> columns;
};

inline Scaler fit_scaler(const TabularDataset& ds) {
    const auto train_rows = ds.rows_in(Split::train);
    if (train_rows.empty()) throw ConfigError("standardize: train split is empty");
    Scaler sc;
    sc.columns.resize(ds.columns.size());
    for (std::size_t c = 0; c < ds.columns.size(); ++c) {
        auto& cs = sc.columns[c];
        if (ds.columns[c].kind != FeatureKind::continuous) continue;
        std::vector<double> train_vals;
        train_vals.reserve(train_rows.size());
        for (auto r : train_rows) train_vals.push_back(ds.columns[c].values[r]);
        const FeatureStats st = compute_stats(train_vals);
        cs.standardized = true;
        cs.mean = st.mean;
        cs.std = st.std;
    }
    return sc;
}

// Fold train-split standardization statistics into a codec for replay.
inline void record_scaler(const Scaler& sc, DatasetCodec& codec) {
    if (sc.columns.size() != codec.columns.size())
        throw SchemaError("scaler/codec column count mismatch");
    for (std::size_t c = 0; c < sc.columns.size(); ++c) {
        codec.columns[c].standardized = sc.columns[c].standardized;
        codec.columns[c].mean = sc.columns[c].mean;
        codec.columns[c].std = sc.columns[c].std;
    }
}

inline TabularDataset apply_scaler(const Scaler& sc, const TabularDataset& ds) {
    if (sc.columns.size() != ds.columns.size()) throw SchemaError("scaler/dataset column count mismatch");
    TabularDataset out = ds;
    for (std::size_t c = 0; c < out.columns.size(); ++c) {
        const auto& cs = sc.columns[c];
        if (!cs.standardized) continue;
        for (auto& v : out.columns[c].values) {
            v = cs.std > 0.0 ? (v - cs.mean) / cs.std : 0.0;  // constant columns map to zeros
        }
    }
    out.recompute_stats();
    return out;
}

inline TabularDataset standardize(const TabularDataset& ds) { return apply_scaler(fit_scaler(ds), ds); }

// Features plus a final target column, round-trippable through load_csv.
inline void write_csv(const TabularDataset& ds, const std::string& path,
                      const std::string& target_name = "target") {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write CSV: " + path);
    for (const auto& c : ds.columns) os << c.name << ",";
    os << target_name << "\n";
    for (std::size_t r = 0; r < ds.num_rows(); ++r) {
        for (const auto& c : ds.columns) os << format_double(c.values[r]) << ",";
        os << format_double(ds.labels[r]) << "\n";
    }
    if (!os) throw IoError("CSV write failed: " + path);
}

// Row subset preserving column schema; split labels carried over.
inline TabularDataset select_rows(const TabularDataset& ds, const std::vector<std::size_t>& rows) {
    TabularDataset out;
    out.task_kind = ds.task_kind;
    out.num_classes = ds.num_classes;
    for (const auto& c : ds.columns) {
        FeatureColumn nc;
        nc.name = c.name;
        nc.kind = c.kind;
        nc.values.reserve(rows.size());
        for (auto r : rows) nc.values.push_back(c.values[r]);
        nc.stats = compute_stats(nc.values, c.stats.fraction_missing);
        out.columns.push_back(std::move(nc));
    }
    out.labels.reserve(rows.size());
    out.split.reserve(rows.size());
    for (auto r : rows) {
        out.labels.push_back(ds.labels[r]);
        out.split.push_back(ds.split[r]);
    }
    return out;
}

}  // namespace tsfg
