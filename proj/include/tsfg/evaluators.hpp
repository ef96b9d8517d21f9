#pragma once

// Task evaluation: classification/regression metrics, the frozen surrogate
// MLP that scores candidate features in stage 1, and the in-house downstream
// models (random forest, MLP) that define rewards and final reports.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "tsfg/dataset.hpp"
#include "tsfg/nn.hpp"

namespace tsfg::eval {

// ---------------------------------------------------------------------------
// metrics

inline double accuracy(const std::vector<double>& pred, const std::vector<double>& actual) {
    if (pred.size() != actual.size() || pred.empty()) throw TsfgError("accuracy: size mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == actual[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

namespace metric_detail {

struct ClassCounts {
    std::vector<double> tp, fp, fn;
};

inline ClassCounts count_classes(const std::vector<double>& pred, const std::vector<double>& actual,
                                 std::size_t num_classes) {
    ClassCounts c;
    c.tp.assign(num_classes, 0.0);
    c.fp.assign(num_classes, 0.0);
    c.fn.assign(num_classes, 0.0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto p = static_cast<std::size_t>(pred[i]);
        const auto a = static_cast<std::size_t>(actual[i]);
        if (p >= num_classes || a >= num_classes) throw TsfgError("class label out of range");
        if (p == a) {
            c.tp[p] += 1.0;
        } else {
            c.fp[p] += 1.0;
            c.fn[a] += 1.0;
        }
    }
    return c;
}

}  // namespace metric_detail

// Macro averaging over all K classes; zero-denominator classes contribute 0.
inline double macro_precision(const std::vector<double>& pred, const std::vector<double>& actual,
                              std::size_t num_classes) {
    const auto c = metric_detail::count_classes(pred, actual, num_classes);
    double sum = 0.0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        const double denom = c.tp[k] + c.fp[k];
        sum += denom > 0.0 ? c.tp[k] / denom : 0.0;
    }
    return sum / static_cast<double>(num_classes);
}

inline double macro_f1(const std::vector<double>& pred, const std::vector<double>& actual,
                       std::size_t num_classes) {
    const auto c = metric_detail::count_classes(pred, actual, num_classes);
    double sum = 0.0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        const double pd = c.tp[k] + c.fp[k];
        const double rd = c.tp[k] + c.fn[k];
        const double p = pd > 0.0 ? c.tp[k] / pd : 0.0;
        const double r = rd > 0.0 ? c.tp[k] / rd : 0.0;
        sum += (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    }
    return sum / static_cast<double>(num_classes);
}

// 1 - sum|pred - actual| / sum|actual - mean(actual)|.
inline double one_minus_rae(const std::vector<double>& pred, const std::vector<double>& actual) {
    if (pred.size() != actual.size() || pred.empty()) throw TsfgError("1-RAE: size mismatch");
    double mean = 0.0;
    for (double v : actual) mean += v;
    mean /= static_cast<double>(actual.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        num += std::fabs(pred[i] - actual[i]);
        den += std::fabs(actual[i] - mean);
    }
    if (den == 0.0) return num == 0.0 ? 1.0 : 0.0;  // constant target
    return 1.0 - num / den;
}

inline double r_squared(const std::vector<double>& pred, const std::vector<double>& actual) {
    if (pred.size() != actual.size() || pred.empty()) throw TsfgError("R^2: size mismatch");
    double mean = 0.0;
    for (double v : actual) mean += v;
    mean /= static_cast<double>(actual.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        ss_res += (pred[i] - actual[i]) * (pred[i] - actual[i]);
        ss_tot += (actual[i] - mean) * (actual[i] - mean);
    }
    if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
    return 1.0 - ss_res / ss_tot;
}

enum class RewardMetric { macro_f1, accuracy, macro_precision, one_minus_rae, r_squared };

inline std::string to_string(RewardMetric m) {
    switch (m) {
        case RewardMetric::macro_f1: return "macro_f1";
        case RewardMetric::accuracy: return "accuracy";
        case RewardMetric::macro_precision: return "macro_precision";
        case RewardMetric::one_minus_rae: return "1-rae";
        default: return "r2";
    }
}

inline RewardMetric default_reward_metric(TaskKind task) {
    return task == TaskKind::classification ? RewardMetric::macro_f1 : RewardMetric::one_minus_rae;
}

struct MetricReport {
    TaskKind task_kind = TaskKind::classification;
    // classification
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double macro_precision = 0.0;
    // regression
    double one_minus_rae = 0.0;
    double r_squared = 0.0;
    // per dataset column, normalized to sum 1 (random forest only)
    std::vector<double> importances;
    std::vector<std::string> column_names;

    double metric(RewardMetric m) const {
        switch (m) {
            case RewardMetric::macro_f1: return macro_f1;
            case RewardMetric::accuracy: return accuracy;
            case RewardMetric::macro_precision: return macro_precision;
            case RewardMetric::one_minus_rae: return one_minus_rae;
            default: return r_squared;
        }
    }
};

// r = Metric(new) - Metric(base), both on the same split / model / seed.
inline double metric_delta(double metric_new, double metric_base) { return metric_new - metric_base; }

// ---------------------------------------------------------------------------
// feature matrices

// Row-major matrix of the given rows; throws if the dataset is wider than
// `width`, zero-pads if narrower. width = 0 means "exact width".
inline std::vector<double> feature_matrix(const TabularDataset& ds, const std::vector<std::size_t>& rows,
                                          std::size_t width = 0) {
    const std::size_t d = ds.num_features();
    if (width == 0) width = d;
    if (d > width) {
        throw TsfgError("feature width overflow: " + std::to_string(d) + " columns > capacity " +
                        std::to_string(width));
    }
    std::vector<double> m(rows.size() * width, 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < d; ++c) m[i * width + c] = ds.columns[c].values[rows[i]];
    return m;
}

inline std::vector<double> labels_of(const TabularDataset& ds, const std::vector<std::size_t>& rows) {
    std::vector<double> y;
    y.reserve(rows.size());
    for (auto r : rows) y.push_back(ds.labels[r]);
    return y;
}

// ---------------------------------------------------------------------------
// surrogate MLP (stage-1 scorer)
//
// Fixed input width N + cap; trained once on the original columns
// zero-padded to that width, then frozen. Candidate features later occupy
// the padded slots.

struct SurrogateConfig {
    std::size_t hidden1 = 64;
    std::size_t hidden2 = 64;
    std::size_t max_epochs = 200;
    std::size_t patience = 20;
    double lr = 1e-3;
};

class SurrogateMLP {
public:
    SurrogateMLP(std::size_t input_width, TaskKind task, std::size_t num_classes, std::uint64_t seed,
                 SurrogateConfig cfg = {})
        : width_(input_width), task_(task), cfg_(cfg) {
        out_dim_ = task == TaskKind::classification ? num_classes : 1;
        Rng rng(splitmix64(seed ^ 0x5a1230feedULL));
        l1_ = nn::Linear(params_, "l1", width_, cfg.hidden1, rng);
        l2_ = nn::Linear(params_, "l2", cfg.hidden1, cfg.hidden2, rng);
        head_ = nn::Linear(params_, "head", cfg.hidden2, out_dim_, rng);
    }

    std::size_t input_width() const { return width_; }
    TaskKind task() const { return task_; }
    nn::ParameterSet& parameters() { return params_; }
    const nn::ParameterSet& parameters() const { return params_; }
    bool frozen() const { return frozen_; }

    nn::Tensor forward(const nn::Tensor& x) const {
        return head_(nn::relu(l2_(nn::relu(l1_(x)))));
    }

    // Mean loss over the given rows: K-class cross-entropy or MSE.
    double loss_on(const TabularDataset& ds, const std::vector<std::size_t>& rows) const {
        if (rows.empty()) throw TsfgError("surrogate loss: empty row set");
        auto x = nn::Tensor::from_vector({rows.size(), width_}, feature_matrix(ds, rows, width_));
        const auto y = labels_of(ds, rows);
        const nn::Tensor logits = forward(x);
        if (task_ == TaskKind::classification) {
            std::vector<std::size_t> targets(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) targets[i] = static_cast<std::size_t>(y[i]);
            const nn::Tensor lsm = nn::log_softmax_rows(logits);
            return -nn::mean(nn::gather_rows(lsm, targets)).item();
        }
        auto t = nn::Tensor::from_vector({rows.size(), 1}, y);
        const nn::Tensor d = nn::sub(logits, t);
        return nn::mean(nn::mul(d, d)).item();
    }

    std::vector<double> predict(const TabularDataset& ds, const std::vector<std::size_t>& rows) const {
        auto x = nn::Tensor::from_vector({rows.size(), width_}, feature_matrix(ds, rows, width_));
        const nn::Tensor logits = forward(x);
        std::vector<double> out(rows.size());
        if (task_ == TaskKind::classification) {
            for (std::size_t i = 0; i < rows.size(); ++i) {
                std::size_t best = 0;
                for (std::size_t k = 1; k < out_dim_; ++k)
                    if (logits.at(i, k) > logits.at(i, best)) best = k;
                out[i] = static_cast<double>(best);
            }
        } else {
            for (std::size_t i = 0; i < rows.size(); ++i) out[i] = logits.at(i, 0);
        }
        return out;
    }

    // Full-batch Adam with early stopping on val loss; restores the best
    // parameters and freezes the model.
    struct TrainTrace {
        std::size_t epochs_run = 0;
        double best_val_loss = 0.0;
    };

    TrainTrace train(const TabularDataset& ds) {
        const auto train_rows = ds.rows_in(Split::train);
        const auto val_rows = ds.rows_in(Split::val);
        if (train_rows.empty()) throw TsfgError("surrogate train: empty train split");
        auto x = nn::Tensor::from_vector({train_rows.size(), width_}, feature_matrix(ds, train_rows, width_));
        const auto y = labels_of(ds, train_rows);

        nn::Adam opt(nn::AdamConfig{cfg_.lr, 0.9, 0.999, 1e-8});
        TrainTrace trace;
        double best_val = std::numeric_limits<double>::infinity();
        std::vector<std::vector<double>> best_params;
        std::size_t since_best = 0;

        std::vector<std::size_t> targets;
        nn::Tensor t_reg;
        if (task_ == TaskKind::classification) {
            targets.resize(train_rows.size());
            for (std::size_t i = 0; i < train_rows.size(); ++i) targets[i] = static_cast<std::size_t>(y[i]);
        } else {
            t_reg = nn::Tensor::from_vector({train_rows.size(), 1}, y);
        }

        for (std::size_t epoch = 0; epoch < cfg_.max_epochs; ++epoch) {
            params_.zero_grad();
            nn::Tensor loss;
            if (task_ == TaskKind::classification) {
                loss = nn::neg(nn::mean(nn::gather_rows(nn::log_softmax_rows(forward(x)), targets)));
            } else {
                const nn::Tensor d = nn::sub(forward(x), t_reg);
                loss = nn::mean(nn::mul(d, d));
            }
            if (!std::isfinite(loss.item())) {
                throw TsfgError("surrogate training diverged at epoch " + std::to_string(epoch));
            }
            loss.backward();
            nn::clip_grad_norm(params_, 1.0);
            opt.step(params_);
            ++trace.epochs_run;

            const double val = val_rows.empty() ? loss.item() : loss_on(ds, val_rows);
            if (val < best_val - 1e-12) {
                best_val = val;
                since_best = 0;
                best_params.clear();
                for (const auto& p : params_.tensors()) best_params.push_back(p.data());
            } else if (++since_best >= cfg_.patience) {
                break;
            }
        }
        if (!best_params.empty()) {
            for (std::size_t k = 0; k < params_.count(); ++k) {
                nn::Tensor p = params_.tensors()[k];
                p.data() = best_params[k];
            }
        }
        trace.best_val_loss = best_val;
        freeze();
        return trace;
    }

    void freeze() {
        for (const auto& p : params_.tensors()) {
            nn::Tensor t = p;
            t.set_requires_grad(false);
        }
        frozen_ = true;
    }

private:
    std::size_t width_;
    TaskKind task_;
    std::size_t out_dim_;
    SurrogateConfig cfg_;
    nn::ParameterSet params_;
    nn::Linear l1_, l2_, head_;
    bool frozen_ = false;
};

inline SurrogateMLP train_surrogate(const TabularDataset& ds, std::size_t input_width,
                                    std::uint64_t seed, SurrogateConfig cfg = {}) {
    SurrogateMLP mlp(input_width, ds.task_kind, ds.num_classes, seed, cfg);
    mlp.train(ds);
    return mlp;
}

// ---------------------------------------------------------------------------
// random forest

struct RandomForestConfig {
    std::size_t n_trees = 100;
    std::size_t max_depth = 8;
    std::size_t min_samples_split = 2;
    bool bootstrap = true;
    // features per split = max(1, round(sqrt(d)))
};

class RandomForest {
public:
    RandomForest(TaskKind task, std::size_t num_classes, RandomForestConfig cfg = {})
        : task_(task), num_classes_(num_classes), cfg_(cfg) {}

    void fit(const std::vector<double>& x, std::size_t n_rows, std::size_t n_cols,
             const std::vector<double>& y, std::uint64_t seed) {
        if (n_rows == 0 || n_cols == 0) throw TsfgError("random forest: empty training data");
        n_cols_ = n_cols;
        trees_.clear();
        importance_raw_.assign(n_cols, 0.0);
        if (task_ == TaskKind::classification) {
            std::set<double> classes(y.begin(), y.end());
            if (classes.size() < 2) throw TsfgError("random forest: single-class train split");
        }
        Rng rng(splitmix64(seed ^ 0xf07e57ULL));
        const auto mtry = static_cast<std::size_t>(
            std::max(1.0, std::round(std::sqrt(static_cast<double>(n_cols)))));
        for (std::size_t t = 0; t < cfg_.n_trees; ++t) {
            std::vector<std::size_t> rows(n_rows);
            if (cfg_.bootstrap) {
                for (auto& r : rows) r = rng.uniform_int(n_rows);
            } else {
                std::iota(rows.begin(), rows.end(), 0);
            }
            trees_.emplace_back();
            build_node(trees_.back(), x, n_cols, y, rows, 0, mtry, rng, n_rows);
        }
    }

    void fit(const TabularDataset& ds, const std::vector<std::size_t>& rows, std::uint64_t seed) {
        fit(feature_matrix(ds, rows), rows.size(), ds.num_features(), labels_of(ds, rows), seed);
    }

    std::vector<double> predict(const std::vector<double>& x, std::size_t n_rows, std::size_t n_cols) const {
        if (n_cols != n_cols_) throw TsfgError("random forest: column count mismatch");
        std::vector<double> out(n_rows);
        std::vector<double> dist(num_classes_);
        for (std::size_t i = 0; i < n_rows; ++i) {
            const double* row = &x[i * n_cols];
            if (task_ == TaskKind::classification) {
                std::fill(dist.begin(), dist.end(), 0.0);
                for (const auto& tree : trees_) {
                    const Node& leaf = descend(tree, row);
                    for (std::size_t k = 0; k < num_classes_; ++k) dist[k] += leaf.class_probs[k];
                }
                std::size_t best = 0;
                for (std::size_t k = 1; k < num_classes_; ++k)
                    if (dist[k] > dist[best]) best = k;
                out[i] = static_cast<double>(best);
            } else {
                double sum = 0.0;
                for (const auto& tree : trees_) sum += descend(tree, row).value;
                out[i] = sum / static_cast<double>(trees_.size());
            }
        }
        return out;
    }

    std::vector<double> predict(const TabularDataset& ds, const std::vector<std::size_t>& rows) const {
        return predict(feature_matrix(ds, rows), rows.size(), ds.num_features());
    }

    // Mean impurity decrease per feature, normalized to sum 1.
    std::vector<double> importances() const {
        std::vector<double> imp = importance_raw_;
        double total = 0.0;
        for (double v : imp) total += v;
        if (total <= 0.0) {
            std::fill(imp.begin(), imp.end(), 1.0 / static_cast<double>(imp.size()));
            return imp;
        }
        for (auto& v : imp) v /= total;
        return imp;
    }

private:
    struct Node {
        bool leaf = true;
        std::size_t feature = 0;
        double threshold = 0.0;
        std::int32_t left = -1, right = -1;
        double value = 0.0;                 // regression mean
        std::vector<double> class_probs;    // classification distribution
    };
    using Tree = std::vector<Node>;

    double node_impurity(const std::vector<double>& y, const std::vector<std::size_t>& rows) const {
        if (task_ == TaskKind::classification) {
            std::vector<double> counts(num_classes_, 0.0);
            for (auto r : rows) counts[static_cast<std::size_t>(y[r])] += 1.0;
            double gini = 1.0;
            const double n = static_cast<double>(rows.size());
            for (double c : counts) gini -= (c / n) * (c / n);
            return gini;
        }
        double mean = 0.0;
        for (auto r : rows) mean += y[r];
        mean /= static_cast<double>(rows.size());
        double var = 0.0;
        for (auto r : rows) var += (y[r] - mean) * (y[r] - mean);
        return var / static_cast<double>(rows.size());
    }

    void make_leaf(Node& node, const std::vector<double>& y, const std::vector<std::size_t>& rows) {
        node.leaf = true;
        if (task_ == TaskKind::classification) {
            node.class_probs.assign(num_classes_, 0.0);
            for (auto r : rows) node.class_probs[static_cast<std::size_t>(y[r])] += 1.0;
            for (auto& p : node.class_probs) p /= static_cast<double>(rows.size());
        } else {
            double mean = 0.0;
            for (auto r : rows) mean += y[r];
            node.value = mean / static_cast<double>(rows.size());
        }
    }

    std::int32_t build_node(Tree& tree, const std::vector<double>& x, std::size_t n_cols,
                            const std::vector<double>& y, const std::vector<std::size_t>& rows,
                            std::size_t depth, std::size_t mtry, Rng& rng, std::size_t n_total) {
        const auto node_idx = static_cast<std::int32_t>(tree.size());
        tree.emplace_back();

        const double impurity = node_impurity(y, rows);
        const bool stop = depth >= cfg_.max_depth || rows.size() < cfg_.min_samples_split ||
                          impurity <= 1e-12;
        if (!stop) {
            // Sample mtry distinct candidate features (partial Fisher-Yates).
            std::vector<std::size_t> feats(n_cols);
            std::iota(feats.begin(), feats.end(), 0);
            for (std::size_t i = 0; i < std::min(mtry, n_cols); ++i) {
                const std::size_t j = i + rng.uniform_int(n_cols - i);
                std::swap(feats[i], feats[j]);
            }
            feats.resize(std::min(mtry, n_cols));

            double best_gain = 0.0;
            std::size_t best_feature = 0;
            double best_threshold = 0.0;
            bool found = false;

            std::vector<std::size_t> order;
            for (auto f : feats) {
                order = rows;
                std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                    const double va = x[a * n_cols + f], vb = x[b * n_cols + f];
                    return va < vb || (va == vb && a < b);
                });
                double threshold = 0.0;
                const double gain = best_split_for_feature(x, n_cols, y, order, f, impurity, threshold);
                if (gain > best_gain + 1e-15) {  // strict improvement; first candidate wins ties
                    best_gain = gain;
                    best_feature = f;
                    best_threshold = threshold;
                    found = true;
                }
            }

            if (found && best_gain > 1e-12) {
                std::vector<std::size_t> left_rows, right_rows;
                for (auto r : rows) {
                    (x[r * n_cols + best_feature] <= best_threshold ? left_rows : right_rows).push_back(r);
                }
                if (!left_rows.empty() && !right_rows.empty()) {
                    importance_raw_[best_feature] +=
                        best_gain * static_cast<double>(rows.size()) / static_cast<double>(n_total);
                    tree[static_cast<std::size_t>(node_idx)].leaf = false;
                    tree[static_cast<std::size_t>(node_idx)].feature = best_feature;
                    tree[static_cast<std::size_t>(node_idx)].threshold = best_threshold;
                    const std::int32_t l = build_node(tree, x, n_cols, y, left_rows, depth + 1, mtry, rng, n_total);
                    const std::int32_t r = build_node(tree, x, n_cols, y, right_rows, depth + 1, mtry, rng, n_total);
                    tree[static_cast<std::size_t>(node_idx)].left = l;
                    tree[static_cast<std::size_t>(node_idx)].right = r;
                    return node_idx;
                }
            }
        }
        make_leaf(tree[static_cast<std::size_t>(node_idx)], y, rows);
        return node_idx;
    }

    // Weighted child-impurity scan over sorted rows; returns the best gain
    // and writes the chosen threshold (midpoint) to `threshold_out`.
    double best_split_for_feature(const std::vector<double>& x, std::size_t n_cols,
                                  const std::vector<double>& y, const std::vector<std::size_t>& sorted_rows,
                                  std::size_t f, double parent_impurity, double& threshold_out) const {
        const std::size_t n = sorted_rows.size();
        double best_gain = 0.0;
        bool found = false;

        if (task_ == TaskKind::classification) {
            std::vector<double> left_counts(num_classes_, 0.0), right_counts(num_classes_, 0.0);
            for (auto r : sorted_rows) right_counts[static_cast<std::size_t>(y[r])] += 1.0;
            double left_n = 0.0, right_n = static_cast<double>(n);
            double left_sq = 0.0, right_sq = 0.0;
            for (double c : right_counts) right_sq += c * c;

            for (std::size_t i = 0; i + 1 < n; ++i) {
                const auto cls = static_cast<std::size_t>(y[sorted_rows[i]]);
                left_sq += 2.0 * left_counts[cls] + 1.0;
                right_sq -= 2.0 * right_counts[cls] - 1.0;
                left_counts[cls] += 1.0;
                right_counts[cls] -= 1.0;
                left_n += 1.0;
                right_n -= 1.0;
                const double v = x[sorted_rows[i] * n_cols + f];
                const double v_next = x[sorted_rows[i + 1] * n_cols + f];
                if (v == v_next) continue;
                const double gini_l = 1.0 - left_sq / (left_n * left_n);
                const double gini_r = 1.0 - right_sq / (right_n * right_n);
                const double gain = parent_impurity -
                                    (left_n * gini_l + right_n * gini_r) / static_cast<double>(n);
                if (!found || gain > best_gain) {
                    best_gain = gain;
                    threshold_out = v + 0.5 * (v_next - v);
                    found = true;
                }
            }
        } else {
            double left_sum = 0.0, left_sq = 0.0, right_sum = 0.0, right_sq = 0.0;
            for (auto r : sorted_rows) {
                right_sum += y[r];
                right_sq += y[r] * y[r];
            }
            double left_n = 0.0, right_n = static_cast<double>(n);
            for (std::size_t i = 0; i + 1 < n; ++i) {
                const double yv = y[sorted_rows[i]];
                left_sum += yv;
                left_sq += yv * yv;
                right_sum -= yv;
                right_sq -= yv * yv;
                left_n += 1.0;
                right_n -= 1.0;
                const double v = x[sorted_rows[i] * n_cols + f];
                const double v_next = x[sorted_rows[i + 1] * n_cols + f];
                if (v == v_next) continue;
                const double var_l =
                    std::max(0.0, left_sq / left_n - (left_sum / left_n) * (left_sum / left_n));
                const double var_r =
                    std::max(0.0, right_sq / right_n - (right_sum / right_n) * (right_sum / right_n));
                const double gain = parent_impurity -
                                    (left_n * var_l + right_n * var_r) / static_cast<double>(n);
                if (!found || gain > best_gain) {
                    best_gain = gain;
                    threshold_out = v + 0.5 * (v_next - v);
                    found = true;
                }
            }
        }
        return found ? best_gain : 0.0;
    }

    const Node& descend(const Tree& tree, const double* row) const {
        std::size_t idx = 0;
        while (!tree[idx].leaf) {
            idx = static_cast<std::size_t>(row[tree[idx].feature] <= tree[idx].threshold
                                               ? tree[idx].left
                                               : tree[idx].right);
        }
        return tree[idx];
    }

    TaskKind task_;
    std::size_t num_classes_;
    RandomForestConfig cfg_;
    std::size_t n_cols_ = 0;
    std::vector<Tree> trees_;
    std::vector<double> importance_raw_;
};

// ---------------------------------------------------------------------------
// downstream MLP (one hidden layer of 64)

struct DownstreamMlpConfig {
    std::size_t hidden = 64;
    std::size_t epochs = 150;
    double lr = 1e-3;
};

class DownstreamMlp {
public:
    DownstreamMlp(std::size_t input_width, TaskKind task, std::size_t num_classes, std::uint64_t seed,
                  DownstreamMlpConfig cfg = {})
        : width_(input_width), task_(task), cfg_(cfg) {
        out_dim_ = task == TaskKind::classification ? num_classes : 1;
        Rng rng(splitmix64(seed ^ 0xd01277e11ULL));
        l1_ = nn::Linear(params_, "l1", width_, cfg.hidden, rng);
        head_ = nn::Linear(params_, "head", cfg.hidden, out_dim_, rng);
    }

    void fit(const TabularDataset& ds, const std::vector<std::size_t>& rows) {
        auto x = nn::Tensor::from_vector({rows.size(), width_}, feature_matrix(ds, rows, width_));
        const auto y = labels_of(ds, rows);
        std::vector<std::size_t> targets;
        nn::Tensor t_reg;
        if (task_ == TaskKind::classification) {
            std::set<double> classes(y.begin(), y.end());
            if (classes.size() < 2) throw TsfgError("downstream mlp: single-class train split");
            targets.resize(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) targets[i] = static_cast<std::size_t>(y[i]);
        } else {
            t_reg = nn::Tensor::from_vector({rows.size(), 1}, y);
        }
        nn::Adam opt(nn::AdamConfig{cfg_.lr, 0.9, 0.999, 1e-8});
        for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
            params_.zero_grad();
            nn::Tensor loss;
            if (task_ == TaskKind::classification) {
                loss = nn::neg(nn::mean(nn::gather_rows(nn::log_softmax_rows(forward(x)), targets)));
            } else {
                const nn::Tensor d = nn::sub(forward(x), t_reg);
                loss = nn::mean(nn::mul(d, d));
            }
            if (!std::isfinite(loss.item()))
                throw TsfgError("downstream mlp diverged at epoch " + std::to_string(epoch));
            loss.backward();
            nn::clip_grad_norm(params_, 1.0);
            opt.step(params_);
        }
    }

    std::vector<double> predict(const TabularDataset& ds, const std::vector<std::size_t>& rows) const {
        auto x = nn::Tensor::from_vector({rows.size(), width_}, feature_matrix(ds, rows, width_));
        const nn::Tensor logits = forward(x);
        std::vector<double> out(rows.size());
        if (task_ == TaskKind::classification) {
            for (std::size_t i = 0; i < rows.size(); ++i) {
                std::size_t best = 0;
                for (std::size_t k = 1; k < out_dim_; ++k)
                    if (logits.at(i, k) > logits.at(i, best)) best = k;
                out[i] = static_cast<double>(best);
            }
        } else {
            for (std::size_t i = 0; i < rows.size(); ++i) out[i] = logits.at(i, 0);
        }
        return out;
    }

private:
    nn::Tensor forward(const nn::Tensor& x) const { return head_(nn::relu(l1_(x))); }

    std::size_t width_;
    TaskKind task_;
    std::size_t out_dim_;
    DownstreamMlpConfig cfg_;
    nn::ParameterSet params_;
    nn::Linear l1_, head_;
};

// ---------------------------------------------------------------------------
// downstream evaluation

enum class DownstreamKind { random_forest, mlp };

inline std::string to_string(DownstreamKind k) {
    return k == DownstreamKind::random_forest ? "random_forest" : "mlp";
}

// Trains a fresh model on the train split under `seed` and scores the
// requested split. Random-forest reports include importances.
inline MetricReport evaluate_downstream(DownstreamKind kind, const TabularDataset& ds, Split eval_split,
                                        std::uint64_t seed) {
    const auto train_rows = ds.rows_in(Split::train);
    const auto eval_rows = ds.rows_in(eval_split);
    if (train_rows.empty() || eval_rows.empty())
        throw TsfgError("evaluate_downstream: empty train or eval split");

    std::vector<double> preds;
    MetricReport report;
    report.task_kind = ds.task_kind;
    for (const auto& c : ds.columns) report.column_names.push_back(c.name);

    if (kind == DownstreamKind::random_forest) {
        RandomForest rf(ds.task_kind, ds.num_classes);
        rf.fit(ds, train_rows, seed);
        preds = rf.predict(ds, eval_rows);
        report.importances = rf.importances();
    } else {
        DownstreamMlp mlp(ds.num_features(), ds.task_kind, ds.num_classes, seed);
        mlp.fit(ds, train_rows);
        preds = mlp.predict(ds, eval_rows);
    }

    const auto actual = labels_of(ds, eval_rows);
    if (ds.task_kind == TaskKind::classification) {
        report.accuracy = accuracy(preds, actual);
        report.macro_f1 = macro_f1(preds, actual, ds.num_classes);
        report.macro_precision = macro_precision(preds, actual, ds.num_classes);
    } else {
        report.one_minus_rae = one_minus_rae(preds, actual);
        report.r_squared = r_squared(preds, actual);
    }
    return report;
}

}  // namespace tsfg::eval
