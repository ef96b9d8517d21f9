#pragma once

// Shared test utilities: the central-difference gradient oracle and small
// dataset builders.

#include <functional>
#include <vector>

#include "tsfg/dataset.hpp"
#include "tsfg/tensor.hpp"

namespace tsfg_test {

// Central-difference gradient check. `build_loss` must rebuild the graph
// from the current leaf data and return a scalar; any internal randomness
// must be re-seeded inside the builder so repeated calls are identical.
// Returns the max relative error over sampled coordinates.
inline double fd_max_rel_err(const std::vector<tsfg::nn::Tensor>& leaves,
                             const std::function<tsfg::nn::Tensor()>& build_loss, double h = 1e-4,
                             std::size_t max_coords_per_leaf = 0) {
    using tsfg::nn::Tensor;
    for (const auto& l : leaves) {
        Tensor t = l;
        t.zero_grad();
    }
    Tensor loss = build_loss();
    loss.backward();

    std::vector<std::vector<double>> grads;
    for (const auto& l : leaves) grads.push_back(l.grad());

    double max_err = 0.0;
    tsfg::Rng pick(12345);
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        Tensor leaf = leaves[k];
        std::vector<std::size_t> coords;
        if (max_coords_per_leaf == 0 || leaf.size() <= max_coords_per_leaf) {
            for (std::size_t i = 0; i < leaf.size(); ++i) coords.push_back(i);
        } else {
            for (std::size_t i = 0; i < max_coords_per_leaf; ++i)
                coords.push_back(pick.uniform_int(leaf.size()));
        }
        for (auto i : coords) {
            const double orig = leaf.data()[i];
            leaf.data()[i] = orig + h;
            const double lp = build_loss().item();
            leaf.data()[i] = orig - h;
            const double lm = build_loss().item();
            leaf.data()[i] = orig;
            const double fd = (lp - lm) / (2.0 * h);
            const double g = grads[k][i];
            const double err = std::fabs(fd - g) / std::max({std::fabs(fd), std::fabs(g), 1e-3});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

// Small all-continuous dataset with the given values (one vector per column),
// labels defaulting to alternating classes.
inline tsfg::TabularDataset make_dataset(const std::vector<std::vector<double>>& cols,
                                         std::vector<double> labels = {},
                                         std::vector<tsfg::FeatureKind> kinds = {}) {
    tsfg::TabularDataset ds;
    const std::size_t rows = cols.empty() ? 0 : cols[0].size();
    for (std::size_t c = 0; c < cols.size(); ++c) {
        tsfg::FeatureColumn col;
        col.name = "V" + std::to_string(c + 1);
        col.kind = kinds.empty() ? tsfg::FeatureKind::continuous : kinds[c];
        col.values = cols[c];
        col.stats = tsfg::compute_stats(col.values);
        ds.columns.push_back(col);
    }
    if (labels.empty()) {
        for (std::size_t r = 0; r < rows; ++r) labels.push_back(static_cast<double>(r % 2));
    }
    ds.labels = labels;
    ds.task_kind = tsfg::TaskKind::classification;
    ds.num_classes = 2;
    ds.split.assign(rows, tsfg::Split::train);
    return ds;
}

}  // namespace tsfg_test
