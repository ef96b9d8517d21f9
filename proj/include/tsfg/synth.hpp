#pragma once

// Synthetic labeled datasets whose targets hide a known feature interaction.
// Desk-scale substrate for end-to-end runs: the interaction is recoverable by
// the transformation language, and a sidecar note records the ground truth.

#include <string>
#include <vector>

#include "tsfg/dataset.hpp"

namespace tsfg {

enum class SynthKind { product, xor_parity, linear };

inline std::string to_string(SynthKind k) {
    switch (k) {
        case SynthKind::product: return "product";
        case SynthKind::xor_parity: return "xor";
        default: return "linear";
    }
}

inline SynthKind synth_kind_from_string(const std::string& s) {
    if (s == "product") return SynthKind::product;
    if (s == "xor") return SynthKind::xor_parity;
    if (s == "linear") return SynthKind::linear;
    throw ConfigError("unknown synth kind: " + s + " (want product|xor|linear)");
}

struct SynthResult {
    TabularDataset dataset;
    std::string ground_truth;  // human-readable description of the hidden interaction
};

// product: y = 1[V1*V2*V3 + 0.05 n > 0]. Every marginal and every pairwise
//          projection of the signal is symmetric, so axis-aligned trees have
//          to stumble into three nested lucky splits; a single generated
//          product column collapses the parity by one order and two collapse
//          it to a threshold. Adding V1*V2 by hand lifts a depth-8 forest by
//          well over 0.05 macro-F1 at this scale.
// xor:     binary V1, V2; y = V1 xor V2 with 5% label flips.
// linear:  y = 1[V1 + 0.3 V2 + 0.15 V3 + 0.1 n > 0]; easy for the base model.
inline SynthResult make_synth(SynthKind kind, std::size_t rows, std::size_t features,
                              std::uint64_t seed) {
    if (rows < 50) throw ConfigError("synth: need at least 50 rows");
    if (features < 3) throw ConfigError("synth: need at least 3 features");

    Rng rng(splitmix64(seed ^ 0x5e17f00dULL));
    std::vector<std::vector<double>> cols(features, std::vector<double>(rows));
    std::vector<FeatureKind> kinds(features, FeatureKind::continuous);
    std::vector<double> labels(rows);
    std::string truth;

    switch (kind) {
        case SynthKind::product: {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < features; ++c) cols[c][r] = rng.normal();
                const double signal = cols[0][r] * cols[1][r] * cols[2][r] + 0.05 * rng.normal();
                labels[r] = signal > 0.0 ? 1.0 : 0.0;
            }
            truth = "y = 1[V1*V2*V3 + 0.05*noise > 0]; oracle features: V1*V2 (+V1 *V2), "
                    "V1*V2*V3 (+V1 *V2 *V3)";
            break;
        }
        case SynthKind::xor_parity: {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < features; ++c) cols[c][r] = rng.normal();
                const double a = rng.uniform01() < 0.5 ? 0.0 : 1.0;
                const double b = rng.uniform01() < 0.5 ? 0.0 : 1.0;
                cols[0][r] = a;
                cols[1][r] = b;
                double y = (a != b) ? 1.0 : 0.0;
                if (rng.uniform01() < 0.05) y = 1.0 - y;  // label noise
                labels[r] = y;
            }
            kinds[0] = FeatureKind::discrete;
            kinds[1] = FeatureKind::discrete;
            truth = "y = xor(V1, V2) with 5% flips; oracle feature: cross(V1, V2) (xV1 xV2)";
            break;
        }
        case SynthKind::linear: {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < features; ++c) cols[c][r] = rng.normal();
                const double signal =
                    cols[0][r] + 0.3 * cols[1][r] + 0.15 * cols[2][r] + 0.1 * rng.normal();
                labels[r] = signal > 0.0 ? 1.0 : 0.0;
            }
            truth = "y = 1[V1 + 0.3*V2 + 0.15*V3 + 0.1*noise > 0]; no interaction needed";
            break;
        }
    }

    SynthResult out;
    out.ground_truth = truth;
    out.dataset.task_kind = TaskKind::classification;
    out.dataset.num_classes = 2;
    out.dataset.labels = labels;
    out.dataset.split.assign(rows, Split::train);
    for (std::size_t c = 0; c < features; ++c) {
        FeatureColumn col;
        col.name = "V" + std::to_string(c + 1);
        col.kind = kinds[c];
        col.values = std::move(cols[c]);
        col.stats = compute_stats(col.values);
        out.dataset.columns.push_back(std::move(col));
    }
    return out;
}

inline void write_synth(const SynthResult& synth, const std::string& out_path) {
    write_csv(synth.dataset, out_path, "y");
    std::ofstream meta(out_path + ".meta.txt");
    if (!meta) throw IoError("cannot write sidecar: " + out_path + ".meta.txt");
    meta << synth.ground_truth << "\n";
}

}  // namespace tsfg
