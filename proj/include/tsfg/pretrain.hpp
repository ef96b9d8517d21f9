#pragma once

// Stage-1 training: sample token sequences at an annealed temperature, score
// every completed feature against the frozen surrogate, and update the policy
// with a score-function estimator.
//
// For each completed feature f (its segment closed by EOS, or by STOP when
// the segment is non-empty) the surrogate loss L_f of the working augmented
// train split is taken as a cost; the policy objective for the sequence is
//   J = sum_f (L_f - b) * sum_{t in segment f} log pi(a_t)
// with b an EMA baseline of observed losses. Descending on J lowers the
// expected surrogate loss. Sampling crosses a non-differentiable step, so L_f
// enters as a constant weight rather than through the graph.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "tsfg/evaluators.hpp"
#include "tsfg/policy.hpp"
#include "tsfg/transform.hpp"

namespace tsfg {

struct PretrainConfig {
    std::size_t epochs = 30;
    std::size_t sequences_per_epoch = 16;
    double temperature_start = 1.0;
    double temperature_end = 0.1;
    double baseline_decay = 0.9;
    std::size_t patience = 10;  // early stop on val loss
    double lr = 1e-4;
    double grad_clip = 1.0;
};

struct PretrainRecord {
    std::size_t epoch = 0;
    double temperature = 1.0;
    double mean_train_loss = 0.0;  // mean surrogate loss over scored features
    double val_loss = 0.0;         // greedy-program surrogate loss on the val split
    double best_val_loss = 0.0;    // best seen so far (non-increasing)
    bool improved = false;
};

struct PretrainResult {
    std::vector<PretrainRecord> records;
    double best_val_loss = 0.0;
    std::size_t best_epoch = 0;
    std::string checkpoint_path;
    std::size_t features_scored = 0;
};

namespace pretrain_detail {

// Append a materialized, train-standardized feature column to the working set.
inline void append_column(TabularDataset& working, const lang::MaterializedColumn& col,
                          std::size_t index) {
    FeatureColumn fc;
    fc.name = "work_" + std::to_string(index) + "[" + col.name + "]";
    fc.kind = col.kind;
    fc.values = col.values;
    fc.stats = compute_stats(fc.values);
    working.columns.push_back(std::move(fc));
}

}  // namespace pretrain_detail

// Trains `policy` in place and reloads the best-val checkpoint before
// returning. `surrogate` must already be trained (and is never touched).
inline PretrainResult pretrain(PolicyModel& policy, const eval::SurrogateMLP& surrogate,
                               const TabularDataset& ds, const PretrainConfig& cfg,
                               std::uint64_t seed, const std::string& checkpoint_path,
                               std::ostream* log = nullptr) {
    if (!surrogate.frozen()) throw TsfgError("pretrain: surrogate must be trained and frozen");
    if (cfg.epochs < 1) throw ConfigError("pretrain: epochs must be >= 1");
    policy.check_dataset(ds);

    const auto train_rows = ds.rows_in(Split::train);
    const auto val_rows = ds.rows_in(Split::val);
    const std::size_t max_extra = surrogate.input_width() - ds.num_features();

    Rng base_rng(splitmix64(seed ^ 0x92e7fa11ULL));
    Rng sample_rng = base_rng.fork(1);
    Rng dropout_rng = base_rng.fork(2);

    nn::Adam optimizer(nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    double baseline = surrogate.loss_on(ds, train_rows);  // cost of "no new feature"

    // Greedy-decode program loss on the val split; the checkpointing signal.
    lang::ApplyOptions apply_opt;
    apply_opt.generated_cap_absolute = max_extra;
    auto val_loss_of_current = [&]() {
        auto greedy = policy.greedy_sequence(ds);
        auto validated = lang::validate(greedy.tokens, policy.schema());
        if (!validated.ok()) throw TsfgError("pretrain: greedy decode failed validation");
        auto augmented = lang::apply_program(lang::program_from_sequence(validated.value()), ds, apply_opt);
        return surrogate.loss_on(augmented, val_rows.empty() ? train_rows : val_rows);
    };

    PretrainResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    std::size_t consecutive_failures = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double frac = cfg.epochs > 1
                                ? static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1)
                                : 0.0;
        const double temperature =
            cfg.temperature_start + (cfg.temperature_end - cfg.temperature_start) * frac;

        double loss_sum = 0.0;
        std::size_t loss_count = 0;

        for (std::size_t s = 0; s < cfg.sequences_per_epoch; ++s) {
            SampledSequence seq;
            {
                nn::NoGradGuard ng;
                const nn::Tensor memory = policy.encode(ds);
                seq = policy.sample_sequence(memory, temperature, sample_rng);
            }
            const auto validated = lang::validate(seq.tokens, policy.schema());
            if (!validated.ok()) throw TsfgError("pretrain: sampled sequence failed validation");

            // Score each completed feature against the frozen surrogate; the
            // working set accumulates within the sequence and resets after it.
            TabularDataset working = ds;
            std::vector<double> token_weight(seq.tokens.size(), 0.0);
            std::size_t seg_start = 0;
            std::size_t appended = 0;
            bool any_weight = false;
            bool failed = false;

            for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
                const auto kind = seq.tokens[t].kind;
                const bool closes = kind == lang::TokenKind::eos ||
                                    (kind == lang::TokenKind::stop && t > seg_start);
                if (kind == lang::TokenKind::eos || kind == lang::TokenKind::stop) {
                    if (closes && appended < max_extra) {
                        lang::Segment segment(seq.tokens.begin() + static_cast<std::ptrdiff_t>(seg_start),
                                              seq.tokens.begin() + static_cast<std::ptrdiff_t>(t));
                        auto col = lang::materialize_segment(segment, ds);
                        if (!col.rejected) {
                            lang::apply_generated_scale(lang::fit_generated_scale(col, ds), col);
                            pretrain_detail::append_column(working, col, ++appended);
                            const double loss = surrogate.loss_on(working, train_rows);
                            if (!std::isfinite(loss)) {
                                failed = true;
                                break;
                            }
                            const double weight = loss - baseline;
                            for (std::size_t u = seg_start; u <= t; ++u) token_weight[u] = weight;
                            baseline = cfg.baseline_decay * baseline +
                                       (1.0 - cfg.baseline_decay) * loss;
                            loss_sum += loss;
                            ++loss_count;
                            ++result.features_scored;
                            any_weight = true;
                        }
                    }
                    seg_start = t + 1;
                }
            }

            if (failed) {
                if (log) *log << "epoch " << epoch << " seq " << s << " non-finite loss, skipped\n";
                if (++consecutive_failures >= 3)
                    throw TsfgError("pretrain: three consecutive non-finite losses");
                continue;
            }
            consecutive_failures = 0;
            if (!any_weight) continue;  // nothing to learn from (empty program)

            auto tf = policy.log_probs_of(ds, seq.tokens, temperature, /*train_mode=*/true,
                                          &dropout_rng);
            const nn::Tensor weights =
                nn::Tensor::from_vector({token_weight.size()}, token_weight);
            const nn::Tensor objective = nn::sum(nn::mul(weights, tf.log_probs));
            if (!std::isfinite(objective.item())) {
                if (log) *log << "epoch " << epoch << " seq " << s << " non-finite objective, skipped\n";
                if (++consecutive_failures >= 3)
                    throw TsfgError("pretrain: three consecutive non-finite losses");
                continue;
            }
            policy.parameters().zero_grad();
            objective.backward();
            nn::clip_grad_norm(policy.parameters(), cfg.grad_clip);
            optimizer.step(policy.parameters());
        }

        PretrainRecord rec;
        rec.epoch = epoch;
        rec.temperature = temperature;
        rec.mean_train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : baseline;
        rec.val_loss = val_loss_of_current();
        if (rec.val_loss < result.best_val_loss) {
            result.best_val_loss = rec.val_loss;
            result.best_epoch = epoch;
            rec.improved = true;
            since_best = 0;
            nn::save_checkpoint(checkpoint_path, policy.parameters(), policy.schema_fingerprint());
        } else {
            ++since_best;
        }
        rec.best_val_loss = result.best_val_loss;
        result.records.push_back(rec);
        if (log) {
            *log << "epoch " << epoch << " train_loss=" << rec.mean_train_loss
                 << " val_loss=" << rec.val_loss << " T=" << rec.temperature
                 << " best=" << rec.best_val_loss << "\n";
            log->flush();
        }
        if (since_best >= cfg.patience) break;
    }

    // Hand back the best model as the stage-2 initialization.
    nn::load_checkpoint(checkpoint_path, policy.parameters(), policy.schema_fingerprint());
    result.checkpoint_path = checkpoint_path;
    return result;
}

}  // namespace tsfg
