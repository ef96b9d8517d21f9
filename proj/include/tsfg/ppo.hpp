#pragma once

// Stage-2 fine-tuning: whole-sequence rollouts rewarded by the downstream
// metric improvement on the validation split, optimized with the clipped
// surrogate objective plus an entropy bonus. Terminal rewards are batch
// normalized and broadcast per token (no value network).

#include <iostream>
#include <string>
#include <vector>

#include "tsfg/evaluators.hpp"
#include "tsfg/policy.hpp"
#include "tsfg/transform.hpp"

namespace tsfg {

struct PPOConfig {
    std::size_t iterations = 10;  // T_max
    std::size_t trajectories_per_iteration = 8;
    std::size_t epochs_per_batch = 4;
    double clip_epsilon = 0.2;
    double entropy_coef = 1e-4;
    double lr = 1e-4;
    double grad_clip = 1.0;
    bool normalize_advantages = true;
    double temperature = 1.0;  // rollout temperature
};

struct Trajectory {
    std::vector<lang::TransformToken> tokens;
    std::vector<double> old_log_probs;  // captured at rollout time
    double reward = 0.0;                // metric delta on the val split
    double advantage = 0.0;             // broadcast to every token
    bool eval_failed = false;
};

struct BestArtifact {
    lang::FeatureProgram program;
    double val_reward = 0.0;
    std::size_t iteration = 0;  // 0 = the initial empty incumbent
    eval::MetricReport test_report;
};

struct PPOUpdateStats {
    double objective = 0.0;   // clipped surrogate + entropy bonus
    double clip_fraction = 0.0;
    double mean_entropy = 0.0;
    std::size_t excluded_tokens = 0;
};

struct PPOIterationLog {
    std::size_t iteration = 0;
    double mean_reward = 0.0;
    double max_reward = 0.0;
    double best_reward = 0.0;
    PPOUpdateStats last_update;
};

struct FineTuneResult {
    BestArtifact best;
    std::vector<double> best_reward_trace;  // after each iteration
    std::vector<PPOIterationLog> iterations;
    double base_val_metric = 0.0;
};

// Downstream models are reseeded identically for the base metric and every
// reward evaluation of a run; derived once from the run seed.
inline std::uint64_t derive_eval_seed(std::uint64_t run_seed) {
    return splitmix64(run_seed ^ 0xe7a1ULL);
}

// The clipped-surrogate-plus-entropy objective for one trajectory, as a loss
// (negated objective contribution, unreduced sums). Shared by the production
// update and the reference tests.
struct PPOTrajectoryTerms {
    nn::Tensor objective_sum;  // sum over included tokens of min(r*A, clip(r)*A)
    nn::Tensor entropy_sum;    // sum over included tokens of H_t
    std::size_t included = 0;
    std::size_t clipped = 0;  // tokens whose ratio left [1-eps, 1+eps]
};

inline PPOTrajectoryTerms ppo_trajectory_terms(const nn::Tensor& new_log_probs,
                                               const std::vector<double>& old_log_probs,
                                               double advantage, const nn::Tensor& entropies,
                                               double clip_epsilon) {
    const std::size_t L = old_log_probs.size();
    if (new_log_probs.size() != L) throw TsfgError("ppo: log-prob length mismatch");

    // Exclude tokens whose ratio would overflow (|delta| > 60 nats).
    std::vector<double> include(L, 1.0);
    std::size_t included = 0, clipped = 0;
    for (std::size_t t = 0; t < L; ++t) {
        const double delta = new_log_probs.data()[t] - old_log_probs[t];
        if (!std::isfinite(delta) || std::fabs(delta) > 60.0) {
            include[t] = 0.0;
            continue;
        }
        ++included;
        const double ratio = std::exp(delta);
        if (ratio < 1.0 - clip_epsilon || ratio > 1.0 + clip_epsilon) ++clipped;
    }

    const nn::Tensor inc = nn::Tensor::from_vector({L}, include);
    const nn::Tensor old_lp = nn::Tensor::from_vector({L}, old_log_probs);
    const nn::Tensor ratio = nn::exp_t(nn::mul(nn::sub(new_log_probs, old_lp), inc));
    const nn::Tensor adv = nn::Tensor::full({L}, advantage);
    const nn::Tensor unclipped = nn::mul(ratio, adv);
    const nn::Tensor clipped_term =
        nn::mul(nn::clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon), adv);

    PPOTrajectoryTerms out;
    out.objective_sum = nn::sum(nn::mul(inc, nn::min_elem(unclipped, clipped_term)));
    out.entropy_sum = nn::sum(nn::mul(inc, entropies));
    out.included = included;
    out.clipped = clipped;
    return out;
}

// Collect n trajectories from a frozen snapshot. The base metric is computed
// once per run by the caller and passed in; failed downstream evaluations are
// penalized at the running-minimum reward.
inline std::vector<Trajectory> collect(const PolicyModel& policy, const TabularDataset& ds,
                                       std::size_t n, double base_metric,
                                       eval::DownstreamKind downstream, eval::RewardMetric metric,
                                       std::uint64_t eval_seed, Rng& rng,
                                       const lang::ApplyOptions& apply_opt, double temperature = 1.0,
                                       std::ostream* log = nullptr) {
    std::vector<Trajectory> out;
    out.reserve(n);
    nn::NoGradGuard ng;
    const nn::Tensor memory = policy.encode(ds);
    double running_min = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        auto seq = policy.sample_sequence(memory, temperature, rng);
        auto validated = lang::validate(seq.tokens, policy.schema());
        if (!validated.ok()) throw TsfgError("ppo: sampled sequence failed validation");
        Trajectory traj;
        traj.tokens = seq.tokens;
        traj.old_log_probs = seq.log_probs;
        try {
            const auto augmented =
                lang::apply_program(lang::program_from_sequence(validated.value()), ds, apply_opt);
            const auto report = eval::evaluate_downstream(downstream, augmented, Split::val, eval_seed);
            traj.reward = eval::metric_delta(report.metric(metric), base_metric);
        } catch (const TsfgError& e) {
            traj.reward = running_min;
            traj.eval_failed = true;
            if (log) *log << "trajectory " << i << " evaluation failed (" << e.what()
                          << "); penalized at " << running_min << "\n";
        }
        running_min = std::min(running_min, traj.reward);
        out.push_back(std::move(traj));
    }
    return out;
}

// A_i = (r_i - mean) / (std + 1e-8), population std, broadcast per token.
inline void compute_advantages(std::vector<Trajectory>& trajectories, bool normalize = true) {
    if (trajectories.size() < 2) throw TsfgError("ppo: need at least 2 trajectories for advantages");
    if (!normalize) {
        for (auto& t : trajectories) t.advantage = t.reward;
        return;
    }
    double mean = 0.0;
    for (const auto& t : trajectories) mean += t.reward;
    mean /= static_cast<double>(trajectories.size());
    double var = 0.0;
    for (const auto& t : trajectories) var += (t.reward - mean) * (t.reward - mean);
    var /= static_cast<double>(trajectories.size());
    const double denom = std::sqrt(var) + 1e-8;
    for (auto& t : trajectories) t.advantage = (t.reward - mean) / denom;
}

// One optimization epoch over the batch: ascend the clipped surrogate plus
// entropy bonus, token-mean over the whole batch.
inline PPOUpdateStats ppo_update(PolicyModel& policy, nn::Adam& optimizer,
                                 const std::vector<Trajectory>& trajectories, const TabularDataset& ds,
                                 const PPOConfig& cfg) {
    nn::Tensor objective_total;
    nn::Tensor entropy_total;
    std::size_t tokens_total = 0, clipped_total = 0, excluded_total = 0;

    for (const auto& traj : trajectories) {
        auto tf = policy.log_probs_of(ds, traj.tokens, cfg.temperature, /*train_mode=*/false);
        auto terms = ppo_trajectory_terms(tf.log_probs, traj.old_log_probs, traj.advantage,
                                          tf.entropies, cfg.clip_epsilon);
        objective_total = objective_total.defined() ? nn::add(objective_total, terms.objective_sum)
                                                    : terms.objective_sum;
        entropy_total =
            entropy_total.defined() ? nn::add(entropy_total, terms.entropy_sum) : terms.entropy_sum;
        tokens_total += terms.included;
        clipped_total += terms.clipped;
        excluded_total += traj.tokens.size() - terms.included;
    }
    if (tokens_total == 0) throw TsfgError("ppo: all tokens excluded from the update");

    const double inv = 1.0 / static_cast<double>(tokens_total);
    const nn::Tensor objective = nn::add(nn::mul_scalar(objective_total, inv),
                                         nn::mul_scalar(entropy_total, cfg.entropy_coef * inv));
    const nn::Tensor loss = nn::neg(objective);

    policy.parameters().zero_grad();
    loss.backward();
    nn::clip_grad_norm(policy.parameters(), cfg.grad_clip);
    optimizer.step(policy.parameters());

    PPOUpdateStats stats;
    stats.objective = objective.item();
    stats.clip_fraction = static_cast<double>(clipped_total) / static_cast<double>(tokens_total);
    stats.mean_entropy = entropy_total.item() * inv;
    stats.excluded_tokens = excluded_total;
    return stats;
}

// The full stage-2 loop. The policy should already hold the stage-1 best
// weights (or a random init for the no-pretrain ablation). The best program
// by val reward is tracked across iterations and finally evaluated on test.
inline FineTuneResult fine_tune(PolicyModel& policy, const TabularDataset& ds, const PPOConfig& cfg,
                                eval::DownstreamKind downstream, eval::RewardMetric metric,
                                std::uint64_t seed, const lang::ApplyOptions& apply_opt = {},
                                std::ostream* log = nullptr) {
    policy.check_dataset(ds);
    FineTuneResult result;
    const std::uint64_t eval_seed = derive_eval_seed(seed);
    result.base_val_metric =
        eval::evaluate_downstream(downstream, ds, Split::val, eval_seed).metric(metric);

    Rng rollout_rng(splitmix64(seed ^ 0x99c011ec7ULL));
    nn::Adam optimizer(nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

    result.best = BestArtifact{};  // empty program, reward 0

    for (std::size_t iter = 1; iter <= cfg.iterations; ++iter) {
        auto trajectories =
            collect(policy, ds, cfg.trajectories_per_iteration, result.base_val_metric, downstream,
                    metric, eval_seed, rollout_rng, apply_opt, cfg.temperature, log);

        double mean_r = 0.0, max_r = -std::numeric_limits<double>::infinity();
        for (const auto& traj : trajectories) {
            mean_r += traj.reward;
            max_r = std::max(max_r, traj.reward);
            if (traj.reward > result.best.val_reward) {
                auto validated = lang::validate(traj.tokens, policy.schema());
                result.best.program = lang::program_from_sequence(validated.value());
                result.best.val_reward = traj.reward;
                result.best.iteration = iter;
            }
        }
        mean_r /= static_cast<double>(trajectories.size());

        compute_advantages(trajectories, cfg.normalize_advantages);
        PPOUpdateStats stats;
        for (std::size_t epoch = 0; epoch < cfg.epochs_per_batch; ++epoch)
            stats = ppo_update(policy, optimizer, trajectories, ds, cfg);

        result.best_reward_trace.push_back(result.best.val_reward);
        PPOIterationLog il;
        il.iteration = iter;
        il.mean_reward = mean_r;
        il.max_reward = max_r;
        il.best_reward = result.best.val_reward;
        il.last_update = stats;
        result.iterations.push_back(il);
        if (log) {
            *log << "iter " << iter << " mean_r=" << mean_r << " max_r=" << max_r
                 << " best_r=" << result.best.val_reward << " clip_frac=" << stats.clip_fraction
                 << " entropy=" << stats.mean_entropy << "\n";
            log->flush();
        }
    }

    const auto augmented = lang::apply_program(result.best.program, ds, apply_opt);
    result.best.test_report = eval::evaluate_downstream(downstream, augmented, Split::test, eval_seed);
    return result;
}

}  // namespace tsfg
