#pragma once

// The sequence-generation policy: a Transformer encoder-decoder bound to a
// dataset schema. The encoder turns per-feature summary statistics into a
// latent memory; the decoder emits transformation tokens autoregressively.
// Sampling applies a validity mask derived from the same SequenceState the
// validator uses, so sampled sequences always validate.
//
// Two execution paths share one set of weights:
//   - graph mode (teacher-forced) for gradients: log_probs_of()
//   - a KV-cached plain-double decoder for rollouts: sample_sequence()
// A self-consistency test pins the two to 1e-9 agreement.

#include <array>
#include <string>
#include <vector>

#include "tsfg/dataset.hpp"
#include "tsfg/nn.hpp"
#include "tsfg/transform.hpp"

namespace tsfg {

struct PolicyConfig {
    std::size_t d_model = 128;
    std::size_t d_ff = 128;
    std::size_t heads = 8;
    std::size_t encoder_layers = 2;
    std::size_t decoder_layers = 2;
    double dropout = 0.1;  // attention/FFN dropout in train mode
};

struct SampledSequence {
    std::vector<lang::TransformToken> tokens;
    std::vector<std::size_t> ids;       // vocabulary ids, parallel to tokens
    std::vector<double> log_probs;      // under the masked sampling distribution
    std::vector<double> entropies;      // per-step masked distribution entropy
};

struct TeacherForced {
    nn::Tensor log_probs;  // [L], differentiable
    nn::Tensor entropies;  // [L], differentiable
};

namespace policy_detail {

constexpr std::size_t kStatsDim = 7;

inline std::array<double, kStatsDim> stats_vector(const FeatureColumn& col) {
    return {std::asinh(col.stats.mean),
            std::asinh(col.stats.std),
            std::asinh(col.stats.min),
            std::asinh(col.stats.max),
            std::log1p(static_cast<double>(col.stats.distinct_count)),
            col.stats.fraction_missing,
            col.kind == FeatureKind::discrete ? 1.0 : 0.0};
}

using Vec = std::vector<double>;

// y[j] += x[i] * W[i, j]; iteration order matches nn::matmul so the plain
// path reproduces graph-path numbers bit for bit.
inline void matvec_acc(const std::vector<double>& w, std::size_t in, std::size_t out,
                       const Vec& x, Vec& y) {
    for (std::size_t i = 0; i < in; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* wrow = &w[i * out];
        for (std::size_t j = 0; j < out; ++j) y[j] += xi * wrow[j];
    }
}

inline Vec linear_vec(const nn::Linear& l, const Vec& x) {
    const std::size_t in = l.weight().rows(), out = l.weight().cols();
    Vec y(l.bias().data());
    Vec acc(out, 0.0);
    matvec_acc(l.weight().data(), in, out, x, acc);
    for (std::size_t j = 0; j < out; ++j) y[j] = acc[j] + l.bias().data()[j];
    return y;
}

inline Vec layer_norm_vec(const nn::LayerNorm& ln, const Vec& x, double eps = 1e-5) {
    const std::size_t n = x.size();
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    Vec y(n);
    for (std::size_t j = 0; j < n; ++j)
        y[j] = (x[j] - mu) * inv_std * ln.gamma().data()[j] + ln.beta().data()[j];
    return y;
}

inline void gelu_inplace(Vec& x) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    for (auto& v : x) v = v * 0.5 * (1.0 + std::erf(v * kInvSqrt2));
}

}  // namespace policy_detail

class PolicyModel {
public:
    PolicyModel(const lang::Schema& schema, PolicyConfig cfg, std::uint64_t seed)
        : schema_(schema), vocab_(schema.num_features()), cfg_(cfg) {
        if (cfg_.heads == 0 || cfg_.d_model % cfg_.heads != 0) {
            throw TsfgError("policy: d_model " + std::to_string(cfg_.d_model) +
                            " not divisible by heads " + std::to_string(cfg_.heads));
        }
        Rng rng(splitmix64(seed ^ 0x9047c1ae5ULL));
        const std::size_t n = schema_.num_features();
        const std::size_t d = cfg_.d_model;

        // encoder feature-id table: one row per feature + EOS + STOP rows
        enc_table_ = params_.add("enc.table", nn::Tensor::randn({n + 2, d}, rng, 0.02));
        stats_proj_ = params_.add("enc.stats_proj",
                                  nn::Tensor::randn({policy_detail::kStatsDim, d}, rng, 0.02));
        for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) {
            EncoderLayer layer;
            const std::string p = "enc." + std::to_string(l);
            layer.ln1 = nn::LayerNorm(params_, p + ".ln1", d);
            layer.attn = nn::MultiHeadAttention(params_, p + ".attn", d, cfg_.heads, rng);
            layer.ln2 = nn::LayerNorm(params_, p + ".ln2", d);
            layer.ff1 = nn::Linear(params_, p + ".ff1", d, cfg_.d_ff, rng);
            layer.ff2 = nn::Linear(params_, p + ".ff2", cfg_.d_ff, d, rng);
            enc_layers_.push_back(layer);
        }
        enc_final_ln_ = nn::LayerNorm(params_, "enc.final_ln", d);

        // decoder token table: vocabulary + trailing BOS row
        dec_table_ = params_.add("dec.table", nn::Tensor::randn({vocab_.size() + 1, d}, rng, 0.02));
        for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
            DecoderLayer layer;
            const std::string p = "dec." + std::to_string(l);
            layer.ln1 = nn::LayerNorm(params_, p + ".ln1", d);
            layer.self_attn = nn::MultiHeadAttention(params_, p + ".self", d, cfg_.heads, rng);
            layer.ln2 = nn::LayerNorm(params_, p + ".ln2", d);
            layer.cross_attn = nn::MultiHeadAttention(params_, p + ".cross", d, cfg_.heads, rng);
            layer.ln3 = nn::LayerNorm(params_, p + ".ln3", d);
            layer.ff1 = nn::Linear(params_, p + ".ff1", d, cfg_.d_ff, rng);
            layer.ff2 = nn::Linear(params_, p + ".ff2", cfg_.d_ff, d, rng);
            dec_layers_.push_back(layer);
        }
        dec_final_ln_ = nn::LayerNorm(params_, "dec.final_ln", d);
        head_ = nn::Linear(params_, "dec.head", d, vocab_.size(), rng);

        positions_ = nn::sinusoidal_positions(std::max(2 * n + 1, schema_.max_sequence_len + 1), d);
    }

    const lang::Schema& schema() const { return schema_; }
    const lang::Vocabulary& vocab() const { return vocab_; }
    const PolicyConfig& config() const { return cfg_; }
    nn::ParameterSet& parameters() { return params_; }
    const nn::ParameterSet& parameters() const { return params_; }
    std::uint64_t schema_fingerprint() const { return schema_.fingerprint(); }
    std::size_t bos_id() const { return vocab_.size(); }

    std::size_t encoder_input_length() const { return 2 * schema_.num_features() + 1; }

    void check_dataset(const TabularDataset& ds) const {
        if (ds.num_features() != schema_.num_features())
            throw SchemaError("policy bound to N=" + std::to_string(schema_.num_features()) +
                              " but dataset has N=" + std::to_string(ds.num_features()));
        for (std::size_t i = 0; i < ds.columns.size(); ++i) {
            if (ds.columns[i].kind != schema_.kinds[i])
                throw SchemaError("feature kind mismatch at column " + std::to_string(i));
        }
    }

    // Latent memory of shape (2N+1) x d_model; layout [V1, EOS, V2, ..., STOP].
    nn::Tensor encode(const TabularDataset& ds, bool train_mode = false, Rng* dropout_rng = nullptr) const {
        check_dataset(ds);
        const std::size_t n = schema_.num_features();
        const std::size_t len = encoder_input_length();

        std::vector<std::size_t> table_ids(len);
        nn::Tensor stats = nn::Tensor::zeros({len, policy_detail::kStatsDim});
        for (std::size_t i = 0; i < n; ++i) {
            table_ids[2 * i] = i;
            table_ids[2 * i + 1] = n;  // EOS separator row
            const auto sv = policy_detail::stats_vector(ds.columns[i]);
            for (std::size_t k = 0; k < policy_detail::kStatsDim; ++k)
                stats.data()[(2 * i) * policy_detail::kStatsDim + k] = sv[k];
        }
        table_ids[len - 1] = n + 1;  // STOP row

        nn::Tensor x = nn::add(nn::embedding_lookup(enc_table_, table_ids),
                               nn::matmul(stats, stats_proj_));
        x = nn::add(x, nn::slice_rows(positions_, 0, len));
        for (const auto& layer : enc_layers_) {
            nn::Tensor h = layer.ln1(x);
            h = layer.attn(h, h, h, /*causal=*/false);
            h = maybe_dropout(h, train_mode, dropout_rng);
            x = nn::add(x, h);
            nn::Tensor f = layer.ff2(maybe_dropout(nn::gelu(layer.ff1(layer.ln2(x))), train_mode, dropout_rng));
            x = nn::add(x, f);
        }
        return enc_final_ln_(x);
    }

    // Teacher-forced pass over a full token sequence. Per-token
    // log-probabilities and entropies are computed under the masked,
    // temperature-scaled distribution each token was (or would have been)
    // sampled from. Throws if a token is illegal under the mask.
    TeacherForced log_probs_of(const TabularDataset& ds, const std::vector<lang::TransformToken>& tokens,
                               double temperature = 1.0, bool train_mode = false,
                               Rng* dropout_rng = nullptr) const {
        if (tokens.empty()) throw TsfgError("log_probs_of: empty sequence");
        const nn::Tensor memory = encode(ds, train_mode, dropout_rng);
        const std::size_t L = tokens.size();

        std::vector<std::size_t> input_ids(L);
        input_ids[0] = bos_id();
        std::vector<std::size_t> target_ids(L);
        for (std::size_t t = 0; t < L; ++t) {
            target_ids[t] = vocab_.id_of(tokens[t]);
            if (t + 1 < L) input_ids[t + 1] = target_ids[t];
        }

        // Replay the legality state machine to rebuild per-step masks.
        nn::Tensor mask = nn::Tensor::zeros({L, vocab_.size()});
        lang::SequenceState state(schema_);
        for (std::size_t t = 0; t < L; ++t) {
            bool target_legal = false;
            for (std::size_t id = 0; id < vocab_.size(); ++id) {
                const bool legal = !state.check(vocab_.token_of(id)).has_value();
                if (!legal) mask.data()[t * vocab_.size() + id] = -1e30;
                if (legal && id == target_ids[t]) target_legal = true;
            }
            if (!target_legal) {
                throw TsfgError("log_probs_of: token '" + lang::token_text(tokens[t]) +
                                "' at position " + std::to_string(t) +
                                " is masked (corrupted trajectory)");
            }
            state.advance(tokens[t]);
        }

        const nn::Tensor logits = decode_logits(memory, input_ids, train_mode, dropout_rng);
        const nn::Tensor lsm = nn::log_softmax_rows(logits, temperature, mask);
        return {nn::gather_rows(lsm, target_ids), nn::entropy_rows(lsm)};
    }

    // Autoregressive sampling on a frozen snapshot (no gradients). `memory`
    // must come from encode() on the bound dataset. Temperatures below 1e-3
    // decode greedily. With mask_invalid = false only the forced STOP at the
    // length limit is kept; sequences may then fail validation.
    SampledSequence sample_sequence(const nn::Tensor& memory, double temperature, Rng& rng,
                                    bool mask_invalid = true) const {
        if (temperature <= 0.0) throw TsfgError("sample_sequence: temperature must be positive");
        const bool greedy = temperature < 1e-3;
        DecoderCache cache(*this, memory);
        lang::SequenceState state(schema_);
        SampledSequence out;

        policy_detail::Vec emb = input_embedding(bos_id(), 0);
        while (true) {
            const policy_detail::Vec logits = cache.step(emb);
            std::vector<double> masked(vocab_.size());
            const double inv_t = greedy ? 1.0 : 1.0 / temperature;
            for (std::size_t id = 0; id < vocab_.size(); ++id) {
                double m = 0.0;
                if (mask_invalid) {
                    m = state.check(vocab_.token_of(id)).has_value() ? -1e30 : 0.0;
                } else if (state.position() + 1 == schema_.max_sequence_len &&
                           id != vocab_.stop_id()) {
                    m = -1e30;  // forced termination
                }
                masked[id] = logits[id] * inv_t + m;
            }
            // log-softmax (stable)
            double mx = -std::numeric_limits<double>::infinity();
            for (double v : masked) mx = std::max(mx, v);
            double s = 0.0;
            for (double v : masked) s += std::exp(v - mx);
            const double lse = mx + std::log(s);
            for (auto& v : masked) v -= lse;

            std::size_t chosen = 0;
            if (greedy) {
                for (std::size_t id = 1; id < vocab_.size(); ++id)
                    if (masked[id] > masked[chosen]) chosen = id;
            } else {
                const double u = rng.uniform01();
                double cum = 0.0;
                chosen = vocab_.size() - 1;
                for (std::size_t id = 0; id < vocab_.size(); ++id) {
                    cum += std::exp(masked[id]);
                    if (u < cum) {
                        chosen = id;
                        break;
                    }
                }
                // Guard against a masked tail pick from rounding.
                while (masked[chosen] < -1e29) --chosen;
            }

            double entropy = 0.0;
            for (double l : masked) entropy -= std::exp(l) * l;

            const lang::TransformToken token = vocab_.token_of(chosen);
            out.tokens.push_back(token);
            out.ids.push_back(chosen);
            out.log_probs.push_back(masked[chosen]);
            out.entropies.push_back(entropy);
            if (mask_invalid) {
                state.advance(token);
            } else {
                state.advance_unchecked(token);
            }
            if (token.kind == lang::TokenKind::stop) break;
            emb = input_embedding(chosen, state.position());
        }
        return out;
    }

    // Greedy decode helper (temperature -> 0 limit).
    SampledSequence greedy_sequence(const TabularDataset& ds) const {
        nn::NoGradGuard ng;
        const nn::Tensor memory = encode(ds);
        Rng unused(0);
        return sample_sequence(memory, 1e-6, unused);
    }

    // Masked next-token distribution after consuming `prefix`; exact
    // probabilities the sampler would draw from.
    std::vector<double> step_distribution(const TabularDataset& ds,
                                          const std::vector<lang::TransformToken>& prefix,
                                          double temperature = 1.0) const {
        nn::NoGradGuard ng;
        const nn::Tensor memory = encode(ds);
        DecoderCache cache(*this, memory);
        lang::SequenceState state(schema_);
        policy_detail::Vec emb = input_embedding(bos_id(), 0);
        for (const auto& t : prefix) {
            cache.step(emb);
            state.advance(t);
            emb = input_embedding(vocab_.id_of(t), state.position());
        }
        const policy_detail::Vec logits = cache.step(emb);
        std::vector<double> masked(vocab_.size());
        for (std::size_t id = 0; id < vocab_.size(); ++id) {
            const double m = state.check(vocab_.token_of(id)).has_value() ? -1e30 : 0.0;
            masked[id] = logits[id] / temperature + m;
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (double v : masked) mx = std::max(mx, v);
        double s = 0.0;
        for (double v : masked) s += std::exp(v - mx);
        const double lse = mx + std::log(s);
        std::vector<double> probs(vocab_.size());
        for (std::size_t id = 0; id < vocab_.size(); ++id) probs[id] = std::exp(masked[id] - lse);
        return probs;
    }

private:
    struct EncoderLayer {
        nn::LayerNorm ln1, ln2;
        nn::MultiHeadAttention attn;
        nn::Linear ff1, ff2;
    };
    struct DecoderLayer {
        nn::LayerNorm ln1, ln2, ln3;
        nn::MultiHeadAttention self_attn, cross_attn;
        nn::Linear ff1, ff2;
    };

    nn::Tensor maybe_dropout(const nn::Tensor& x, bool train_mode, Rng* rng) const {
        if (!train_mode || cfg_.dropout <= 0.0) return x;
        if (!rng) throw TsfgError("policy: train-mode forward needs a dropout rng");
        return nn::dropout(x, cfg_.dropout, true, *rng);
    }

    // Decoder stack over given input ids (graph mode), returning per-position
    // vocabulary logits.
    nn::Tensor decode_logits(const nn::Tensor& memory, const std::vector<std::size_t>& input_ids,
                             bool train_mode, Rng* dropout_rng) const {
        const std::size_t L = input_ids.size();
        nn::Tensor x = nn::add(nn::embedding_lookup(dec_table_, input_ids),
                               nn::slice_rows(positions_, 0, L));
        for (const auto& layer : dec_layers_) {
            nn::Tensor h = layer.ln1(x);
            h = layer.self_attn(h, h, h, /*causal=*/true);
            h = maybe_dropout(h, train_mode, dropout_rng);
            x = nn::add(x, h);
            nn::Tensor c = layer.cross_attn(layer.ln2(x), memory, memory, /*causal=*/false);
            c = maybe_dropout(c, train_mode, dropout_rng);
            x = nn::add(x, c);
            nn::Tensor f = layer.ff2(maybe_dropout(nn::gelu(layer.ff1(layer.ln3(x))), train_mode, dropout_rng));
            x = nn::add(x, f);
        }
        return head_(dec_final_ln_(x));
    }

    policy_detail::Vec input_embedding(std::size_t table_id, std::size_t position) const {
        const std::size_t d = cfg_.d_model;
        policy_detail::Vec emb(d);
        for (std::size_t c = 0; c < d; ++c) {
            emb[c] = dec_table_.data()[table_id * d + c] + positions_.data()[position * d + c];
        }
        return emb;
    }

    // Incremental single-position decoder with per-layer KV caches; plain
    // doubles, mirrors decode_logits() operation-for-operation.
    class DecoderCache {
    public:
        DecoderCache(const PolicyModel& model, const nn::Tensor& memory) : m_(model) {
            const std::size_t layers = m_.dec_layers_.size();
            self_k_.resize(layers);
            self_v_.resize(layers);
            cross_k_.resize(layers);
            cross_v_.resize(layers);
            const std::size_t mem_len = memory.rows();
            const std::size_t d = m_.cfg_.d_model;
            for (std::size_t l = 0; l < layers; ++l) {
                const auto& attn = m_.dec_layers_[l].cross_attn;
                cross_k_[l].reserve(mem_len);
                cross_v_[l].reserve(mem_len);
                for (std::size_t r = 0; r < mem_len; ++r) {
                    policy_detail::Vec row(memory.data().begin() + static_cast<std::ptrdiff_t>(r * d),
                                           memory.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
                    cross_k_[l].push_back(policy_detail::linear_vec(attn.wk(), row));
                    cross_v_[l].push_back(policy_detail::linear_vec(attn.wv(), row));
                }
            }
        }

        policy_detail::Vec step(const policy_detail::Vec& input_emb) {
            using policy_detail::Vec;
            Vec x = input_emb;
            for (std::size_t l = 0; l < m_.dec_layers_.size(); ++l) {
                const auto& layer = m_.dec_layers_[l];
                // masked self-attention over the cached prefix plus this position
                Vec h = policy_detail::layer_norm_vec(layer.ln1, x);
                self_k_[l].push_back(policy_detail::linear_vec(layer.self_attn.wk(), h));
                self_v_[l].push_back(policy_detail::linear_vec(layer.self_attn.wv(), h));
                Vec attn_out = attend(layer.self_attn, policy_detail::linear_vec(layer.self_attn.wq(), h),
                                      self_k_[l], self_v_[l]);
                for (std::size_t c = 0; c < x.size(); ++c) x[c] += attn_out[c];
                // cross-attention into the encoder memory
                Vec q = policy_detail::linear_vec(layer.cross_attn.wq(),
                                                  policy_detail::layer_norm_vec(layer.ln2, x));
                Vec cross_out = attend(layer.cross_attn, q, cross_k_[l], cross_v_[l]);
                for (std::size_t c = 0; c < x.size(); ++c) x[c] += cross_out[c];
                // feed-forward
                Vec f = policy_detail::linear_vec(layer.ff1, policy_detail::layer_norm_vec(layer.ln3, x));
                policy_detail::gelu_inplace(f);
                Vec f2 = policy_detail::linear_vec(layer.ff2, f);
                for (std::size_t c = 0; c < x.size(); ++c) x[c] += f2[c];
            }
            return policy_detail::linear_vec(m_.head_, policy_detail::layer_norm_vec(m_.dec_final_ln_, x));
        }

    private:
        policy_detail::Vec attend(const nn::MultiHeadAttention& attn, const policy_detail::Vec& q,
                                  const std::vector<policy_detail::Vec>& keys,
                                  const std::vector<policy_detail::Vec>& values) const {
            const std::size_t d = m_.cfg_.d_model;
            const std::size_t heads = m_.cfg_.heads;
            const std::size_t dh = d / heads;
            const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
            policy_detail::Vec concat(d, 0.0);
            std::vector<double> scores(keys.size());
            std::vector<double> probs(keys.size());
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t off = h * dh;
                for (std::size_t j = 0; j < keys.size(); ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) s += q[off + c] * keys[j][off + c];
                    scores[j] = s * scale;
                }
                nn::detail::softmax_row(scores.data(), nullptr, keys.size(), 1.0, probs.data());
                for (std::size_t j = 0; j < keys.size(); ++j) {
                    const double w = probs[j];
                    if (w == 0.0) continue;
                    for (std::size_t c = 0; c < dh; ++c) concat[off + c] += w * values[j][off + c];
                }
            }
            return policy_detail::linear_vec(attn.wo(), concat);
        }

        const PolicyModel& m_;
        std::vector<std::vector<policy_detail::Vec>> self_k_, self_v_;
        std::vector<std::vector<policy_detail::Vec>> cross_k_, cross_v_;
    };

    lang::Schema schema_;
    lang::Vocabulary vocab_;
    PolicyConfig cfg_;
    nn::ParameterSet params_;
    nn::Tensor enc_table_, stats_proj_, dec_table_;
    std::vector<EncoderLayer> enc_layers_;
    nn::LayerNorm enc_final_ln_;
    std::vector<DecoderLayer> dec_layers_;
    nn::LayerNorm dec_final_ln_;
    nn::Linear head_;
    nn::Tensor positions_;
};

}  // namespace tsfg
