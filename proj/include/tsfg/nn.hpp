#pragma once

// Model-building blocks on top of the tensor engine: parameter registry,
// linear / layer-norm / attention layers, the Adam optimizer, gradient
// clipping, and a versioned binary checkpoint format.

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "tsfg/tensor.hpp"

namespace tsfg::nn {

// Named trainable tensors. Modules register parameters here so the optimizer
// and checkpointing see a flat list.
class ParameterSet {
public:
    Tensor add(const std::string& name, Tensor t) {
        if (index_.count(name)) throw TsfgError("duplicate parameter name: " + name);
        t.set_requires_grad(true);
        index_[name] = params_.size();
        params_.push_back(t);
        names_.push_back(name);
        return t;
    }

    std::size_t count() const { return params_.size(); }
    const std::vector<Tensor>& tensors() const { return params_; }
    const std::vector<std::string>& names() const { return names_; }

    Tensor get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw TsfgError("unknown parameter: " + name);
        return params_[it->second];
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.size();
        return n;
    }

private:
    std::vector<Tensor> params_;
    std::vector<std::string> names_;
    std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// optimizer

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam() = default;
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    std::int64_t step_count() const { return step_; }

    // Bias-corrected Adam update applied in place to params with grads.
    void step(ParameterSet& params) {
        if (m_.empty()) {
            for (const auto& p : params.tensors()) {
                m_.emplace_back(p.size(), 0.0);
                v_.emplace_back(p.size(), 0.0);
            }
        }
        if (m_.size() != params.count()) throw TsfgError("Adam: parameter count changed");
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t k = 0; k < params.count(); ++k) {
            Tensor p = params.tensors()[k];
            auto& data = p.data();
            auto& grad = p.grad();
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double g = grad[i];
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    // Exposed for checkpointing.
    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }
    void set_step_count(std::int64_t s) { step_ = s; }

private:
    AdamConfig cfg_;
    std::int64_t step_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

// Global-norm gradient clipping. Returns the pre-clip norm.
inline double clip_grad_norm(ParameterSet& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params.tensors())
        for (double g : p.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (const auto& p : params.tensors()) {
            Tensor t = p;
            for (auto& g : t.grad()) g *= scale;
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------
// layers

class Linear {
public:
    Linear() = default;
    Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
        // Xavier-uniform style init
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        Tensor w = Tensor::zeros({in, out});
        for (auto& v : w.data()) v = rng.uniform(-bound, bound);
        weight_ = params.add(name + ".weight", w);
        bias_ = params.add(name + ".bias", Tensor::zeros({out}));
    }

    Tensor operator()(const Tensor& x) const { return add_rowvec(matmul(x, weight_), bias_); }

    const Tensor& weight() const { return weight_; }
    const Tensor& bias() const { return bias_; }

private:
    Tensor weight_;
    Tensor bias_;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParameterSet& params, const std::string& name, std::size_t dim) {
        gamma_ = params.add(name + ".gamma", Tensor::full({dim}, 1.0));
        beta_ = params.add(name + ".beta", Tensor::zeros({dim}));
    }

    Tensor operator()(const Tensor& x) const { return layer_norm_rows(x, gamma_, beta_); }

    const Tensor& gamma() const { return gamma_; }
    const Tensor& beta() const { return beta_; }

private:
    Tensor gamma_;
    Tensor beta_;
};

// Scaled dot-product multi-head attention over rank-2 inputs
// (positions x d_model). `causal` restricts each query position to keys at
// the same or earlier positions; for cross-attention pass causal = false.
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(ParameterSet& params, const std::string& name, std::size_t d_model,
                       std::size_t heads, Rng& rng)
        : d_model_(d_model), heads_(heads) {
        if (heads == 0 || d_model % heads != 0) {
            throw TsfgError("attention: model dim " + std::to_string(d_model) +
                            " not divisible by heads " + std::to_string(heads));
        }
        wq_ = Linear(params, name + ".wq", d_model, d_model, rng);
        wk_ = Linear(params, name + ".wk", d_model, d_model, rng);
        wv_ = Linear(params, name + ".wv", d_model, d_model, rng);
        wo_ = Linear(params, name + ".wo", d_model, d_model, rng);
    }

    Tensor operator()(const Tensor& query, const Tensor& key, const Tensor& value, bool causal) const {
        const std::size_t lq = query.rows(), lk = key.rows();
        const std::size_t dh = d_model_ / heads_;
        const Tensor q = wq_(query), k = wk_(key), v = wv_(value);

        Tensor mask;
        if (causal) {
            mask = Tensor::zeros({lq, lk});
            for (std::size_t i = 0; i < lq; ++i)
                for (std::size_t j = i + 1; j < lk; ++j) mask.data()[i * lk + j] = -1e30;
        }

        std::vector<Tensor> head_outs;
        head_outs.reserve(heads_);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (std::size_t h = 0; h < heads_; ++h) {
            const Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
            const Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
            const Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
            Tensor scores = mul_scalar(matmul(qh, transpose(kh)), scale);
            Tensor attn = softmax_rows(scores, 1.0, mask);
            head_outs.push_back(matmul(attn, vh));
        }
        return wo_(concat_cols(head_outs));
    }

    const Linear& wq() const { return wq_; }
    const Linear& wk() const { return wk_; }
    const Linear& wv() const { return wv_; }
    const Linear& wo() const { return wo_; }

private:
    std::size_t d_model_ = 0;
    std::size_t heads_ = 0;
    Linear wq_, wk_, wv_, wo_;
};

// Standard sinusoidal positional encodings, rows = positions.
inline Tensor sinusoidal_positions(std::size_t max_positions, std::size_t d_model) {
    Tensor pe = Tensor::zeros({max_positions, d_model});
    for (std::size_t pos = 0; pos < max_positions; ++pos) {
        for (std::size_t i = 0; i < d_model / 2; ++i) {
            const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d_model));
            const double angle = static_cast<double>(pos) * freq;
            pe.data()[pos * d_model + 2 * i] = std::sin(angle);
            if (2 * i + 1 < d_model) pe.data()[pos * d_model + 2 * i + 1] = std::cos(angle);
        }
    }
    return pe;
}

// ---------------------------------------------------------------------------
// checkpoints
//
// Little-endian binary layout:
//   magic "TSFGCKPT" | u32 version | u64 schema fingerprint |
//   u64 param count | per param: name, rank, dims, f64 data |
//   u8 has_optimizer | i64 step | per param: f64 m[], f64 v[]

constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_i64(std::ostream& os, std::int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_string(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void write_doubles(std::ostream& os, const std::vector<double>& v) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}

inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
inline std::int64_t read_i64(std::istream& is) {
    std::int64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
inline std::string read_string(std::istream& is) {
    const std::uint64_t n = read_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}
inline void read_doubles(std::istream& is, std::vector<double>& v) {
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParameterSet& params,
                            std::uint64_t schema_fingerprint, const Adam* optimizer = nullptr) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint: " + path);
    os.write("TSFGCKPT", 8);
    detail::write_u32(os, kCheckpointVersion);
    detail::write_u64(os, schema_fingerprint);
    detail::write_u64(os, params.count());
    for (std::size_t k = 0; k < params.count(); ++k) {
        const Tensor& p = params.tensors()[k];
        detail::write_string(os, params.names()[k]);
        detail::write_u64(os, p.shape().size());
        for (auto d : p.shape()) detail::write_u64(os, d);
        detail::write_doubles(os, p.data());
    }
    const char has_opt = optimizer ? 1 : 0;
    os.write(&has_opt, 1);
    if (optimizer) {
        detail::write_i64(os, optimizer->step_count());
        for (std::size_t k = 0; k < params.count(); ++k) {
            detail::write_doubles(os, optimizer->first_moments()[k]);
            detail::write_doubles(os, optimizer->second_moments()[k]);
        }
    }
    if (!os) throw IoError("checkpoint write failed: " + path);
}

// Loads into an existing parameter set; names, order and shapes must match.
inline void load_checkpoint(const std::string& path, ParameterSet& params,
                            std::uint64_t expected_fingerprint, Adam* optimizer = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "TSFGCKPT", 8) != 0) throw IoError("bad checkpoint magic: " + path);
    const std::uint32_t version = detail::read_u32(is);
    if (version != kCheckpointVersion) {
        throw IoError("checkpoint version " + std::to_string(version) + " unsupported (want " +
                      std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint64_t fp = detail::read_u64(is);
    if (fp != expected_fingerprint) throw SchemaError("checkpoint schema fingerprint mismatch");
    const std::uint64_t count = detail::read_u64(is);
    if (count != params.count()) throw SchemaError("checkpoint parameter count mismatch");
    for (std::size_t k = 0; k < count; ++k) {
        const std::string name = detail::read_string(is);
        if (name != params.names()[k]) throw SchemaError("checkpoint parameter name mismatch: " + name);
        const std::uint64_t rank = detail::read_u64(is);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = detail::read_u64(is);
        Tensor p = params.tensors()[k];
        if (shape != p.shape()) throw SchemaError("checkpoint shape mismatch for " + name);
        detail::read_doubles(is, p.data());
    }
    char has_opt = 0;
    is.read(&has_opt, 1);
    if (optimizer) {
        if (!has_opt) throw IoError("checkpoint has no optimizer state: " + path);
        optimizer->set_step_count(detail::read_i64(is));
        auto& m = optimizer->first_moments();
        auto& v = optimizer->second_moments();
        m.resize(count);
        v.resize(count);
        for (std::size_t k = 0; k < count; ++k) {
            m[k].assign(params.tensors()[k].size(), 0.0);
            v[k].assign(params.tensors()[k].size(), 0.0);
            detail::read_doubles(is, m[k]);
            detail::read_doubles(is, v[k]);
        }
    }
    if (!is) throw IoError("checkpoint truncated: " + path);
}

}  // namespace tsfg::nn
