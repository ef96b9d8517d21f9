#pragma once

// The feature-transformation token language: vocabulary, validation,
// canonical signatures for redundancy detection, and materialization of
// token sequences into new feature columns.
//
// A sequence is a list of segments separated by EOS and terminated by STOP;
// each segment materializes one feature via a left-fold accumulator:
//   leading  +Vk / -Vk / *Vk / /Vk  ->  +f / -f / f / f
//   leading  xVk                    ->  category codes of f
//   later    <op>Vk                 ->  acc op f      (protected arithmetic)
//   later    unary                  ->  unary(acc)
//   later    xVk                    ->  category cross, recoded contiguously

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tsfg/common.hpp"
#include "tsfg/dataset.hpp"

namespace tsfg::lang {

enum class BinaryOp { add, sub, mul, div };
enum class UnaryOp { abs, square, inverse, log, sqrt, cube };
enum class TokenKind { binary, unary, cross, eos, stop };

struct TransformToken {
    TokenKind kind = TokenKind::stop;
    BinaryOp bin_op = BinaryOp::add;   // binary only
    UnaryOp un_op = UnaryOp::abs;      // unary only
    std::size_t feature = 0;           // binary / cross only

    static TransformToken binary(BinaryOp op, std::size_t feature) {
        return {TokenKind::binary, op, UnaryOp::abs, feature};
    }
    static TransformToken unary(UnaryOp op) { return {TokenKind::unary, BinaryOp::add, op, 0}; }
    static TransformToken cross(std::size_t feature) {
        return {TokenKind::cross, BinaryOp::add, UnaryOp::abs, feature};
    }
    static TransformToken eos() { return {TokenKind::eos, BinaryOp::add, UnaryOp::abs, 0}; }
    static TransformToken stop() { return {TokenKind::stop, BinaryOp::add, UnaryOp::abs, 0}; }

    bool operator==(const TransformToken& o) const {
        if (kind != o.kind) return false;
        switch (kind) {
            case TokenKind::binary: return bin_op == o.bin_op && feature == o.feature;
            case TokenKind::unary: return un_op == o.un_op;
            case TokenKind::cross: return feature == o.feature;
            default: return true;
        }
    }
};

inline const char* binary_op_symbol(BinaryOp op) {
    switch (op) {
        case BinaryOp::add: return "+";
        case BinaryOp::sub: return "-";
        case BinaryOp::mul: return "*";
        default: return "/";
    }
}

inline const char* unary_op_name(UnaryOp op) {
    switch (op) {
        case UnaryOp::abs: return "abs";
        case UnaryOp::square: return "square";
        case UnaryOp::inverse: return "inverse";
        case UnaryOp::log: return "log";
        case UnaryOp::sqrt: return "sqrt";
        default: return "cube";
    }
}

// Feature indices are 0-based internally and 1-based in the text format.
inline std::string token_text(const TransformToken& t) {
    switch (t.kind) {
        case TokenKind::binary:
            return std::string(binary_op_symbol(t.bin_op)) + "V" + std::to_string(t.feature + 1);
        case TokenKind::unary: return unary_op_name(t.un_op);
        case TokenKind::cross: return "xV" + std::to_string(t.feature + 1);
        case TokenKind::eos: return "EOS";
        default: return "STOP";
    }
}

// ---------------------------------------------------------------------------
// vocabulary
//
// Token ids over a bound schema of N features:
//   [0, 4N)        binary, op-major: op * N + feature
//   [4N, 4N+6)     unary ops
//   [4N+6, 5N+6)   cross per feature
//   5N+6           EOS
//   5N+7           STOP

struct Schema {
    std::vector<FeatureKind> kinds;
    bool allow_discrete_arithmetic = true;  // label-encoded add on discrete features
    std::size_t max_sequence_len = 100;

    std::size_t num_features() const { return kinds.size(); }

    static Schema of(const TabularDataset& ds, bool allow_discrete_arithmetic = true,
                     std::size_t max_sequence_len = 100) {
        Schema s;
        for (const auto& c : ds.columns) s.kinds.push_back(c.kind);
        s.allow_discrete_arithmetic = allow_discrete_arithmetic;
        s.max_sequence_len = max_sequence_len;
        return s;
    }

    std::uint64_t fingerprint() const {
        std::string repr = std::to_string(kinds.size()) + ":";
        for (auto k : kinds) repr += k == FeatureKind::discrete ? 'd' : 'c';
        return fnv1a64(repr);
    }
};

class Vocabulary {
public:
    explicit Vocabulary(std::size_t num_features) : n_(num_features) {}

    std::size_t size() const { return 5 * n_ + 8; }
    std::size_t num_features() const { return n_; }
    std::size_t eos_id() const { return 5 * n_ + 6; }
    std::size_t stop_id() const { return 5 * n_ + 7; }

    std::size_t id_of(const TransformToken& t) const {
        switch (t.kind) {
            case TokenKind::binary: return static_cast<std::size_t>(t.bin_op) * n_ + t.feature;
            case TokenKind::unary: return 4 * n_ + static_cast<std::size_t>(t.un_op);
            case TokenKind::cross: return 4 * n_ + 6 + t.feature;
            case TokenKind::eos: return eos_id();
            default: return stop_id();
        }
    }

    TransformToken token_of(std::size_t id) const {
        if (id < 4 * n_) return TransformToken::binary(static_cast<BinaryOp>(id / n_), id % n_);
        if (id < 4 * n_ + 6) return TransformToken::unary(static_cast<UnaryOp>(id - 4 * n_));
        if (id < 5 * n_ + 6) return TransformToken::cross(id - 4 * n_ - 6);
        if (id == eos_id()) return TransformToken::eos();
        if (id == stop_id()) return TransformToken::stop();
        throw TsfgError("token id out of range: " + std::to_string(id));
    }

private:
    std::size_t n_;
};

// ---------------------------------------------------------------------------
// validation

enum class ValidationCode {
    MissingStop,
    EmptySegment,
    UnaryFirst,
    BadFeatureIndex,
    KindMismatch,
    TooLong,
};

inline const char* to_string(ValidationCode c) {
    switch (c) {
        case ValidationCode::MissingStop: return "MissingStop";
        case ValidationCode::EmptySegment: return "EmptySegment";
        case ValidationCode::UnaryFirst: return "UnaryFirst";
        case ValidationCode::BadFeatureIndex: return "BadFeatureIndex";
        case ValidationCode::KindMismatch: return "KindMismatch";
        default: return "TooLong";
    }
}

struct ValidationError {
    ValidationCode code;
    std::size_t position = 0;
    std::string message;
};

// Incremental legality state shared by the validator and the policy's
// sampling mask, so a masked sampler cannot emit what the validator rejects.
class SequenceState {
public:
    explicit SequenceState(const Schema& schema) : schema_(&schema) {}

    // nullopt = legal; otherwise the violated rule.
    std::optional<ValidationCode> check(const TransformToken& t) const {
        const std::size_t n = schema_->num_features();
        if (finished_) return ValidationCode::MissingStop;  // nothing may follow STOP
        if (position_ + 1 > schema_->max_sequence_len) return ValidationCode::TooLong;
        const bool must_stop = position_ + 1 == schema_->max_sequence_len;
        if (must_stop && t.kind != TokenKind::stop) return ValidationCode::TooLong;

        switch (t.kind) {
            case TokenKind::stop:
                return std::nullopt;  // STOP is always legal: it closes or skips the final segment
            case TokenKind::eos:
                if (segment_len_ == 0) return ValidationCode::EmptySegment;
                return std::nullopt;
            case TokenKind::unary:
                if (segment_len_ == 0) return ValidationCode::UnaryFirst;
                if (acc_kind_ != FeatureKind::continuous) return ValidationCode::KindMismatch;
                return std::nullopt;
            case TokenKind::binary: {
                if (t.feature >= n) return ValidationCode::BadFeatureIndex;
                if (segment_len_ > 0 && acc_kind_ != FeatureKind::continuous)
                    return ValidationCode::KindMismatch;
                if (schema_->kinds[t.feature] == FeatureKind::discrete &&
                    !(schema_->allow_discrete_arithmetic && t.bin_op == BinaryOp::add)) {
                    return ValidationCode::KindMismatch;
                }
                return std::nullopt;
            }
            case TokenKind::cross: {
                if (t.feature >= n) return ValidationCode::BadFeatureIndex;
                if (schema_->kinds[t.feature] != FeatureKind::discrete) return ValidationCode::KindMismatch;
                if (segment_len_ > 0 && acc_kind_ != FeatureKind::discrete)
                    return ValidationCode::KindMismatch;
                return std::nullopt;
            }
        }
        return std::nullopt;
    }

    void advance(const TransformToken& t) {
        if (auto err = check(t)) {
            throw TsfgError(std::string("illegal token '") + token_text(t) + "': " +
                            to_string(*err));
        }
        advance_unchecked(t);
    }

    // Updates counters without legality checks; for unmasked sampling only.
    void advance_unchecked(const TransformToken& t) {
        ++position_;
        switch (t.kind) {
            case TokenKind::stop: finished_ = true; break;
            case TokenKind::eos: segment_len_ = 0; break;
            case TokenKind::binary:
                if (segment_len_ == 0) acc_kind_ = FeatureKind::continuous;
                ++segment_len_;
                break;
            case TokenKind::unary: ++segment_len_; break;
            case TokenKind::cross:
                if (segment_len_ == 0) acc_kind_ = FeatureKind::discrete;
                ++segment_len_;
                break;
        }
    }

    bool finished() const { return finished_; }
    std::size_t position() const { return position_; }
    bool at_segment_start() const { return segment_len_ == 0; }
    FeatureKind accumulator_kind() const { return acc_kind_; }

private:
    const Schema* schema_;
    std::size_t position_ = 0;
    std::size_t segment_len_ = 0;
    FeatureKind acc_kind_ = FeatureKind::continuous;
    bool finished_ = false;
};

using Segment = std::vector<TransformToken>;

struct TransformSequence {
    std::vector<TransformToken> tokens;    // includes EOS/STOP
    std::vector<Segment> segments;         // control tokens stripped
};

inline Result<TransformSequence, ValidationError> validate(const std::vector<TransformToken>& tokens,
                                                           const Schema& schema) {
    auto fail = [&](ValidationCode code, std::size_t pos, const std::string& msg) {
        return Result<TransformSequence, ValidationError>(ValidationError{code, pos, msg});
    };
    if (tokens.empty()) return fail(ValidationCode::MissingStop, 0, "empty token list");

    SequenceState state(schema);
    TransformSequence seq;
    Segment current;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto& t = tokens[i];
        if (auto err = state.check(t)) {
            return fail(*err, i, std::string(to_string(*err)) + " at token '" + token_text(t) + "'");
        }
        state.advance(t);
        switch (t.kind) {
            case TokenKind::eos:
                seq.segments.push_back(current);
                current.clear();
                break;
            case TokenKind::stop:
                if (!current.empty()) {
                    seq.segments.push_back(current);
                    current.clear();
                }
                break;
            default: current.push_back(t);
        }
    }
    if (!state.finished()) return fail(ValidationCode::MissingStop, tokens.size(), "sequence does not end with STOP");
    seq.tokens = tokens;
    return seq;
}

// ---------------------------------------------------------------------------
// materialization

namespace protected_math {

inline double div(double a, double b) { return b == 0.0 ? 0.0 : a / b; }
inline double inverse(double x) { return x == 0.0 ? 0.0 : 1.0 / x; }
inline double log(double x) { return std::log(std::fabs(x) + 1.0); }
inline double sqrt(double x) { return std::sqrt(std::fabs(x)); }

inline double apply_unary(UnaryOp op, double x) {
    switch (op) {
        case UnaryOp::abs: return std::fabs(x);
        case UnaryOp::square: return x * x;
        case UnaryOp::inverse: return inverse(x);
        case UnaryOp::log: return log(x);
        case UnaryOp::sqrt: return sqrt(x);
        default: return x * x * x;
    }
}

inline double apply_binary(BinaryOp op, double a, double b) {
    switch (op) {
        case BinaryOp::add: return a + b;
        case BinaryOp::sub: return a - b;
        case BinaryOp::mul: return a * b;
        default: return div(a, b);
    }
}

}  // namespace protected_math

// A cross segment materializes the joint category of its feature set. Codes
// are assigned by lexicographic order of the observed value tuples, with the
// crossed features taken in ascending index order; that makes the column
// invariant to the order the cross tokens were emitted in, which the
// canonical signature relies on. The map is kept so a saved program can
// replay the exact coding on new data (unseen tuples get appended codes).
struct CrossMap {
    std::vector<std::size_t> features;  // ascending, deduplicated
    std::map<std::vector<std::int64_t>, double> codes;

    double code_for(const std::vector<std::int64_t>& tuple) {
        auto it = codes.find(tuple);
        if (it != codes.end()) return it->second;
        const double next = static_cast<double>(codes.size());
        codes.emplace(tuple, next);
        return next;
    }
};

struct MaterializedColumn {
    std::string name;
    FeatureKind kind = FeatureKind::continuous;
    std::vector<double> values;   // raw (pre-standardization) values
    bool rejected = false;        // non-finite after protected arithmetic
    std::string diagnostic;
    std::optional<CrossMap> cross_map;  // present for cross segments
};

inline std::string segment_text(const Segment& seg) {
    std::string s;
    for (std::size_t i = 0; i < seg.size(); ++i) {
        if (i) s += " ";
        s += token_text(seg[i]);
    }
    return s;
}

// Evaluate one segment over every row. When `replay` is non-null its cross
// map is used (and extended) instead of building a fresh one.
inline MaterializedColumn materialize_segment(const Segment& seg, const TabularDataset& ds,
                                              const CrossMap* replay = nullptr) {
    MaterializedColumn out;
    out.name = segment_text(seg);
    if (seg.empty()) throw TsfgError("materialize: empty segment");
    const std::size_t rows = ds.num_rows();

    if (seg.front().kind == TokenKind::cross) {
        // Cross segments are all-cross (validator rule); materialize the joint
        // category of the feature set directly.
        CrossMap map;
        if (replay) {
            map = *replay;
        } else {
            std::set<std::size_t> feats;
            for (const auto& t : seg) {
                if (t.kind != TokenKind::cross) throw TsfgError("materialize: mixed cross segment");
                feats.insert(t.feature);
            }
            map.features.assign(feats.begin(), feats.end());
        }
        std::vector<std::vector<std::int64_t>> tuples(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            auto& tup = tuples[r];
            tup.reserve(map.features.size());
            for (auto f : map.features)
                tup.push_back(static_cast<std::int64_t>(ds.columns.at(f).values[r]));
        }
        if (!replay) {
            std::set<std::vector<std::int64_t>> uniq(tuples.begin(), tuples.end());
            double next = 0.0;
            for (const auto& tup : uniq) map.codes[tup] = next++;
        }
        out.values.resize(rows);
        for (std::size_t r = 0; r < rows; ++r) out.values[r] = map.code_for(tuples[r]);
        out.kind = FeatureKind::discrete;
        out.cross_map = std::move(map);
        return out;
    }

    std::vector<double> acc(rows, 0.0);
    for (std::size_t ti = 0; ti < seg.size(); ++ti) {
        const auto& t = seg[ti];
        switch (t.kind) {
            case TokenKind::binary: {
                const auto& f = ds.columns.at(t.feature).values;
                if (ti == 0) {
                    // Leading token: add/mul/div take the feature as-is, sub negates.
                    const double sign = t.bin_op == BinaryOp::sub ? -1.0 : 1.0;
                    for (std::size_t r = 0; r < rows; ++r) acc[r] = sign * f[r];
                } else {
                    for (std::size_t r = 0; r < rows; ++r)
                        acc[r] = protected_math::apply_binary(t.bin_op, acc[r], f[r]);
                }
                break;
            }
            case TokenKind::unary:
                for (std::size_t r = 0; r < rows; ++r)
                    acc[r] = protected_math::apply_unary(t.un_op, acc[r]);
                break;
            default: throw TsfgError("materialize: misplaced token '" + token_text(t) + "'");
        }
    }

    for (std::size_t r = 0; r < rows; ++r) {
        if (!std::isfinite(acc[r])) {
            out.rejected = true;
            out.diagnostic = "non-finite value at row " + std::to_string(r) + " for segment '" +
                             out.name + "'";
            return out;
        }
    }
    out.kind = FeatureKind::continuous;
    out.values = std::move(acc);
    return out;
}

// Per-column standardization statistics for generated continuous columns.
struct GeneratedScale {
    bool standardized = false;
    double mean = 0.0;
    double std = 0.0;
};

inline GeneratedScale fit_generated_scale(const MaterializedColumn& col, const TabularDataset& ds) {
    GeneratedScale gs;
    if (col.kind != FeatureKind::continuous) return gs;
    std::vector<double> train_vals;
    for (std::size_t r = 0; r < ds.num_rows(); ++r)
        if (ds.split[r] == Split::train) train_vals.push_back(col.values[r]);
    const FeatureStats st = compute_stats(train_vals);
    gs.standardized = true;
    gs.mean = st.mean;
    gs.std = st.std;
    return gs;
}

inline void apply_generated_scale(const GeneratedScale& gs, MaterializedColumn& col) {
    if (!gs.standardized) return;
    for (auto& v : col.values) v = gs.std > 0.0 ? (v - gs.mean) / gs.std : 0.0;
}

// Materialize all segments of a validated sequence; continuous outputs are
// standardized with train-split statistics of `ds`. Rejected segments come
// back flagged rather than silently dropped.
inline std::vector<MaterializedColumn> materialize(const TransformSequence& seq,
                                                   const TabularDataset& ds) {
    std::vector<MaterializedColumn> cols;
    for (const auto& seg : seq.segments) {
        MaterializedColumn col = materialize_segment(seg, ds);
        if (!col.rejected) apply_generated_scale(fit_generated_scale(col, ds), col);
        cols.push_back(std::move(col));
    }
    return cols;
}

// ---------------------------------------------------------------------------
// canonical signatures
//
// Conservative algebraic normal form: a segment is flattened into groups of
// consecutive same-class operations. Sum groups (add/sub as signed terms),
// product groups (mul/div as +/-1 powers, protected) and cross groups are
// commutative -> operands sorted; unary chains are rewritten by the sound
// local identities  abs.abs = abs, square.abs = square, sqrt.abs = sqrt,
// abs-then-square = square, sqrt-after-square = abs, inverse.inverse = id.
// Equal signatures imply identical materialized columns; the converse is not
// attempted.

namespace sig_detail {

enum class GroupKind { sum, product, cross, unary };

struct Group {
    GroupKind kind;
    // sum: (sign, feature); product: (+1/-1 power, feature); cross: (0, feature)
    std::vector<std::pair<int, std::size_t>> operands;
    UnaryOp op = UnaryOp::abs;  // unary groups hold exactly one op
};

inline void simplify_unary_chain(std::vector<UnaryOp>& chain) {
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
            const UnaryOp a = chain[i], b = chain[i + 1];
            // pair (a then b)
            if (a == UnaryOp::inverse && b == UnaryOp::inverse) {
                chain.erase(chain.begin() + static_cast<std::ptrdiff_t>(i), chain.begin() + static_cast<std::ptrdiff_t>(i + 2));
                changed = true;
                break;
            }
            auto rewrite = [&](UnaryOp to) {
                chain[i] = to;
                chain.erase(chain.begin() + static_cast<std::ptrdiff_t>(i + 1));
                changed = true;
            };
            if (b == UnaryOp::abs && (a == UnaryOp::abs || a == UnaryOp::square || a == UnaryOp::sqrt)) {
                rewrite(a);  // abs of a non-negative producer
                break;
            }
            if (a == UnaryOp::abs && b == UnaryOp::square) {
                rewrite(UnaryOp::square);  // square(|x|) = square(x)
                break;
            }
            if (a == UnaryOp::square && b == UnaryOp::sqrt) {
                rewrite(UnaryOp::abs);  // sqrt(x^2) = |x|
                break;
            }
            if (a == UnaryOp::abs && b == UnaryOp::sqrt) {
                rewrite(UnaryOp::sqrt);  // protected sqrt already takes |x|
                break;
            }
        }
    }
}

}  // namespace sig_detail

inline std::string canonical_form(const Segment& seg) {
    using sig_detail::Group;
    using sig_detail::GroupKind;
    if (seg.empty()) throw TsfgError("canonical_form: empty segment");

    std::vector<Group> groups;
    std::vector<UnaryOp> unary_buffer;

    auto flush_unaries = [&]() {
        sig_detail::simplify_unary_chain(unary_buffer);
        for (auto op : unary_buffer) {
            Group g;
            g.kind = GroupKind::unary;
            g.op = op;
            groups.push_back(g);
        }
        unary_buffer.clear();
    };

    for (std::size_t i = 0; i < seg.size(); ++i) {
        const auto& t = seg[i];
        if (t.kind == TokenKind::unary) {
            unary_buffer.push_back(t.un_op);
            continue;
        }
        flush_unaries();
        GroupKind gk;
        std::pair<int, std::size_t> operand;
        if (t.kind == TokenKind::cross) {
            gk = GroupKind::cross;
            operand = {0, t.feature};
        } else if (t.bin_op == BinaryOp::add || t.bin_op == BinaryOp::sub) {
            gk = GroupKind::sum;
            operand = {t.bin_op == BinaryOp::sub ? -1 : 1, t.feature};
        } else {
            gk = GroupKind::product;
            // A leading mul/div token means "start from f", i.e. power +1.
            operand = {(i > 0 && t.bin_op == BinaryOp::div) ? -1 : 1, t.feature};
        }
        // Leading binary token folds into the first group. A leading add and a
        // leading mul/div both mean "f", so a bare [*V1] normalizes like [+V1].
        if (i == 0 && gk == GroupKind::product) {
            gk = GroupKind::sum;
            operand = {1, t.feature};
        }
        if (!groups.empty() && groups.back().kind == gk && gk != GroupKind::unary) {
            groups.back().operands.push_back(operand);
        } else {
            Group g;
            g.kind = gk;
            g.operands.push_back(operand);
            groups.push_back(g);
        }
    }
    flush_unaries();

    std::ostringstream os;
    for (auto& g : groups) {
        switch (g.kind) {
            case GroupKind::sum: {
                std::sort(g.operands.begin(), g.operands.end());
                os << "S(";
                for (auto& [sign, f] : g.operands) os << (sign < 0 ? "-" : "+") << f << ",";
                os << ")";
                break;
            }
            case GroupKind::product: {
                std::sort(g.operands.begin(), g.operands.end());
                os << "P(";
                for (auto& [pw, f] : g.operands) os << (pw < 0 ? "/" : "*") << f << ",";
                os << ")";
                break;
            }
            case GroupKind::cross: {
                std::sort(g.operands.begin(), g.operands.end());
                os << "X(";
                for (auto& [unused, f] : g.operands) os << f << ",";
                os << ")";
                break;
            }
            case GroupKind::unary: os << "U(" << unary_op_name(g.op) << ")"; break;
        }
    }
    return os.str();
}

inline std::uint64_t canonical_signature(const Segment& seg) { return fnv1a64(canonical_form(seg)); }

// ---------------------------------------------------------------------------
// programs

struct FeatureProgram {
    std::vector<Segment> segments;

    std::vector<std::uint64_t> signatures() const {
        std::vector<std::uint64_t> sigs;
        sigs.reserve(segments.size());
        for (const auto& s : segments) sigs.push_back(canonical_signature(s));
        return sigs;
    }
};

struct ApplyOptions {
    std::size_t generated_cap_factor = 2;   // cap = factor * N ...
    std::size_t generated_cap_absolute = 0; // ... unless this is non-zero
    double duplicate_tolerance = 1e-12;
};

struct ApplyResultDetail {
    TabularDataset dataset;
    // Per accepted column, in output order:
    std::vector<std::size_t> source_segment;      // index into program.segments
    std::vector<GeneratedScale> scales;
    std::vector<std::optional<CrossMap>> cross_maps;
    std::vector<std::string> rejected_diagnostics;
};

namespace apply_detail {

inline bool columns_identical(const std::vector<double>& a, const std::vector<double>& b, double tol) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::fabs(a[i] - b[i]) > tol) return false;
    return true;
}

}  // namespace apply_detail

// Apply a program: original columns plus deduplicated generated columns.
// Duplicate canonical signatures are dropped, as are columns identical to an
// original or an already accepted generated column; at most cap columns are
// added.
inline ApplyResultDetail apply_program_detailed(const FeatureProgram& program, const TabularDataset& ds,
                                                const ApplyOptions& opt = {}) {
    ApplyResultDetail out;
    out.dataset = ds;
    const std::size_t cap = opt.generated_cap_absolute > 0
                                ? opt.generated_cap_absolute
                                : opt.generated_cap_factor * ds.num_features();
    std::set<std::uint64_t> seen_sigs;

    for (std::size_t si = 0; si < program.segments.size(); ++si) {
        if (out.source_segment.size() >= cap) break;
        const auto& seg = program.segments[si];
        const std::uint64_t sig = canonical_signature(seg);
        if (!seen_sigs.insert(sig).second) continue;

        MaterializedColumn col = materialize_segment(seg, ds);
        if (col.rejected) {
            out.rejected_diagnostics.push_back(col.diagnostic);
            continue;
        }
        const GeneratedScale gs = fit_generated_scale(col, ds);
        apply_generated_scale(gs, col);

        bool duplicate = false;
        for (const auto& existing : out.dataset.columns) {
            if (apply_detail::columns_identical(existing.values, col.values, opt.duplicate_tolerance)) {
                duplicate = true;
                break;
            }
        }
        if (duplicate) continue;

        FeatureColumn fc;
        fc.name = "gen_" + std::to_string(out.source_segment.size() + 1) + "[" + col.name + "]";
        fc.kind = col.kind;
        fc.values = std::move(col.values);
        fc.stats = compute_stats(fc.values);
        out.dataset.columns.push_back(std::move(fc));
        out.source_segment.push_back(si);
        out.scales.push_back(gs);
        out.cross_maps.push_back(col.cross_map);
    }
    return out;
}

inline TabularDataset apply_program(const FeatureProgram& program, const TabularDataset& ds,
                                    const ApplyOptions& opt = {}) {
    return apply_program_detailed(program, ds, opt).dataset;
}

// ---------------------------------------------------------------------------
// text format: one segment per line, tokens space-separated,
// e.g. "+V1 +V2" / "-V3 *V1"; unary ops by name; cross "xVk".

inline std::string format_program(const FeatureProgram& program) {
    std::string out;
    for (const auto& seg : program.segments) out += segment_text(seg) + "\n";
    return out;
}

inline std::string format_sequence(const std::vector<TransformToken>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += " ";
        out += token_text(tokens[i]);
    }
    return out;
}

inline Result<TransformToken, std::string> parse_token(const std::string& word) {
    auto fail = [&](const std::string& msg) { return Result<TransformToken, std::string>(msg); };
    if (word == "EOS") return TransformToken::eos();
    if (word == "STOP") return TransformToken::stop();
    for (int u = 0; u < 6; ++u) {
        if (word == unary_op_name(static_cast<UnaryOp>(u)))
            return TransformToken::unary(static_cast<UnaryOp>(u));
    }
    if (word.size() >= 3 && word[1] == 'V') {
        std::size_t idx = 0;
        for (std::size_t i = 2; i < word.size(); ++i) {
            if (word[i] < '0' || word[i] > '9') return fail("bad feature reference: " + word);
            idx = idx * 10 + static_cast<std::size_t>(word[i] - '0');
        }
        if (idx == 0) return fail("feature indices are 1-based: " + word);
        switch (word[0]) {
            case '+': return TransformToken::binary(BinaryOp::add, idx - 1);
            case '-': return TransformToken::binary(BinaryOp::sub, idx - 1);
            case '*': return TransformToken::binary(BinaryOp::mul, idx - 1);
            case '/': return TransformToken::binary(BinaryOp::div, idx - 1);
            case 'x': return TransformToken::cross(idx - 1);
            default: return fail("unknown operator: " + word);
        }
    }
    return fail("unknown token: " + word);
}

struct ParseError {
    std::size_t line = 0;
    std::size_t column = 0;
    std::string message;
};

inline Result<FeatureProgram, ParseError> parse_program(const std::string& text) {
    FeatureProgram program;
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        Segment seg;
        std::string word;
        std::size_t col = 1;
        while (ls >> word) {
            auto tok = parse_token(word);
            if (!tok.ok()) {
                return Result<FeatureProgram, ParseError>(ParseError{line_no, col, tok.error()});
            }
            if (tok.value().kind == TokenKind::eos || tok.value().kind == TokenKind::stop) {
                return Result<FeatureProgram, ParseError>(
                    ParseError{line_no, col, "control tokens are implicit in the text format"});
            }
            seg.push_back(tok.value());
            col += word.size() + 1;
        }
        if (!seg.empty()) program.segments.push_back(std::move(seg));
    }
    return program;
}

// Flatten a program back to a token sequence (EOS between segments, STOP last).
inline std::vector<TransformToken> program_tokens(const FeatureProgram& program) {
    std::vector<TransformToken> tokens;
    for (std::size_t i = 0; i < program.segments.size(); ++i) {
        for (const auto& t : program.segments[i]) tokens.push_back(t);
        if (i + 1 < program.segments.size()) tokens.push_back(TransformToken::eos());
    }
    tokens.push_back(TransformToken::stop());
    return tokens;
}

inline FeatureProgram program_from_sequence(const TransformSequence& seq) {
    FeatureProgram p;
    p.segments = seq.segments;
    return p;
}

}  // namespace tsfg::lang
