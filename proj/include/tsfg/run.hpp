#pragma once

// End-to-end orchestration: load -> split -> standardize -> surrogate ->
// pretrain -> PPO (per ablation) -> reports, plus the saved-program
// `transform` replay path. Every run owns an output directory with the full
// artifact set: resolved config, stage logs, checkpoints, the best program
// and its preprocessing bundle, metric reports and augmented CSVs.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsfg/dataset.hpp"
#include "tsfg/evaluators.hpp"
#include "tsfg/policy.hpp"
#include "tsfg/ppo.hpp"
#include "tsfg/pretrain.hpp"
#include "tsfg/synth.hpp"
#include "tsfg/transform.hpp"

namespace tsfg {

enum class Ablation { full, no_pretrain, no_ppo };

inline std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_pretrain: return "no-pretrain";
        default: return "no-ppo";
    }
}

inline Ablation ablation_from_string(const std::string& s) {
    if (s == "full") return Ablation::full;
    if (s == "no-pretrain") return Ablation::no_pretrain;
    if (s == "no-ppo") return Ablation::no_ppo;
    throw ConfigError("unknown ablation: " + s + " (want full|no-pretrain|no-ppo)");
}

// Paper-style variant labels: TSFG+ trains without pre-training, TSFG#
// without PPO fine-tuning.
inline std::string variant_label(Ablation a) {
    switch (a) {
        case Ablation::full: return "TSFG";
        case Ablation::no_pretrain: return "TSFG+";
        default: return "TSFG#";
    }
}

struct RunConfig {
    std::string data_path;
    std::string target = "target";
    TaskKind task = TaskKind::classification;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;  // --seed is mandatory for runs
    eval::DownstreamKind downstream = eval::DownstreamKind::random_forest;
    std::optional<eval::RewardMetric> reward_metric;  // defaults per task
    Ablation ablation = Ablation::full;
    double f_train = 0.6, f_val = 0.2, f_test = 0.2;
    bool allow_discrete_arithmetic = true;
    std::size_t max_sequence_len = 100;
    std::size_t generated_cap_factor = 2;
    PolicyConfig policy;
    PretrainConfig pretrain;
    PPOConfig ppo;
    LoadOptions load;

    eval::RewardMetric effective_reward_metric() const {
        return reward_metric ? *reward_metric : eval::default_reward_metric(task);
    }
};

struct StageTiming {
    std::string stage;
    double seconds = 0.0;
};

struct RunReport {
    std::string variant;
    eval::MetricReport base_test;
    eval::MetricReport augmented_test;
    double base_val_metric = 0.0;
    double best_val_reward = 0.0;
    std::size_t best_iteration = 0;
    std::vector<double> reward_trace;
    std::string best_program_text;
    std::size_t generated_columns = 0;
    std::vector<StageTiming> timings;
};

namespace run_detail {

namespace fs = std::filesystem;
using nlohmann::json;

class StageClock {
public:
    explicit StageClock(std::vector<StageTiming>& sink) : sink_(sink) {}
    template <typename F>
    auto time(const std::string& stage, F&& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        if constexpr (std::is_void_v<decltype(fn())>) {
            fn();
            record(stage, t0);
        } else {
            auto out = fn();
            record(stage, t0);
            return out;
        }
    }

private:
    void record(const std::string& stage, std::chrono::steady_clock::time_point t0) {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        sink_.push_back({stage, s});
    }
    std::vector<StageTiming>& sink_;
};

inline json codec_to_json(const DatasetCodec& codec) {
    json j;
    j["target"] = codec.target_name;
    j["task"] = to_string(codec.task);
    j["num_classes"] = codec.num_classes;
    j["label_codes"] = json::array();
    for (const auto& [raw, code] : codec.label_codes) j["label_codes"].push_back({raw, code});
    j["columns"] = json::array();
    for (const auto& cc : codec.columns) {
        json c;
        c["name"] = cc.name;
        c["kind"] = to_string(cc.kind);
        c["impute_value"] = cc.impute_value;
        c["standardized"] = cc.standardized;
        c["mean"] = cc.mean;
        c["std"] = cc.std;
        c["missing_code"] = cc.missing_code;
        c["value_codes"] = json::array();
        for (const auto& [v, code] : cc.value_codes) c["value_codes"].push_back({v, code});
        j["columns"].push_back(c);
    }
    return j;
}

inline DatasetCodec codec_from_json(const json& j) {
    DatasetCodec codec;
    codec.target_name = j.at("target").get<std::string>();
    codec.task = j.at("task").get<std::string>() == "classification" ? TaskKind::classification
                                                                     : TaskKind::regression;
    codec.num_classes = j.at("num_classes").get<std::size_t>();
    for (const auto& pair : j.at("label_codes"))
        codec.label_codes[pair.at(0).get<double>()] = pair.at(1).get<double>();
    for (const auto& c : j.at("columns")) {
        ColumnCodec cc;
        cc.name = c.at("name").get<std::string>();
        cc.kind = c.at("kind").get<std::string>() == "discrete" ? FeatureKind::discrete
                                                                : FeatureKind::continuous;
        cc.impute_value = c.at("impute_value").get<double>();
        cc.standardized = c.at("standardized").get<bool>();
        cc.mean = c.at("mean").get<double>();
        cc.std = c.at("std").get<double>();
        cc.missing_code = c.at("missing_code").get<double>();
        for (const auto& pair : c.at("value_codes"))
            cc.value_codes[pair.at(0).get<double>()] = pair.at(1).get<double>();
        codec.columns.push_back(std::move(cc));
    }
    return codec;
}

// The sidecar bundle: everything `transform` needs to replay a saved program
// on new data bit-for-bit.
struct ProgramBundle {
    DatasetCodec codec;
    lang::FeatureProgram program;
    std::vector<lang::GeneratedScale> scales;          // per accepted segment
    std::vector<std::optional<lang::CrossMap>> crosses;
    bool allow_discrete_arithmetic = true;
    std::size_t max_sequence_len = 100;
};

inline void save_bundle(const ProgramBundle& bundle, const std::string& program_path) {
    json j;
    j["version"] = 1;
    j["codec"] = codec_to_json(bundle.codec);
    j["allow_discrete_arithmetic"] = bundle.allow_discrete_arithmetic;
    j["max_sequence_len"] = bundle.max_sequence_len;
    j["segments"] = json::array();
    for (std::size_t i = 0; i < bundle.program.segments.size(); ++i) {
        json s;
        s["text"] = lang::segment_text(bundle.program.segments[i]);
        s["standardized"] = bundle.scales[i].standardized;
        s["mean"] = bundle.scales[i].mean;
        s["std"] = bundle.scales[i].std;
        if (bundle.crosses[i]) {
            json cm;
            cm["features"] = bundle.crosses[i]->features;
            cm["codes"] = json::array();
            for (const auto& [tuple, code] : bundle.crosses[i]->codes)
                cm["codes"].push_back({tuple, code});
            s["cross"] = cm;
        }
        j["segments"].push_back(s);
    }
    std::ofstream os(program_path + ".stats.json");
    if (!os) throw IoError("cannot write program bundle: " + program_path + ".stats.json");
    os << j.dump(1) << "\n";
}

inline ProgramBundle load_bundle(const std::string& program_path) {
    // program text
    std::ifstream ps(program_path);
    if (!ps) throw IoError("cannot open program: " + program_path);
    std::stringstream text;
    text << ps.rdbuf();
    auto parsed = lang::parse_program(text.str());
    if (!parsed.ok()) {
        throw TsfgError("program parse error at " + program_path + ":" +
                        std::to_string(parsed.error().line) + ":" +
                        std::to_string(parsed.error().column) + ": " + parsed.error().message);
    }

    const std::string bundle_path = program_path + ".stats.json";
    std::ifstream bs(bundle_path);
    if (!bs) {
        throw IoError("missing statistics bundle next to the program: " + bundle_path);
    }
    json j = json::parse(bs);
    if (j.at("version").get<int>() != 1) throw IoError("unsupported bundle version");

    ProgramBundle bundle;
    bundle.codec = codec_from_json(j.at("codec"));
    bundle.allow_discrete_arithmetic = j.at("allow_discrete_arithmetic").get<bool>();
    bundle.max_sequence_len = j.at("max_sequence_len").get<std::size_t>();
    bundle.program = parsed.value();
    const auto& segs = j.at("segments");
    if (segs.size() != bundle.program.segments.size()) {
        throw TsfgError("bundle/program mismatch: " + std::to_string(segs.size()) + " vs " +
                        std::to_string(bundle.program.segments.size()) + " segments");
    }
    for (std::size_t i = 0; i < segs.size(); ++i) {
        const auto& s = segs[i];
        if (s.at("text").get<std::string>() != lang::segment_text(bundle.program.segments[i]))
            throw TsfgError("bundle segment text mismatch at index " + std::to_string(i));
        lang::GeneratedScale gs;
        gs.standardized = s.at("standardized").get<bool>();
        gs.mean = s.at("mean").get<double>();
        gs.std = s.at("std").get<double>();
        bundle.scales.push_back(gs);
        if (s.contains("cross")) {
            lang::CrossMap cm;
            cm.features = s.at("cross").at("features").get<std::vector<std::size_t>>();
            for (const auto& pair : s.at("cross").at("codes"))
                cm.codes[pair.at(0).get<std::vector<std::int64_t>>()] = pair.at(1).get<double>();
            bundle.crosses.push_back(cm);
        } else {
            bundle.crosses.push_back(std::nullopt);
        }
    }
    return bundle;
}

inline void write_metric_report(const std::string& path, const eval::MetricReport& report) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write report: " + path);
    os << "task=" << to_string(report.task_kind) << "\n";
    if (report.task_kind == TaskKind::classification) {
        os << "accuracy=" << format_double(report.accuracy) << "\n";
        os << "macro_f1=" << format_double(report.macro_f1) << "\n";
        os << "macro_precision=" << format_double(report.macro_precision) << "\n";
    } else {
        os << "one_minus_rae=" << format_double(report.one_minus_rae) << "\n";
        os << "r2=" << format_double(report.r_squared) << "\n";
    }
    for (std::size_t i = 0; i < report.importances.size(); ++i) {
        os << "importance." << report.column_names[i] << "=" << format_double(report.importances[i])
           << "\n";
    }
}

inline void write_resolved_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write resolved config: " + path);
    os << "data=" << cfg.data_path << "\n"
       << "target=" << cfg.target << "\n"
       << "task=" << to_string(cfg.task) << "\n"
       << "out=" << cfg.out_dir << "\n"
       << "seed=" << cfg.seed << "\n"
       << "downstream=" << to_string(cfg.downstream) << "\n"
       << "reward_metric=" << to_string(cfg.effective_reward_metric()) << "\n"
       << "ablate=" << to_string(cfg.ablation) << "\n"
       << "variant=" << variant_label(cfg.ablation) << "\n"
       << "split=" << cfg.f_train << "," << cfg.f_val << "," << cfg.f_test << "\n"
       << "allow_discrete_arithmetic=" << (cfg.allow_discrete_arithmetic ? 1 : 0) << "\n"
       << "max_sequence_len=" << cfg.max_sequence_len << "\n"
       << "generated_cap_factor=" << cfg.generated_cap_factor << "\n"
       << "policy.d_model=" << cfg.policy.d_model << "\n"
       << "policy.d_ff=" << cfg.policy.d_ff << "\n"
       << "policy.heads=" << cfg.policy.heads << "\n"
       << "policy.encoder_layers=" << cfg.policy.encoder_layers << "\n"
       << "policy.decoder_layers=" << cfg.policy.decoder_layers << "\n"
       << "policy.dropout=" << cfg.policy.dropout << "\n"
       << "pretrain.epochs=" << cfg.pretrain.epochs << "\n"
       << "pretrain.sequences_per_epoch=" << cfg.pretrain.sequences_per_epoch << "\n"
       << "pretrain.temperature_start=" << cfg.pretrain.temperature_start << "\n"
       << "pretrain.temperature_end=" << cfg.pretrain.temperature_end << "\n"
       << "pretrain.baseline_decay=" << cfg.pretrain.baseline_decay << "\n"
       << "pretrain.patience=" << cfg.pretrain.patience << "\n"
       << "pretrain.lr=" << cfg.pretrain.lr << "\n"
       << "ppo.iterations=" << cfg.ppo.iterations << "\n"
       << "ppo.trajectories_per_iteration=" << cfg.ppo.trajectories_per_iteration << "\n"
       << "ppo.epochs_per_batch=" << cfg.ppo.epochs_per_batch << "\n"
       << "ppo.clip_epsilon=" << cfg.ppo.clip_epsilon << "\n"
       << "ppo.entropy_coef=" << cfg.ppo.entropy_coef << "\n"
       << "ppo.lr=" << cfg.ppo.lr << "\n"
       << "ppo.normalize_advantages=" << (cfg.ppo.normalize_advantages ? 1 : 0) << "\n"
       << "ppo.temperature=" << cfg.ppo.temperature << "\n"
       << "surrogate.hidden=64,64\n"
       << "surrogate.lr=0.001\n"
       << "surrogate.max_epochs=200\n"
       << "surrogate.patience=20\n";
}

}  // namespace run_detail

// Applies a saved program (with its bundle) to a raw CSV and writes the
// augmented CSV. Replays training-time preprocessing exactly.
inline void transform_csv(const std::string& program_path, const std::string& data_path,
                          const std::string& out_path) {
    const auto bundle = run_detail::load_bundle(program_path);
    const RawTable table = read_csv_table(data_path);
    if (table.header.size() != bundle.codec.columns.size() + 1) {
        throw SchemaError(data_path + ": expected " +
                          std::to_string(bundle.codec.columns.size()) + " feature columns plus '" +
                          bundle.codec.target_name + "', got " + std::to_string(table.header.size()) +
                          " columns");
    }
    TabularDataset ds = apply_codec(bundle.codec, table, data_path);

    // schema compatibility: N and kinds are implied by the codec; validate
    // the program against it as a guard
    lang::Schema schema = lang::Schema::of(ds, bundle.allow_discrete_arithmetic,
                                           bundle.max_sequence_len);
    auto validated = lang::validate(lang::program_tokens(bundle.program), schema);
    if (!validated.ok()) {
        throw SchemaError("program does not fit this data: " + validated.error().message);
    }

    TabularDataset out = ds;
    for (std::size_t i = 0; i < bundle.program.segments.size(); ++i) {
        lang::CrossMap replay_map;
        const lang::CrossMap* replay = nullptr;
        if (bundle.crosses[i]) {
            replay_map = *bundle.crosses[i];
            replay = &replay_map;
        }
        auto col = lang::materialize_segment(bundle.program.segments[i], ds, replay);
        if (col.rejected) throw TsfgError("segment rejected on this data: " + col.diagnostic);
        lang::apply_generated_scale(bundle.scales[i], col);
        FeatureColumn fc;
        fc.name = "gen_" + std::to_string(i + 1) + "[" + col.name + "]";
        fc.kind = col.kind;
        fc.values = std::move(col.values);
        fc.stats = compute_stats(fc.values);
        out.columns.push_back(std::move(fc));
    }
    write_csv(out, out_path, bundle.codec.target_name);
}

// The full pipeline. Creates cfg.out_dir (must not be another run's live
// directory), writes all artifacts, and returns the report.
inline RunReport run(const RunConfig& cfg, std::ostream* progress = nullptr) {
    namespace fs = std::filesystem;
    using run_detail::StageClock;

    if (!cfg.seed_set) throw ConfigError("run: --seed is mandatory");
    if (cfg.out_dir.empty()) throw ConfigError("run: output directory required");
    fs::create_directories(cfg.out_dir);
    fs::create_directories(cfg.out_dir + "/checkpoints");

    std::ofstream run_log(cfg.out_dir + "/run.log");
    auto note = [&](const std::string& msg) {
        run_log << msg << "\n";
        run_log.flush();
        if (progress) *progress << msg << "\n";
    };

    run_detail::write_resolved_config(cfg.out_dir + "/run_config.resolved", cfg);

    RunReport report;
    report.variant = variant_label(cfg.ablation);
    StageClock clock(report.timings);
    const eval::RewardMetric metric = cfg.effective_reward_metric();
    const std::uint64_t eval_seed = derive_eval_seed(cfg.seed);

    // ---- data
    note("stage=load data=" + cfg.data_path);
    auto loaded = clock.time("load", [&] {
        auto l = load_csv_detailed(cfg.data_path, cfg.target, cfg.task, cfg.load);
        l.dataset = split_dataset(l.dataset, cfg.f_train, cfg.f_val, cfg.f_test, cfg.seed);
        const Scaler scaler = fit_scaler(l.dataset);
        l.dataset = apply_scaler(scaler, l.dataset);
        record_scaler(scaler, l.codec);
        return l;
    });
    const TabularDataset& ds = loaded.dataset;
    lang::Schema schema = lang::Schema::of(ds, cfg.allow_discrete_arithmetic, cfg.max_sequence_len);
    lang::ApplyOptions apply_opt;
    apply_opt.generated_cap_factor = cfg.generated_cap_factor;

    // ---- base reports
    clock.time("base_eval", [&] {
        report.base_test = eval::evaluate_downstream(cfg.downstream, ds, Split::test, eval_seed);
        report.base_val_metric =
            eval::evaluate_downstream(cfg.downstream, ds, Split::val, eval_seed).metric(metric);
    });
    note("stage=base_eval done");

    // ---- surrogate
    const std::size_t surrogate_width =
        ds.num_features() + cfg.generated_cap_factor * ds.num_features();
    auto surrogate = clock.time("surrogate", [&] {
        return eval::train_surrogate(ds, surrogate_width, splitmix64(cfg.seed ^ 0x50a7ULL));
    });
    note("stage=surrogate done");

    // ---- policy
    PolicyModel policy(schema, cfg.policy, splitmix64(cfg.seed ^ 0x9a11c7ULL));

    // ---- stage 1
    if (cfg.ablation != Ablation::no_pretrain) {
        std::ofstream pre_log(cfg.out_dir + "/pretrain.log");
        clock.time("pretrain", [&] {
            pretrain(policy, surrogate, ds, cfg.pretrain, cfg.seed,
                     cfg.out_dir + "/checkpoints/policy_stage1_best.ckpt", &pre_log);
        });
        note("stage=pretrain done");
    } else {
        note("stage=pretrain skipped (TSFG+)");
    }

    // ---- stage 2
    lang::FeatureProgram best_program;
    if (cfg.ablation != Ablation::no_ppo) {
        std::ofstream ppo_log(cfg.out_dir + "/ppo.log");
        auto ft = clock.time("ppo", [&] {
            return fine_tune(policy, ds, cfg.ppo, cfg.downstream, metric, cfg.seed, apply_opt, &ppo_log);
        });
        best_program = ft.best.program;
        report.best_val_reward = ft.best.val_reward;
        report.best_iteration = ft.best.iteration;
        report.reward_trace = ft.best_reward_trace;
        note("stage=ppo done best_r=" + format_double(report.best_val_reward));
    } else {
        // TSFG#: the artifact is the greedy stage-1 decode
        clock.time("greedy_decode", [&] {
            auto greedy = policy.greedy_sequence(ds);
            auto validated = lang::validate(greedy.tokens, schema);
            if (!validated.ok()) throw TsfgError("greedy decode failed validation");
            best_program = lang::program_from_sequence(validated.value());
            const auto augmented = lang::apply_program(best_program, ds, apply_opt);
            const auto val_report =
                eval::evaluate_downstream(cfg.downstream, augmented, Split::val, eval_seed);
            report.best_val_reward = eval::metric_delta(val_report.metric(metric), report.base_val_metric);
            report.reward_trace = {report.best_val_reward};
        });
        note("stage=greedy_decode done (TSFG#)");
    }
    nn::save_checkpoint(cfg.out_dir + "/checkpoints/policy_final.ckpt", policy.parameters(),
                        policy.schema_fingerprint());

    // ---- final evaluation and artifacts
    clock.time("final_eval", [&] {
        auto detail = lang::apply_program_detailed(best_program, ds, apply_opt);
        report.augmented_test =
            eval::evaluate_downstream(cfg.downstream, detail.dataset, Split::test, eval_seed);
        report.generated_columns = detail.dataset.num_features() - ds.num_features();

        // the program actually materialized (deduplicated order), with stats
        lang::FeatureProgram accepted;
        run_detail::ProgramBundle bundle;
        for (std::size_t i = 0; i < detail.source_segment.size(); ++i) {
            accepted.segments.push_back(best_program.segments[detail.source_segment[i]]);
            bundle.scales.push_back(detail.scales[i]);
            bundle.crosses.push_back(detail.cross_maps[i]);
        }
        bundle.program = accepted;
        bundle.codec = loaded.codec;
        bundle.allow_discrete_arithmetic = cfg.allow_discrete_arithmetic;
        bundle.max_sequence_len = cfg.max_sequence_len;
        report.best_program_text = lang::format_program(accepted);

        std::ofstream program_os(cfg.out_dir + "/best_program.txt");
        program_os << report.best_program_text;
        program_os.close();
        run_detail::save_bundle(bundle, cfg.out_dir + "/best_program.txt");

        run_detail::write_metric_report(cfg.out_dir + "/base_metrics.txt", report.base_test);
        run_detail::write_metric_report(cfg.out_dir + "/augmented_metrics.txt", report.augmented_test);

        std::ofstream trace_os(cfg.out_dir + "/reward_trace.txt");
        for (double r : report.reward_trace) trace_os << format_double(r) << "\n";

        write_csv(detail.dataset, cfg.out_dir + "/augmented_full.csv", cfg.target);
        write_csv(select_rows(detail.dataset, detail.dataset.rows_in(Split::train)),
                  cfg.out_dir + "/augmented_train.csv", cfg.target);
        write_csv(select_rows(detail.dataset, detail.dataset.rows_in(Split::val)),
                  cfg.out_dir + "/augmented_val.csv", cfg.target);
        write_csv(select_rows(detail.dataset, detail.dataset.rows_in(Split::test)),
                  cfg.out_dir + "/augmented_test.csv", cfg.target);
    });
    note("stage=final_eval done");

    // ---- summary report
    {
        std::ofstream os(cfg.out_dir + "/report.txt");
        if (!os) throw IoError("cannot write report.txt");
        os << "variant=" << report.variant << "\n";
        os << "data=" << cfg.data_path << "\n";
        os << "seed=" << cfg.seed << "\n";
        os << "task=" << to_string(cfg.task) << "\n";
        os << "downstream=" << to_string(cfg.downstream) << "\n";
        os << "reward_metric=" << to_string(metric) << "\n";
        os << "base_val_metric=" << format_double(report.base_val_metric) << "\n";
        os << "best_val_reward=" << format_double(report.best_val_reward) << "\n";
        os << "best_iteration=" << report.best_iteration << "\n";
        os << "generated_columns=" << report.generated_columns << "\n";
        auto emit_metrics = [&](const std::string& prefix, const eval::MetricReport& m) {
            if (m.task_kind == TaskKind::classification) {
                os << prefix << "accuracy=" << format_double(m.accuracy) << "\n";
                os << prefix << "macro_f1=" << format_double(m.macro_f1) << "\n";
                os << prefix << "macro_precision=" << format_double(m.macro_precision) << "\n";
            } else {
                os << prefix << "one_minus_rae=" << format_double(m.one_minus_rae) << "\n";
                os << prefix << "r2=" << format_double(m.r_squared) << "\n";
            }
        };
        emit_metrics("base_test_", report.base_test);
        emit_metrics("augmented_test_", report.augmented_test);
        os << "reward_trace=";
        for (std::size_t i = 0; i < report.reward_trace.size(); ++i) {
            if (i) os << ",";
            os << format_double(report.reward_trace[i]);
        }
        os << "\n";
        // importances, originals vs generated
        for (std::size_t i = 0; i < report.augmented_test.importances.size(); ++i) {
            const bool generated = i >= ds.num_features();
            os << "importance." << (generated ? "generated" : "original") << "."
               << report.augmented_test.column_names[i] << "="
               << format_double(report.augmented_test.importances[i]) << "\n";
        }
        std::string program_inline = report.best_program_text;
        for (auto& ch : program_inline)
            if (ch == '\n') ch = ';';
        os << "best_program=" << program_inline << "\n";
        for (const auto& t : report.timings)
            os << "seconds." << t.stage << "=" << format_double(t.seconds) << "\n";
    }
    note("stage=report written");
    return report;
}

// Metrics on an arbitrary CSV with a fresh split; the `evaluate` subcommand.
inline eval::MetricReport evaluate_csv(const std::string& data_path, const std::string& target,
                                       TaskKind task, eval::DownstreamKind kind, std::uint64_t seed,
                                       Split eval_split = Split::test, const LoadOptions& opt = {}) {
    auto ds = load_csv(data_path, target, task, opt);
    ds = standardize(split_dataset(ds, 0.6, 0.2, 0.2, seed));
    return eval::evaluate_downstream(kind, ds, eval_split, derive_eval_seed(seed));
}

}  // namespace tsfg
