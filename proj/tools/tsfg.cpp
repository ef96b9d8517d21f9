// tsfg: two-stage feature generation for tabular data.
//
//   tsfg run       full pipeline (pretrain + PPO) on a CSV, writes a run dir
//   tsfg transform apply a saved program to new data
//   tsfg synth     generate a synthetic benchmark CSV
//   tsfg evaluate  train/evaluate a downstream model on a CSV

#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "tsfg/run.hpp"

namespace {

using namespace tsfg;

TaskKind parse_task(const std::string& s) {
    if (s == "classification") return TaskKind::classification;
    if (s == "regression") return TaskKind::regression;
    throw ConfigError("unknown task: " + s + " (want classification|regression)");
}

eval::DownstreamKind parse_downstream(const std::string& s) {
    if (s == "rf" || s == "random_forest") return eval::DownstreamKind::random_forest;
    if (s == "mlp") return eval::DownstreamKind::mlp;
    throw ConfigError("unknown downstream model: " + s + " (want rf|mlp)");
}

eval::RewardMetric parse_metric(const std::string& s) {
    if (s == "macro_f1" || s == "f1") return eval::RewardMetric::macro_f1;
    if (s == "accuracy" || s == "acc") return eval::RewardMetric::accuracy;
    if (s == "macro_precision" || s == "precision") return eval::RewardMetric::macro_precision;
    if (s == "1-rae" || s == "one_minus_rae") return eval::RewardMetric::one_minus_rae;
    if (s == "r2") return eval::RewardMetric::r_squared;
    throw ConfigError("unknown metric: " + s);
}

// key=value lines, '#' comments; flags override file values.
std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::map<std::string, std::string> kv;
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

void apply_config_file(RunConfig& cfg, const std::map<std::string, std::string>& kv) {
    auto get = [&](const std::string& key) -> const std::string* {
        auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };
    if (auto v = get("data")) cfg.data_path = *v;
    if (auto v = get("target")) cfg.target = *v;
    if (auto v = get("task")) cfg.task = parse_task(*v);
    if (auto v = get("out")) cfg.out_dir = *v;
    if (auto v = get("seed")) {
        cfg.seed = std::stoull(*v);
        cfg.seed_set = true;
    }
    if (auto v = get("downstream")) cfg.downstream = parse_downstream(*v);
    if (auto v = get("reward_metric")) cfg.reward_metric = parse_metric(*v);
    if (auto v = get("ablate")) cfg.ablation = ablation_from_string(*v);
    if (auto v = get("max_sequence_len")) cfg.max_sequence_len = std::stoul(*v);
    if (auto v = get("generated_cap_factor")) cfg.generated_cap_factor = std::stoul(*v);
    if (auto v = get("allow_discrete_arithmetic")) cfg.allow_discrete_arithmetic = *v != "0";
    if (auto v = get("policy.d_model")) cfg.policy.d_model = std::stoul(*v);
    if (auto v = get("policy.d_ff")) cfg.policy.d_ff = std::stoul(*v);
    if (auto v = get("policy.heads")) cfg.policy.heads = std::stoul(*v);
    if (auto v = get("policy.encoder_layers")) cfg.policy.encoder_layers = std::stoul(*v);
    if (auto v = get("policy.decoder_layers")) cfg.policy.decoder_layers = std::stoul(*v);
    if (auto v = get("policy.dropout")) cfg.policy.dropout = std::stod(*v);
    if (auto v = get("pretrain.epochs")) cfg.pretrain.epochs = std::stoul(*v);
    if (auto v = get("pretrain.sequences_per_epoch")) cfg.pretrain.sequences_per_epoch = std::stoul(*v);
    if (auto v = get("pretrain.temperature_start")) cfg.pretrain.temperature_start = std::stod(*v);
    if (auto v = get("pretrain.temperature_end")) cfg.pretrain.temperature_end = std::stod(*v);
    if (auto v = get("pretrain.patience")) cfg.pretrain.patience = std::stoul(*v);
    if (auto v = get("pretrain.lr")) cfg.pretrain.lr = std::stod(*v);
    if (auto v = get("ppo.iterations")) cfg.ppo.iterations = std::stoul(*v);
    if (auto v = get("ppo.trajectories_per_iteration"))
        cfg.ppo.trajectories_per_iteration = std::stoul(*v);
    if (auto v = get("ppo.epochs_per_batch")) cfg.ppo.epochs_per_batch = std::stoul(*v);
    if (auto v = get("ppo.clip_epsilon")) cfg.ppo.clip_epsilon = std::stod(*v);
    if (auto v = get("ppo.entropy_coef")) cfg.ppo.entropy_coef = std::stod(*v);
    if (auto v = get("ppo.lr")) cfg.ppo.lr = std::stod(*v);
}

void print_metric_report(const eval::MetricReport& m, const std::string& prefix = "") {
    if (m.task_kind == TaskKind::classification) {
        std::cout << prefix << "accuracy=" << format_double(m.accuracy)
                  << " macro_f1=" << format_double(m.macro_f1)
                  << " macro_precision=" << format_double(m.macro_precision) << "\n";
    } else {
        std::cout << prefix << "1-rae=" << format_double(m.one_minus_rae)
                  << " r2=" << format_double(m.r_squared) << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tsfg: transformer + PPO feature generation for tabular data"};
    app.require_subcommand(1);

    // ---- run
    auto* cmd_run = app.add_subcommand("run", "full feature-generation pipeline");
    RunConfig cfg;
    std::string config_file, task_str = "classification", downstream_str = "rf", metric_str,
                ablate_str = "full";
    std::string split_str;
    cmd_run->add_option("--config", config_file, "key=value config file (flags override)");
    cmd_run->add_option("--data", cfg.data_path, "input CSV path");
    cmd_run->add_option("--target", cfg.target, "target column name");
    cmd_run->add_option("--task", task_str, "classification|regression");
    cmd_run->add_option("--out", cfg.out_dir, "output directory (one run per directory)");
    auto* seed_opt = cmd_run->add_option("--seed", cfg.seed, "run seed (mandatory)");
    cmd_run->add_option("--downstream", downstream_str, "rf|mlp");
    cmd_run->add_option("--reward-metric", metric_str, "macro_f1|accuracy|macro_precision|1-rae|r2");
    cmd_run->add_option("--ablate", ablate_str, "full|no-pretrain|no-ppo");
    cmd_run->add_option("--split", split_str, "train,val,test fractions (default 0.6,0.2,0.2)");
    cmd_run->add_option("--pretrain-epochs", cfg.pretrain.epochs, "stage-1 epochs");
    cmd_run->add_option("--pretrain-sequences", cfg.pretrain.sequences_per_epoch,
                        "sequences per stage-1 epoch");
    cmd_run->add_option("--ppo-iterations", cfg.ppo.iterations, "stage-2 iterations");
    cmd_run->add_option("--ppo-trajectories", cfg.ppo.trajectories_per_iteration,
                        "trajectories per iteration");
    cmd_run->add_option("--ppo-epochs", cfg.ppo.epochs_per_batch, "optimizer epochs per batch");
    cmd_run->add_option("--clip-epsilon", cfg.ppo.clip_epsilon, "PPO clipping parameter");
    cmd_run->add_option("--entropy-coef", cfg.ppo.entropy_coef, "entropy bonus coefficient");
    cmd_run->add_option("--lr", cfg.ppo.lr, "PPO learning rate");
    cmd_run->add_option("--d-model", cfg.policy.d_model, "model width");
    cmd_run->add_option("--heads", cfg.policy.heads, "attention heads");
    cmd_run->add_option("--encoder-layers", cfg.policy.encoder_layers, "encoder depth");
    cmd_run->add_option("--decoder-layers", cfg.policy.decoder_layers, "decoder depth");
    cmd_run->add_option("--max-seq-len", cfg.max_sequence_len, "max transformation sequence length");
    cmd_run->add_option("--cap-factor", cfg.generated_cap_factor, "generated column cap = factor*N");

    // ---- transform
    auto* cmd_transform = app.add_subcommand("transform", "apply a saved program to new data");
    std::string t_program, t_data, t_out;
    cmd_transform->add_option("--program", t_program, "best_program.txt path (bundle alongside)")
        ->required();
    cmd_transform->add_option("--data", t_data, "input CSV path")->required();
    cmd_transform->add_option("--out", t_out, "output CSV path")->required();

    // ---- synth
    auto* cmd_synth = app.add_subcommand("synth", "generate a synthetic benchmark CSV");
    std::string s_kind = "product", s_out;
    std::size_t s_rows = 1000, s_features = 5;
    std::uint64_t s_seed = 1;
    cmd_synth->add_option("--kind", s_kind, "product|xor|linear");
    cmd_synth->add_option("--rows", s_rows, "row count (>= 50)");
    cmd_synth->add_option("--features", s_features, "feature count (>= 3)");
    cmd_synth->add_option("--seed", s_seed, "generator seed");
    cmd_synth->add_option("--out", s_out, "output CSV path")->required();

    // ---- evaluate
    auto* cmd_eval = app.add_subcommand("evaluate", "metrics for a downstream model on a CSV");
    std::string e_data, e_target = "target", e_task = "classification", e_model = "rf",
                e_split = "test", e_out;
    std::uint64_t e_seed = 1;
    cmd_eval->add_option("--data", e_data, "input CSV path")->required();
    cmd_eval->add_option("--target", e_target, "target column name");
    cmd_eval->add_option("--task", e_task, "classification|regression");
    cmd_eval->add_option("--model", e_model, "rf|mlp");
    cmd_eval->add_option("--seed", e_seed, "split/model seed");
    cmd_eval->add_option("--eval-split", e_split, "val|test");
    cmd_eval->add_option("--out", e_out, "optional metric report file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*cmd_run) {
            if (!config_file.empty()) apply_config_file(cfg, parse_config_file(config_file));
            // flags override the file
            if (cmd_run->count("--task")) cfg.task = parse_task(task_str);
            if (cmd_run->count("--downstream")) cfg.downstream = parse_downstream(downstream_str);
            if (cmd_run->count("--reward-metric")) cfg.reward_metric = parse_metric(metric_str);
            if (cmd_run->count("--ablate")) cfg.ablation = ablation_from_string(ablate_str);
            if (seed_opt->count()) cfg.seed_set = true;
            if (!split_str.empty()) {
                if (std::sscanf(split_str.c_str(), "%lf,%lf,%lf", &cfg.f_train, &cfg.f_val,
                                &cfg.f_test) != 3) {
                    throw ConfigError("bad --split, want three comma-separated fractions");
                }
            }
            if (!cfg.seed_set) throw ConfigError("--seed is mandatory for run");
            if (cfg.data_path.empty()) throw ConfigError("--data is required");
            if (cfg.out_dir.empty()) throw ConfigError("--out is required");

            const RunReport report = run(cfg, &std::cout);
            std::cout << "variant=" << report.variant << "\n";
            print_metric_report(report.base_test, "base_test: ");
            print_metric_report(report.augmented_test, "augmented_test: ");
            std::cout << "best_val_reward=" << format_double(report.best_val_reward)
                      << " generated_columns=" << report.generated_columns << "\n";
            std::cout << "artifacts: " << cfg.out_dir << "\n";
        } else if (*cmd_transform) {
            transform_csv(t_program, t_data, t_out);
            std::cout << "wrote " << t_out << "\n";
        } else if (*cmd_synth) {
            const auto synth = make_synth(synth_kind_from_string(s_kind), s_rows, s_features, s_seed);
            write_synth(synth, s_out);
            std::cout << "wrote " << s_out << " (" << s_rows << " rows, " << s_features
                      << " features); ground truth in " << s_out << ".meta.txt\n";
        } else if (*cmd_eval) {
            const Split split = e_split == "val" ? Split::val : Split::test;
            const auto report = evaluate_csv(e_data, e_target, parse_task(e_task),
                                             parse_downstream(e_model), e_seed, split);
            print_metric_report(report);
            if (!e_out.empty()) {
                tsfg::run_detail::write_metric_report(e_out, report);
                std::cout << "wrote " << e_out << "\n";
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
