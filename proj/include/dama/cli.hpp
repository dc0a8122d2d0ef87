#pragma once

// Command-line front end. Subcommands: synth, train, modulate, eval,
// report, gradcheck. Exit codes: 0 success, 1 usage error, 2 runtime
// failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "dama/lab.hpp"

namespace dama {

namespace cli_detail {

constexpr const char* kUsage =
    "usage: dama <command> [flags]\n"
    "\n"
    "commands:\n"
    "  synth      generate a synthetic multi-domain corpus\n"
    "             --out DIR --domains N --seed S [--vocab N] [--seq-len N]\n"
    "             [--train N] [--val N] [--test N] [--utility u0,u1,...]\n"
    "  train      stage 1: grid-searched joint training\n"
    "             --data DIR --out DIR [--config FILE] [--gamma-grid SPEC]\n"
    "             [--dropout-grid SPEC] [--epochs N] [--batch N] [--seed S]\n"
    "             [--embed-dim N] [--hidden-dim N] [--proj-dim N] [--max-len N]\n"
    "             [--min-freq N] [--lr X] [--weight-decay X] [--vectors FILE]\n"
    "             [--label-last] [--synth]\n"
    "  modulate   stage 2: per-domain lambda learning and scaling\n"
    "             --ckpt FILE --out DIR [--data DIR] [--b-grid SPEC] [--alpha X]\n"
    "             [--beta X] [--t-window N] [--nt N] [--lambda-lr X] [--parallel]\n"
    "  eval       metrics for a checkpoint on one split\n"
    "             --ckpt FILE --split val|test [--data DIR] [--lambdas CSV]\n"
    "             [--out FILE]\n"
    "  report     delta report from two metrics CSVs\n"
    "             --base CSV --modulated CSV --format csv|txt [--out FILE]\n"
    "  gradcheck  full-model gradient check against finite differences\n"
    "             [--seed S]\n";

struct Args {
    std::vector<std::string> items;

    bool has(const std::string& flag) const {
        for (const auto& a : items) {
            if (a == flag) return true;
        }
        return false;
    }
    // value flags: --name value
    std::string get(const std::string& flag, const std::string& fallback = "") const {
        for (std::size_t i = 0; i + 1 < items.size(); ++i) {
            if (items[i] == flag) return items[i + 1];
        }
        return fallback;
    }
    std::string require(const std::string& flag) const {
        const std::string v = get(flag);
        if (v.empty()) throw std::invalid_argument("missing required flag " + flag);
        return v;
    }
    // reject unknown flags so typos fail loudly
    void check_known(const std::vector<std::string>& value_flags,
                     const std::vector<std::string>& bool_flags) const {
        for (std::size_t i = 0; i < items.size(); ++i) {
            const std::string& a = items[i];
            if (a.rfind("--", 0) != 0) continue;
            bool known = false;
            for (const auto& f : bool_flags) known = known || f == a;
            for (const auto& f : value_flags) {
                if (f == a) {
                    known = true;
                    ++i; // skip the value
                }
            }
            if (!known) throw std::invalid_argument("unknown flag " + a);
        }
    }
};

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
}

inline int cmd_synth(const Args& args) {
    args.check_known({"--out", "--domains", "--seed", "--vocab", "--seq-len", "--train", "--val",
                      "--test", "--utility"},
                     {});
    SynthSpec spec;
    spec.num_domains = std::stoul(args.get("--domains", "4"));
    spec.vocab_size = std::stoul(args.get("--vocab", "300"));
    spec.seq_len = std::stoul(args.get("--seq-len", "10"));
    spec.n_train = std::stoul(args.get("--train", "800"));
    spec.n_val = std::stoul(args.get("--val", "200"));
    spec.n_test = std::stoul(args.get("--test", "200"));
    const std::string utility = args.get("--utility");
    if (utility.empty()) {
        spec.domain_utility.assign(spec.num_domains, 0.5);
    } else {
        spec.domain_utility = parse_grid(utility);
    }
    const std::uint64_t seed = std::stoull(args.get("--seed", "1"));
    const std::string out_dir = args.require("--out");
    std::filesystem::create_directories(out_dir);

    const auto corpora = gen_synthetic(spec, seed);
    for (const TextCorpus& c : corpora) {
        write_corpus_file(out_dir + "/" + c.name + ".train.txt", c.train);
        write_corpus_file(out_dir + "/" + c.name + ".val.txt", c.val);
        write_corpus_file(out_dir + "/" + c.name + ".test.txt", c.test);
    }
    std::cout << "wrote " << corpora.size() << " domains to " << out_dir << "\n";
    return 0;
}

inline void apply_common_train_flags(ExperimentConfig& cfg, const Args& args) {
    struct FlagKey {
        const char* flag;
        const char* key;
    };
    const FlagKey mappings[] = {
        {"--gamma-grid", "stage1.gamma_grid"},  {"--dropout-grid", "stage1.dropout_grid"},
        {"--epochs", "stage1.epochs"},          {"--batch", "stage1.batch_size"},
        {"--lr", "stage1.lr"},                  {"--weight-decay", "stage1.weight_decay"},
        {"--embed-dim", "model.embed_dim"},     {"--hidden-dim", "model.hidden_dim"},
        {"--proj-dim", "model.proj_dim"},       {"--forget-mode", "model.forget_mode"},
        {"--max-len", "data.max_len"},          {"--min-freq", "data.min_freq"},
        {"--vectors", "data.vectors"},          {"--val-ratio", "data.val_ratio"},
        {"--seed", "run.seed"},
    };
    for (const auto& [flag, key] : mappings) {
        const std::string v = args.get(flag);
        if (!v.empty()) apply_setting(cfg, key, v);
    }
    if (args.has("--label-last")) cfg.label_last = true;
}

inline int cmd_train(const Args& args) {
    args.check_known({"--data", "--out", "--config", "--gamma-grid", "--dropout-grid", "--epochs",
                      "--batch", "--lr", "--weight-decay", "--embed-dim", "--hidden-dim",
                      "--proj-dim", "--forget-mode", "--max-len", "--min-freq", "--vectors",
                      "--val-ratio", "--seed", "--synth-utility", "--synth-vocab",
                      "--synth-seq-len", "--synth-train", "--synth-val", "--synth-test",
                      "--synth-domains"},
                     {"--label-last", "--synth"});
    ExperimentConfig cfg;
    const std::string config_path = args.get("--config");
    if (!config_path.empty()) load_config_file(cfg, config_path);
    if (args.has("--synth")) cfg.use_synth = true;
    const std::string data_dir = args.get("--data");
    if (!data_dir.empty()) cfg.data_dir = data_dir;
    for (const auto& [flag, key] :
         std::initializer_list<std::pair<const char*, const char*>>{
             {"--synth-domains", "synth.domains"},
             {"--synth-vocab", "synth.vocab_size"},
             {"--synth-seq-len", "synth.seq_len"},
             {"--synth-train", "synth.n_train"},
             {"--synth-val", "synth.n_val"},
             {"--synth-test", "synth.n_test"},
             {"--synth-utility", "synth.utility"}}) {
        const std::string v = args.get(flag);
        if (!v.empty()) apply_setting(cfg, key, v);
    }
    apply_common_train_flags(cfg, args);
    const std::string out_dir = args.require("--out");
    std::filesystem::create_directories(out_dir);

    const PreparedData data = prepare_data(cfg);
    std::cout << "training on " << data.domains.size() << " domains, vocab " << data.vocab.size()
              << ", grid " << cfg.gamma_grid.size() << "x" << cfg.dropout_grid.size() << "\n";
    GridResult grid = grid_search(cfg, data);
    std::cout << "selected gamma " << format_double(grid.best_gamma) << " dropout "
              << format_double(grid.best_dropout) << "\n";

    Checkpoint ckpt;
    ckpt.net = std::move(grid.model.net);
    ckpt.vocab = data.vocab;
    ckpt.domain_names = data.names;
    ckpt.gamma = grid.best_gamma;
    ckpt.dropout_p = grid.best_dropout;
    ckpt.max_len = cfg.max_len;
    ckpt.experiment = cfg;
    for (std::size_t e = 0; e < grid.model.log.size(); ++e) {
        ckpt.log_lines.push_back("epoch " + std::to_string(e) + " train_loss " +
                                 format_double(grid.model.log[e].train_loss) + " val_accuracy " +
                                 format_double(grid.model.log[e].val_accuracy));
    }
    save_checkpoint(ckpt, out_dir + "/checkpoint.dama");
    write_text_file(out_dir + "/grid.csv", grid_csv(grid.cells));
    write_text_file(out_dir + "/metrics_val.csv", metrics_csv(evaluate(ckpt.net, data.domains, "val")));
    write_text_file(out_dir + "/metrics_test.csv",
                    metrics_csv(evaluate(ckpt.net, data.domains, "test")));
    std::cout << "wrote " << out_dir << "/checkpoint.dama\n";
    return 0;
}

inline PreparedData data_for_checkpoint(const Checkpoint& ckpt, const std::string& data_override) {
    ExperimentConfig cfg = ckpt.experiment;
    if (!data_override.empty()) {
        cfg.data_dir = data_override;
        cfg.use_synth = false;
    }
    const std::vector<TextCorpus> corpora = load_text_corpora(cfg);
    PreparedData data = encode_with(ckpt.vocab, corpora);
    if (data.names != ckpt.domain_names) {
        throw std::runtime_error("data domains do not match the checkpoint's domain list");
    }
    return data;
}

inline int cmd_modulate(const Args& args) {
    args.check_known({"--ckpt", "--out", "--data", "--b-grid", "--alpha", "--beta", "--t-window",
                      "--nt", "--lambda-lr", "--stage2-epochs", "--stage2-batch", "--seed"},
                     {"--parallel"});
    Checkpoint ckpt = load_checkpoint(args.require("--ckpt"));
    ExperimentConfig cfg = ckpt.experiment;
    for (const auto& [flag, key] :
         std::initializer_list<std::pair<const char*, const char*>>{
             {"--b-grid", "stage2.b_grid"},
             {"--alpha", "stage2.alpha"},
             {"--beta", "stage2.beta"},
             {"--t-window", "stage2.t_window"},
             {"--nt", "stage2.n_t"},
             {"--lambda-lr", "stage2.lambda_lr"},
             {"--stage2-epochs", "stage2.epochs"},
             {"--stage2-batch", "stage2.batch_size"},
             {"--seed", "run.seed"}}) {
        const std::string v = args.get(flag);
        if (!v.empty()) apply_setting(cfg, key, v);
    }
    const std::string out_dir = args.require("--out");
    std::filesystem::create_directories(out_dir);

    const PreparedData data = data_for_checkpoint(ckpt, args.get("--data"));
    const Stage2Output out = stage2_all(ckpt.net, data.domains, cfg, args.has("--parallel"));
    write_text_file(out_dir + "/lambda.csv", stage2_csv(out));
    write_text_file(out_dir + "/stage2_metrics.csv", stage2_table_csv(out.table));

    std::map<std::string, double> lambdas;
    for (const DomainStage2Result& r : out.results) lambdas[r.domain] = r.lambda_final;
    write_text_file(out_dir + "/metrics_val_modulated.csv",
                    metrics_csv(evaluate(ckpt.net, data.domains, "val", &lambdas)));
    write_text_file(out_dir + "/metrics_test_modulated.csv",
                    metrics_csv(evaluate(ckpt.net, data.domains, "test", &lambdas)));
    for (const DomainStage2Result& r : out.results) {
        std::cout << r.domain << ": lambda " << format_double(r.lambda_learned) << " -> "
                  << format_double(r.lambda_final) << " (val " << format_double(100.0 * r.a_x)
                  << " -> " << format_double(100.0 * r.a_xplus) << ")\n";
    }
    return 0;
}

inline int cmd_eval(const Args& args) {
    args.check_known({"--ckpt", "--data", "--split", "--lambdas", "--out"}, {});
    Checkpoint ckpt = load_checkpoint(args.require("--ckpt"));
    const std::string split = args.require("--split");
    const PreparedData data = data_for_checkpoint(ckpt, args.get("--data"));
    std::map<std::string, double> lambdas;
    const bool with_lambdas = !args.get("--lambdas").empty();
    if (with_lambdas) lambdas = parse_lambda_csv(args.get("--lambdas"));
    const std::string csv =
        metrics_csv(evaluate(ckpt.net, data.domains, split, with_lambdas ? &lambdas : nullptr));
    const std::string out_path = args.get("--out");
    if (out_path.empty()) {
        std::cout << csv;
    } else {
        write_text_file(out_path, csv);
    }
    return 0;
}

inline int cmd_report(const Args& args) {
    args.check_known({"--base", "--modulated", "--format", "--out"}, {});
    const auto base = parse_metrics_csv(args.require("--base"));
    const auto modulated = parse_metrics_csv(args.require("--modulated"));
    const std::string format = args.get("--format", "txt");
    if (format != "csv" && format != "txt") {
        throw std::invalid_argument("--format must be csv or txt");
    }
    const ReportFiles report = make_report(base, modulated);
    const std::string& content = format == "csv" ? report.csv : report.txt;
    const std::string out_path = args.get("--out");
    if (out_path.empty()) {
        std::cout << content;
    } else {
        write_text_file(out_path, content);
    }
    return 0;
}

inline int cmd_gradcheck(const Args& args) {
    args.check_known({"--seed"}, {});
    const std::uint64_t seed = std::stoull(args.get("--seed", "7"));

    NetConfig ncfg;
    ncfg.vocab_size = 20;
    ncfg.embed_dim = 10;
    ncfg.hidden_dim = 8;
    ncfg.proj_dim = 6;
    ncfg.num_domains = 3;
    ncfg.gamma = 0.06;
    ncfg.dropout_p = 0.25;
    RngStream init(derive_seed(seed, "gradcheck/init"));
    DamNet net(ncfg, init);

    RngStream rng(derive_seed(seed, "gradcheck/data"));
    std::vector<BatchExample> batch;
    for (int i = 0; i < 3; ++i) {
        BatchExample ex;
        const std::size_t len = 4 + rng.next_below(9); // up to 12
        for (std::size_t t = 0; t < len; ++t) {
            ex.ids.push_back(static_cast<std::int32_t>(2 + rng.next_below(ncfg.vocab_size - 2)));
        }
        ex.labels = {rng.next_below(2), rng.next_below(3)};
        batch.push_back(ex);
    }

    const std::uint64_t drop_seed = derive_seed(seed, "gradcheck/dropout");
    auto loss_of = [&](DamNet& candidate) {
        RngStream drop(drop_seed);
        std::vector<ForwardTrace> traces;
        std::vector<Labels> labels;
        for (const auto& ex : batch) {
            traces.push_back(forward_example(candidate, ex.ids, Mode::Train, drop));
            labels.push_back(ex.labels);
        }
        return joint_loss(traces, labels, ncfg.gamma);
    };

    NetGrads grads(net);
    RngStream drop(drop_seed);
    param_grads(net, batch, ncfg.gamma, Mode::Train, drop, grads);

    bool all_pass = true;
    auto named = net.named_params();
    auto gorder = grads.param_order();
    for (std::size_t k = 0; k < named.size(); ++k) {
        Tensor* param = named[k].second;
        auto f = [&](const Tensor& v) {
            const Tensor saved = *param;
            *param = v;
            const double out = loss_of(net);
            *param = saved;
            return out;
        };
        const GradCheckReport rep = grad_check(f, *param, *gorder[k]);
        all_pass = all_pass && rep.pass;
        std::printf("%-14s max_rel_err %.3e  %s\n", named[k].first.c_str(), rep.max_rel_err,
                    rep.pass ? "ok" : "FAIL");
    }
    // input-embedding gradient of the first example
    {
        RngStream e(0);
        ForwardTrace tr = forward_example(net, batch[0].ids, Mode::Eval, e);
        Tensor g({tr.X.rows(), ncfg.embed_dim});
        backward_example(net, tr, batch[0].labels, 1.0, ncfg.gamma, nullptr, &g);
        auto f = [&](const Tensor& X) {
            RngStream e2(0);
            ForwardTrace t2 = forward_from_embeddings(net, X, tr.mask, Mode::Eval, e2);
            return cross_entropy(t2.logits_s, batch[0].labels.y_s) +
                   ncfg.gamma * cross_entropy(t2.logits_d, batch[0].labels.y_d);
        };
        const GradCheckReport rep = grad_check(f, tr.X, g);
        all_pass = all_pass && rep.pass;
        std::printf("%-14s max_rel_err %.3e  %s\n", "input", rep.max_rel_err,
                    rep.pass ? "ok" : "FAIL");
    }
    std::cout << (all_pass ? "gradcheck passed\n" : "gradcheck FAILED\n");
    return all_pass ? 0 : 2;
}

} // namespace cli_detail

inline int cli_main(const std::vector<std::string>& argv) {
    using namespace cli_detail;
    if (argv.empty()) {
        std::cerr << kUsage;
        return 1;
    }
    const std::string command = argv[0];
    Args args{std::vector<std::string>(argv.begin() + 1, argv.end())};
    try {
        if (command == "synth") return cmd_synth(args);
        if (command == "train") return cmd_train(args);
        if (command == "modulate") return cmd_modulate(args);
        if (command == "eval") return cmd_eval(args);
        if (command == "report") return cmd_report(args);
        if (command == "gradcheck") return cmd_gradcheck(args);
        std::cerr << "unknown command: " << command << "\n" << kUsage;
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n" << kUsage;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

inline int cli_main(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return cli_main(args);
}

} // namespace dama
