#pragma once

// Experiment orchestration: stage-1 joint training with the gamma/dropout
// grid search, stage-2 per-domain modulation runs, checkpoint persistence
// and the metric/report files. Everything is a pure function of the
// experiment config and its master seed.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dama/data.hpp"
#include "dama/modulation.hpp"
#include "dama/net.hpp"

namespace dama {

// ------------------------------------------------------------ configuration

// "a:b:step" inclusive range or a comma-separated list.
inline std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> out;
    if (text.find(':') != std::string::npos) {
        double lo = 0, hi = 0, step = 0;
        char c1 = 0, c2 = 0;
        std::istringstream is(text);
        if (!(is >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || step <= 0) {
            throw std::invalid_argument("bad grid spec: " + text);
        }
        for (double v = lo; v <= hi + 1e-12; v += step) out.push_back(v);
    } else {
        std::istringstream is(text);
        std::string item;
        while (std::getline(is, item, ',')) {
            if (!item.empty()) out.push_back(std::stod(item));
        }
    }
    if (out.empty()) throw std::invalid_argument("empty grid spec: " + text);
    return out;
}

struct ExperimentConfig {
    // data
    std::string data_dir;
    bool label_last = false;
    bool use_synth = false;
    SynthSpec synth;
    double val_ratio = 0.2;
    std::size_t min_freq = 1;
    std::size_t max_len = 64;
    std::string vectors_path;
    // model
    std::size_t embed_dim = 32;
    std::size_t hidden_dim = 32;
    std::size_t proj_dim = 64;
    ForgetMode forget_mode = ForgetMode::Sigmoid;
    // stage 1
    std::vector<double> gamma_grid = parse_grid("0.0:0.1:0.02");
    std::vector<double> dropout_grid = parse_grid("0.5:0.9:0.1");
    int epochs = 5;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    // stage 2
    ModulationConfig mod;
    std::vector<double> b_grid = parse_grid("100:500:100");
    std::uint64_t seed = 1;
};

// Flat "key = value" settings with bracketed section headers. Every CLI
// flag maps onto the same dotted keys and overrides the file.
inline void apply_setting(ExperimentConfig& cfg, const std::string& key,
                          const std::string& value) {
    auto as_bool = [&] { return value == "1" || value == "true" || value == "yes"; };
    if (key == "data.dir") cfg.data_dir = value;
    else if (key == "data.label_last") cfg.label_last = as_bool();
    else if (key == "data.val_ratio") cfg.val_ratio = std::stod(value);
    else if (key == "data.min_freq") cfg.min_freq = std::stoul(value);
    else if (key == "data.max_len") cfg.max_len = std::stoul(value);
    else if (key == "data.vectors") cfg.vectors_path = value;
    else if (key == "model.embed_dim") cfg.embed_dim = std::stoul(value);
    else if (key == "model.hidden_dim") cfg.hidden_dim = std::stoul(value);
    else if (key == "model.proj_dim") cfg.proj_dim = std::stoul(value);
    else if (key == "model.forget_mode") {
        if (value == "sigmoid") cfg.forget_mode = ForgetMode::Sigmoid;
        else if (value == "exponential") cfg.forget_mode = ForgetMode::Exponential;
        else throw std::invalid_argument("forget_mode must be sigmoid or exponential");
    } else if (key == "stage1.gamma_grid") cfg.gamma_grid = parse_grid(value);
    else if (key == "stage1.dropout_grid") cfg.dropout_grid = parse_grid(value);
    else if (key == "stage1.epochs") cfg.epochs = std::stoi(value);
    else if (key == "stage1.batch_size") cfg.batch_size = std::stoul(value);
    else if (key == "stage1.lr") cfg.lr = std::stod(value);
    else if (key == "stage1.weight_decay") cfg.weight_decay = std::stod(value);
    else if (key == "stage2.b_grid") cfg.b_grid = parse_grid(value);
    else if (key == "stage2.alpha") cfg.mod.alpha = std::stod(value);
    else if (key == "stage2.beta") cfg.mod.beta = std::stod(value);
    else if (key == "stage2.t_window") cfg.mod.t_window = std::stoi(value);
    else if (key == "stage2.n_t") cfg.mod.n_t = std::stoi(value);
    else if (key == "stage2.lambda_lr") cfg.mod.lambda_lr = std::stod(value);
    else if (key == "stage2.epochs") cfg.mod.epochs = std::stoi(value);
    else if (key == "stage2.batch_size") cfg.mod.batch_size = std::stoul(value);
    else if (key == "run.seed") cfg.seed = std::stoull(value);
    else if (key == "data.use_synth") cfg.use_synth = as_bool();
    else if (key == "synth.domains") cfg.synth.num_domains = std::stoul(value);
    else if (key == "synth.vocab_size") cfg.synth.vocab_size = std::stoul(value);
    else if (key == "synth.seq_len") cfg.synth.seq_len = std::stoul(value);
    else if (key == "synth.n_train") cfg.synth.n_train = std::stoul(value);
    else if (key == "synth.n_val") cfg.synth.n_val = std::stoul(value);
    else if (key == "synth.n_test") cfg.synth.n_test = std::stoul(value);
    else if (key == "synth.utility") {
        cfg.synth.domain_utility = parse_grid(value);
    } else {
        throw std::invalid_argument("unknown config key: " + key);
    }
}

inline std::string grid_spec(const std::vector<double>& grid) {
    std::string out;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (i) out += ',';
        out += format_double(grid[i]);
    }
    return out;
}

// Canonical key = value echo of the full experiment config; feeding every
// line back through apply_setting reproduces the config exactly.
inline std::vector<std::string> config_echo(const ExperimentConfig& cfg) {
    std::vector<std::string> out;
    auto put = [&out](const std::string& key, const std::string& value) {
        out.push_back(key + " = " + value);
    };
    put("data.dir", cfg.data_dir);
    put("data.label_last", cfg.label_last ? "1" : "0");
    put("data.use_synth", cfg.use_synth ? "1" : "0");
    put("data.val_ratio", format_double(cfg.val_ratio));
    put("data.min_freq", std::to_string(cfg.min_freq));
    put("data.max_len", std::to_string(cfg.max_len));
    put("data.vectors", cfg.vectors_path);
    put("synth.domains", std::to_string(cfg.synth.num_domains));
    put("synth.vocab_size", std::to_string(cfg.synth.vocab_size));
    put("synth.seq_len", std::to_string(cfg.synth.seq_len));
    put("synth.n_train", std::to_string(cfg.synth.n_train));
    put("synth.n_val", std::to_string(cfg.synth.n_val));
    put("synth.n_test", std::to_string(cfg.synth.n_test));
    if (!cfg.synth.domain_utility.empty()) put("synth.utility", grid_spec(cfg.synth.domain_utility));
    put("model.embed_dim", std::to_string(cfg.embed_dim));
    put("model.hidden_dim", std::to_string(cfg.hidden_dim));
    put("model.proj_dim", std::to_string(cfg.proj_dim));
    put("model.forget_mode", cfg.forget_mode == ForgetMode::Sigmoid ? "sigmoid" : "exponential");
    put("stage1.gamma_grid", grid_spec(cfg.gamma_grid));
    put("stage1.dropout_grid", grid_spec(cfg.dropout_grid));
    put("stage1.epochs", std::to_string(cfg.epochs));
    put("stage1.batch_size", std::to_string(cfg.batch_size));
    put("stage1.lr", format_double(cfg.lr));
    put("stage1.weight_decay", format_double(cfg.weight_decay));
    put("stage2.b_grid", grid_spec(cfg.b_grid));
    put("stage2.alpha", format_double(cfg.mod.alpha));
    put("stage2.beta", format_double(cfg.mod.beta));
    put("stage2.t_window", std::to_string(cfg.mod.t_window));
    put("stage2.n_t", std::to_string(cfg.mod.n_t));
    put("stage2.lambda_lr", format_double(cfg.mod.lambda_lr));
    put("stage2.epochs", std::to_string(cfg.mod.epochs));
    put("stage2.batch_size", std::to_string(cfg.mod.batch_size));
    put("run.seed", std::to_string(cfg.seed));
    return out;
}

inline ExperimentConfig config_from_echo(const std::vector<std::string>& lines) {
    ExperimentConfig cfg;
    for (const std::string& line : lines) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) {
            throw std::invalid_argument("bad config echo line: " + line);
        }
        const std::string value = line.substr(eq + 3);
        if (value.empty()) continue; // empty strings keep defaults
        apply_setting(cfg, line.substr(0, eq), value);
    }
    return cfg;
}

inline void load_config_file(ExperimentConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        if (line[first] == '[') {
            const auto close = line.find(']', first);
            if (close == std::string::npos) {
                throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad section");
            }
            section = line.substr(first + 1, close - first - 1);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected key = value");
        }
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        apply_setting(cfg, section.empty() ? key : section + "." + key, value);
    }
}

// ------------------------------------------------------------- data loading

struct PreparedData {
    Vocab vocab;
    std::vector<DomainCorpus> domains;
    std::vector<std::string> names;
};

// Synthetic corpora or the directory layout <dir>/<name>.{train,val,test}.txt,
// domain indices assigned by sorted name. Missing val splits are carved out
// of train with a seed derived per domain.
inline std::vector<TextCorpus> load_text_corpora(const ExperimentConfig& cfg) {
    std::vector<TextCorpus> corpora;
    if (cfg.use_synth) {
        corpora = gen_synthetic(cfg.synth, derive_seed(cfg.seed, "synth"));
    } else {
        if (cfg.data_dir.empty()) throw std::invalid_argument("no data source configured");
        std::vector<std::string> names;
        for (const auto& entry : std::filesystem::directory_iterator(cfg.data_dir)) {
            const std::string fn = entry.path().filename().string();
            const std::string suffix = ".train.txt";
            if (fn.size() > suffix.size() && fn.ends_with(suffix)) {
                names.push_back(fn.substr(0, fn.size() - suffix.size()));
            }
        }
        std::sort(names.begin(), names.end());
        if (names.empty()) {
            throw std::runtime_error("no *.train.txt corpora under " + cfg.data_dir);
        }
        for (std::size_t d = 0; d < names.size(); ++d) {
            corpora.push_back(load_corpus(cfg.data_dir, names[d], d, cfg.label_last));
        }
    }
    for (TextCorpus& c : corpora) {
        if (c.val.empty() && cfg.val_ratio > 0.0) {
            split_val(c, cfg.val_ratio, derive_seed(cfg.seed, "split/" + c.name));
        }
    }
    return corpora;
}

inline PreparedData encode_with(const Vocab& vocab, const std::vector<TextCorpus>& corpora) {
    PreparedData out;
    out.vocab = vocab;
    for (const TextCorpus& c : corpora) {
        out.domains.push_back(encode_corpus(vocab, c));
        out.names.push_back(c.name);
    }
    return out;
}

inline PreparedData prepare_data(const ExperimentConfig& cfg) {
    const std::vector<TextCorpus> corpora = load_text_corpora(cfg);
    return encode_with(build_vocab(corpora, cfg.min_freq, cfg.max_len), corpora);
}

// ----------------------------------------------------------------- training

struct EpochStats {
    double train_loss = 0.0;
    double val_accuracy = 0.0; // mean over domains, fraction
};

struct TrainedModel {
    DamNet net;
    double gamma = 0.0;
    double dropout_p = 0.0;
    std::vector<EpochStats> log;
};

struct DomainEval {
    std::string domain;
    std::string split;
    std::size_t n = 0;
    double sentiment_accuracy = 0.0; // percent
    double sentiment_loss = 0.0;
    double domain_accuracy = 0.0; // percent
};

inline DomainEval eval_domain_split(const DamNet& net, const DomainCorpus& domain,
                                    const std::vector<Example>& split, const char* split_name) {
    DomainEval row;
    row.domain = domain.name;
    row.split = split_name;
    row.n = split.size();
    if (split.empty()) return row;
    RngStream unused(0);
    std::size_t cs = 0, cd = 0;
    double loss = 0.0;
    for (const Example& ex : split) {
        ForwardTrace tr = forward_example(net, ex.ids, Mode::Eval, unused);
        if (predict(tr.p) == ex.y_s) ++cs;
        if (predict(tr.q) == ex.y_d) ++cd;
        loss += cross_entropy(tr.logits_s, ex.y_s);
    }
    const double n = static_cast<double>(split.size());
    row.sentiment_accuracy = 100.0 * static_cast<double>(cs) / n;
    row.domain_accuracy = 100.0 * static_cast<double>(cd) / n;
    row.sentiment_loss = loss / n;
    return row;
}

inline double mean_val_accuracy(const DamNet& net, const std::vector<DomainCorpus>& domains) {
    double sum = 0.0;
    std::size_t counted = 0;
    for (const DomainCorpus& d : domains) {
        if (d.val.empty()) continue;
        sum += eval_domain_split(net, d, d.val, "val").sentiment_accuracy / 100.0;
        ++counted;
    }
    return counted ? sum / static_cast<double>(counted) : 0.0;
}

inline TrainedModel train_stage1(const ExperimentConfig& cfg, const PreparedData& data,
                                 double gamma, double dropout_p, std::uint64_t seed) {
    NetConfig ncfg;
    ncfg.vocab_size = data.vocab.size();
    ncfg.embed_dim = cfg.embed_dim;
    ncfg.hidden_dim = cfg.hidden_dim;
    ncfg.proj_dim = cfg.proj_dim;
    ncfg.num_domains = data.domains.size();
    ncfg.gamma = gamma;
    ncfg.dropout_p = dropout_p;
    ncfg.forget_mode = cfg.forget_mode;

    RngStream init = derive_stream(seed, "init");
    TrainedModel model{DamNet(ncfg, init), gamma, dropout_p, {}};
    if (!cfg.vectors_path.empty()) {
        load_vectors(cfg.vectors_path, data.vocab, model.net.embedding);
    }

    std::vector<Example> pool;
    for (const DomainCorpus& d : data.domains) {
        pool.insert(pool.end(), d.train.begin(), d.train.end());
    }
    if (pool.empty()) throw std::runtime_error("train_stage1: no training examples");

    auto params = model.net.named_params();
    std::vector<AdamState> opt;
    for (auto& [name, tensor] : params) {
        opt.emplace_back(tensor->shape, cfg.lr, cfg.weight_decay);
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        RngStream shuffle_rng = derive_stream(seed, "shuffle/" + std::to_string(epoch));
        RngStream dropout_rng = derive_stream(seed, "dropout/" + std::to_string(epoch));
        auto chunks = batches(pool, cfg.batch_size, shuffle_rng, true);
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < chunks.size(); ++b) {
            NetGrads grads(model.net);
            double loss;
            try {
                loss = param_grads(model.net, chunks[b], gamma, Mode::Train, dropout_rng, grads);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("stage1 aborted at epoch " + std::to_string(epoch) +
                                         " batch " + std::to_string(b) + ": " + e.what());
            }
            loss_sum += loss;
            auto gtensors = grads.param_order();
            for (std::size_t k = 0; k < params.size(); ++k) {
                adam_step(opt[k], *params[k].second, *gtensors[k]);
            }
        }
        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(chunks.size());
        stats.val_accuracy = mean_val_accuracy(model.net, data.domains);
        model.log.push_back(stats);
    }
    return model;
}

// -------------------------------------------------------------- grid search

struct GridCell {
    double gamma = 0.0;
    double dropout_p = 0.0;
    double val_accuracy = 0.0;  // mean over domains, percent
    double test_accuracy = 0.0; // percent
};

struct GridResult {
    double best_gamma = 0.0;
    double best_dropout = 0.0;
    TrainedModel model;
    std::vector<GridCell> cells;
};

inline std::string grid_csv(const std::vector<GridCell>& cells) {
    std::string out = "gamma,dropout,val_sentiment_accuracy,test_sentiment_accuracy\n";
    for (const GridCell& c : cells) {
        out += format_double(c.gamma) + "," + format_double(c.dropout_p) + "," +
               format_double(c.val_accuracy) + "," + format_double(c.test_accuracy) + "\n";
    }
    return out;
}

// Trains one model per (gamma, dropout) cell and keeps the argmax of mean
// validation sentiment accuracy; ties prefer smaller gamma, then smaller
// dropout (the iteration order, with strict improvement).
inline GridResult grid_search(const ExperimentConfig& cfg, const PreparedData& data) {
    if (cfg.gamma_grid.empty() || cfg.dropout_grid.empty()) {
        throw std::invalid_argument("grid_search: empty grid");
    }
    GridResult result;
    bool have_best = false;
    double best_val = -1.0;
    for (double gamma : cfg.gamma_grid) {
        for (double dropout_p : cfg.dropout_grid) {
            TrainedModel model = train_stage1(cfg, data, gamma, dropout_p, cfg.seed);
            GridCell cell;
            cell.gamma = gamma;
            cell.dropout_p = dropout_p;
            cell.val_accuracy = 100.0 * mean_val_accuracy(model.net, data.domains);
            double test_sum = 0.0;
            std::size_t counted = 0;
            for (const DomainCorpus& d : data.domains) {
                if (d.test.empty()) continue;
                test_sum += eval_domain_split(model.net, d, d.test, "test").sentiment_accuracy;
                ++counted;
            }
            cell.test_accuracy = counted ? test_sum / static_cast<double>(counted) : 0.0;
            result.cells.push_back(cell);
            if (!have_best || cell.val_accuracy > best_val) {
                have_best = true;
                best_val = cell.val_accuracy;
                result.best_gamma = gamma;
                result.best_dropout = dropout_p;
                result.model = std::move(model);
            }
        }
    }
    return result;
}

// --------------------------------------------------------------- evaluation

inline std::string metrics_csv_header() {
    return "domain,split,n,sentiment_accuracy,sentiment_loss,domain_accuracy";
}

inline std::string metrics_csv(const std::vector<DomainEval>& rows) {
    std::string out = metrics_csv_header() + "\n";
    for (const DomainEval& r : rows) {
        out += r.domain + "," + r.split + "," + std::to_string(r.n) + "," +
               format_double(r.sentiment_accuracy) + "," + format_double(r.sentiment_loss) + "," +
               format_double(r.domain_accuracy) + "\n";
    }
    return out;
}

// Eval-mode metrics per domain on one split; with a lambda map the inputs
// are modulated per domain before prediction.
inline std::vector<DomainEval> evaluate(const DamNet& net, const std::vector<DomainCorpus>& domains,
                                        const std::string& split,
                                        const std::map<std::string, double>* lambdas = nullptr) {
    if (split != "val" && split != "test") {
        throw std::invalid_argument("evaluate: split must be val or test");
    }
    if (lambdas) {
        for (const auto& [name, lam] : *lambdas) {
            bool known = false;
            for (const DomainCorpus& d : domains) known = known || d.name == name;
            if (!known) throw std::invalid_argument("evaluate: unknown domain in lambda map: " + name);
        }
    }
    std::vector<DomainEval> rows;
    for (const DomainCorpus& d : domains) {
        const std::vector<Example>& examples = split == "val" ? d.val : d.test;
        if (!lambdas || lambdas->find(d.name) == lambdas->end()) {
            rows.push_back(eval_domain_split(net, d, examples, split.c_str()));
            continue;
        }
        DomainEval row;
        row.domain = d.name;
        row.split = split;
        row.n = examples.size();
        if (!examples.empty()) {
            const GradCache cache = build_grad_cache(net, examples);
            const EvalModulated r = eval_modulated(net, lambdas->at(d.name), examples, cache);
            row.sentiment_accuracy = 100.0 * r.accuracy;
            row.sentiment_loss = r.loss;
            row.domain_accuracy = 100.0 * r.domain_accuracy;
        }
        rows.push_back(row);
    }
    return rows;
}

// ------------------------------------------------------------------ stage 2

struct DomainMetrics {
    std::string domain;
    double b = 0.0;
    double lambda_learned = 0.0;
    double lambda_final = 0.0;
    double o_vc = 0.0, o_tc = 0.0; // base sentiment accuracy, percent
    double s_vc = 0.0, s_tc = 0.0; // modulated
    double d_vc = 0.0, d_vc_mod = 0.0;
    double d_tc = 0.0, d_tc_mod = 0.0;
};

using MetricsTable = std::vector<DomainMetrics>;

struct Stage2Output {
    std::vector<DomainStage2Result> results;
    MetricsTable table;
};

// Runs stage 2 for every domain, serially or with one thread per domain.
// Each domain derives its own seed, so the schedule cannot change results.
inline Stage2Output stage2_all(const DamNet& net, const std::vector<DomainCorpus>& domains,
                               const ExperimentConfig& cfg, bool parallel = false) {
    Stage2Output out;
    out.results.resize(domains.size());
    out.table.resize(domains.size());

    auto run_one = [&](std::size_t d) {
        const DomainCorpus& domain = domains[d];
        DomainStage2Result r =
            run_domain_stage2(net, domain, cfg.b_grid, cfg.mod,
                              derive_seed(cfg.seed, "stage2/" + domain.name));
        DomainMetrics m;
        m.domain = domain.name;
        m.b = r.b;
        m.lambda_learned = r.lambda_learned;
        m.lambda_final = r.lambda_final;
        m.o_vc = 100.0 * r.a_x;
        m.s_vc = 100.0 * r.a_xplus;
        m.d_vc = 100.0 * r.d_x;
        m.d_vc_mod = 100.0 * r.d_xplus;
        if (!domain.test.empty()) {
            const GradCache test_cache = build_grad_cache(net, domain.test);
            const EvalModulated base = eval_modulated(net, 0.0, domain.test, test_cache);
            const EvalModulated mod = eval_modulated(net, r.lambda_final, domain.test, test_cache);
            m.o_tc = 100.0 * base.accuracy;
            m.s_tc = 100.0 * mod.accuracy;
            m.d_tc = 100.0 * base.domain_accuracy;
            m.d_tc_mod = 100.0 * mod.domain_accuracy;
        }
        out.results[d] = std::move(r);
        out.table[d] = std::move(m);
    };

    if (parallel) {
        std::vector<std::thread> workers;
        for (std::size_t d = 0; d < domains.size(); ++d) workers.emplace_back(run_one, d);
        for (std::thread& w : workers) w.join();
    } else {
        for (std::size_t d = 0; d < domains.size(); ++d) run_one(d);
    }
    return out;
}

inline std::string stage2_csv(const Stage2Output& out) {
    std::string text = lambda_csv_header() + "\n";
    for (const DomainStage2Result& r : out.results) text += lambda_csv_row(r) + "\n";
    return text;
}

inline std::string stage2_table_csv(const MetricsTable& table) {
    std::string text =
        "domain,b,lambda_learned,lambda_final,O_vc,S_vc,O_tc,S_tc,D_vc,D_vc_mod,D_tc,D_tc_mod\n";
    for (const DomainMetrics& m : table) {
        text += m.domain;
        for (double v : {m.b, m.lambda_learned, m.lambda_final, m.o_vc, m.s_vc, m.o_tc, m.s_tc,
                         m.d_vc, m.d_vc_mod, m.d_tc, m.d_tc_mod}) {
            text += ',';
            text += format_double(v);
        }
        text += '\n';
    }
    return text;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) out.push_back(field);
    return out;
}

inline std::vector<DomainEval> parse_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics csv: " + path);
    std::string line;
    if (!std::getline(in, line) || line != metrics_csv_header()) {
        throw std::runtime_error(path + ": expected header '" + metrics_csv_header() + "'");
    }
    std::vector<DomainEval> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 6) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected 6 fields");
        }
        DomainEval r;
        r.domain = fields[0];
        r.split = fields[1];
        r.n = std::stoul(fields[2]);
        r.sentiment_accuracy = std::stod(fields[3]);
        r.sentiment_loss = std::stod(fields[4]);
        r.domain_accuracy = std::stod(fields[5]);
        rows.push_back(std::move(r));
    }
    return rows;
}

// domain -> lambda_final from a stage-2 lambda CSV.
inline std::map<std::string, double> parse_lambda_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open lambda csv: " + path);
    std::string line;
    if (!std::getline(in, line) || line != lambda_csv_header()) {
        throw std::runtime_error(path + ": expected header '" + lambda_csv_header() + "'");
    }
    std::map<std::string, double> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 10) throw std::runtime_error(path + ": expected 10 fields per row");
        out[fields[0]] = std::stod(fields[3]);
    }
    return out;
}

// ------------------------------------------------------------- checkpoints

struct Checkpoint {
    std::uint32_t version = 1;
    DamNet net;
    Vocab vocab;
    std::vector<std::string> domain_names;
    double gamma = 0.0;     // stage-1 selection
    double dropout_p = 0.0;
    std::vector<std::string> log_lines;
    std::size_t max_len = 64;
    ExperimentConfig experiment;
};

namespace ckpt_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size()) {
            throw std::runtime_error("checkpoint truncated at offset " + std::to_string(pos) +
                                     " while reading " + what);
        }
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(
            static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(
            static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64(const char* what) {
        const std::uint64_t bits = u64(what);
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

inline std::string forget_mode_name(ForgetMode m) {
    return m == ForgetMode::Sigmoid ? "sigmoid" : "exponential";
}

} // namespace ckpt_detail

// Canonical text block: the full non-tensor state, regenerated
// deterministically so save -> load -> save is byte identical.
inline std::string checkpoint_text(const Checkpoint& ckpt) {
    std::string t;
    t += "[net]\n";
    t += "vocab_size = " + std::to_string(ckpt.net.cfg.vocab_size) + "\n";
    t += "embed_dim = " + std::to_string(ckpt.net.cfg.embed_dim) + "\n";
    t += "hidden_dim = " + std::to_string(ckpt.net.cfg.hidden_dim) + "\n";
    t += "proj_dim = " + std::to_string(ckpt.net.cfg.proj_dim) + "\n";
    t += "num_domains = " + std::to_string(ckpt.net.cfg.num_domains) + "\n";
    t += "gamma = " + format_double(ckpt.gamma) + "\n";
    t += "dropout_p = " + format_double(ckpt.dropout_p) + "\n";
    t += "forget_mode = " + ckpt_detail::forget_mode_name(ckpt.net.cfg.forget_mode) + "\n";
    t += "max_len = " + std::to_string(ckpt.max_len) + "\n";
    t += "[domains]\n";
    t += "count = " + std::to_string(ckpt.domain_names.size()) + "\n";
    for (const std::string& name : ckpt.domain_names) t += name + "\n";
    t += "[vocab]\n";
    t += "count = " + std::to_string(ckpt.vocab.size() - 2) + "\n";
    for (std::size_t i = 2; i < ckpt.vocab.size(); ++i) t += ckpt.vocab.id_to_token[i] + "\n";
    t += "[experiment]\n";
    const std::vector<std::string> echo = config_echo(ckpt.experiment);
    t += "count = " + std::to_string(echo.size()) + "\n";
    for (const std::string& line : echo) t += line + "\n";
    t += "[log]\n";
    t += "count = " + std::to_string(ckpt.log_lines.size()) + "\n";
    for (const std::string& line : ckpt.log_lines) t += line + "\n";
    return t;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::string out = "DAMA";
    ckpt_detail::put_u32(out, ckpt.version);
    const std::string text = checkpoint_text(ckpt);
    ckpt_detail::put_u64(out, text.size());
    out += text;

    auto params = ckpt.net.named_params();
    ckpt_detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (auto& [name, tensor] : params) {
        ckpt_detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        ckpt_detail::put_u32(out, static_cast<std::uint32_t>(tensor->rank()));
        for (std::size_t d : tensor->shape) ckpt_detail::put_u64(out, d);
        for (double v : tensor->data) ckpt_detail::put_f64(out, v);
    }
    std::ofstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot write checkpoint: " + path);
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot open checkpoint: " + path);
    std::ostringstream ss;
    ss << file.rdbuf();
    const std::string buf = ss.str();
    ckpt_detail::Reader r{buf};

    if (r.bytes(4, "magic") != "DAMA") {
        throw std::runtime_error("not a checkpoint file (bad magic at offset 0): " + path);
    }
    Checkpoint ckpt;
    ckpt.version = r.u32("version");
    if (ckpt.version != 1) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(ckpt.version));
    }
    const std::uint64_t text_len = r.u64("text length");
    const std::string text = r.bytes(text_len, "config text");

    // parse the canonical text
    std::istringstream ts(text);
    std::string line, section;
    std::map<std::string, std::string> kv;
    auto read_counted = [&](std::vector<std::string>& dst) {
        if (!std::getline(ts, line) || line.rfind("count = ", 0) != 0) {
            throw std::runtime_error("checkpoint text: expected count line in [" + section + "]");
        }
        const std::size_t count = std::stoul(line.substr(8));
        for (std::size_t i = 0; i < count; ++i) {
            if (!std::getline(ts, line)) {
                throw std::runtime_error("checkpoint text: truncated [" + section + "] list");
            }
            dst.push_back(line);
        }
    };
    std::vector<std::string> vocab_tokens, experiment_lines;
    while (std::getline(ts, line)) {
        if (line.empty()) continue;
        if (line.front() == '[') {
            section = line.substr(1, line.size() - 2);
            if (section == "domains") read_counted(ckpt.domain_names);
            else if (section == "vocab") read_counted(vocab_tokens);
            else if (section == "experiment") read_counted(experiment_lines);
            else if (section == "log") read_counted(ckpt.log_lines);
            continue;
        }
        const auto eq = line.find(" = ");
        if (eq != std::string::npos && section == "net") {
            kv[line.substr(0, eq)] = line.substr(eq + 3);
        }
    }
    NetConfig ncfg;
    ncfg.vocab_size = std::stoul(kv.at("vocab_size"));
    ncfg.embed_dim = std::stoul(kv.at("embed_dim"));
    ncfg.hidden_dim = std::stoul(kv.at("hidden_dim"));
    ncfg.proj_dim = std::stoul(kv.at("proj_dim"));
    ncfg.num_domains = std::stoul(kv.at("num_domains"));
    ncfg.gamma = std::stod(kv.at("gamma"));
    ncfg.dropout_p = std::stod(kv.at("dropout_p"));
    ncfg.forget_mode =
        kv.at("forget_mode") == "exponential" ? ForgetMode::Exponential : ForgetMode::Sigmoid;
    ckpt.gamma = ncfg.gamma;
    ckpt.dropout_p = ncfg.dropout_p;
    ckpt.max_len = std::stoul(kv.at("max_len"));
    ckpt.experiment = config_from_echo(experiment_lines);

    ckpt.vocab = Vocab();
    ckpt.vocab.max_len = ckpt.max_len;
    for (const std::string& tok : vocab_tokens) {
        ckpt.vocab.to_id[tok] = static_cast<std::int32_t>(ckpt.vocab.id_to_token.size());
        ckpt.vocab.id_to_token.push_back(tok);
    }
    if (ckpt.vocab.size() != ncfg.vocab_size) {
        throw std::runtime_error("checkpoint vocab size " + std::to_string(ckpt.vocab.size()) +
                                 " does not match net config " + std::to_string(ncfg.vocab_size));
    }

    RngStream dummy(0);
    ckpt.net = DamNet(ncfg, dummy);
    auto params = ckpt.net.named_params();
    const std::uint32_t tensor_count = r.u32("tensor count");
    if (tensor_count != params.size()) {
        throw std::runtime_error("checkpoint holds " + std::to_string(tensor_count) +
                                 " tensors, expected " + std::to_string(params.size()));
    }
    for (auto& [name, tensor] : params) {
        const std::size_t at = r.pos;
        const std::uint32_t name_len = r.u32("tensor name length");
        const std::string got = r.bytes(name_len, "tensor name");
        if (got != name) {
            throw std::runtime_error("checkpoint tensor '" + got + "' at offset " +
                                     std::to_string(at) + ", expected '" + name + "'");
        }
        const std::uint32_t rank = r.u32("tensor rank");
        std::vector<std::size_t> shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u64("tensor dim"));
        if (shape != tensor->shape) {
            throw std::runtime_error("checkpoint tensor '" + name + "' has wrong shape at offset " +
                                     std::to_string(at));
        }
        for (double& v : tensor->data) v = r.f64("tensor data");
    }
    if (r.pos != buf.size()) {
        throw std::runtime_error("checkpoint has " + std::to_string(buf.size() - r.pos) +
                                 " trailing bytes at offset " + std::to_string(r.pos));
    }
    return ckpt;
}

// ------------------------------------------------------------------ reports

inline double round1(double v) { return std::round(v * 10.0) / 10.0; }

inline std::string format_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", round1(v));
    return buf;
}

// "89.0+0.3" style cell: base and signed delta, one decimal, half-up.
inline std::string delta_cell(double base, double modulated) {
    double delta = round1(modulated - base);
    if (delta == 0.0) delta = 0.0; // normalize -0.0
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f%+.1f", round1(base), delta);
    return buf;
}

struct ReportFiles {
    std::string csv;
    std::string txt;
};

// Pairs up two metric row sets (base vs modulated) by (domain, split) and
// renders the delta table plus a mean row.
inline ReportFiles make_report(const std::vector<DomainEval>& base,
                               const std::vector<DomainEval>& modulated) {
    if (base.size() != modulated.size()) {
        throw std::invalid_argument("make_report: row count mismatch");
    }
    for (std::size_t i = 0; i < base.size(); ++i) {
        if (base[i].domain != modulated[i].domain || base[i].split != modulated[i].split) {
            throw std::invalid_argument("make_report: domain/split mismatch at row " +
                                        std::to_string(i) + ": " + base[i].domain + "/" +
                                        base[i].split + " vs " + modulated[i].domain + "/" +
                                        modulated[i].split);
        }
    }
    ReportFiles out;
    out.csv = "domain,split,n,base_accuracy,modulated_accuracy,delta,base_loss,modulated_loss,"
              "base_domain_accuracy,modulated_domain_accuracy\n";
    for (std::size_t i = 0; i < base.size(); ++i) {
        const DomainEval& b = base[i];
        const DomainEval& m = modulated[i];
        out.csv += b.domain + "," + b.split + "," + std::to_string(b.n) + "," +
                   format_double(b.sentiment_accuracy) + "," +
                   format_double(m.sentiment_accuracy) + "," +
                   format_double(m.sentiment_accuracy - b.sentiment_accuracy) + "," +
                   format_double(b.sentiment_loss) + "," + format_double(m.sentiment_loss) + "," +
                   format_double(b.domain_accuracy) + "," + format_double(m.domain_accuracy) + "\n";
    }

    // group by domain, one column per split (val, test order)
    std::vector<std::string> domains;
    for (const DomainEval& b : base) {
        if (std::find(domains.begin(), domains.end(), b.domain) == domains.end()) {
            domains.push_back(b.domain);
        }
    }
    std::vector<std::string> splits;
    for (const char* s : {"val", "test"}) {
        for (const DomainEval& b : base) {
            if (b.split == s) {
                splits.push_back(s);
                break;
            }
        }
    }
    auto find_row = [&](const std::vector<DomainEval>& rows, const std::string& domain,
                        const std::string& split) -> const DomainEval* {
        for (const DomainEval& r : rows) {
            if (r.domain == domain && r.split == split) return &r;
        }
        return nullptr;
    };

    std::ostringstream txt;
    txt << "domain";
    for (const std::string& s : splits) txt << "\t" << s;
    txt << "\n";
    std::map<std::string, std::pair<double, double>> column_sums; // split -> (base, mod)
    for (const std::string& d : domains) {
        txt << d;
        for (const std::string& s : splits) {
            const DomainEval* b = find_row(base, d, s);
            const DomainEval* m = find_row(modulated, d, s);
            if (!b || !m) {
                throw std::invalid_argument("make_report: missing row for " + d + "/" + s);
            }
            txt << "\t" << delta_cell(b->sentiment_accuracy, m->sentiment_accuracy);
            column_sums[s].first += b->sentiment_accuracy;
            column_sums[s].second += m->sentiment_accuracy;
        }
        txt << "\n";
    }
    txt << "mean";
    for (const std::string& s : splits) {
        const double n = static_cast<double>(domains.size());
        txt << "\t" << delta_cell(column_sums[s].first / n, column_sums[s].second / n);
    }
    txt << "\n";
    out.txt = txt.str();
    return out;
}

} // namespace dama
