#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "dama/cli.hpp"
#include "dama/lab.hpp"

using namespace dama;

namespace {

class TempDir {
public:
    TempDir() {
        path_ = std::filesystem::temp_directory_path() /
                ("dama_lab_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }
    std::string dir() const { return path_.string(); }

private:
    static inline int counter_ = 0;
    std::filesystem::path path_;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentConfig tiny_synth_config() {
    ExperimentConfig cfg;
    cfg.use_synth = true;
    cfg.synth.num_domains = 3;
    cfg.synth.vocab_size = 60;
    cfg.synth.seq_len = 6;
    cfg.synth.n_train = 30;
    cfg.synth.n_val = 10;
    cfg.synth.n_test = 10;
    cfg.synth.domain_utility = {0.0, 0.5, 1.0};
    cfg.embed_dim = 8;
    cfg.hidden_dim = 8;
    cfg.proj_dim = 6;
    cfg.gamma_grid = {0.05};
    cfg.dropout_grid = {0.2};
    cfg.epochs = 1;
    cfg.batch_size = 8;
    cfg.max_len = 8;
    cfg.seed = 42;
    return cfg;
}

} // namespace

TEST(ParseGrid, RangesAndLists) {
    const auto gamma = parse_grid("0.0:0.1:0.02");
    ASSERT_EQ(gamma.size(), 6u);
    EXPECT_DOUBLE_EQ(gamma.front(), 0.0);
    EXPECT_NEAR(gamma.back(), 0.1, 1e-12);
    const auto dropout = parse_grid("0.5:0.9:0.1");
    ASSERT_EQ(dropout.size(), 5u);
    const auto b = parse_grid("100:500:100");
    ASSERT_EQ(b.size(), 5u);
    EXPECT_DOUBLE_EQ(b[4], 500.0);
    const auto list = parse_grid("0.02,0.1");
    ASSERT_EQ(list.size(), 2u);
    EXPECT_THROW(parse_grid("1:0:-1"), std::invalid_argument);
    EXPECT_THROW(parse_grid(""), std::invalid_argument);
}

TEST(ConfigFile, SectionsAndOverrides) {
    TempDir tmp;
    std::ofstream out(tmp.file("exp.cfg"));
    out << "# comment\n"
        << "[model]\n"
        << "embed_dim = 24\n"
        << "forget_mode = exponential\n"
        << "[stage1]\n"
        << "gamma_grid = 0.0:0.04:0.02\n"
        << "epochs = 3\n"
        << "[run]\n"
        << "seed = 99\n";
    out.close();
    ExperimentConfig cfg;
    load_config_file(cfg, tmp.file("exp.cfg"));
    EXPECT_EQ(cfg.embed_dim, 24u);
    EXPECT_EQ(cfg.forget_mode, ForgetMode::Exponential);
    EXPECT_EQ(cfg.gamma_grid.size(), 3u);
    EXPECT_EQ(cfg.epochs, 3);
    EXPECT_EQ(cfg.seed, 99u);
    apply_setting(cfg, "stage1.epochs", "7");
    EXPECT_EQ(cfg.epochs, 7);
    EXPECT_THROW(apply_setting(cfg, "nope.key", "1"), std::invalid_argument);
}

TEST(ConfigEcho, RoundTripsEveryField) {
    ExperimentConfig cfg = tiny_synth_config();
    cfg.mod.alpha = 3.0;
    cfg.mod.lambda_lr = 0.25;
    cfg.b_grid = {50, 150};
    cfg.label_last = true;
    cfg.vectors_path = "vectors.txt";
    ExperimentConfig back = config_from_echo(config_echo(cfg));
    EXPECT_EQ(config_echo(back), config_echo(cfg));
    EXPECT_EQ(back.synth.domain_utility, cfg.synth.domain_utility);
    EXPECT_EQ(back.mod.alpha, 3.0);
    EXPECT_EQ(back.b_grid, cfg.b_grid);
}

TEST(TrainStage1, DeterministicCheckpointBytes) {
    ExperimentConfig cfg = tiny_synth_config();
    const PreparedData data = prepare_data(cfg);
    TrainedModel m1 = train_stage1(cfg, data, 0.05, 0.2, cfg.seed);
    TrainedModel m2 = train_stage1(cfg, data, 0.05, 0.2, cfg.seed);

    TempDir tmp;
    Checkpoint c1{1, std::move(m1.net), data.vocab, data.names, 0.05, 0.2, {}, cfg.max_len, cfg};
    Checkpoint c2{1, std::move(m2.net), data.vocab, data.names, 0.05, 0.2, {}, cfg.max_len, cfg};
    save_checkpoint(c1, tmp.file("a.dama"));
    save_checkpoint(c2, tmp.file("b.dama"));
    EXPECT_EQ(slurp(tmp.file("a.dama")), slurp(tmp.file("b.dama")));
}

TEST(TrainStage1, GammaZeroLeavesDomainBranchUntouched) {
    ExperimentConfig cfg = tiny_synth_config();
    cfg.weight_decay = 0.0;
    const PreparedData data = prepare_data(cfg);
    RngStream init = derive_stream(cfg.seed, "init");
    NetConfig ncfg;
    ncfg.vocab_size = data.vocab.size();
    ncfg.embed_dim = cfg.embed_dim;
    ncfg.hidden_dim = cfg.hidden_dim;
    ncfg.proj_dim = cfg.proj_dim;
    ncfg.num_domains = data.domains.size();
    DamNet reference(ncfg, init);

    TrainedModel trained = train_stage1(cfg, data, 0.0, 0.2, cfg.seed);
    EXPECT_EQ(trained.net.head_d.W.data, reference.head_d.W.data);
    EXPECT_EQ(trained.net.head_d.b.data, reference.head_d.b.data);
    EXPECT_EQ(trained.net.proj_d.W.data, reference.proj_d.W.data);
    EXPECT_NE(trained.net.head_s.W.data, reference.head_s.W.data);
}

TEST(GridSearch, CellCountAndTieBreaking) {
    ExperimentConfig cfg = tiny_synth_config();
    cfg.gamma_grid = {0.0, 0.02, 0.04};
    cfg.dropout_grid = {0.2, 0.4};
    cfg.epochs = 0; // every cell evaluates the same init: full tie
    const PreparedData data = prepare_data(cfg);
    GridResult grid = grid_search(cfg, data);
    EXPECT_EQ(grid.cells.size(), 6u);
    EXPECT_DOUBLE_EQ(grid.best_gamma, 0.0);
    EXPECT_DOUBLE_EQ(grid.best_dropout, 0.2);
    std::size_t lines = 0;
    for (char c : grid_csv(grid.cells)) lines += c == '\n';
    EXPECT_EQ(lines, 7u); // header + 6 rows

    cfg.gamma_grid = {0.03};
    cfg.dropout_grid = {0.5};
    GridResult single = grid_search(cfg, data);
    EXPECT_EQ(single.cells.size(), 1u);
    EXPECT_DOUBLE_EQ(single.best_gamma, 0.03);
}

TEST(Evaluate, LambdaMapSemantics) {
    ExperimentConfig cfg = tiny_synth_config();
    const PreparedData data = prepare_data(cfg);
    TrainedModel model = train_stage1(cfg, data, 0.05, 0.0, cfg.seed);

    const auto plain = evaluate(model.net, data.domains, "val");
    std::map<std::string, double> zeros;
    for (const auto& name : data.names) zeros[name] = 0.0;
    const auto mapped = evaluate(model.net, data.domains, "val", &zeros);
    ASSERT_EQ(plain.size(), mapped.size());
    for (std::size_t i = 0; i < plain.size(); ++i) {
        EXPECT_EQ(plain[i].sentiment_accuracy, mapped[i].sentiment_accuracy);
        EXPECT_EQ(plain[i].sentiment_loss, mapped[i].sentiment_loss);
        EXPECT_EQ(plain[i].domain_accuracy, mapped[i].domain_accuracy);
    }

    std::map<std::string, double> unknown{{"nosuchdomain", 1.0}};
    EXPECT_THROW(evaluate(model.net, data.domains, "val", &unknown), std::invalid_argument);
    EXPECT_THROW(evaluate(model.net, data.domains, "train"), std::invalid_argument);
}

TEST(Evaluate, ConstantPredictorScoresFiftyOnBalancedData) {
    ExperimentConfig cfg = tiny_synth_config();
    const PreparedData data = prepare_data(cfg);
    RngStream init(1);
    NetConfig ncfg;
    ncfg.vocab_size = data.vocab.size();
    ncfg.embed_dim = 8;
    ncfg.hidden_dim = 8;
    ncfg.proj_dim = 6;
    ncfg.num_domains = data.domains.size();
    DamNet net(ncfg, init);
    net.head_s.W.fill(0.0);
    net.head_s.b.fill(0.0); // p = [0.5, 0.5], ties predict class 0
    const auto rows = evaluate(net, data.domains, "val");
    for (const auto& r : rows) EXPECT_DOUBLE_EQ(r.sentiment_accuracy, 50.0);
}

TEST(Checkpoint, RoundTripBytesAndEvalOutputs) {
    ExperimentConfig cfg = tiny_synth_config();
    const PreparedData data = prepare_data(cfg);
    TrainedModel model = train_stage1(cfg, data, 0.05, 0.2, cfg.seed);

    TempDir tmp;
    Checkpoint ckpt;
    ckpt.net = std::move(model.net);
    ckpt.vocab = data.vocab;
    ckpt.domain_names = data.names;
    ckpt.gamma = 0.05;
    ckpt.dropout_p = 0.2;
    ckpt.log_lines = {"epoch 0 train_loss 0.7 val_accuracy 0.5"};
    ckpt.max_len = cfg.max_len;
    ckpt.experiment = cfg;
    save_checkpoint(ckpt, tmp.file("model.dama"));

    Checkpoint loaded = load_checkpoint(tmp.file("model.dama"));
    save_checkpoint(loaded, tmp.file("model2.dama"));
    EXPECT_EQ(slurp(tmp.file("model.dama")), slurp(tmp.file("model2.dama")));
    EXPECT_EQ(loaded.domain_names, ckpt.domain_names);
    EXPECT_EQ(loaded.gamma, 0.05);
    EXPECT_EQ(loaded.vocab.size(), ckpt.vocab.size());
    EXPECT_EQ(loaded.log_lines, ckpt.log_lines);
    EXPECT_EQ(config_echo(loaded.experiment), config_echo(cfg));

    RngStream e1(0), e2(0);
    for (const Example& ex : data.domains[0].val) {
        ForwardTrace a = forward_example(ckpt.net, ex.ids, Mode::Eval, e1);
        ForwardTrace b = forward_example(loaded.net, ex.ids, Mode::Eval, e2);
        EXPECT_EQ(a.p.data, b.p.data);
        EXPECT_EQ(a.q.data, b.q.data);
    }
}

TEST(Checkpoint, TruncatedAndCorruptFilesFailCleanly) {
    ExperimentConfig cfg = tiny_synth_config();
    const PreparedData data = prepare_data(cfg);
    TrainedModel model = train_stage1(cfg, data, 0.05, 0.2, cfg.seed);
    TempDir tmp;
    Checkpoint ckpt;
    ckpt.net = std::move(model.net);
    ckpt.vocab = data.vocab;
    ckpt.domain_names = data.names;
    ckpt.max_len = cfg.max_len;
    ckpt.experiment = cfg;
    save_checkpoint(ckpt, tmp.file("model.dama"));

    const std::string full = slurp(tmp.file("model.dama"));
    {
        std::ofstream out(tmp.file("trunc.dama"), std::ios::binary);
        out.write(full.data(), static_cast<std::streamsize>(full.size() / 2));
    }
    try {
        load_checkpoint(tmp.file("trunc.dama"));
        FAIL() << "expected throw";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
    }

    {
        std::string bad = full;
        bad[0] = 'X';
        std::ofstream out(tmp.file("bad.dama"), std::ios::binary);
        out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
    }
    EXPECT_THROW(load_checkpoint(tmp.file("bad.dama")), std::runtime_error);
    EXPECT_THROW(load_checkpoint(tmp.file("missing.dama")), std::runtime_error);
}

TEST(Stage2All, SerialAndParallelSchedulesAgree) {
    ExperimentConfig cfg = tiny_synth_config();
    cfg.b_grid = {50.0, 100.0};
    cfg.mod.lambda_lr = 1.0;
    const PreparedData data = prepare_data(cfg);
    TrainedModel model = train_stage1(cfg, data, 0.05, 0.2, cfg.seed);

    const Stage2Output serial = stage2_all(model.net, data.domains, cfg, /*parallel=*/false);
    const Stage2Output parallel = stage2_all(model.net, data.domains, cfg, /*parallel=*/true);
    EXPECT_EQ(stage2_csv(serial), stage2_csv(parallel));
    EXPECT_EQ(stage2_table_csv(serial.table), stage2_table_csv(parallel.table));
    for (const DomainMetrics& m : serial.table) {
        EXPECT_GE(m.s_vc, m.o_vc); // non-degradation on every row
    }
}

TEST(Report, DeltaCellsAndMeanRow) {
    std::vector<DomainEval> base = {
        {"books", "test", 400, 89.0, 0.31, 12.0},
        {"dvd", "test", 400, 85.8, 0.35, 3.0},
    };
    std::vector<DomainEval> mod = {
        {"books", "test", 400, 89.3, 0.30, 12.0},
        {"dvd", "test", 400, 85.8, 0.35, 3.0},
    };
    ReportFiles report = make_report(base, mod);
    EXPECT_NE(report.txt.find("books\t89.0+0.3"), std::string::npos);
    EXPECT_NE(report.txt.find("dvd\t85.8+0.0"), std::string::npos);
    // mean of (89.0, 85.8) = 87.4; the mean delta stored in doubles is
    // 0.1499999999999986, which rounds to +0.1
    EXPECT_NE(report.txt.find("mean\t87.4+0.1"), std::string::npos);
    EXPECT_NE(report.csv.find("books,test,400,89,89.3,"), std::string::npos);

    mod[0].sentiment_accuracy = 88.7;
    ReportFiles down = make_report(base, mod);
    EXPECT_NE(down.txt.find("books\t89.0-0.3"), std::string::npos);

    std::vector<DomainEval> mismatched = base;
    mismatched[1].domain = "camera";
    EXPECT_THROW(make_report(base, mismatched), std::invalid_argument);
    mismatched.pop_back();
    EXPECT_THROW(make_report(base, mismatched), std::invalid_argument);
}

TEST(Report, CsvParsersRoundTrip) {
    TempDir tmp;
    std::vector<DomainEval> rows = {{"a", "val", 10, 91.25, 0.125, 50.0},
                                    {"b", "val", 12, 75.0, 0.5, 0.0}};
    std::ofstream(tmp.file("m.csv")) << metrics_csv(rows);
    const auto parsed = parse_metrics_csv(tmp.file("m.csv"));
    ASSERT_EQ(parsed.size(), 2u);
    EXPECT_EQ(parsed[0].domain, "a");
    EXPECT_EQ(parsed[0].n, 10u);
    EXPECT_DOUBLE_EQ(parsed[0].sentiment_accuracy, 91.25);
    EXPECT_DOUBLE_EQ(parsed[1].sentiment_loss, 0.5);

    std::ofstream(tmp.file("bad.csv")) << "wrong,header\n";
    EXPECT_THROW(parse_metrics_csv(tmp.file("bad.csv")), std::runtime_error);

    DomainStage2Result r;
    r.domain = "a";
    r.b = 100;
    r.lambda_learned = 2.5;
    r.lambda_final = 3.75;
    Stage2Output out;
    out.results = {r};
    std::ofstream(tmp.file("lambda.csv")) << stage2_csv(out);
    const auto lambdas = parse_lambda_csv(tmp.file("lambda.csv"));
    ASSERT_EQ(lambdas.size(), 1u);
    EXPECT_DOUBLE_EQ(lambdas.at("a"), 3.75);
}

TEST(Cli, UsageAndExitCodes) {
    EXPECT_EQ(cli_main(std::vector<std::string>{}), 1);
    EXPECT_EQ(cli_main({"frobnicate"}), 1);
    EXPECT_EQ(cli_main({"synth", "--bogus-flag", "x"}), 1);
    EXPECT_EQ(cli_main({"train"}), 1); // missing required --out
    EXPECT_EQ(cli_main({"eval", "--ckpt", "/nonexistent.dama", "--split", "val"}), 2);

    TempDir tmp;
    EXPECT_EQ(cli_main({"synth", "--out", tmp.dir(), "--domains", "2", "--seed", "4", "--train",
                        "6", "--val", "2", "--test", "2", "--vocab", "40", "--seq-len", "5",
                        "--utility", "0.0,1.0"}),
              0);
    EXPECT_TRUE(std::filesystem::exists(tmp.file("synth0.train.txt")));
    EXPECT_TRUE(std::filesystem::exists(tmp.file("synth1.test.txt")));
}
