#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "tacos/checkpoint.hpp"
#include "tacos/experiment.hpp"
#include "tacos/report.hpp"

using namespace tacos;
namespace fs = std::filesystem;

namespace {

const LoadedData& bundled()
{
    static const LoadedData d = [] {
        DataPaths p;
        p.root = (fs::path(TACOS_SOURCE_DIR) / "data" / "mnist-subset").string();
        return load_data(p);
    }();
    return d;
}

ExperimentConfig tiny(const std::string& name = "tiny")
{
    ExperimentConfig c;
    c.name = name;
    c.data.root = (fs::path(TACOS_SOURCE_DIR) / "data" / "mnist-subset").string();
    c.network.layer_sizes = {784, 30, 2};
    c.samples_per_task = 20;
    c.test_samples_per_task = 16;
    c.encoder.sample_duration = 20.0;
    return c;
}

RunOptions with_data()
{
    RunOptions o;
    o.data = &bundled();
    return o;
}

class TempDir {
  public:
    explicit TempDir(const std::string& tag)
    {
        path_ = fs::temp_directory_path() / ("tacos_exp_" + tag);
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

  private:
    fs::path path_;
};

bool same_weights(const Network& a, const Network& b)
{
    for (std::size_t k = 0; k < a.num_blocks(); ++k) {
        const auto x = a.block(k);
        const auto y = b.block(k);
        if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) {
            return false;
        }
    }
    return true;
}

std::string first_line(const fs::path& p)
{
    std::ifstream is(p);
    std::string line;
    std::getline(is, line);
    return line;
}

} // namespace

TEST(Config, JsonRoundTripAndHash)
{
    auto c = tiny();
    c.custom_ordering = {{0, 1}, {3, 2}};
    c.mode = Mode::metaplasticity_only;
    c.network.plasticity.m_max = 5;
    const nlohmann::json j = c;
    const auto back = j.get<ExperimentConfig>();
    EXPECT_EQ(nlohmann::json(back), j);
    EXPECT_EQ(config_hash(back), config_hash(c));
    auto renamed = c;
    renamed.name = "other";
    renamed.output_dir = "/tmp/x";
    EXPECT_EQ(config_hash(renamed), config_hash(c));
    auto changed = c;
    changed.seed = 2;
    EXPECT_NE(config_hash(changed), config_hash(c));
}

TEST(Config, Validation)
{
    auto c = tiny();
    EXPECT_NO_THROW(c.validate());
    c.mode = Mode::fixed_m;
    EXPECT_THROW(c.validate(), ConfigError);
    c.network.plasticity.fixed_m = 50.0;
    EXPECT_NO_THROW(c.validate());
    c.mode = Mode::tacos;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny();
    c.network.layer_sizes = {784, 30, 3};
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny();
    c.epochs = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(nlohmann::json::parse(R"({"mode": "nope"})").get<ExperimentConfig>(), ConfigError);
    EXPECT_THROW(nlohmann::json::parse(R"({"ordering": "x"})").get<ExperimentConfig>(), ConfigError);
}

TEST(Config, ModeForcingAndReducedScaling)
{
    auto c = tiny();
    c.samples_per_task = 1000;
    const auto t = c.effective_network();
    EXPECT_NEAR(t.plasticity.delta_m_hidden, 0.04 * 12, 1e-15);
    EXPECT_NEAR(t.plasticity.delta_m_output, 0.004 * 12, 1e-15);
    EXPECT_NEAR(t.plasticity.t_cons, 25.0 / 12, 1e-15);
    c.mode = Mode::baseline;
    const auto b = c.effective_network();
    EXPECT_EQ(b.plasticity.alpha, 0.0);
    EXPECT_EQ(b.plasticity.delta_m_hidden, 0.0);
    EXPECT_EQ(b.plasticity.delta_m_output, 0.0);
    c.mode = Mode::metaplasticity_only;
    EXPECT_EQ(c.effective_network().plasticity.alpha, 0.0);
    EXPECT_GT(c.effective_network().plasticity.delta_m_hidden, 0.0);
    c.mode = Mode::consolidation_only;
    EXPECT_GT(c.effective_network().plasticity.alpha, 0.0);
    EXPECT_EQ(c.effective_network().plasticity.delta_m_output, 0.0);
    c.scale_reduced = false;
    c.mode = Mode::tacos;
    EXPECT_EQ(c.effective_network().plasticity.t_cons, 25.0);
}

TEST(Config, DataRootFromEnvironment)
{
    DataPaths p;
    p.root = "";
    const auto dir = (fs::path(TACOS_SOURCE_DIR) / "data" / "mnist-subset").string();
    ::setenv(data_root_env, dir.c_str(), 1);
    EXPECT_EQ(p.resolve(p.train_images), fs::path(dir) / p.train_images);
    ::unsetenv(data_root_env);
    p.root = "/somewhere";
    EXPECT_EQ(p.resolve("/abs/file"), fs::path("/abs/file"));
}

TEST(Checkpoint, BitExactRoundTrip)
{
    TempDir tmp("ckpt");
    NetworkConfig cfg;
    cfg.layer_sizes = {12, 7, 5, 2};
    cfg.plasticity.fixed_m = 3.5;
    cfg.seed = 77;
    Network net(cfg);
    net.synapse(1, 2, 3).w_ref = -0.125;
    net.input_traces()[4] = 2.5;
    const auto path = tmp.path() / "m.ckpt";
    save_checkpoint(net, path);
    const auto back = load_checkpoint(path);
    EXPECT_TRUE(same_weights(net, back));
    EXPECT_EQ(nlohmann::json(back.config()), nlohmann::json(net.config()));
    EXPECT_TRUE(std::ranges::equal(back.feedback_fp(1), net.feedback_fp(1)));
    EXPECT_TRUE(std::ranges::equal(back.feedback_fn(0), net.feedback_fn(0)));
    EXPECT_TRUE(std::ranges::equal(back.input_traces(), net.input_traces()));

    std::ofstream(tmp.path() / "bad.ckpt") << "not a checkpoint";
    EXPECT_THROW(load_checkpoint(tmp.path() / "bad.ckpt"), DataError);
    EXPECT_THROW(load_checkpoint(tmp.path() / "missing.ckpt"), DataError);
}

TEST(RunExperiment, UntrainedColumnEqualsBaseline)
{
    auto c = tiny();
    c.custom_ordering = {{0, 1}};
    c.learning = false;
    const auto rec = run_experiment(c, with_data());
    ASSERT_EQ(rec.accuracy.size(), 1u);
    EXPECT_EQ(rec.accuracy.at(0, 0), rec.accuracy.baseline_at(0));
    EXPECT_EQ(rec.status, "complete");
}

TEST(RunExperiment, Deterministic)
{
    const auto a = run_experiment(tiny(), with_data());
    const auto b = run_experiment(tiny(), with_data());
    EXPECT_EQ(a.accuracy, b.accuracy);
    EXPECT_EQ(a.completed_tasks(), 5u);
    EXPECT_EQ(a.hash, b.hash);
    EXPECT_EQ(a.class_activity, b.class_activity);
    auto other = tiny();
    other.seed = 2;
    EXPECT_NE(run_experiment(other, with_data()).class_activity, a.class_activity);
}

TEST(RunExperiment, ResumeMatchesUninterruptedRun)
{
    TempDir full("full"), part("part");
    auto c = tiny();
    c.output_dir = full.path().string();
    const auto uninterrupted = run_experiment(c, with_data());

    c.output_dir = part.path().string();
    auto opts = with_data();
    opts.stop_after_task = 1;
    const auto stopped = run_experiment(c, opts);
    EXPECT_EQ(stopped.status, "stopped");
    EXPECT_EQ(stopped.completed_tasks(), 2u);
    EXPECT_EQ(load_record(part.path()).status, "stopped");

    opts.stop_after_task.reset();
    opts.resume = true;
    const auto resumed = run_experiment(c, opts);
    EXPECT_EQ(resumed.status, "complete");
    EXPECT_EQ(resumed.accuracy, uninterrupted.accuracy);
    EXPECT_EQ(resumed.weight_changes.size(), uninterrupted.weight_changes.size());
    EXPECT_TRUE(same_weights(load_checkpoint(full.path() / "model.ckpt"), load_checkpoint(part.path() / "model.ckpt")));

    auto changed = c;
    changed.seed = 9;
    EXPECT_THROW(run_experiment(changed, opts), ConfigError);
}

TEST(RunExperiment, TacosWithoutDecayOrMetaplasticityEqualsBaseline)
{
    TempDir a("eq_a"), b("eq_b");
    auto t = tiny();
    t.network.plasticity.alpha = 0.0;
    t.network.plasticity.delta_m_hidden = 0.0;
    t.network.plasticity.delta_m_output = 0.0;
    t.output_dir = a.path().string();
    auto base = tiny();
    base.mode = Mode::baseline;
    base.output_dir = b.path().string();
    const auto rt = run_experiment(t, with_data());
    const auto rb = run_experiment(base, with_data());
    EXPECT_EQ(rt.accuracy, rb.accuracy);
    EXPECT_TRUE(same_weights(load_checkpoint(a.path() / "model.ckpt"), load_checkpoint(b.path() / "model.ckpt")));
}

TEST(RunExperiment, RecordJsonRoundTrip)
{
    auto c = tiny();
    c.curve_interval = 10;
    const auto rec = run_experiment(c, with_data());
    EXPECT_FALSE(rec.curve.empty());
    const auto back = record_from_json(record_to_json(rec));
    EXPECT_EQ(back.accuracy, rec.accuracy);
    EXPECT_EQ(back.class_activity, rec.class_activity);
    EXPECT_EQ(record_to_json(back), record_to_json(rec));
}

TEST(RunExperiment, MissingDataFailsWithDataError)
{
    auto c = tiny();
    c.data.root = "/nonexistent";
    EXPECT_THROW(run_experiment(c), DataError);
}

TEST(Report, WritesAllFilesAndRecomputes)
{
    TempDir tmp("report");
    const auto rec = run_experiment(tiny(), with_data());
    emit_report({rec}, tmp.path());
    EXPECT_EQ(first_line(tmp.path() / "accuracy_matrix.csv"), "run,task,classes,after_task,accuracy");
    EXPECT_EQ(first_line(tmp.path() / "learning_curves.csv"), "run,training_task,samples_seen,eval_task,accuracy");
    EXPECT_EQ(first_line(tmp.path() / "weight_change.csv"),
              "run,task,block,mean_abs_change_during_task,mean_abs_change_since_task0");
    EXPECT_EQ(first_line(tmp.path() / "similarity.csv"), "run,class,after_task,cosine_to_after_task0");
    const auto metrics = read_json_file(tmp.path() / "metrics.json");
    const auto& run = metrics.at("runs").at(0);
    const auto r = accuracy_from_json(run.at("accuracy"));
    EXPECT_EQ(r, rec.accuracy);
    EXPECT_EQ(run.at("final").at("mean_accuracy").get<double>(), mean_accuracy(r, 4));
    EXPECT_EQ(run.at("final").at("bwt").get<double>(), backward_transfer(r, 4));
    EXPECT_EQ(run.at("checkpoints").at(1).at("fwt").get<double>(), forward_transfer(r, 1));

    // Accuracy CSV rows reproduce the matrix.
    std::ifstream is(tmp.path() / "accuracy_matrix.csv");
    std::string line;
    std::getline(is, line);
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        ++rows;
    }
    EXPECT_EQ(rows, 5u * 5u + 5u);
}

TEST(Report, Errors)
{
    TempDir tmp("report_err");
    EXPECT_THROW(emit_report({}, tmp.path()), ConfigError);
    std::ofstream(tmp.path() / "file") << "x";
    RunRecord rec;
    EXPECT_THROW(emit_report({rec}, tmp.path() / "file" / "sub"), RuntimeError);
}

TEST(Sweep, ExpandsAndAggregates)
{
    auto base = tiny("sw");
    base.seeds = {1, 2, 3};
    base.m_max_sweep = {5, 25};
    const auto configs = expand_sweep(base);
    ASSERT_EQ(configs.size(), 6u);
    SweepOptions opts;
    opts.jobs = 1;
    opts.data = &bundled();
    const auto result = sweep(configs, opts);
    ASSERT_EQ(result.runs.size(), 6u);
    ASSERT_EQ(result.aggregates.size(), 2u);
    for (const auto& a : result.aggregates) {
        EXPECT_EQ(a.runs, 3u);
        EXPECT_EQ(a.failed, 0u);
        std::vector<double> ma;
        for (const auto& r : result.runs) {
            if (aggregate_key(r.name) == a.key) {
                ma.push_back(mean_accuracy(r.accuracy, 4));
            }
        }
        ASSERT_EQ(ma.size(), 3u);
        const double mean = (ma[0] + ma[1] + ma[2]) / 3;
        double var = 0;
        for (double x : ma) {
            var += (x - mean) * (x - mean);
        }
        EXPECT_NEAR(a.ma_mean, mean, 1e-15);
        EXPECT_NEAR(a.ma_std, std::sqrt(var / 2), 1e-15);
    }
    EXPECT_THROW(sweep({}, opts), ConfigError);
}

TEST(Sweep, IsolatesFailures)
{
    auto good = tiny("good");
    auto bad = tiny("bad");
    bad.data.root = "/nonexistent";
    SweepOptions opts;
    opts.jobs = 2;
    // No shared data, so each config resolves its own files.
    const auto missing = sweep({good, bad}, opts);
    EXPECT_EQ(missing.runs[0].status, "complete");
    EXPECT_EQ(missing.runs[1].status, "failed");
    EXPECT_EQ(missing.aggregates.size(), 2u);
    opts.data = &bundled();
    bad = tiny("bad");
    bad.custom_ordering = {{0, 1}, {1, 2}};
    const auto result = sweep({good, bad}, opts);
    EXPECT_EQ(result.runs[0].status, "complete");
    EXPECT_EQ(result.runs[1].status, "failed");
    EXPECT_FALSE(result.runs[1].error.empty());
}
