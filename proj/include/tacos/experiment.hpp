#pragma once

// Seeded continual-learning runs: tasks -> epochs -> samples -> timesteps,
// with evaluation of every task after each training task.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacos/checkpoint.hpp"
#include "tacos/config_json.hpp"
#include "tacos/encoding.hpp"
#include "tacos/error.hpp"
#include "tacos/idx.hpp"
#include "tacos/metrics.hpp"
#include "tacos/network.hpp"
#include "tacos/tasks.hpp"

namespace tacos {

/// Which continual-learning mechanisms are active.
enum class Mode {
    tacos,               // metaplasticity + consolidation + heterosynaptic decay
    fixed_m,             // constant m on every synapse, with consolidation
    baseline,            // bare error-driven learning
    metaplasticity_only, // activity-dependent m, no heterosynaptic decay
    consolidation_only,  // heterosynaptic decay towards w_ref, m = 0
};

NLOHMANN_JSON_SERIALIZE_ENUM(Mode, {
                                       {Mode::tacos, "tacos"},
                                       {Mode::fixed_m, "fixed_m"},
                                       {Mode::baseline, "baseline"},
                                       {Mode::metaplasticity_only, "metaplasticity_only"},
                                       {Mode::consolidation_only, "consolidation_only"},
                                   })

inline const char* data_root_env = "TACOS_DATA_ROOT";

struct DataPaths {
    std::string root; // empty: $TACOS_DATA_ROOT, then the working directory
    std::string train_images = "train-images-idx3-ubyte.gz";
    std::string train_labels = "train-labels-idx1-ubyte.gz";
    std::string test_images = "t10k-images-idx3-ubyte.gz";
    std::string test_labels = "t10k-labels-idx1-ubyte.gz";

    std::filesystem::path resolve(const std::string& file) const
    {
        std::filesystem::path p(file);
        if (p.is_absolute()) {
            return p;
        }
        if (!root.empty()) {
            return std::filesystem::path(root) / p;
        }
        if (const char* env = std::getenv(data_root_env); env != nullptr && *env != '\0') {
            return std::filesystem::path(env) / p;
        }
        return p;
    }
};

struct ExperimentConfig {
    std::string name = "run";
    DataPaths data;
    NetworkConfig network;
    // The encoder seed is ignored; encoding streams derive from `seed`.
    SpikeEncoderConfig encoder;
    int ordering_preset = 1;
    std::vector<ClassPair> custom_ordering; // overrides the preset when non-empty
    Mode mode = Mode::tacos;
    std::uint64_t seed = 1;
    // Sweep expansion only; run_experiment uses `seed` and network.plasticity.m_max.
    std::vector<std::uint64_t> seeds;
    std::vector<double> m_max_sweep;
    std::optional<std::size_t> samples_per_task;
    // Training-set size per task the default parameters were tuned for.
    std::size_t reference_samples_per_task = 12000;
    // Scale delta_m and 1/t_cons by reference / samples_per_task.
    bool scale_reduced = true;
    std::optional<std::size_t> test_samples_per_task;
    std::size_t epochs = 1;
    std::optional<double> eval_duration; // ms; defaults to encoder.sample_duration
    std::uint64_t eval_seed = 20211;
    // Intermediate evaluations every this many training samples (0: task ends only).
    std::size_t curve_interval = 0;
    bool learning = true;
    std::string output_dir;

    std::vector<ClassPair> ordering() const
    {
        return custom_ordering.empty() ? tacos::ordering_preset(ordering_preset) : custom_ordering;
    }

    double eval_duration_ms() const { return eval_duration.value_or(encoder.sample_duration); }

    /// Multiplier applied to delta_m and 1/t_cons in reduced-data runs.
    double reduced_data_scale() const
    {
        if (!samples_per_task || !scale_reduced) {
            return 1.0;
        }
        return static_cast<double>(reference_samples_per_task) / static_cast<double>(*samples_per_task);
    }

    /// Network configuration with mode, seed and reduced-data scaling applied.
    NetworkConfig effective_network() const
    {
        NetworkConfig net = network;
        net.seed = seed;
        auto& p = net.plasticity;
        switch (mode) {
        case Mode::tacos:
            break;
        case Mode::fixed_m:
            p.delta_m_hidden = 0.0;
            p.delta_m_output = 0.0;
            break;
        case Mode::baseline:
            p.alpha = 0.0;
            p.delta_m_hidden = 0.0;
            p.delta_m_output = 0.0;
            break;
        case Mode::metaplasticity_only:
            p.alpha = 0.0;
            break;
        case Mode::consolidation_only:
            p.delta_m_hidden = 0.0;
            p.delta_m_output = 0.0;
            break;
        }
        const double s = reduced_data_scale();
        p.delta_m_hidden *= s;
        p.delta_m_output *= s;
        p.t_cons /= s;
        return net;
    }

    void validate() const
    {
        if (mode == Mode::fixed_m && !network.plasticity.fixed_m) {
            throw ConfigError("mode fixed_m requires network.plasticity.fixed_m");
        }
        if (mode != Mode::fixed_m && network.plasticity.fixed_m) {
            throw ConfigError("network.plasticity.fixed_m is only valid in mode fixed_m");
        }
        if (network.output_size() != 2) {
            throw ConfigError("split tasks share a two-neuron output head; output layer size must be 2");
        }
        if (encoder.dt != network.dt) {
            throw ConfigError("encoder dt must equal network dt");
        }
        if (epochs == 0) {
            throw ConfigError("epochs must be at least 1");
        }
        if (samples_per_task && *samples_per_task == 0) {
            throw ConfigError("samples_per_task must be positive");
        }
        if (reference_samples_per_task == 0) {
            throw ConfigError("reference_samples_per_task must be positive");
        }
        if (!(eval_duration_ms() >= network.dt)) {
            throw ConfigError("eval duration must cover at least one step");
        }
        encoder.validate();
        effective_network().validate();
        (void)ordering();
    }
};

inline void to_json(nlohmann::json& j, const DataPaths& d)
{
    j = {{"root", d.root},
         {"train_images", d.train_images},
         {"train_labels", d.train_labels},
         {"test_images", d.test_images},
         {"test_labels", d.test_labels}};
}

inline void from_json(const nlohmann::json& j, DataPaths& d)
{
    using detail::read_opt;
    read_opt(j, "root", d.root);
    read_opt(j, "train_images", d.train_images);
    read_opt(j, "train_labels", d.train_labels);
    read_opt(j, "test_images", d.test_images);
    read_opt(j, "test_labels", d.test_labels);
}

inline void to_json(nlohmann::json& j, const SpikeEncoderConfig& c)
{
    j = {{"f_input", c.f_input}, {"f_label", c.f_label}, {"sample_duration", c.sample_duration}};
}

inline void from_json(const nlohmann::json& j, SpikeEncoderConfig& c)
{
    detail::read_opt(j, "f_input", c.f_input);
    detail::read_opt(j, "f_label", c.f_label);
    detail::read_opt(j, "sample_duration", c.sample_duration);
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c)
{
    nlohmann::json ordering;
    if (c.custom_ordering.empty()) {
        ordering = c.ordering_preset;
    } else {
        ordering = nlohmann::json::array();
        for (const auto& p : c.custom_ordering) {
            ordering.push_back({p[0], p[1]});
        }
    }
    auto opt = [](const auto& o) { return o ? nlohmann::json(*o) : nlohmann::json(nullptr); };
    j = {{"name", c.name},
         {"data", c.data},
         {"network", c.network},
         {"encoder", c.encoder},
         {"ordering", ordering},
         {"mode", c.mode},
         {"seed", c.seed},
         {"seeds", c.seeds},
         {"m_max_sweep", c.m_max_sweep},
         {"samples_per_task", opt(c.samples_per_task)},
         {"reference_samples_per_task", c.reference_samples_per_task},
         {"scale_reduced", c.scale_reduced},
         {"test_samples_per_task", opt(c.test_samples_per_task)},
         {"epochs", c.epochs},
         {"eval_duration", opt(c.eval_duration)},
         {"eval_seed", c.eval_seed},
         {"curve_interval", c.curve_interval},
         {"learning", c.learning},
         {"output_dir", c.output_dir}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c)
{
    using detail::read_opt;
    if (!j.is_object()) {
        throw ConfigError("experiment config must be a JSON object");
    }
    read_opt(j, "name", c.name);
    if (j.contains("data")) {
        from_json(j.at("data"), c.data);
    }
    if (j.contains("network")) {
        from_json(j.at("network"), c.network);
    }
    if (j.contains("encoder")) {
        from_json(j.at("encoder"), c.encoder);
    }
    c.encoder.dt = c.network.dt;
    if (auto it = j.find("ordering"); it != j.end()) {
        if (it->is_number_integer()) {
            c.ordering_preset = it->get<int>();
            c.custom_ordering.clear();
        } else if (it->is_array()) {
            c.custom_ordering.clear();
            for (const auto& pair : *it) {
                if (!pair.is_array() || pair.size() != 2) {
                    throw ConfigError("custom ordering entries must be [class, class] pairs");
                }
                c.custom_ordering.push_back({pair[0].get<std::uint8_t>(), pair[1].get<std::uint8_t>()});
            }
        } else {
            throw ConfigError("ordering must be a preset number or a list of class pairs");
        }
    }
    read_opt(j, "mode", c.mode);
    if (auto it = j.find("mode"); it != j.end() && it->is_string()) {
        static const std::set<std::string> known{"tacos", "fixed_m", "baseline", "metaplasticity_only",
                                                 "consolidation_only"};
        if (!known.contains(it->get<std::string>())) {
            throw ConfigError("unknown mode '" + it->get<std::string>() + "'");
        }
    }
    read_opt(j, "seed", c.seed);
    read_opt(j, "seeds", c.seeds);
    read_opt(j, "m_max_sweep", c.m_max_sweep);
    read_opt(j, "samples_per_task", c.samples_per_task);
    read_opt(j, "reference_samples_per_task", c.reference_samples_per_task);
    read_opt(j, "scale_reduced", c.scale_reduced);
    read_opt(j, "test_samples_per_task", c.test_samples_per_task);
    read_opt(j, "epochs", c.epochs);
    read_opt(j, "eval_duration", c.eval_duration);
    read_opt(j, "eval_seed", c.eval_seed);
    read_opt(j, "curve_interval", c.curve_interval);
    read_opt(j, "learning", c.learning);
    read_opt(j, "output_dir", c.output_dir);
}

/// FNV-1a over the canonical JSON of the inputs that determine a run.
inline std::string config_hash(const ExperimentConfig& c)
{
    nlohmann::json j = c;
    j.erase("output_dir");
    j.erase("seeds");
    j.erase("m_max_sweep");
    j.erase("name");
    j["data"].erase("root");
    const std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct TaskLog {
    std::size_t task = 0;
    std::size_t samples = 0;
    std::uint64_t steps = 0;
    double wall_seconds = 0.0;
    double mean_output_rate = 0.0; // output spikes per neuron per step during training
    double mean_hidden_rate = 0.0; // hidden spikes per neuron per step during training
};

struct CurvePoint {
    std::size_t task = 0;         // task being trained
    std::size_t samples_seen = 0; // within that task
    std::vector<double> accuracies;
};

struct WeightChangeRow {
    std::size_t task = 0;
    std::size_t block = 0;
    double during_task = 0.0;       // |w(end of task) - w(start of task)|
    double since_first_task = 0.0;  // |w(end of task) - w(end of task 0)|
};

struct RunRecord {
    std::string name;
    std::string hash;
    nlohmann::json config;
    std::string status = "running"; // running | stopped | complete | failed
    std::string error;
    Mode mode = Mode::tacos;
    std::uint64_t seed = 0;
    double m_max = 0.0;
    std::vector<std::size_t> layer_sizes;
    std::vector<ClassPair> classes;
    AccuracyMatrix accuracy;
    std::vector<TaskLog> task_logs;
    std::vector<CurvePoint> curve;
    std::vector<WeightChangeRow> weight_changes;
    // untrained_activity[c] and class_activity[k][c]: mean hidden spike counts
    // per test sample of class c, before training and after task k.
    std::map<int, std::vector<double>> untrained_activity;
    std::vector<std::map<int, std::vector<double>>> class_activity;
    std::uint64_t total_steps = 0;
    double wall_seconds = 0.0;

    std::size_t completed_tasks() const { return accuracy.completed_tasks(); }
};

/// Persistent-state components carried by each mode.
inline StateComponents state_components(Mode mode)
{
    switch (mode) {
    case Mode::tacos:
        return {.reference_weight = true, .metaplastic_state = true};
    case Mode::fixed_m:
        return {.reference_weight = true, .constant_m = true};
    case Mode::baseline:
        return {};
    case Mode::metaplasticity_only:
        return {.metaplastic_state = true};
    case Mode::consolidation_only:
        return {.reference_weight = true};
    }
    return {};
}

inline MemoryLedger memory_ledger(const RunRecord& rec)
{
    MemoryLedger ledger;
    ledger.baseline_bits = model_memory_bits(rec.layer_sizes, state_components(Mode::baseline));
    const auto bits = model_memory_bits(rec.layer_sizes, state_components(rec.mode));
    ledger.per_task_bits.assign(rec.accuracy.size(), bits);
    return ledger;
}

struct CheckpointMetrics {
    std::size_t after_task = 0;
    double single_task_accuracy = 0.0;
    double mean_accuracy = 0.0;
    std::optional<double> fwt;
    std::optional<double> bwt;
};

struct MetricSummary {
    std::vector<CheckpointMetrics> checkpoints;
    double memory_overhead = 0.0;

    std::optional<CheckpointMetrics> final() const
    {
        if (checkpoints.empty()) {
            return std::nullopt;
        }
        return checkpoints.back();
    }
};

inline MetricSummary summarize(const RunRecord& rec)
{
    MetricSummary s;
    const auto& r = rec.accuracy;
    const bool have_baseline = r.size() > 0 && r.baseline(0).has_value();
    for (std::size_t k = 0; k < rec.completed_tasks(); ++k) {
        CheckpointMetrics c;
        c.after_task = k;
        c.single_task_accuracy = single_task_accuracy(r, k);
        c.mean_accuracy = mean_accuracy(r, k);
        if (k + 1 < r.size() && have_baseline) {
            c.fwt = forward_transfer(r, k);
        }
        if (k >= 1) {
            c.bwt = backward_transfer(r, k);
        }
        s.checkpoints.push_back(c);
    }
    if (!rec.layer_sizes.empty() && r.size() > 0) {
        s.memory_overhead = memory_overhead(memory_ledger(rec));
    }
    return s;
}

// ---- RunRecord JSON ----

inline nlohmann::json accuracy_to_json(const AccuracyMatrix& r)
{
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t t = 0; t < r.size(); ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t k = 0; k < r.size(); ++k) {
            const auto v = r.get(t, k);
            row.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
        }
        rows.push_back(row);
    }
    nlohmann::json b = nlohmann::json::array();
    for (std::size_t t = 0; t < r.size(); ++t) {
        const auto v = r.baseline(t);
        b.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    }
    return {{"R", rows}, {"b", b}};
}

inline AccuracyMatrix accuracy_from_json(const nlohmann::json& j)
{
    const auto& rows = j.at("R");
    AccuracyMatrix r(rows.size());
    for (std::size_t t = 0; t < rows.size(); ++t) {
        for (std::size_t k = 0; k < rows[t].size(); ++k) {
            if (!rows[t][k].is_null()) {
                r.set(t, k, rows[t][k].get<double>());
            }
        }
    }
    const auto& b = j.at("b");
    for (std::size_t t = 0; t < b.size(); ++t) {
        if (!b[t].is_null()) {
            r.set_baseline(t, b[t].get<double>());
        }
    }
    return r;
}

namespace detail {

inline nlohmann::json activity_to_json(const std::map<int, std::vector<double>>& m)
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [c, v] : m) {
        j[std::to_string(c)] = v;
    }
    return j;
}

inline std::map<int, std::vector<double>> activity_from_json(const nlohmann::json& j)
{
    std::map<int, std::vector<double>> m;
    for (auto it = j.begin(); it != j.end(); ++it) {
        m[std::stoi(it.key())] = it.value().get<std::vector<double>>();
    }
    return m;
}

} // namespace detail

inline nlohmann::json record_to_json(const RunRecord& rec)
{
    nlohmann::json logs = nlohmann::json::array();
    for (const auto& l : rec.task_logs) {
        logs.push_back({{"task", l.task},
                        {"samples", l.samples},
                        {"steps", l.steps},
                        {"wall_seconds", l.wall_seconds},
                        {"mean_output_rate", l.mean_output_rate},
                        {"mean_hidden_rate", l.mean_hidden_rate}});
    }
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& c : rec.curve) {
        curve.push_back({{"task", c.task}, {"samples_seen", c.samples_seen}, {"accuracies", c.accuracies}});
    }
    nlohmann::json wc = nlohmann::json::array();
    for (const auto& w : rec.weight_changes) {
        wc.push_back({{"task", w.task},
                      {"block", w.block},
                      {"during_task", w.during_task},
                      {"since_first_task", w.since_first_task}});
    }
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& p : rec.classes) {
        classes.push_back({p[0], p[1]});
    }
    nlohmann::json act = nlohmann::json::array();
    for (const auto& a : rec.class_activity) {
        act.push_back(detail::activity_to_json(a));
    }
    return {{"name", rec.name},
            {"hash", rec.hash},
            {"config", rec.config},
            {"status", rec.status},
            {"error", rec.error},
            {"mode", rec.mode},
            {"seed", rec.seed},
            {"m_max", rec.m_max},
            {"layer_sizes", rec.layer_sizes},
            {"classes", classes},
            {"accuracy", accuracy_to_json(rec.accuracy)},
            {"task_logs", logs},
            {"curve", curve},
            {"weight_changes", wc},
            {"untrained_activity", detail::activity_to_json(rec.untrained_activity)},
            {"class_activity", act},
            {"total_steps", rec.total_steps},
            {"wall_seconds", rec.wall_seconds}};
}

inline RunRecord record_from_json(const nlohmann::json& j)
{
    RunRecord rec;
    rec.name = j.at("name").get<std::string>();
    rec.hash = j.at("hash").get<std::string>();
    rec.config = j.at("config");
    rec.status = j.at("status").get<std::string>();
    rec.error = j.value("error", "");
    rec.mode = j.at("mode").get<Mode>();
    rec.seed = j.at("seed").get<std::uint64_t>();
    rec.m_max = j.at("m_max").get<double>();
    rec.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    for (const auto& p : j.at("classes")) {
        rec.classes.push_back({p[0].get<std::uint8_t>(), p[1].get<std::uint8_t>()});
    }
    rec.accuracy = accuracy_from_json(j.at("accuracy"));
    for (const auto& l : j.at("task_logs")) {
        rec.task_logs.push_back({l.at("task").get<std::size_t>(), l.at("samples").get<std::size_t>(),
                                 l.at("steps").get<std::uint64_t>(), l.at("wall_seconds").get<double>(),
                                 l.at("mean_output_rate").get<double>(), l.value("mean_hidden_rate", 0.0)});
    }
    for (const auto& c : j.at("curve")) {
        rec.curve.push_back({c.at("task").get<std::size_t>(), c.at("samples_seen").get<std::size_t>(),
                             c.at("accuracies").get<std::vector<double>>()});
    }
    for (const auto& w : j.at("weight_changes")) {
        rec.weight_changes.push_back({w.at("task").get<std::size_t>(), w.at("block").get<std::size_t>(),
                                      w.at("during_task").get<double>(), w.at("since_first_task").get<double>()});
    }
    rec.untrained_activity = detail::activity_from_json(j.at("untrained_activity"));
    for (const auto& a : j.at("class_activity")) {
        rec.class_activity.push_back(detail::activity_from_json(a));
    }
    rec.total_steps = j.at("total_steps").get<std::uint64_t>();
    rec.wall_seconds = j.at("wall_seconds").get<double>();
    return rec;
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j)
{
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) {
            throw RuntimeError("cannot write " + tmp.string());
        }
        os << j.dump(1) << '\n';
        if (!os) {
            throw RuntimeError("failed writing " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

inline nlohmann::json read_json_file(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) {
        throw DataError("cannot open " + path.string());
    }
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

inline RunRecord load_record(const std::filesystem::path& run_dir)
{
    return record_from_json(read_json_file(run_dir / "run_state.json"));
}

// ---- running ----

struct LoadedData {
    Dataset train;
    Dataset test;
};

inline LoadedData load_data(const DataPaths& paths)
{
    LoadedData d;
    d.train = load_idx(paths.resolve(paths.train_images), paths.resolve(paths.train_labels));
    d.test = load_idx(paths.resolve(paths.test_images), paths.resolve(paths.test_labels));
    if (d.train.image_size() != d.test.image_size()) {
        throw DataError("train and test images differ in shape");
    }
    return d;
}

/// Task sequence for a config: ordering, shuffle, reduced subset, test cap.
inline TaskSequence build_tasks(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test)
{
    auto seq = build_split_tasks(train, test, cfg.ordering(), rng::stream_seed(cfg.seed, rng::Stream::shuffle));
    if (cfg.samples_per_task) {
        seq = reduced_subset(seq, train, *cfg.samples_per_task, rng::stream_seed(cfg.seed, rng::Stream::subset));
    }
    if (cfg.test_samples_per_task) {
        for (auto& task : seq.tasks) {
            if (task.test.size() > *cfg.test_samples_per_task) {
                task.test.resize(*cfg.test_samples_per_task);
            }
        }
    }
    return seq;
}

struct Evaluation {
    std::vector<double> accuracy; // per task
    std::map<int, std::vector<double>> class_activity;
};

/// Label-free evaluation of every task on a copy of `net`. Encoding noise
/// depends only on (eval_seed, task, test index), so repeated evaluations
/// see identical spike trains.
inline Evaluation evaluate(const Network& net, const TaskSequence& tasks, const Dataset& test,
                           const ExperimentConfig& cfg)
{
    Network probe = net;
    probe.reset_dynamics();
    SpikeEncoderConfig enc = cfg.encoder;
    enc.seed = rng::stream_seed(cfg.eval_seed, rng::Stream::evaluation);
    const auto steps = static_cast<std::size_t>(cfg.eval_duration_ms() / cfg.network.dt + 0.5);

    Evaluation ev;
    std::map<int, std::size_t> class_n;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        const auto& task = tasks[t];
        std::size_t correct = 0;
        for (auto idx : task.test) {
            ImageSpikeSource source(test.image(idx), enc, rng::key(t, idx));
            const auto pred = probe.predict(source, steps);
            const auto label = test.labels[idx];
            if (pred.label == task.head(label)) {
                ++correct;
            }
            auto& acc = ev.class_activity[label];
            acc.resize(pred.hidden_counts.size(), 0.0);
            for (std::size_t i = 0; i < acc.size(); ++i) {
                acc[i] += pred.hidden_counts[i];
            }
            ++class_n[label];
        }
        ev.accuracy.push_back(task.test.empty() ? 0.0
                                                : static_cast<double>(correct) / static_cast<double>(task.test.size()));
    }
    for (auto& [c, v] : ev.class_activity) {
        for (auto& x : v) {
            x /= static_cast<double>(class_n[c]);
        }
    }
    return ev;
}

inline WeightSnapshot snapshot_weights(const Network& net)
{
    WeightSnapshot s;
    for (std::size_t b = 0; b < net.num_blocks(); ++b) {
        const auto blk = net.block(b);
        s.emplace_back(blk.begin(), blk.end());
    }
    return s;
}

struct RunOptions {
    bool resume = false;
    std::optional<std::size_t> stop_after_task; // 0-based; record is marked "stopped"
    std::function<void(const std::string&)> log;
    const LoadedData* data = nullptr; // preloaded datasets; loaded from cfg.data otherwise
};

namespace detail {

struct RunPaths {
    std::filesystem::path dir;
    std::filesystem::path state() const { return dir / "run_state.json"; }
    std::filesystem::path model() const { return dir / "model.ckpt"; }
    std::filesystem::path first_task_model() const { return dir / "model_after_task0.ckpt"; }
};

} // namespace detail

/// Trains through the task sequence and records the accuracy matrix. When
/// cfg.output_dir is set, the record and a model checkpoint are persisted
/// after every task, and `resume` continues from the last completed task.
inline RunRecord run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {})
{
    cfg.validate();
    const auto wall_start = std::chrono::steady_clock::now();
    auto log = [&](const std::string& msg) {
        if (opts.log) {
            opts.log(msg);
        }
    };

    LoadedData owned;
    const LoadedData* data = opts.data;
    if (data == nullptr) {
        owned = load_data(cfg.data);
        data = &owned;
    }
    const auto tasks = build_tasks(cfg, data->train, data->test);
    const auto net_cfg = cfg.effective_network();
    if (data->train.image_size() != net_cfg.input_size()) {
        throw ConfigError("input layer size " + std::to_string(net_cfg.input_size()) +
                          " does not match image size " + std::to_string(data->train.image_size()));
    }

    const bool persist = !cfg.output_dir.empty();
    detail::RunPaths paths{cfg.output_dir};
    if (persist) {
        std::filesystem::create_directories(paths.dir);
    }

    RunRecord rec;
    rec.name = cfg.name;
    rec.hash = config_hash(cfg);
    rec.config = cfg;
    rec.mode = cfg.mode;
    rec.seed = cfg.seed;
    rec.m_max = net_cfg.plasticity.fixed_m.value_or(net_cfg.plasticity.m_max);
    rec.layer_sizes = net_cfg.layer_sizes;
    for (const auto& t : tasks.tasks) {
        rec.classes.push_back(t.classes);
    }
    rec.accuracy = AccuracyMatrix(tasks.size());

    std::optional<Network> net;
    std::optional<WeightSnapshot> after_first;
    std::size_t start_task = 0;
    double prior_wall = 0.0;

    if (opts.resume && persist && std::filesystem::exists(paths.state())) {
        auto saved = load_record(paths.dir);
        if (saved.hash != rec.hash) {
            throw ConfigError("cannot resume " + paths.dir.string() + ": config hash " + saved.hash +
                               " differs from " + rec.hash);
        }
        rec = std::move(saved);
        start_task = rec.completed_tasks();
        prior_wall = rec.wall_seconds;
        if (start_task > 0) {
            net = load_checkpoint(paths.model());
            after_first = snapshot_weights(load_checkpoint(paths.first_task_model()));
        }
        rec.status = "running";
        log("resuming after task " + std::to_string(start_task));
    }
    if (!net) {
        net.emplace(net_cfg);
    }

    auto persist_state = [&] {
        if (!persist) {
            return;
        }
        rec.wall_seconds =
            prior_wall + std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
        write_json_file(paths.state(), record_to_json(rec));
    };

    try {
        if (start_task == 0 && !rec.accuracy.baseline(0)) {
            const auto ev = evaluate(*net, tasks, data->test, cfg);
            for (std::size_t t = 0; t < tasks.size(); ++t) {
                rec.accuracy.set_baseline(t, ev.accuracy[t]);
            }
            rec.untrained_activity = ev.class_activity;
            persist_state();
        }

        SpikeEncoderConfig in_enc = cfg.encoder;
        in_enc.seed = rng::stream_seed(cfg.seed, rng::Stream::input);
        SpikeEncoderConfig lab_enc = cfg.encoder;
        lab_enc.seed = rng::stream_seed(cfg.seed, rng::Stream::label);
        const auto steps = cfg.encoder.steps_per_sample();
        const auto O = net_cfg.output_size();
        SpikeVector in_frame;
        SpikeVector lab_frame;

        for (std::size_t t = start_task; t < tasks.size(); ++t) {
            const auto& task = tasks[t];
            const auto task_start = std::chrono::steady_clock::now();
            const auto before = snapshot_weights(*net);
            TaskLog tl;
            tl.task = t;
            std::uint64_t out_spikes = 0;
            std::uint64_t hidden_spikes = 0;
            std::size_t hidden_size = 0;
            for (std::size_t l = 1; l + 1 < net->num_layers(); ++l) {
                hidden_size += net->layer_size(l);
            }
            std::size_t seen = 0;
            for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
                for (std::size_t pos = 0; pos < task.train.size(); ++pos) {
                    const auto idx = task.train[pos];
                    const auto image = data->train.image(idx);
                    const auto head = task.head(data->train.labels[idx]);
                    const auto sample_key = rng::key(t, epoch, pos);
                    for (std::size_t s = 0; s < steps; ++s) {
                        poisson_encode_into(in_frame, image, in_enc, sample_key, s);
                        label_encode_into(lab_frame, head, O, lab_enc, sample_key, s);
                        const auto out = net->step(in_frame, lab_frame, cfg.learning);
                        for (auto x : out) {
                            out_spikes += x;
                        }
                        for (std::size_t l = 1; l + 1 < net->num_layers(); ++l) {
                            for (auto x : net->spikes(l)) {
                                hidden_spikes += x;
                            }
                        }
                    }
                    if (cfg.learning) {
                        net->end_of_sample(cfg.encoder.sample_duration);
                    } else {
                        net->reset_dynamics();
                    }
                    tl.steps += steps;
                    ++tl.samples;
                    ++seen;
                    if (cfg.curve_interval > 0 && seen % cfg.curve_interval == 0 &&
                        seen < task.train.size() * cfg.epochs) {
                        const auto ev = evaluate(*net, tasks, data->test, cfg);
                        rec.curve.push_back({t, seen, ev.accuracy});
                    }
                }
            }
            tl.mean_output_rate =
                tl.steps == 0 ? 0.0 : static_cast<double>(out_spikes) / static_cast<double>(tl.steps * O);
            tl.mean_hidden_rate = tl.steps == 0 ? 0.0
                                                : static_cast<double>(hidden_spikes) /
                                                      static_cast<double>(tl.steps * hidden_size);

            const auto ev = evaluate(*net, tasks, data->test, cfg);
            for (std::size_t k = 0; k < tasks.size(); ++k) {
                rec.accuracy.set(k, t, ev.accuracy[k]);
            }
            rec.curve.push_back({t, seen, ev.accuracy});
            rec.class_activity.push_back(ev.class_activity);

            const auto after = snapshot_weights(*net);
            if (t == 0) {
                after_first = after;
            }
            for (std::size_t b = 0; b < after.size(); ++b) {
                rec.weight_changes.push_back({t, b, mean_weight_change(before, after, b),
                                              mean_weight_change(*after_first, after, b)});
            }
            tl.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - task_start).count();
            rec.task_logs.push_back(tl);
            rec.total_steps += tl.steps;

            if (persist) {
                save_checkpoint(*net, paths.model());
                if (t == 0) {
                    save_checkpoint(*net, paths.first_task_model());
                }
            }
            log("task " + std::to_string(t) + " done: R column " + [&] {
                std::string s;
                for (double a : ev.accuracy) {
                    char buf[16];
                    std::snprintf(buf, sizeof buf, " %.4f", a);
                    s += buf;
                }
                return s;
            }());

            if (opts.stop_after_task && *opts.stop_after_task == t && t + 1 < tasks.size()) {
                rec.status = "stopped";
                persist_state();
                return rec;
            }
            persist_state();
        }
        rec.status = "complete";
        persist_state();
    } catch (const std::exception& e) {
        rec.status = "failed";
        rec.error = e.what();
        try {
            persist_state();
        } catch (...) {
        }
        throw;
    }
    rec.wall_seconds =
        prior_wall + std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    return rec;
}

// ---- sweeps ----

struct AggregateRow {
    std::string key;
    std::size_t runs = 0;
    std::size_t failed = 0;
    double ma_mean = 0.0;
    double ma_std = 0.0;
    double bwt_mean = 0.0;
    double bwt_std = 0.0;
    double final_task_accuracy_mean = 0.0;
};

struct SweepResult {
    std::vector<RunRecord> runs;
    std::vector<AggregateRow> aggregates;
};

/// Expands `base` over its seed list and m_max sweep. Run names are
/// "<name>_m<m_max>_s<seed>", aggregates key on "<name>_m<m_max>".
inline std::vector<ExperimentConfig> expand_sweep(const ExperimentConfig& base)
{
    std::vector<std::uint64_t> seeds = base.seeds.empty() ? std::vector<std::uint64_t>{base.seed} : base.seeds;
    std::vector<std::optional<double>> ms;
    if (base.m_max_sweep.empty()) {
        ms.push_back(std::nullopt);
    } else {
        ms.assign(base.m_max_sweep.begin(), base.m_max_sweep.end());
    }
    std::vector<ExperimentConfig> out;
    for (const auto& m : ms) {
        for (auto s : seeds) {
            ExperimentConfig c = base;
            c.seed = s;
            c.seeds.clear();
            c.m_max_sweep.clear();
            std::string group = base.name;
            if (m) {
                if (base.mode == Mode::fixed_m) {
                    c.network.plasticity.fixed_m = *m;
                } else {
                    c.network.plasticity.m_max = *m;
                }
                char buf[32];
                std::snprintf(buf, sizeof buf, "_m%g", *m);
                group += buf;
            }
            c.name = group + "_s" + std::to_string(s);
            if (!base.output_dir.empty()) {
                c.output_dir = (std::filesystem::path(base.output_dir) / c.name).string();
            }
            out.push_back(std::move(c));
        }
    }
    return out;
}

/// Group key of a run name produced by expand_sweep (strips "_s<seed>").
inline std::string aggregate_key(const std::string& name)
{
    const auto pos = name.rfind("_s");
    if (pos == std::string::npos) {
        return name;
    }
    return name.substr(0, pos);
}

inline std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& runs)
{
    std::map<std::string, std::vector<const RunRecord*>> groups;
    std::vector<std::string> order;
    for (const auto& r : runs) {
        const auto key = aggregate_key(r.name);
        if (!groups.contains(key)) {
            order.push_back(key);
        }
        groups[key].push_back(&r);
    }
    std::vector<AggregateRow> rows;
    for (const auto& key : order) {
        AggregateRow row;
        row.key = key;
        std::vector<double> ma;
        std::vector<double> bwt;
        std::vector<double> last;
        for (const auto* r : groups[key]) {
            ++row.runs;
            if (r->status != "complete") {
                ++row.failed;
                continue;
            }
            const auto s = summarize(*r);
            const auto f = s.final();
            if (!f) {
                ++row.failed;
                continue;
            }
            ma.push_back(f->mean_accuracy);
            last.push_back(f->single_task_accuracy);
            if (f->bwt) {
                bwt.push_back(*f->bwt);
            }
        }
        auto mean_std = [](const std::vector<double>& v) -> std::pair<double, double> {
            if (v.empty()) {
                return {std::nan(""), std::nan("")};
            }
            double m = 0.0;
            for (double x : v) {
                m += x;
            }
            m /= static_cast<double>(v.size());
            double var = 0.0;
            for (double x : v) {
                var += (x - m) * (x - m);
            }
            var = v.size() > 1 ? var / static_cast<double>(v.size() - 1) : 0.0;
            return {m, std::sqrt(var)};
        };
        std::tie(row.ma_mean, row.ma_std) = mean_std(ma);
        std::tie(row.bwt_mean, row.bwt_std) = mean_std(bwt);
        row.final_task_accuracy_mean = mean_std(last).first;
        rows.push_back(row);
    }
    return rows;
}

struct SweepOptions {
    std::size_t jobs = 0; // 0: hardware concurrency
    bool resume = false;
    std::function<void(const std::string&)> log;
    const LoadedData* data = nullptr;
};

/// Runs every config, concurrently up to `jobs`. A failing run is recorded
/// with status "failed" and does not stop the others.
inline SweepResult sweep(const std::vector<ExperimentConfig>& configs, const SweepOptions& opts = {})
{
    if (configs.empty()) {
        throw ConfigError("sweep needs at least one config");
    }
    // Datasets are loaded once per distinct location; a load failure is
    // reported by every run that needs that location.
    std::map<std::string, LoadedData> cache;
    std::map<std::string, std::exception_ptr> load_errors;
    const LoadedData* shared = opts.data;
    auto data_key = [](const ExperimentConfig& c) {
        return c.data.resolve(c.data.train_images).string() + "|" + c.data.resolve(c.data.test_images).string();
    };
    if (shared == nullptr) {
        for (const auto& c : configs) {
            const auto key = data_key(c);
            if (cache.contains(key) || load_errors.contains(key)) {
                continue;
            }
            try {
                cache.emplace(key, load_data(c.data));
            } catch (const std::exception&) {
                load_errors.emplace(key, std::current_exception());
            }
        }
    }
    auto data_for = [&](const ExperimentConfig& c) -> const LoadedData* {
        if (shared != nullptr) {
            return shared;
        }
        const auto key = data_key(c);
        if (const auto it = load_errors.find(key); it != load_errors.end()) {
            std::rethrow_exception(it->second);
        }
        return &cache.at(key);
    };

    SweepResult result;
    result.runs.resize(configs.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    auto worker = [&] {
        while (true) {
            const auto i = next.fetch_add(1);
            if (i >= configs.size()) {
                return;
            }
            RunOptions ro;
            ro.resume = opts.resume;
            if (opts.log) {
                ro.log = [&, name = configs[i].name](const std::string& msg) {
                    std::lock_guard lock(log_mutex);
                    opts.log(name + ": " + msg);
                };
            }
            try {
                ro.data = data_for(configs[i]);
                result.runs[i] = run_experiment(configs[i], ro);
            } catch (const std::exception& e) {
                RunRecord failed;
                failed.name = configs[i].name;
                failed.status = "failed";
                failed.error = e.what();
                failed.mode = configs[i].mode;
                failed.seed = configs[i].seed;
                result.runs[i] = std::move(failed);
                if (opts.log) {
                    std::lock_guard lock(log_mutex);
                    opts.log(configs[i].name + ": failed: " + e.what());
                }
            }
        }
    };
    std::size_t jobs = opts.jobs == 0 ? std::max(1u, std::thread::hardware_concurrency()) : opts.jobs;
    jobs = std::min(jobs, configs.size());
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t j = 0; j < jobs; ++j) {
            pool.emplace_back(worker);
        }
    }
    result.aggregates = aggregate(result.runs);
    return result;
}

} // namespace tacos
