#include <algorithm>
#include <cstdio>
#include <functional>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tacos/checkpoint.hpp"
#include "tacos/experiment.hpp"
#include "tacos/report.hpp"

namespace {

enum ExitCode { ok = 0, usage = 1, config_error = 2, data_error = 3, runtime_error = 4 };

nlohmann::json read_config_json(const std::string& path)
{
    if (path.empty()) {
        return nlohmann::json::object();
    }
    std::ifstream is(path);
    if (!is) {
        throw tacos::ConfigError("cannot open config " + path);
    }
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw tacos::ConfigError(path + ": " + e.what());
    }
}

// "network.plasticity.m_max=5" -> j["network"]["plasticity"]["m_max"] = 5.
// The value is parsed as JSON when possible, otherwise taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw tacos::ConfigError("override '" + assignment + "' is not key.path=value");
    }
    std::string pointer = "/" + assignment.substr(0, eq);
    for (auto& c : pointer) {
        if (c == '.') {
            c = '/';
        }
    }
    const auto text = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
        value = text;
    }
    j[nlohmann::json::json_pointer(pointer)] = value;
}

tacos::ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides)
{
    auto j = read_config_json(path);
    for (const auto& o : overrides) {
        apply_override(j, o);
    }
    return j.get<tacos::ExperimentConfig>();
}

void log_line(const std::string& msg) { std::cerr << msg << std::endl; }

void print_summary(const tacos::RunRecord& rec)
{
    const auto s = tacos::summarize(rec);
    std::printf("%s [%s] status=%s tasks=%zu", rec.name.c_str(), rec.hash.c_str(), rec.status.c_str(),
                rec.completed_tasks());
    if (const auto f = s.final()) {
        std::printf(" MA=%.4f", f->mean_accuracy);
        if (f->bwt) {
            std::printf(" BWT=%.4f", *f->bwt);
        }
    }
    std::printf(" MO=%.3f\n", s.memory_overhead);
}

int run_guarded(const std::function<void()>& body)
{
    try {
        body();
        return ok;
    } catch (const tacos::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const tacos::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return data_error;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return runtime_error;
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Continual learning with metaplastic spiking networks"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    bool resume = false;
    int stop_after = -1;
    bool quiet = false;

    auto* train = app.add_subcommand("train", "Train through a task sequence and record the accuracy matrix");
    train->add_option("-c,--config", config_path, "Experiment config (JSON)");
    train->add_option("-s,--set", overrides, "Override a config key: key.path=value");
    train->add_option("-o,--out", out_dir, "Run directory (state, checkpoints, report)");
    train->add_flag("--resume", resume, "Continue from the last completed task in --out");
    train->add_option("--stop-after-task", stop_after, "Stop after this task (0-based)");
    train->add_flag("-q,--quiet", quiet, "No progress output");

    std::vector<double> m_values;
    std::vector<std::uint64_t> seed_values;
    std::vector<std::string> mode_values;
    std::size_t jobs = 0;
    auto* sweep = app.add_subcommand("sweep", "Run a grid of m_max values, seeds and modes");
    sweep->add_option("-c,--config", config_path, "Base experiment config (JSON)");
    sweep->add_option("-s,--set", overrides, "Override a config key: key.path=value");
    sweep->add_option("-o,--out", out_dir, "Sweep directory")->required();
    sweep->add_option("--m-max", m_values, "m_max values (fixed m in fixed_m mode)");
    sweep->add_option("--seeds", seed_values, "Seeds");
    sweep->add_option("--modes", mode_values, "Modes");
    sweep->add_option("-j,--jobs", jobs, "Concurrent runs (0: one per core)");
    sweep->add_flag("--resume", resume, "Resume runs that already have state");
    sweep->add_flag("-q,--quiet", quiet, "No progress output");

    std::string checkpoint_path;
    auto* eval = app.add_subcommand("eval", "Evaluate a saved model on every task");
    eval->add_option("--checkpoint", checkpoint_path, "Model checkpoint")->required();
    eval->add_option("-c,--config", config_path, "Experiment config for data and tasks");
    eval->add_option("-s,--set", overrides, "Override a config key: key.path=value");

    std::vector<std::string> record_dirs;
    auto* report = app.add_subcommand("report", "Write tables and metrics from run directories");
    report->add_option("-r,--records", record_dirs, "Run directories (or a sweep directory)")->required();
    report->add_option("-o,--out", out_dir, "Report directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    const auto logger = quiet ? std::function<void(const std::string&)>{} : log_line;

    if (train->parsed()) {
        return run_guarded([&] {
            auto cfg = load_config(config_path, overrides);
            if (!out_dir.empty()) {
                cfg.output_dir = out_dir;
            }
            if (resume && cfg.output_dir.empty()) {
                throw tacos::ConfigError("--resume needs a run directory (--out)");
            }
            tacos::RunOptions opts;
            opts.resume = resume;
            opts.log = logger;
            if (stop_after >= 0) {
                opts.stop_after_task = static_cast<std::size_t>(stop_after);
            }
            const auto rec = tacos::run_experiment(cfg, opts);
            print_summary(rec);
            if (!cfg.output_dir.empty()) {
                tacos::emit_report({rec}, std::filesystem::path(cfg.output_dir) / "report");
            }
        });
    }

    if (sweep->parsed()) {
        return run_guarded([&] {
            auto base = load_config(config_path, overrides);
            base.output_dir = out_dir;
            if (!m_values.empty()) {
                base.m_max_sweep = m_values;
            }
            if (!seed_values.empty()) {
                base.seeds = seed_values;
            }
            std::vector<tacos::ExperimentConfig> configs;
            if (mode_values.empty()) {
                configs = tacos::expand_sweep(base);
            } else {
                for (const auto& m : mode_values) {
                    auto c = base;
                    c.mode = nlohmann::json(m).get<tacos::Mode>();
                    if (nlohmann::json(c.mode).get<std::string>() != m) {
                        throw tacos::ConfigError("unknown mode '" + m + "'");
                    }
                    c.name = base.name + "_" + m;
                    if (c.mode != tacos::Mode::fixed_m) {
                        c.network.plasticity.fixed_m.reset();
                    }
                    for (auto& e : tacos::expand_sweep(c)) {
                        configs.push_back(std::move(e));
                    }
                }
            }
            for (const auto& c : configs) {
                c.validate();
            }
            tacos::SweepOptions opts;
            opts.jobs = jobs;
            opts.resume = resume;
            opts.log = logger;
            const auto result = tacos::sweep(configs, opts);
            std::size_t failed = 0;
            for (const auto& r : result.runs) {
                print_summary(r);
                failed += r.status == "complete" ? 0 : 1;
            }
            for (const auto& a : result.aggregates) {
                std::printf("%s: n=%zu MA=%.4f+-%.4f BWT=%.4f+-%.4f\n", a.key.c_str(), a.runs - a.failed, a.ma_mean,
                            a.ma_std, a.bwt_mean, a.bwt_std);
            }
            tacos::emit_report(result.runs, std::filesystem::path(out_dir) / "report");
            if (failed > 0) {
                throw tacos::RuntimeError(std::to_string(failed) + " run(s) failed; see the report");
            }
        });
    }

    if (eval->parsed()) {
        return run_guarded([&] {
            auto cfg = load_config(config_path, overrides);
            const auto net = tacos::load_checkpoint(checkpoint_path);
            const auto data = tacos::load_data(cfg.data);
            const auto tasks = tacos::build_tasks(cfg, data.train, data.test);
            const auto ev = tacos::evaluate(net, tasks, data.test, cfg);
            double sum = 0.0;
            for (std::size_t t = 0; t < ev.accuracy.size(); ++t) {
                std::printf("task %zu (%d/%d): %.4f\n", t, tasks[t].classes[0], tasks[t].classes[1], ev.accuracy[t]);
                sum += ev.accuracy[t];
            }
            std::printf("mean: %.4f\n", sum / static_cast<double>(ev.accuracy.size()));
        });
    }

    if (report->parsed()) {
        return run_guarded([&] {
            std::vector<tacos::RunRecord> records;
            for (const auto& d : record_dirs) {
                const std::filesystem::path dir(d);
                if (std::filesystem::exists(dir / "run_state.json")) {
                    records.push_back(tacos::load_record(dir));
                    continue;
                }
                if (!std::filesystem::is_directory(dir)) {
                    throw tacos::DataError("no run state in " + d);
                }
                std::vector<std::filesystem::path> subdirs;
                for (const auto& e : std::filesystem::directory_iterator(dir)) {
                    if (std::filesystem::exists(e.path() / "run_state.json")) {
                        subdirs.push_back(e.path());
                    }
                }
                if (subdirs.empty()) {
                    throw tacos::DataError("no run state in " + d);
                }
                std::sort(subdirs.begin(), subdirs.end());
                for (const auto& s : subdirs) {
                    records.push_back(tacos::load_record(s));
                }
            }
            tacos::emit_report(records, out_dir);
            for (const auto& r : records) {
                print_summary(r);
            }
        });
    }
    return usage;
}
