#pragma once

// Tables and JSON summaries from finished (or partial) run records.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacos/error.hpp"
#include "tacos/experiment.hpp"
#include "tacos/metrics.hpp"

namespace tacos {

namespace detail {

inline std::string fmt(double v)
{
    if (std::isnan(v)) {
        return "nan";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline nlohmann::json opt_json(const std::optional<double>& v)
{
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline void ensure_writable_dir(const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw RuntimeError("cannot create report directory " + dir.string());
    }
    const auto probe = dir / ".write_probe";
    {
        std::ofstream os(probe);
        if (!os) {
            throw RuntimeError("report directory is not writable: " + dir.string());
        }
    }
    std::filesystem::remove(probe, ec);
}

class CsvFile {
  public:
    CsvFile(const std::filesystem::path& path, const std::string& header) : os_(path)
    {
        if (!os_) {
            throw RuntimeError("cannot write " + path.string());
        }
        os_ << header << '\n';
    }
    std::ofstream& out() { return os_; }

  private:
    std::ofstream os_;
};

} // namespace detail

/// Cosine similarity between the mean hidden activity for `cls` after task
/// `a` and after task `b`. Empty when either is missing or all-zero.
inline std::optional<double> class_similarity(const RunRecord& rec, int cls, std::size_t a, std::size_t b)
{
    if (a >= rec.class_activity.size() || b >= rec.class_activity.size()) {
        return std::nullopt;
    }
    const auto ia = rec.class_activity[a].find(cls);
    const auto ib = rec.class_activity[b].find(cls);
    if (ia == rec.class_activity[a].end() || ib == rec.class_activity[b].end()) {
        return std::nullopt;
    }
    try {
        return representation_similarity(ia->second, ib->second);
    } catch (const std::invalid_argument&) {
        return std::nullopt;
    }
}

inline nlohmann::json metrics_json(const RunRecord& rec)
{
    const auto s = summarize(rec);
    nlohmann::json cps = nlohmann::json::array();
    for (const auto& c : s.checkpoints) {
        cps.push_back({{"after_task", c.after_task},
                       {"single_task_accuracy", c.single_task_accuracy},
                       {"mean_accuracy", c.mean_accuracy},
                       {"fwt", detail::opt_json(c.fwt)},
                       {"bwt", detail::opt_json(c.bwt)}});
    }
    nlohmann::json j = {{"name", rec.name},
                        {"status", rec.status},
                        {"mode", rec.mode},
                        {"seed", rec.seed},
                        {"m_max", rec.m_max},
                        {"config_hash", rec.hash},
                        {"completed_tasks", rec.completed_tasks()},
                        {"checkpoints", cps},
                        {"memory_overhead", s.memory_overhead},
                        {"accuracy", accuracy_to_json(rec.accuracy)},
                        {"total_steps", rec.total_steps},
                        {"wall_seconds", rec.wall_seconds}};
    if (!rec.error.empty()) {
        j["error"] = rec.error;
    }
    if (const auto f = s.final()) {
        j["final"] = {{"mean_accuracy", f->mean_accuracy}, {"bwt", detail::opt_json(f->bwt)}};
    }
    return j;
}

/// Writes accuracy_matrix.csv, metrics.json, learning_curves.csv,
/// weight_change.csv and similarity.csv into `dir`.
inline void emit_report(const std::vector<RunRecord>& records, const std::filesystem::path& dir)
{
    if (records.empty()) {
        throw ConfigError("no run records to report");
    }
    detail::ensure_writable_dir(dir);
    using detail::fmt;

    {
        detail::CsvFile f(dir / "accuracy_matrix.csv", "run,task,classes,after_task,accuracy");
        for (const auto& r : records) {
            const auto n = r.accuracy.size();
            for (std::size_t t = 0; t < n; ++t) {
                std::string cls;
                if (t < r.classes.size()) {
                    cls = std::to_string(r.classes[t][0]) + "/" + std::to_string(r.classes[t][1]);
                }
                if (const auto b = r.accuracy.baseline(t)) {
                    f.out() << r.name << ',' << t << ',' << cls << ",untrained," << fmt(*b) << '\n';
                }
                for (std::size_t k = 0; k < n; ++k) {
                    if (const auto v = r.accuracy.get(t, k)) {
                        f.out() << r.name << ',' << t << ',' << cls << ',' << k << ',' << fmt(*v) << '\n';
                    }
                }
            }
        }
    }

    {
        nlohmann::json runs = nlohmann::json::array();
        for (const auto& r : records) {
            runs.push_back(metrics_json(r));
        }
        nlohmann::json aggs = nlohmann::json::array();
        for (const auto& a : aggregate(records)) {
            auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
            aggs.push_back({{"key", a.key},
                            {"runs", a.runs},
                            {"failed", a.failed},
                            {"mean_accuracy", {{"mean", num(a.ma_mean)}, {"std", num(a.ma_std)}}},
                            {"bwt", {{"mean", num(a.bwt_mean)}, {"std", num(a.bwt_std)}}},
                            {"final_task_accuracy_mean", num(a.final_task_accuracy_mean)}});
        }
        write_json_file(dir / "metrics.json", {{"runs", runs}, {"aggregates", aggs}});
    }

    {
        detail::CsvFile f(dir / "learning_curves.csv", "run,training_task,samples_seen,eval_task,accuracy");
        for (const auto& r : records) {
            for (const auto& c : r.curve) {
                for (std::size_t t = 0; t < c.accuracies.size(); ++t) {
                    f.out() << r.name << ',' << c.task << ',' << c.samples_seen << ',' << t << ','
                            << fmt(c.accuracies[t]) << '\n';
                }
            }
        }
    }

    {
        detail::CsvFile f(dir / "weight_change.csv", "run,task,block,mean_abs_change_during_task,mean_abs_change_since_task0");
        for (const auto& r : records) {
            for (const auto& w : r.weight_changes) {
                f.out() << r.name << ',' << w.task << ',' << w.block << ',' << fmt(w.during_task) << ','
                        << fmt(w.since_first_task) << '\n';
            }
        }
    }

    {
        detail::CsvFile f(dir / "similarity.csv", "run,class,after_task,cosine_to_after_task0");
        for (const auto& r : records) {
            if (r.class_activity.empty()) {
                continue;
            }
            for (const auto& [cls, _] : r.class_activity.front()) {
                for (std::size_t k = 0; k < r.class_activity.size(); ++k) {
                    const auto s = class_similarity(r, cls, 0, k);
                    f.out() << r.name << ',' << cls << ',' << k << ',' << (s ? fmt(*s) : "") << '\n';
                }
            }
        }
    }
}

} // namespace tacos
