#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "tacos/error.hpp"
#include "tacos/idx.hpp"
#include "tacos/rng.hpp"

namespace tacos {

using ClassPair = std::array<std::uint8_t, 2>;

/// One domain-incremental task: two classes sharing the two-neuron head.
/// The first class of the pair maps to output 0, the second to output 1.
struct Task {
    ClassPair classes{};
    std::vector<std::size_t> train; // indices into the training dataset
    std::vector<std::size_t> test;  // indices into the test dataset

    std::size_t head(std::uint8_t label) const
    {
        if (label == classes[0]) {
            return 0;
        }
        if (label == classes[1]) {
            return 1;
        }
        throw std::invalid_argument("label " + std::to_string(label) + " is not part of this task");
    }
};

struct TaskSequence {
    std::vector<Task> tasks;

    std::size_t size() const { return tasks.size(); }
    const Task& operator[](std::size_t i) const { return tasks[i]; }
};

/// Class orderings used to study how task similarity affects retention.
/// Order 1 is the conventional split-MNIST partition.
inline std::vector<ClassPair> ordering_preset(int order)
{
    switch (order) {
    case 1:
        return {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}};
    case 2:
        return {{0, 1}, {3, 2}, {5, 4}, {6, 7}, {9, 8}};
    case 3:
        return {{4, 0}, {6, 8}, {7, 3}, {9, 2}, {1, 5}};
    case 4:
        return {{0, 5}, {1, 7}, {4, 6}, {8, 9}, {3, 2}};
    case 5:
        return {{0, 5}, {1, 8}, {3, 2}, {6, 4}, {9, 7}};
    default:
        throw ConfigError("unknown ordering preset " + std::to_string(order) + " (expected 1-5)");
    }
}

/// Splits train/test datasets into one task per class pair. Training
/// indices of each task are shuffled under `seed`; test indices keep file order.
inline TaskSequence build_split_tasks(const Dataset& train, const Dataset& test, const std::vector<ClassPair>& pairs,
                                      std::uint64_t seed)
{
    if (pairs.empty()) {
        throw ConfigError("task ordering is empty");
    }
    std::set<std::uint8_t> seen;
    for (const auto& pair : pairs) {
        for (auto c : pair) {
            if (!seen.insert(c).second) {
                throw ConfigError("class " + std::to_string(c) + " appears in more than one task");
            }
        }
    }
    auto present = [](const Dataset& ds, std::uint8_t c) {
        return std::find(ds.labels.begin(), ds.labels.end(), c) != ds.labels.end();
    };
    for (auto c : seen) {
        if (!present(train, c) || !present(test, c)) {
            throw DataError("class " + std::to_string(c) + " is missing from the dataset");
        }
    }

    TaskSequence seq;
    for (std::size_t t = 0; t < pairs.size(); ++t) {
        Task task;
        task.classes = pairs[t];
        for (std::size_t i = 0; i < train.size(); ++i) {
            if (train.labels[i] == pairs[t][0] || train.labels[i] == pairs[t][1]) {
                task.train.push_back(i);
            }
        }
        for (std::size_t i = 0; i < test.size(); ++i) {
            if (test.labels[i] == pairs[t][0] || test.labels[i] == pairs[t][1]) {
                task.test.push_back(i);
            }
        }
        rng::SplitMix64 gen(rng::key(seed, t));
        rng::shuffle(std::span<std::size_t>(task.train), gen);
        seq.tasks.push_back(std::move(task));
    }
    return seq;
}

/// Class-balanced subsample of each task's training indices: half of
/// `samples_per_task` from each class (the first class takes the odd one).
/// Test indices are untouched.
inline TaskSequence reduced_subset(const TaskSequence& seq, const Dataset& train, std::size_t samples_per_task,
                                   std::uint64_t seed)
{
    TaskSequence out = seq;
    for (std::size_t t = 0; t < seq.size(); ++t) {
        const auto& task = seq[t];
        if (samples_per_task >= task.train.size()) {
            if (samples_per_task > task.train.size()) {
                throw ConfigError("task " + std::to_string(t) + " has only " + std::to_string(task.train.size()) +
                                  " training samples, " + std::to_string(samples_per_task) + " requested");
            }
            continue;
        }
        const std::array<std::size_t, 2> want{samples_per_task - samples_per_task / 2, samples_per_task / 2};
        std::array<std::vector<std::size_t>, 2> by_class;
        for (auto i : task.train) {
            by_class[task.head(train.labels[i])].push_back(i);
        }
        std::vector<std::size_t> picked;
        for (std::size_t h = 0; h < 2; ++h) {
            if (by_class[h].size() < want[h]) {
                throw ConfigError("task " + std::to_string(t) + " class " + std::to_string(task.classes[h]) +
                                  " has only " + std::to_string(by_class[h].size()) + " samples, " +
                                  std::to_string(want[h]) + " requested");
            }
            std::sort(by_class[h].begin(), by_class[h].end());
            rng::SplitMix64 gen(rng::key(seed, t, h));
            rng::shuffle(std::span<std::size_t>(by_class[h]), gen);
            picked.insert(picked.end(), by_class[h].begin(), by_class[h].begin() + want[h]);
        }
        rng::SplitMix64 gen(rng::key(seed, t, 2));
        rng::shuffle(std::span<std::size_t>(picked), gen);
        out.tasks[t].train = std::move(picked);
    }
    return out;
}

} // namespace tacos
