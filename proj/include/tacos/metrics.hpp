#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tacos/plasticity.hpp"

namespace tacos {

/// R[t][k]: accuracy on task t after training through task k (0-based).
/// b[t]: accuracy of the untrained model on task t.
class AccuracyMatrix {
  public:
    AccuracyMatrix() = default;
    explicit AccuracyMatrix(std::size_t n) : n_(n), r_(n * n), b_(n) {}

    std::size_t size() const { return n_; }

    void set(std::size_t task, std::size_t after, double acc)
    {
        check_range(acc);
        r_.at(index(task, after)) = acc;
    }
    void set_baseline(std::size_t task, double acc)
    {
        check_range(acc);
        b_.at(task) = acc;
    }

    std::optional<double> get(std::size_t task, std::size_t after) const { return r_.at(index(task, after)); }
    std::optional<double> baseline(std::size_t task) const { return b_.at(task); }

    double at(std::size_t task, std::size_t after) const
    {
        const auto v = get(task, after);
        if (!v) {
            throw std::out_of_range("R[" + std::to_string(task) + "][" + std::to_string(after) + "] not recorded");
        }
        return *v;
    }
    double baseline_at(std::size_t task) const
    {
        const auto v = baseline(task);
        if (!v) {
            throw std::out_of_range("baseline accuracy of task " + std::to_string(task) + " not recorded");
        }
        return *v;
    }

    bool column_complete(std::size_t after) const
    {
        for (std::size_t t = 0; t < n_; ++t) {
            if (!get(t, after)) {
                return false;
            }
        }
        return true;
    }

    /// Number of leading complete columns.
    std::size_t completed_tasks() const
    {
        std::size_t k = 0;
        while (k < n_ && column_complete(k)) {
            ++k;
        }
        return k;
    }

    friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

  private:
    std::size_t index(std::size_t task, std::size_t after) const
    {
        if (task >= n_ || after >= n_) {
            throw std::out_of_range("accuracy matrix index out of range");
        }
        return task * n_ + after;
    }
    static void check_range(double acc)
    {
        if (!(acc >= 0.0 && acc <= 1.0)) {
            throw std::invalid_argument("accuracy must lie in [0, 1]");
        }
    }

    std::size_t n_ = 0;
    std::vector<std::optional<double>> r_;
    std::vector<std::optional<double>> b_;
};

/// Mean accuracy over tasks 0..k after training task k.
inline double mean_accuracy(const AccuracyMatrix& r, std::size_t k)
{
    double sum = 0.0;
    for (std::size_t t = 0; t <= k; ++t) {
        const auto v = r.get(t, k);
        if (!v) {
            throw std::invalid_argument("mean_accuracy: column " + std::to_string(k) + " incomplete");
        }
        sum += *v;
    }
    return sum / static_cast<double>(k + 1);
}

enum class BwtForm {
    change,     // mean of R[t][k] - R[t][t]
    as_printed, // mean of R[t][k], no subtraction
};

/// Backward transfer after task k >= 1 over the earlier tasks t < k.
inline double backward_transfer(const AccuracyMatrix& r, std::size_t k, BwtForm form = BwtForm::change)
{
    if (k < 1) {
        throw std::invalid_argument("backward_transfer needs at least two tasks");
    }
    double sum = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
        const auto now = r.get(t, k);
        const auto then = r.get(t, t);
        if (!now || !then) {
            throw std::invalid_argument("backward_transfer: required accuracies missing");
        }
        sum += form == BwtForm::change ? *now - *then : *now;
    }
    return sum / static_cast<double>(k);
}

/// Forward transfer after task k over the tasks not yet trained, relative
/// to the untrained baseline.
inline double forward_transfer(const AccuracyMatrix& r, std::size_t k)
{
    const auto n = r.size();
    if (k + 1 >= n) {
        throw std::invalid_argument("forward_transfer undefined after the final task");
    }
    double sum = 0.0;
    for (std::size_t t = k + 1; t < n; ++t) {
        const auto v = r.get(t, k);
        const auto b = r.baseline(t);
        if (!v || !b) {
            throw std::invalid_argument("forward_transfer: required accuracies missing");
        }
        sum += *v - *b;
    }
    return sum / static_cast<double>(n - k - 1);
}

/// Accuracy on the most recently trained task.
inline double single_task_accuracy(const AccuracyMatrix& r, std::size_t k) { return r.at(k, k); }

/// Persistent learned state of a model, in bits, per task it has seen.
struct MemoryLedger {
    std::vector<std::uint64_t> per_task_bits;
    std::uint64_t baseline_bits = 0;
};

/// Which persistent per-synapse and per-neuron quantities a model carries.
struct StateComponents {
    bool reference_weight = false;
    bool metaplastic_state = false; // also implies per-neuron traces
    bool constant_m = false;        // one shared m for the whole model
};

inline constexpr unsigned weight_bits = 32;
// m only ever moves in delta_m steps up to m_max, so a 16-bit step counter
// holds it exactly.
inline constexpr unsigned metaplastic_bits = 16;
inline constexpr unsigned trace_bits = 32;

/// Bits of persistent learned state for a feedforward model.
inline std::uint64_t model_memory_bits(std::span<const std::size_t> layer_sizes, StateComponents c)
{
    std::uint64_t synapses = 0;
    std::uint64_t neurons = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        synapses += std::uint64_t{layer_sizes[l]} * layer_sizes[l + 1];
    }
    for (auto n : layer_sizes) {
        neurons += n;
    }
    std::uint64_t bits = synapses * weight_bits;
    if (c.reference_weight) {
        bits += synapses * weight_bits;
    }
    if (c.metaplastic_state) {
        bits += synapses * metaplastic_bits + neurons * trace_bits;
    }
    if (c.constant_m) {
        bits += weight_bits;
    }
    return bits;
}

/// Mean per-task memory in units of the baseline model's memory. Not clamped.
inline double memory_overhead(const MemoryLedger& ledger)
{
    if (ledger.per_task_bits.empty() || ledger.baseline_bits == 0) {
        throw std::invalid_argument("memory ledger needs tasks and a non-zero baseline");
    }
    double sum = 0.0;
    for (auto bits : ledger.per_task_bits) {
        sum += static_cast<double>(bits) / static_cast<double>(ledger.baseline_bits);
    }
    return sum / static_cast<double>(ledger.per_task_bits.size());
}

/// Cosine similarity of two mean-activity vectors.
inline double representation_similarity(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) {
        throw std::invalid_argument("activity vectors differ in length");
    }
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        throw std::invalid_argument("cosine similarity of a zero activity vector is undefined");
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Mean |w_after - w_before| over one weight block.
inline double mean_weight_change(std::span<const SynapseState> before, std::span<const SynapseState> after)
{
    if (before.size() != after.size()) {
        throw std::invalid_argument("weight snapshots differ in shape");
    }
    if (before.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) {
        sum += std::abs(after[i].w - before[i].w);
    }
    return sum / static_cast<double>(before.size());
}

/// Per-block weight snapshot of a whole network.
using WeightSnapshot = std::vector<std::vector<SynapseState>>;

inline double mean_weight_change(const WeightSnapshot& before, const WeightSnapshot& after, std::size_t block)
{
    if (before.size() != after.size() || block >= before.size()) {
        throw std::invalid_argument("weight snapshots differ in block structure");
    }
    return mean_weight_change(std::span<const SynapseState>(before[block]), std::span<const SynapseState>(after[block]));
}

} // namespace tacos
