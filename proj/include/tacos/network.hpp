#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tacos/error.hpp"
#include "tacos/neuron.hpp"
#include "tacos/plasticity.hpp"
#include "tacos/rng.hpp"

namespace tacos {

using SpikeVector = std::vector<std::uint8_t>;

/// When the reference weights follow w.
enum class ConsolidationMode {
    per_sample, // once per sample with the sample duration as step
    per_step,   // every timestep with step dt
};

/// Network-wide learning-rule settings; expanded into per-block
/// PlasticityParams by NetworkConfig::block_params().
struct PlasticitySettings {
    double eta = 1e-2;
    double alpha = 5e-4;
    double i_min = -11.0;
    double i_max = 13.0;
    double t_cons = 25.0; // s
    double delta_m_hidden = 0.04;
    double delta_m_output = 0.004;
    double m_max = 25.0;
    double m_th_input = 6.0;
    double m_th_hidden = 5.0;
    double m_th_output = 2.0;
    // Fixed-metaplasticity baseline: every synapse holds this m forever.
    std::optional<double> fixed_m;
    ConsolidationMode consolidation = ConsolidationMode::per_sample;
};

struct NetworkConfig {
    std::vector<std::size_t> layer_sizes{784, 200, 2};
    double dt = 1.0; // ms
    NeuronParams hidden = NeuronParams::hidden();
    NeuronParams output = NeuronParams::output();
    double input_tau_syn = 10.0; // synapses leaving the input layer
    double input_tau_tr = 50.0;  // traces of the input spike trains
    ErrorCompartment error_compartment = ErrorCompartment::leaky;
    ErrorNeuronParams error;
    PlasticitySettings plasticity;
    // Forward weights ~ U(-s, s) with s = init_scale / sqrt(fan_in).
    double init_scale = 1.0;
    double feedback_min = -1.0;
    double feedback_max = 1.0;
    std::uint64_t seed = 1;

    std::size_t num_layers() const { return layer_sizes.size(); }
    std::size_t num_blocks() const { return layer_sizes.size() - 1; }
    std::size_t num_hidden() const { return layer_sizes.size() - 2; }
    std::size_t input_size() const { return layer_sizes.front(); }
    std::size_t output_size() const { return layer_sizes.back(); }

    /// Neuron parameters of layer `layer` (1 = first hidden, last = output).
    NeuronParams layer_params(std::size_t layer) const
    {
        NeuronParams p = (layer + 1 == num_layers()) ? output : hidden;
        if (layer == 1) {
            p.tau_syn = input_tau_syn;
        }
        p.dt = dt;
        p.error_mode = error_compartment;
        return p;
    }

    ErrorNeuronParams error_params() const
    {
        ErrorNeuronParams p = error;
        p.dt = dt;
        return p;
    }

    double trace_threshold(std::size_t layer) const
    {
        if (layer == 0) {
            return plasticity.m_th_input;
        }
        return layer + 1 == num_layers() ? plasticity.m_th_output : plasticity.m_th_hidden;
    }

    /// Learning-rule parameters of the block feeding layer `block + 1`.
    PlasticityParams block_params(std::size_t block) const
    {
        const auto& s = plasticity;
        PlasticityParams p;
        p.eta = s.eta;
        p.alpha = s.alpha;
        p.i_min = s.i_min;
        p.i_max = s.i_max;
        p.t_cons = s.t_cons;
        p.delta_m = (block + 2 == num_layers()) ? s.delta_m_output : s.delta_m_hidden;
        p.m_max = s.m_max;
        p.m_th_pre = trace_threshold(block);
        p.m_th_post = trace_threshold(block + 1);
        p.dt = dt;
        return p;
    }

    void validate() const
    {
        if (layer_sizes.size() < 3) {
            throw ConfigError("network needs an input layer, at least one hidden layer and an output layer");
        }
        for (auto n : layer_sizes) {
            if (n == 0) {
                throw ConfigError("layer sizes must be positive");
            }
        }
        if (!(input_tau_tr > 0) || dt > input_tau_tr) {
            throw ConfigError("input trace time constant must be positive and >= dt");
        }
        if (!(feedback_min <= feedback_max)) {
            throw ConfigError("feedback range must satisfy min <= max");
        }
        if (!(init_scale >= 0)) {
            throw ConfigError("init_scale must be non-negative");
        }
        if (plasticity.fixed_m && !(*plasticity.fixed_m >= 0)) {
            throw ConfigError("fixed_m must be non-negative");
        }
        for (std::size_t l = 1; l < num_layers(); ++l) {
            layer_params(l).validate();
        }
        error_params().validate();
        for (std::size_t b = 0; b < num_blocks(); ++b) {
            block_params(b).validate();
        }
    }
};

/// Output of a label-free presentation.
struct Prediction {
    std::size_t label = 0;
    std::vector<std::uint32_t> output_counts;
    // Spike counts of every hidden layer, concatenated.
    std::vector<std::uint32_t> hidden_counts;
};

/// Index of the largest count; ties go to the lowest index.
inline std::size_t argmax_lowest(std::span<const std::uint32_t> counts)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < counts.size(); ++i) {
        if (counts[i] > counts[best]) {
            best = i;
        }
    }
    return best;
}

class Network;
void write_network(std::ostream& os, const Network& net);
Network read_network(std::istream& is);

/// Layered feedforward spiking network trained with error-driven random
/// feedback. Weight blocks are stored pre-major: block b holds
/// layer_sizes[b] rows of layer_sizes[b+1] synapses.
class Network {
  public:
    explicit Network(NetworkConfig config) : config_(std::move(config))
    {
        config_.validate();
        const auto L = config_.num_layers();
        for (std::size_t l = 1; l < L; ++l) {
            params_.push_back(config_.layer_params(l));
        }
        for (std::size_t b = 0; b < config_.num_blocks(); ++b) {
            block_params_.push_back(config_.block_params(b));
        }

        const auto weight_seed = rng::stream_seed(config_.seed, rng::Stream::weights);
        const double m0 = config_.plasticity.fixed_m.value_or(0.0);
        for (std::size_t b = 0; b < config_.num_blocks(); ++b) {
            const auto fan_in = config_.layer_sizes[b];
            const double bound = config_.init_scale / std::sqrt(static_cast<double>(fan_in));
            rng::SplitMix64 gen(rng::key(weight_seed, b));
            std::vector<SynapseState> block(fan_in * config_.layer_sizes[b + 1]);
            for (auto& syn : block) {
                syn.w = gen.uniform(-bound, bound);
                syn.w_ref = syn.w;
                syn.m = m0;
            }
            blocks_.push_back(std::move(block));
        }

        const auto fb_seed = rng::stream_seed(config_.seed, rng::Stream::feedback);
        const auto O = config_.output_size();
        for (std::size_t h = 0; h < config_.num_hidden(); ++h) {
            const auto H = config_.layer_sizes[h + 1];
            for (int sign = 0; sign < 2; ++sign) {
                rng::SplitMix64 gen(rng::key(fb_seed, h, sign));
                std::vector<double> fb(O * H);
                for (auto& x : fb) {
                    x = gen.uniform(config_.feedback_min, config_.feedback_max);
                }
                (sign == 0 ? feedback_fp_ : feedback_fn_).push_back(std::move(fb));
            }
        }

        neurons_.resize(L);
        spikes_.resize(L);
        spikes_[0].assign(config_.input_size(), 0);
        input_traces_.assign(config_.input_size(), 0.0);
        for (std::size_t l = 1; l < L; ++l) {
            neurons_[l].assign(config_.layer_sizes[l], NeuronState{});
            spikes_[l].assign(config_.layer_sizes[l], 0);
        }
        reset_dynamics();
        fp_spikes_.assign(O, 0);
        fn_spikes_.assign(O, 0);
    }

    const NetworkConfig& config() const { return config_; }
    std::size_t num_layers() const { return config_.num_layers(); }
    std::size_t num_blocks() const { return config_.num_blocks(); }
    std::size_t layer_size(std::size_t l) const { return config_.layer_sizes[l]; }

    std::span<const SynapseState> block(std::size_t b) const { return blocks_.at(b); }
    std::span<SynapseState> block(std::size_t b) { return blocks_.at(b); }

    SynapseState& synapse(std::size_t b, std::size_t pre, std::size_t post)
    {
        return blocks_.at(b).at(pre * layer_size(b + 1) + post);
    }
    const SynapseState& synapse(std::size_t b, std::size_t pre, std::size_t post) const
    {
        return blocks_.at(b).at(pre * layer_size(b + 1) + post);
    }

    /// Feedback from the output error neurons to hidden layer `h` (0-based),
    /// laid out [output][hidden neuron].
    std::span<const double> feedback_fp(std::size_t h) const { return feedback_fp_.at(h); }
    std::span<const double> feedback_fn(std::size_t h) const { return feedback_fn_.at(h); }

    /// Neuron states of layer l >= 1.
    std::span<const NeuronState> neurons(std::size_t l) const { return neurons_.at(l); }
    std::span<NeuronState> neurons(std::size_t l) { return neurons_.at(l); }
    std::span<const double> input_traces() const { return input_traces_; }
    std::span<double> input_traces() { return input_traces_; }
    std::span<const ErrorNeuronState> fp_neurons() const { return fp_; }
    std::span<const ErrorNeuronState> fn_neurons() const { return fn_; }
    /// Spikes emitted by layer l on the most recent step.
    std::span<const std::uint8_t> spikes(std::size_t l) const { return spikes_.at(l); }
    std::span<const std::uint8_t> fp_spikes() const { return fp_spikes_; }
    std::span<const std::uint8_t> fn_spikes() const { return fn_spikes_; }

    /// Trace of neuron `i` in layer `l`, including the input layer.
    double trace(std::size_t l, std::size_t i) const
    {
        return l == 0 ? input_traces_.at(i) : neurons_.at(l).at(i).trace;
    }

    /// Advances the network by one timestep and returns the output spikes.
    /// With learning disabled the label is ignored and no synapse changes.
    std::span<const std::uint8_t> step(std::span<const std::uint8_t> input, std::span<const std::uint8_t> label,
                                       bool learning)
    {
        if (input.size() != config_.input_size()) {
            throw std::invalid_argument("input spike vector has wrong length");
        }
        if (learning && label.size() != config_.output_size()) {
            throw std::invalid_argument("label spike vector has wrong length");
        }
        forward(input);
        if (learning) {
            error_path(label);
            apply_plasticity();
        }
        return spikes_.back();
    }

    /// Per-sample learning bookkeeping: consolidation, metaplastic update,
    /// then a reset of the fast neuron state. Traces persist.
    void end_of_sample(double sample_duration_ms)
    {
        const bool per_sample = config_.plasticity.consolidation == ConsolidationMode::per_sample;
        const bool meta = !config_.plasticity.fixed_m.has_value();
        const double seconds = sample_duration_ms / 1000.0;
        for (std::size_t b = 0; b < num_blocks(); ++b) {
            const auto& pp = block_params_[b];
            const auto P = layer_size(b);
            const auto Q = layer_size(b + 1);
            auto& blk = blocks_[b];
            const auto& post = neurons_[b + 1];
            for (std::size_t j = 0; j < P; ++j) {
                const double tr_pre = trace(b, j);
                SynapseState* row = blk.data() + j * Q;
                for (std::size_t i = 0; i < Q; ++i) {
                    if (per_sample) {
                        row[i] = consolidate_reference(row[i], pp, seconds);
                    }
                    if (meta) {
                        row[i] = update_metaplastic_state(row[i], tr_pre, post[i].trace, pp);
                    }
                }
            }
        }
        reset_dynamics();
    }

    /// Returns V, I, U, refractory counters and error neurons to rest.
    void reset_dynamics()
    {
        for (std::size_t l = 1; l < num_layers(); ++l) {
            for (auto& n : neurons_[l]) {
                n.v = params_[l - 1].v_rest;
                n.i_syn = 0.0;
                n.u = 0.0;
                n.refrac_remaining = 0.0;
            }
        }
        fp_.assign(config_.output_size(), ErrorNeuronState{});
        fn_.assign(config_.output_size(), ErrorNeuronState{});
    }

    /// Label-free presentation of `steps` input frames from `source(t)`,
    /// followed by a reset of the fast state. Synapses are never touched.
    template <typename Source> Prediction predict(Source&& source, std::size_t steps)
    {
        Prediction out;
        out.output_counts.assign(config_.output_size(), 0);
        std::size_t hidden_total = 0;
        for (std::size_t l = 1; l + 1 < num_layers(); ++l) {
            hidden_total += layer_size(l);
        }
        out.hidden_counts.assign(hidden_total, 0);
        for (std::size_t t = 0; t < steps; ++t) {
            const auto& frame = source(t);
            forward(std::span<const std::uint8_t>(frame));
            std::size_t offset = 0;
            for (std::size_t l = 1; l + 1 < num_layers(); ++l) {
                const auto& s = spikes_[l];
                for (std::size_t i = 0; i < s.size(); ++i) {
                    out.hidden_counts[offset + i] += s[i];
                }
                offset += s.size();
            }
            const auto& o = spikes_.back();
            for (std::size_t i = 0; i < o.size(); ++i) {
                out.output_counts[i] += o[i];
            }
        }
        out.label = argmax_lowest(out.output_counts);
        reset_dynamics();
        return out;
    }

    friend void write_network(std::ostream& os, const Network& net);
    friend Network read_network(std::istream& is);

  private:
    void forward(std::span<const std::uint8_t> input)
    {
        std::copy(input.begin(), input.end(), spikes_[0].begin());
        const double in_decay = 1.0 - config_.dt / config_.input_tau_tr;
        for (std::size_t p = 0; p < input.size(); ++p) {
            input_traces_[p] = (input_traces_[p] + (input[p] ? 1.0 : 0.0)) * in_decay;
        }

        for (std::size_t l = 1; l < num_layers(); ++l) {
            const auto& blk = blocks_[l - 1];
            const auto& pre = spikes_[l - 1];
            const auto Q = layer_size(l);
            sums_.assign(Q, 0.0);
            for (std::size_t j = 0; j < pre.size(); ++j) {
                if (!pre[j]) {
                    continue;
                }
                const SynapseState* row = blk.data() + j * Q;
                for (std::size_t i = 0; i < Q; ++i) {
                    sums_[i] += row[i].w;
                }
            }
            const auto& p = params_[l - 1];
            auto& layer = neurons_[l];
            auto& out = spikes_[l];
            for (std::size_t i = 0; i < Q; ++i) {
                NeuronState s = integrate_current(layer[i], p, sums_[i]);
                if (s.refrac_remaining <= 0) {
                    s = integrate_membrane(s, p);
                }
                const auto fired = fire_and_reset(s, p);
                layer[i] = fired.state;
                out[i] = fired.spike ? 1 : 0;
            }
        }
    }

    void error_path(std::span<const std::uint8_t> label)
    {
        const auto O = config_.output_size();
        const auto ep = config_.error_params();
        const auto& out = spikes_.back();
        for (std::size_t i = 0; i < O; ++i) {
            const double i_err = static_cast<double>(out[i]) - static_cast<double>(label[i]);
            const auto fp = error_neuron_step(fp_[i], ep, i_err);
            const auto fn = error_neuron_step(fn_[i], ep, -i_err);
            fp_[i] = fp.state;
            fn_[i] = fn.state;
            fp_spikes_[i] = fp.spike ? 1 : 0;
            fn_spikes_[i] = fn.spike ? 1 : 0;
        }

        const auto L = num_layers();
        auto& out_layer = neurons_[L - 1];
        const auto& op = params_[L - 2];
        for (std::size_t i = 0; i < O; ++i) {
            const double e = static_cast<double>(fp_spikes_[i]) - static_cast<double>(fn_spikes_[i]);
            out_layer[i] = integrate_error_compartment(out_layer[i], op, e);
        }
        for (std::size_t h = 0; h < config_.num_hidden(); ++h) {
            const auto l = h + 1;
            const auto H = layer_size(l);
            sums_.assign(H, 0.0);
            for (std::size_t i = 0; i < O; ++i) {
                const double* fp = feedback_fp_[h].data() + i * H;
                const double* fn = feedback_fn_[h].data() + i * H;
                const double sfp = fp_spikes_[i];
                const double sfn = fn_spikes_[i];
                if (sfp == 0.0 && sfn == 0.0) {
                    continue;
                }
                for (std::size_t j = 0; j < H; ++j) {
                    sums_[j] += fp[j] * sfp - fn[j] * sfn;
                }
            }
            auto& layer = neurons_[l];
            const auto& p = params_[l - 1];
            for (std::size_t j = 0; j < H; ++j) {
                layer[j] = integrate_error_compartment(layer[j], p, sums_[j]);
            }
        }
    }

    // The combined update is applied wherever a pre or post spike gates one of its terms;
    // on all other synapses both terms vanish.
    void apply_plasticity()
    {
        const bool per_step = config_.plasticity.consolidation == ConsolidationMode::per_step;
        const double step_seconds = config_.dt / 1000.0;
        for (std::size_t b = 0; b < num_blocks(); ++b) {
            const auto& pp = block_params_[b];
            auto& blk = blocks_[b];
            const auto& pre = spikes_[b];
            const auto& post = spikes_[b + 1];
            const auto& post_n = neurons_[b + 1];
            const auto P = pre.size();
            const auto Q = post.size();
            for (std::size_t j = 0; j < P; ++j) {
                if (!pre[j]) {
                    continue;
                }
                SynapseState* row = blk.data() + j * Q;
                for (std::size_t i = 0; i < Q; ++i) {
                    row[i] = combined_update(row[i], 1.0, post[i] ? 1.0 : 0.0, post_n[i].u, post_n[i].i_syn, pp);
                }
            }
            fired_.clear();
            for (std::size_t i = 0; i < Q; ++i) {
                if (post[i]) {
                    fired_.push_back(i);
                }
            }
            if (!fired_.empty()) {
                for (std::size_t j = 0; j < P; ++j) {
                    if (pre[j]) {
                        continue;
                    }
                    SynapseState* row = blk.data() + j * Q;
                    for (const auto i : fired_) {
                        row[i] = combined_update(row[i], 0.0, 1.0, post_n[i].u, post_n[i].i_syn, pp);
                    }
                }
            }
            if (per_step) {
                for (auto& syn : blk) {
                    syn = consolidate_reference(syn, pp, step_seconds);
                }
            }
        }
    }

    NetworkConfig config_;
    std::vector<NeuronParams> params_;          // layers 1..L-1
    std::vector<PlasticityParams> block_params_;
    std::vector<std::vector<SynapseState>> blocks_;
    std::vector<std::vector<double>> feedback_fp_;
    std::vector<std::vector<double>> feedback_fn_;
    std::vector<std::vector<NeuronState>> neurons_; // index 0 unused
    std::vector<double> input_traces_;
    std::vector<ErrorNeuronState> fp_;
    std::vector<ErrorNeuronState> fn_;
    std::vector<SpikeVector> spikes_;
    SpikeVector fp_spikes_;
    SpikeVector fn_spikes_;
    std::vector<double> sums_;
    std::vector<std::size_t> fired_;
};

/// I_err = S_out - L, elementwise.
inline std::vector<double> output_error_current(std::span<const std::uint8_t> out_spikes,
                                                std::span<const std::uint8_t> label_spikes)
{
    if (out_spikes.size() != label_spikes.size()) {
        throw std::invalid_argument("output and label spike vectors differ in length");
    }
    std::vector<double> err(out_spikes.size());
    for (std::size_t i = 0; i < err.size(); ++i) {
        err[i] = static_cast<double>(out_spikes[i]) - static_cast<double>(label_spikes[i]);
    }
    return err;
}

/// Per-neuron error signals for one step: element 0 is the output layer
/// (fp - fn), element 1 + h is hidden layer h (random feedback projection).
inline std::vector<std::vector<double>> error_signals(std::span<const std::uint8_t> fp_spikes,
                                                      std::span<const std::uint8_t> fn_spikes,
                                                      const Network& net)
{
    const auto O = net.config().output_size();
    if (fp_spikes.size() != O || fn_spikes.size() != O) {
        throw std::invalid_argument("error spike vectors must match the output size");
    }
    std::vector<std::vector<double>> result;
    std::vector<double> out(O);
    for (std::size_t i = 0; i < O; ++i) {
        out[i] = static_cast<double>(fp_spikes[i]) - static_cast<double>(fn_spikes[i]);
    }
    result.push_back(std::move(out));
    for (std::size_t h = 0; h < net.config().num_hidden(); ++h) {
        const auto H = net.layer_size(h + 1);
        std::vector<double> e(H, 0.0);
        const auto fp = net.feedback_fp(h);
        const auto fn = net.feedback_fn(h);
        for (std::size_t i = 0; i < O; ++i) {
            for (std::size_t j = 0; j < H; ++j) {
                e[j] += fp[i * H + j] * fp_spikes[i] - fn[i * H + j] * fn_spikes[i];
            }
        }
        result.push_back(std::move(e));
    }
    return result;
}

} // namespace tacos
