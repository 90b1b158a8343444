#pragma once

#include <algorithm>

#include "tacos/error.hpp"

namespace tacos {

/// How the second (error) compartment integrates its feedback.
enum class ErrorCompartment {
    leaky,     // tau_u dU/dt = -U + E * r_u
    leak_free, // U += dt/tau_u * E * r_u
};

/// Parameters of a leaky integrate-and-fire neuron with an error compartment.
/// Times are in ms, potentials in mV. Resistances are dimensionless gains:
/// only the products current * gain enter the dynamics.
struct NeuronParams {
    double tau_mem = 15.0;
    double tau_syn = 25.0;
    double tau_u = 15.0;
    double tau_tr = 50.0;
    double r_mem = 1.0;
    double r_u = 5.0;
    double v_rest = 0.0;
    double v_th = 1.0;
    double t_refrac = 4.0;
    double dt = 1.0;
    ErrorCompartment error_mode = ErrorCompartment::leaky;

    static NeuronParams hidden() { return {}; }

    static NeuronParams output()
    {
        NeuronParams p;
        p.tau_mem = 25.0;
        p.r_mem = 5.0;
        p.v_th = 2.0;
        return p;
    }

    void validate() const
    {
        if (!(tau_mem > 0 && tau_syn > 0 && tau_u > 0 && tau_tr > 0)) {
            throw ConfigError("neuron time constants must be positive");
        }
        if (!(dt > 0)) {
            throw ConfigError("neuron dt must be positive");
        }
        if (dt > std::min({tau_mem, tau_syn, tau_u, tau_tr})) {
            throw ConfigError("neuron dt must not exceed the smallest time constant");
        }
        if (!(v_th > v_rest)) {
            throw ConfigError("neuron threshold must lie above the resting potential");
        }
        if (t_refrac < 0) {
            throw ConfigError("refractory period must be non-negative");
        }
    }
};

struct NeuronState {
    double v = 0.0;
    double i_syn = 0.0;
    double u = 0.0;
    double refrac_remaining = 0.0;
    double trace = 0.0;

    friend bool operator==(const NeuronState&, const NeuronState&) = default;
};

/// Integrate-and-fire neuron encoding one sign of the output error.
struct ErrorNeuronParams {
    double tau_me = 10.0;
    double r_me = 25.0;
    double v_th_err = 2.5;
    double dt = 1.0;

    void validate() const
    {
        if (!(tau_me > 0)) {
            throw ConfigError("error neuron time constant must be positive");
        }
        if (!(v_th_err > 0)) {
            throw ConfigError("error neuron threshold must be positive");
        }
        if (!(dt > 0) || dt > tau_me) {
            throw ConfigError("error neuron dt must be in (0, tau_me]");
        }
    }
};

struct ErrorNeuronState {
    double v = 0.0;

    friend bool operator==(const ErrorNeuronState&, const ErrorNeuronState&) = default;
};

struct FireResult {
    NeuronState state;
    bool spike = false;
};

struct ErrorFireResult {
    ErrorNeuronState state;
    bool spike = false;
};

/// I' = I + dt/tau_syn * (sum_j w_j S_j - I)
[[nodiscard]] inline NeuronState integrate_current(NeuronState s, const NeuronParams& p,
                                                   double weighted_spike_sum)
{
    s.i_syn += (p.dt / p.tau_syn) * (weighted_spike_sum - s.i_syn);
    return s;
}

/// V' = V + dt/tau_mem * ((V_rest - V) + I R). Caller skips refractory neurons.
[[nodiscard]] inline NeuronState integrate_membrane(NeuronState s, const NeuronParams& p)
{
    s.v += (p.dt / p.tau_mem) * ((p.v_rest - s.v) + s.i_syn * p.r_mem);
    return s;
}

/// Threshold test, reset and refractory bookkeeping, followed by the trace
/// decay that every neuron undergoes each step.
[[nodiscard]] inline FireResult fire_and_reset(NeuronState s, const NeuronParams& p)
{
    bool spike = false;
    if (s.refrac_remaining > 0) {
        s.refrac_remaining = std::max(0.0, s.refrac_remaining - p.dt);
        s.v = 0.0;
    } else if (s.v >= p.v_th) {
        spike = true;
        s.v = 0.0;
        s.refrac_remaining = p.t_refrac;
        s.trace += 1.0;
    }
    s.trace *= 1.0 - p.dt / p.tau_tr;
    return {s, spike};
}

[[nodiscard]] inline NeuronState integrate_error_compartment(NeuronState s, const NeuronParams& p,
                                                             double err_signal)
{
    if (p.error_mode == ErrorCompartment::leaky) {
        s.u += (p.dt / p.tau_u) * (-s.u + err_signal * p.r_u);
    } else {
        s.u += (p.dt / p.tau_u) * (err_signal * p.r_u);
    }
    return s;
}

/// Leaky integration of a signed error current, clamped at zero from below so
/// that each population only ever represents one error sign.
[[nodiscard]] inline ErrorFireResult error_neuron_step(ErrorNeuronState s, const ErrorNeuronParams& p,
                                                       double i_err)
{
    s.v += (p.dt / p.tau_me) * (-s.v + i_err * p.r_me);
    s.v = std::max(0.0, s.v);
    if (s.v >= p.v_th_err) {
        s.v = 0.0;
        return {s, true};
    }
    return {s, false};
}

} // namespace tacos
