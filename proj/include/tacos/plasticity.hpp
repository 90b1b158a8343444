#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "tacos/error.hpp"

namespace tacos {

/// One plastic connection: the effective weight, its slow reference weight
/// and the metaplastic state that scales how easily it changes.
struct SynapseState {
    double w = 0.0;
    double w_ref = 0.0;
    double m = 0.0;

    friend bool operator==(const SynapseState&, const SynapseState&) = default;
};

/// Learning-rule parameters for one weight block. `t_cons` is in seconds,
/// `dt` in ms. The trace thresholds belong to the presynaptic and
/// postsynaptic layers of the block.
struct PlasticityParams {
    double eta = 1e-2;
    double alpha = 5e-4;
    double i_min = -11.0;
    double i_max = 13.0;
    double t_cons = 25.0;
    double delta_m = 0.04;
    double m_max = 25.0;
    double m_th_pre = 6.0;
    double m_th_post = 5.0;
    double dt = 1.0;

    void validate() const
    {
        if (!(eta > 0)) {
            throw ConfigError("learning rate must be positive");
        }
        if (!(alpha >= 0)) {
            throw ConfigError("heterosynaptic decay strength must be non-negative");
        }
        if (!(i_min < i_max)) {
            throw ConfigError("boxcar bounds must satisfy i_min < i_max");
        }
        if (!(t_cons > 0)) {
            throw ConfigError("consolidation time constant must be positive");
        }
        if (!(delta_m >= 0)) {
            throw ConfigError("metaplastic increment must be non-negative");
        }
        if (!(m_max > 0)) {
            throw ConfigError("metaplastic ceiling must be positive");
        }
        if (!(dt > 0)) {
            throw ConfigError("plasticity dt must be positive");
        }
    }
};

/// exp(-|m w|): 1 for a fully plastic synapse, towards 0 as it stabilizes.
[[nodiscard]] inline double plasticity_factor(double m, double w)
{
    const double x = m * w;
    return x == 0.0 ? 1.0 : std::exp(-std::abs(x));
}

/// Surrogate gradient gate on the postsynaptic current, inclusive bounds.
[[nodiscard]] inline double boxcar(double i_post, const PlasticityParams& p)
{
    return (i_post >= p.i_min && i_post <= p.i_max) ? 1.0 : 0.0;
}

[[nodiscard]] inline double erbp_delta(double pre_spike, double u_post, double i_post,
                                       const PlasticityParams& p)
{
    return -(p.eta * pre_spike * u_post * boxcar(i_post, p));
}

[[nodiscard]] inline double heterosynaptic_delta(const SynapseState& syn, double post_spike,
                                                 const PlasticityParams& p)
{
    return -(p.alpha * (syn.w - syn.w_ref) * post_spike);
}

/// Error-driven update plus heterosynaptic drift, both scaled by the
/// plasticity factor. Only w changes.
[[nodiscard]] inline SynapseState combined_update(SynapseState syn, double pre_spike, double post_spike,
                                                  double u_post, double i_post, const PlasticityParams& p)
{
    const double inner =
        p.eta * pre_spike * u_post * boxcar(i_post, p) + p.alpha * (syn.w - syn.w_ref) * post_spike;
    if (inner == 0.0) {
        return syn;
    }
    syn.w = syn.w - plasticity_factor(syn.m, syn.w) * inner;
    return syn;
}

/// Moves w_ref towards w by step/t_cons. `step_seconds` is the simulated time
/// covered by one call: a whole sample in per-sample mode, dt otherwise.
[[nodiscard]] inline SynapseState consolidate_reference(SynapseState syn, const PlasticityParams& p,
                                                        double step_seconds)
{
    syn.w_ref = syn.w_ref + (step_seconds / p.t_cons) * (syn.w - syn.w_ref);
    return syn;
}

/// Raises m by delta_m when both the presynaptic and postsynaptic traces
/// reach their layer thresholds. m never decreases and saturates at m_max.
[[nodiscard]] inline SynapseState update_metaplastic_state(SynapseState syn, double trace_pre, double trace_post,
                                                           const PlasticityParams& p)
{
    if (trace_pre >= p.m_th_pre && trace_post >= p.m_th_post) {
        syn.m = std::min(syn.m + p.delta_m, p.m_max);
    }
    return syn;
}

} // namespace tacos
