#pragma once

// JSON mapping for the configuration types. Missing keys keep their
// defaults, so partial documents are valid configs.

#include <string>

#include <nlohmann/json.hpp>

#include "tacos/error.hpp"
#include "tacos/network.hpp"

namespace tacos {

namespace detail {

template <typename T> void read_opt(const nlohmann::json& j, const char* key, T& field)
{
    if (auto it = j.find(key); it != j.end() && !it->is_null()) {
        try {
            it->get_to(field);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config key '") + key + "': " + e.what());
        }
    }
}

template <typename T> void read_opt(const nlohmann::json& j, const char* key, std::optional<T>& field)
{
    if (auto it = j.find(key); it != j.end()) {
        if (it->is_null()) {
            field.reset();
        } else {
            T v{};
            read_opt(j, key, v);
            field = v;
        }
    }
}

} // namespace detail

NLOHMANN_JSON_SERIALIZE_ENUM(ErrorCompartment, {
                                                   {ErrorCompartment::leaky, "leaky"},
                                                   {ErrorCompartment::leak_free, "leak_free"},
                                               })

NLOHMANN_JSON_SERIALIZE_ENUM(ConsolidationMode, {
                                                    {ConsolidationMode::per_sample, "per_sample"},
                                                    {ConsolidationMode::per_step, "per_step"},
                                                })

inline void to_json(nlohmann::json& j, const NeuronParams& p)
{
    j = {{"tau_mem", p.tau_mem}, {"tau_syn", p.tau_syn}, {"tau_u", p.tau_u}, {"tau_tr", p.tau_tr},
         {"r_mem", p.r_mem},     {"r_u", p.r_u},         {"v_rest", p.v_rest}, {"v_th", p.v_th},
         {"t_refrac", p.t_refrac}};
}

inline void from_json(const nlohmann::json& j, NeuronParams& p)
{
    using detail::read_opt;
    read_opt(j, "tau_mem", p.tau_mem);
    read_opt(j, "tau_syn", p.tau_syn);
    read_opt(j, "tau_u", p.tau_u);
    read_opt(j, "tau_tr", p.tau_tr);
    read_opt(j, "r_mem", p.r_mem);
    read_opt(j, "r_u", p.r_u);
    read_opt(j, "v_rest", p.v_rest);
    read_opt(j, "v_th", p.v_th);
    read_opt(j, "t_refrac", p.t_refrac);
}

inline void to_json(nlohmann::json& j, const ErrorNeuronParams& p)
{
    j = {{"tau_me", p.tau_me}, {"r_me", p.r_me}, {"v_th_err", p.v_th_err}};
}

inline void from_json(const nlohmann::json& j, ErrorNeuronParams& p)
{
    detail::read_opt(j, "tau_me", p.tau_me);
    detail::read_opt(j, "r_me", p.r_me);
    detail::read_opt(j, "v_th_err", p.v_th_err);
}

inline void to_json(nlohmann::json& j, const PlasticitySettings& s)
{
    j = {{"eta", s.eta},
         {"alpha", s.alpha},
         {"i_min", s.i_min},
         {"i_max", s.i_max},
         {"t_cons", s.t_cons},
         {"delta_m_hidden", s.delta_m_hidden},
         {"delta_m_output", s.delta_m_output},
         {"m_max", s.m_max},
         {"m_th_input", s.m_th_input},
         {"m_th_hidden", s.m_th_hidden},
         {"m_th_output", s.m_th_output},
         {"fixed_m", s.fixed_m ? nlohmann::json(*s.fixed_m) : nlohmann::json(nullptr)},
         {"consolidation", s.consolidation}};
}

inline void from_json(const nlohmann::json& j, PlasticitySettings& s)
{
    using detail::read_opt;
    read_opt(j, "eta", s.eta);
    read_opt(j, "alpha", s.alpha);
    read_opt(j, "i_min", s.i_min);
    read_opt(j, "i_max", s.i_max);
    read_opt(j, "t_cons", s.t_cons);
    read_opt(j, "delta_m_hidden", s.delta_m_hidden);
    read_opt(j, "delta_m_output", s.delta_m_output);
    read_opt(j, "m_max", s.m_max);
    read_opt(j, "m_th_input", s.m_th_input);
    read_opt(j, "m_th_hidden", s.m_th_hidden);
    read_opt(j, "m_th_output", s.m_th_output);
    read_opt(j, "fixed_m", s.fixed_m);
    read_opt(j, "consolidation", s.consolidation);
}

inline void to_json(nlohmann::json& j, const NetworkConfig& c)
{
    j = {{"layer_sizes", c.layer_sizes},
         {"dt", c.dt},
         {"hidden", c.hidden},
         {"output", c.output},
         {"input_tau_syn", c.input_tau_syn},
         {"input_tau_tr", c.input_tau_tr},
         {"error_compartment", c.error_compartment},
         {"error", c.error},
         {"plasticity", c.plasticity},
         {"init_scale", c.init_scale},
         {"feedback_min", c.feedback_min},
         {"feedback_max", c.feedback_max},
         {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c)
{
    using detail::read_opt;
    read_opt(j, "layer_sizes", c.layer_sizes);
    read_opt(j, "dt", c.dt);
    if (j.contains("hidden")) {
        from_json(j.at("hidden"), c.hidden);
    }
    if (j.contains("output")) {
        from_json(j.at("output"), c.output);
    }
    read_opt(j, "input_tau_syn", c.input_tau_syn);
    read_opt(j, "input_tau_tr", c.input_tau_tr);
    read_opt(j, "error_compartment", c.error_compartment);
    if (j.contains("error")) {
        from_json(j.at("error"), c.error);
    }
    if (j.contains("plasticity")) {
        from_json(j.at("plasticity"), c.plasticity);
    }
    read_opt(j, "init_scale", c.init_scale);
    read_opt(j, "feedback_min", c.feedback_min);
    read_opt(j, "feedback_max", c.feedback_max);
    read_opt(j, "seed", c.seed);
}

} // namespace tacos
