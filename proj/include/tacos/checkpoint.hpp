#pragma once

// Binary network checkpoints.
//
// Layout (all integers little-endian u64, doubles as their IEEE-754 bit
// pattern in a little-endian u64):
//   "TACOSNET" | version | config JSON (length + bytes)
//   per block:        count, (w, w_ref, m) * count
//   per hidden layer: count, fp feedback * count, count, fn feedback * count
//   per layer >= 1:   count, (v, i_syn, u, refrac_remaining, trace) * count
//   input traces:     count, values
//   error neurons:    count, fp v * count, fn v * count
// Round trips are bit-exact.

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "tacos/config_json.hpp"
#include "tacos/error.hpp"
#include "tacos/network.hpp"

namespace tacos {

namespace detail {

inline constexpr std::array<char, 8> checkpoint_magic{'T', 'A', 'C', 'O', 'S', 'N', 'E', 'T'};
inline constexpr std::uint64_t checkpoint_version = 1;

inline void put_u64(std::ostream& os, std::uint64_t v)
{
    std::array<char, 8> buf{};
    for (int i = 0; i < 8; ++i) {
        buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    }
    os.write(buf.data(), buf.size());
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t get_u64(std::istream& is)
{
    std::array<unsigned char, 8> buf{};
    if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size())) {
        throw DataError("checkpoint truncated");
    }
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = (v << 8) | buf[i];
    }
    return v;
}

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

inline void expect_count(std::istream& is, std::size_t expected, const char* what)
{
    const auto n = get_u64(is);
    if (n != expected) {
        throw DataError(std::string("checkpoint ") + what + " count does not match its config");
    }
}

} // namespace detail

inline void write_network(std::ostream& os, const Network& net)
{
    using namespace detail;
    os.write(checkpoint_magic.data(), checkpoint_magic.size());
    put_u64(os, checkpoint_version);
    const std::string cfg = nlohmann::json(net.config_).dump();
    put_u64(os, cfg.size());
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    for (const auto& blk : net.blocks_) {
        put_u64(os, blk.size());
        for (const auto& s : blk) {
            put_f64(os, s.w);
            put_f64(os, s.w_ref);
            put_f64(os, s.m);
        }
    }
    for (std::size_t h = 0; h < net.feedback_fp_.size(); ++h) {
        for (const auto* fb : {&net.feedback_fp_[h], &net.feedback_fn_[h]}) {
            put_u64(os, fb->size());
            for (double x : *fb) {
                put_f64(os, x);
            }
        }
    }
    for (std::size_t l = 1; l < net.neurons_.size(); ++l) {
        put_u64(os, net.neurons_[l].size());
        for (const auto& n : net.neurons_[l]) {
            put_f64(os, n.v);
            put_f64(os, n.i_syn);
            put_f64(os, n.u);
            put_f64(os, n.refrac_remaining);
            put_f64(os, n.trace);
        }
    }
    put_u64(os, net.input_traces_.size());
    for (double x : net.input_traces_) {
        put_f64(os, x);
    }
    put_u64(os, net.fp_.size());
    for (const auto& e : net.fp_) {
        put_f64(os, e.v);
    }
    for (const auto& e : net.fn_) {
        put_f64(os, e.v);
    }
    if (!os) {
        throw RuntimeError("failed writing checkpoint");
    }
}

inline Network read_network(std::istream& is)
{
    using namespace detail;
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != checkpoint_magic) {
        throw DataError("not a network checkpoint (bad magic)");
    }
    if (get_u64(is) != checkpoint_version) {
        throw DataError("unsupported checkpoint version");
    }
    const auto cfg_len = get_u64(is);
    if (cfg_len > (1u << 24)) {
        throw DataError("checkpoint config block is implausibly large");
    }
    std::string cfg(cfg_len, '\0');
    if (!is.read(cfg.data(), static_cast<std::streamsize>(cfg_len))) {
        throw DataError("checkpoint truncated in config block");
    }
    NetworkConfig config;
    try {
        config = nlohmann::json::parse(cfg).get<NetworkConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint config is not valid JSON: ") + e.what());
    }

    // Build normally so derived parameters and buffers exist, then overwrite
    // every persistent field.
    Network net(config);
    for (auto& blk : net.blocks_) {
        expect_count(is, blk.size(), "weight block");
        for (auto& s : blk) {
            s.w = get_f64(is);
            s.w_ref = get_f64(is);
            s.m = get_f64(is);
        }
    }
    for (std::size_t h = 0; h < net.feedback_fp_.size(); ++h) {
        for (auto* fb : {&net.feedback_fp_[h], &net.feedback_fn_[h]}) {
            expect_count(is, fb->size(), "feedback");
            for (double& x : *fb) {
                x = get_f64(is);
            }
        }
    }
    for (std::size_t l = 1; l < net.neurons_.size(); ++l) {
        expect_count(is, net.neurons_[l].size(), "neuron");
        for (auto& n : net.neurons_[l]) {
            n.v = get_f64(is);
            n.i_syn = get_f64(is);
            n.u = get_f64(is);
            n.refrac_remaining = get_f64(is);
            n.trace = get_f64(is);
        }
    }
    expect_count(is, net.input_traces_.size(), "input trace");
    for (double& x : net.input_traces_) {
        x = get_f64(is);
    }
    expect_count(is, net.fp_.size(), "error neuron");
    for (auto& e : net.fp_) {
        e.v = get_f64(is);
    }
    for (auto& e : net.fn_) {
        e.v = get_f64(is);
    }
    return net;
}

inline void save_checkpoint(const Network& net, const std::filesystem::path& path)
{
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) {
            throw RuntimeError("cannot open checkpoint for writing: " + tmp.string());
        }
        write_network(os, net);
    }
    std::filesystem::rename(tmp, path);
}

inline Network load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw DataError("cannot open checkpoint: " + path.string());
    }
    return read_network(is);
}

} // namespace tacos
