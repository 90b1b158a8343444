#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>

#include "tacos/error.hpp"
#include "tacos/network.hpp"
#include "tacos/rng.hpp"

namespace tacos {

/// Rate coding of images and targets. Rates in Hz, times in ms.
struct SpikeEncoderConfig {
    double f_input = 250.0;
    double f_label = 200.0;
    double dt = 1.0;
    double sample_duration = 100.0;
    std::uint64_t seed = 0;

    std::size_t steps_per_sample() const { return static_cast<std::size_t>(sample_duration / dt + 0.5); }

    void validate() const
    {
        if (!(f_input >= 0 && f_label >= 0)) {
            throw ConfigError("encoder rates must be non-negative");
        }
        if (!(dt > 0)) {
            throw ConfigError("encoder dt must be positive");
        }
        if (f_input * dt > 1000.0 || f_label * dt > 1000.0) {
            throw ConfigError("encoder rate * dt exceeds one spike per step");
        }
        if (!(sample_duration >= dt)) {
            throw ConfigError("sample duration must cover at least one step");
        }
    }
};

/// Bernoulli spikes with p = intensity * f_input * dt / 1000 per pixel.
/// The draw for step t of sample `sample_key` depends only on
/// (seed, sample_key, t), so any frame can be regenerated independently.
inline void poisson_encode_into(SpikeVector& out, std::span<const float> image, const SpikeEncoderConfig& cfg,
                                std::uint64_t sample_key, std::uint64_t t)
{
    out.assign(image.size(), 0);
    const double scale = cfg.f_input * cfg.dt / 1000.0;
    rng::SplitMix64 gen(rng::key(cfg.seed, sample_key, t));
    for (std::size_t p = 0; p < image.size(); ++p) {
        if (image[p] <= 0.0f) {
            continue;
        }
        out[p] = gen.uniform() < static_cast<double>(image[p]) * scale ? 1 : 0;
    }
}

[[nodiscard]] inline SpikeVector poisson_encode(std::span<const float> image, const SpikeEncoderConfig& cfg,
                                                std::uint64_t sample_key, std::uint64_t t)
{
    SpikeVector out;
    poisson_encode_into(out, image, cfg, sample_key, t);
    return out;
}

/// Target spike train: the target output spikes at f_label, all others stay silent.
inline void label_encode_into(SpikeVector& out, std::size_t target, std::size_t n_outputs,
                              const SpikeEncoderConfig& cfg, std::uint64_t sample_key, std::uint64_t t)
{
    if (target >= n_outputs) {
        throw std::invalid_argument("label target outside the output layer");
    }
    out.assign(n_outputs, 0);
    // Salted so that the label stream never replays the input stream.
    rng::SplitMix64 gen(rng::key(cfg.seed, sample_key, t, 0x6c6162656cULL));
    out[target] = gen.uniform() < cfg.f_label * cfg.dt / 1000.0 ? 1 : 0;
}

[[nodiscard]] inline SpikeVector label_encode(std::size_t target, std::size_t n_outputs,
                                              const SpikeEncoderConfig& cfg, std::uint64_t sample_key,
                                              std::uint64_t t)
{
    SpikeVector out;
    label_encode_into(out, target, n_outputs, cfg, sample_key, t);
    return out;
}

/// Frame source for Network::predict over one image.
class ImageSpikeSource {
  public:
    ImageSpikeSource(std::span<const float> image, const SpikeEncoderConfig& cfg, std::uint64_t sample_key)
        : image_(image), cfg_(cfg), key_(sample_key)
    {
    }

    const SpikeVector& operator()(std::size_t t)
    {
        poisson_encode_into(frame_, image_, cfg_, key_, t);
        return frame_;
    }

  private:
    std::span<const float> image_;
    SpikeEncoderConfig cfg_;
    std::uint64_t key_;
    SpikeVector frame_;
};

} // namespace tacos
