#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "hybridsim/model.hpp"

namespace hybridsim {

// Hardware description used to synthesize calibration samples and to size
// memory budgets. Bandwidth and throughput are effective rates in bytes/s and
// flop/s; gpu_efficiency scales the peak down to achievable matmul throughput.
struct HardwareProfile {
    double pcie_bandwidth = 25e9;
    double gpu_throughput = 82.6e12;
    double gpu_efficiency = 0.35;
    double host_mem = 882e9;
    double gpu_mem = 24e9;
    double noise_std = 0.0;  // exact analytic sampling unless asked otherwise

    double effective_flops() const { return gpu_throughput * gpu_efficiency; }
    void validate() const;

    static HardwareProfile from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// seconds(n_tokens) = slope * n + intercept
struct LinearTimeModel {
    double slope = 0.0;       // seconds per token
    double intercept = 0.0;   // seconds
    double r_squared = 0.0;
    bool intercept_clamped = false;
};

struct Sample {
    double n_tokens = 0.0;
    double seconds = 0.0;
};

// Ordinary least squares. Negative fitted intercepts are clamped to zero and
// flagged. Throws InputError when fewer than two distinct n_tokens values.
LinearTimeModel fit_linear(const std::vector<Sample>& samples);

enum class SampleKind { KvGen, LoadKv };

// Synthetic stand-in for on-device measurement: analytic time scaled by
// (1 + eps), eps ~ Normal(0, noise_std), seeded. Points are log-spaced over
// [lo_tokens, hi_tokens].
std::vector<Sample> synthesize_samples(const HardwareProfile& profile, const ModelConfig& config,
                                       SampleKind kind, int n_points, std::uint64_t seed,
                                       double lo_tokens = 64.0, double hi_tokens = 65536.0);

double eval(const LinearTimeModel& model, double n_tokens);

// Largest n with eval(n) <= seconds (never overshoots the budget).
long invert(const LinearTimeModel& model, double seconds);

struct WeightBytes {
    std::uint64_t per_layer = 0;
    std::uint64_t total = 0;  // all layers plus the embedding table
};
WeightBytes weight_bytes(const ModelConfig& config);

// Everything the planner and simulator need to price work.
struct TimingBundle {
    LinearTimeModel t_kv_gen;   // seconds vs ACT tokens recomputed, per layer
    LinearTimeModel t_load_kv;  // seconds vs KV tokens loaded, per layer
    double t_load_w = 0.0;      // seconds per decoder layer weight load
    std::uint64_t s_weight_layer = 0;
    std::uint64_t s_weight_total = 0;

    nlohmann::json to_json() const;
    static TimingBundle from_json(const nlohmann::json& j);
};

// Full synthetic calibration: sample both functions, fit, derive weight times.
TimingBundle calibrate(const HardwareProfile& profile, const ModelConfig& config,
                       std::uint64_t seed, int n_points = 16);

// Calibration from externally measured samples (the CSV import path).
TimingBundle bundle_from_samples(const std::vector<Sample>& kv_gen_samples,
                                 const std::vector<Sample>& load_kv_samples,
                                 const HardwareProfile& profile, const ModelConfig& config);

}  // namespace hybridsim
