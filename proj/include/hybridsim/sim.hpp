#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hybridsim/cache.hpp"
#include "hybridsim/minibatch.hpp"
#include "hybridsim/plan.hpp"
#include "hybridsim/timing.hpp"

namespace hybridsim {

// hybrid: block kinds follow the planned host ratio.
// kv_only / act_only: the whole context as one kind (pools are converted
// byte-for-byte so the memory footprint is unchanged).
// token_recompute: a token-level share of the context is kept only as ids and
// rebuilt through all layers each iteration; the rest is KV cache.
enum class SimMode { Hybrid, KvOnly, ActOnly, TokenRecompute };

const char* to_string(SimMode m);
SimMode sim_mode_from_string(const std::string& s);

struct RequestSpec {
    int prompt_len = 0;
    int gen_len = 0;
};

struct SimConfig {
    ModelConfig model;
    TimingBundle bundle;
    HostAllocation allocation;
    GpuResidency act_gpu;
    PackerConfig packer;
    std::vector<RequestSpec> batch;
    SimMode mode = SimMode::Hybrid;
    double recompute_ratio = 0.0;         // token_recompute only
    bool store_checkpoint_traffic = true;
    bool full_duplex_pcie = false;        // stores on their own upstream channel
};

enum class Channel { PCIe, GPU, PCIeUp };
enum class EventKind { WeightLoad, KvLoad, ActLoad, KvGen, QkvAndForward, KvStore, ActStore };

const char* to_string(Channel c);
const char* to_string(EventKind k);

struct SimEvent {
    Channel channel;
    EventKind kind;
    double start = 0;
    double end = 0;
    int iteration = -1;   // -1 marks the prefill stage
    int layer = -1;
    int minibatch = -1;
};

struct TrafficBytes {
    std::uint64_t weights = 0;
    std::uint64_t kv_load = 0;
    std::uint64_t act_load = 0;
    std::uint64_t kv_store = 0;
    std::uint64_t act_store = 0;
    std::uint64_t total() const { return weights + kv_load + act_load + kv_store + act_store; }
};

struct SimMetrics {
    long tokens_generated = 0;
    double makespan = 0;
    double throughput = 0;       // tokens_generated / makespan
    double pcie_busy = 0;        // busy fraction of the host->GPU channel
    double gpu_busy = 0;
    double prefill_seconds = 0;
    double gen_seconds = 0;
    TrafficBytes traffic;
};

struct SimResult {
    SimMetrics metrics;
    std::vector<SimEvent> events;  // chronological
};

// Deterministic two-channel simulation of prefill plus every generation
// iteration: per layer, per mini-batch, loads double-buffer against compute,
// layer n+1 weights prefetch during layer n, recompute starts as soon as its
// activations arrive, and new-token cache writes trail at low priority.
SimResult simulate(const SimConfig& config);

struct TrafficReport {
    TrafficBytes bytes;
    std::uint64_t total = 0;
    std::uint64_t context_load = 0;  // kv_load + act_load
    double frac_weights = 0, frac_kv_load = 0, frac_act_load = 0;
    double frac_kv_store = 0, frac_act_store = 0;

    nlohmann::json to_json() const;
};
TrafficReport traffic_report(const SimMetrics& metrics);

// --- sweep -----------------------------------------------------------------

struct SweepSpec {
    ModelConfig model;
    HardwareProfile profile;
    std::vector<SimMode> modes = {SimMode::Hybrid, SimMode::KvOnly, SimMode::ActOnly};
    std::vector<int> batch_sizes = {32, 64, 128, 256};
    std::vector<int> prompt_lens = {512, 1024, 2048};
    int gen_len = 32;
    std::uint64_t seed = 42;
    double recompute_ratio = 0.5;
    long act_gpu_blocks = 0;
    PackerConfig packer{0, 0};  // zero capacities mean "derive from the profile"
    int calib_points = 16;
    bool store_checkpoint_traffic = true;
};

struct SweepRow {
    SimMode mode = SimMode::Hybrid;
    int batch = 0;
    int prompt_len = 0;
    bool ok = false;
    std::string error;
    SimMetrics metrics;
};

PackerConfig default_packer(const HardwareProfile& profile, const ModelConfig& config);

// Builds the per-point SimConfig a sweep would run (also used by the CLI
// simulate command so single runs and sweep points agree).
SimConfig make_sim_config(const SweepSpec& spec, const TimingBundle& bundle,
                          const HostAllocation& allocation, SimMode mode, int batch,
                          int prompt_len);

// One row per grid point; points run independently (jobs threads when > 0).
// Failures are captured per row, the rest of the grid continues.
std::vector<SweepRow> run_sweep(const SweepSpec& spec, int jobs = 0);

}  // namespace hybridsim
