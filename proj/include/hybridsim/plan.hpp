#pragma once

#include <utility>

#include <json.hpp>

#include "hybridsim/cache.hpp"
#include "hybridsim/timing.hpp"

namespace hybridsim {

struct GpuResidency {
    long act_gpu = 0;  // ACT blocks resident in GPU memory
};

// Host memory split in blocks, with the two-step audit trail.
struct HostAllocation {
    long act_host = 0;
    long kv_host = 0;
    long act_init = 0;
    long kv_init = 0;
    long act_remain = 0;
    long kv_remain = 0;

    nlohmann::json to_json() const;
    static HostAllocation from_json(const nlohmann::json& j);
};

// Byte budget for the host side. Block sizes here are full footprints across
// all layers: a logical block occupies bytes_of(kind) in every decoder layer,
// while the timing functions price a single layer's worth of work.
struct MemoryBudget {
    double m_host = 0;
    double s_weight = 0;
    double s_kv_block = 0;
    double s_act_block = 0;
};

MemoryBudget budget_for(const HardwareProfile& profile, const ModelConfig& config,
                        const TimingBundle& bundle);

// Step 1: size the allocation that zeroes the idle gap between weight loading
// and recomputation of GPU-resident ACT blocks. At most one side is nonzero.
std::pair<long, long> initial_cache_allocation(const TimingBundle& bundle, int tokens_per_block,
                                               GpuResidency act_gpu);

// Step 2: fill the remaining host bytes with the (ACT, KV) mix whose per-layer
// recompute and load times match. Negative exact solutions clamp to zero and
// the other kind takes all remaining memory.
std::pair<long, long> alloc_remaining(const TimingBundle& bundle, const MemoryBudget& mem,
                                      int tokens_per_block, long act_init, long kv_init);

HostAllocation plan_host_allocation(const TimingBundle& bundle, const MemoryBudget& mem,
                                    int tokens_per_block, GpuResidency act_gpu);

// Block kind whose selection keeps the request's ACT share closest to the
// host allocation's; ties go to ACT (the smaller footprint).
BlockKind next_block_kind(long act_req, long kv_req, const HostAllocation& allocation);

// Predicted per-layer channel times for an allocation (the two sides of the
// balance objective).
double planned_t_pcie(const TimingBundle& bundle, int tokens_per_block,
                      const HostAllocation& allocation);
double planned_t_computation(const TimingBundle& bundle, int tokens_per_block,
                             const HostAllocation& allocation, GpuResidency act_gpu);

}  // namespace hybridsim
