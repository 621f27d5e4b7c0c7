#pragma once

#include <string>
#include <vector>

#include "hybridsim/timing.hpp"

namespace hybridsim {

struct RequestBlocks {
    std::string id;
    long act_blocks = 0;
    long kv_blocks = 0;
};

struct MiniBatch {
    std::vector<std::string> ids;
    long act_mb = 0;
    long kv_mb = 0;
};

// GPU-buffer-derived bin capacities, in blocks.
struct PackerConfig {
    long act_max = 1;
    long kv_max = 1;
};

// Predicted recompute time over predicted load time for a mini-batch.
// Both zero -> 1; load side zero with a flat intercept -> +inf.
double balance(long act_mb, long kv_mb, const TimingBundle& bundle, int tokens_per_block);

// max(balance, 1/balance); 1 iff perfectly balanced.
double cost_fb(long act_mb, long kv_mb, const TimingBundle& bundle, int tokens_per_block);

// Greedy packing: requests in descending total block count (ties by id) join
// the open batch when they fit and do not increase its cost; the batch closes
// when a full scan adds nothing. Throws InputError naming any request that
// cannot fit alone.
std::vector<MiniBatch> form_minibatches(const std::vector<RequestBlocks>& requests,
                                        const PackerConfig& cfg, const TimingBundle& bundle,
                                        int tokens_per_block);

// Exhaustive partition search, test oracle. Minimizes (batch count, mean cost)
// lexicographically. Refuses more than 10 requests.
std::vector<MiniBatch> brute_force_pack(const std::vector<RequestBlocks>& requests,
                                        const PackerConfig& cfg, const TimingBundle& bundle,
                                        int tokens_per_block);

}  // namespace hybridsim
