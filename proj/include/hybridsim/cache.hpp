#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hybridsim/model.hpp"

namespace hybridsim {

enum class BlockKind { KV, ACT };
enum class Location { HostMem, GpuMem };

const char* to_string(BlockKind k);
const char* to_string(Location l);

struct BlockTableEntry {
    BlockKind kind;
    Location location;
    int pbn = -1;
    int filled_tokens = 0;
};

// Ordered logical blocks covering one request's context. Only the last entry
// may be partially filled.
struct BlockTable {
    std::string request_id;
    int prompt_len = 0;
    std::vector<BlockTableEntry> entries;

    int context_len() const;
    // (act, kv)
    std::pair<long, long> blocks_by_kind() const;
};

struct PoolCaps {
    long kv_host = 0;
    long kv_gpu = 0;
    long act_host = 0;
    long act_gpu = 0;
};

// Block bookkeeping across the four (kind, location) pools. Blocks are
// records, not buffers; payloads never live here.
class HybridCache {
public:
    HybridCache(int tokens_per_block, PoolCaps caps, bool kv_on_gpu = false);

    BlockTable& create_request(const std::string& id, int prompt_len);

    // ACT blocks go to GPU memory while that pool has room, then host; KV
    // blocks go to host (GPU first only with the kv_on_gpu switch). Throws
    // CapacityError with the table untouched when every eligible pool is full.
    const BlockTableEntry& append_block(const std::string& id, BlockKind kind);

    void fill_token(const std::string& id);

    std::pair<long, long> blocks_by_kind(const std::string& id) const;

    void free_request(const std::string& id);

    const BlockTable& table(const std::string& id) const;
    const std::vector<std::string>& request_order() const { return order_; }

    long free_blocks(BlockKind kind, Location loc) const;
    long capacity(BlockKind kind, Location loc) const;
    int tokens_per_block() const { return tokens_per_block_; }

    // Per-layer bytes of one block: KV carries keys and values, ACT only the
    // layer input, which is why an ACT block is half a KV block.
    static std::uint64_t bytes_of(BlockKind kind, const ModelConfig& config);

    nlohmann::json dump_json() const;

private:
    struct Pool {
        long capacity = 0;
        std::vector<int> free_list;     // stack; back() allocated next
        std::vector<char> in_use;
    };

    Pool& pool(BlockKind kind, Location loc);
    const Pool& pool(BlockKind kind, Location loc) const;
    BlockTable& table_mut(const std::string& id);

    int tokens_per_block_;
    bool kv_on_gpu_;
    Pool pools_[4];
    std::unordered_map<std::string, BlockTable> tables_;
    std::vector<std::string> order_;
};

}  // namespace hybridsim
