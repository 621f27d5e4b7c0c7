#include "hybridsim/cache.hpp"

#include <algorithm>

#include "hybridsim/errors.hpp"

namespace hybridsim {

const char* to_string(BlockKind k) { return k == BlockKind::KV ? "KV" : "ACT"; }
const char* to_string(Location l) { return l == Location::HostMem ? "host" : "gpu"; }

int BlockTable::context_len() const {
    int n = 0;
    for (const auto& e : entries) n += e.filled_tokens;
    return n;
}

std::pair<long, long> BlockTable::blocks_by_kind() const {
    long act = 0, kv = 0;
    for (const auto& e : entries) {
        if (e.kind == BlockKind::ACT)
            ++act;
        else
            ++kv;
    }
    return {act, kv};
}

namespace {
int pool_index(BlockKind kind, Location loc) {
    return (kind == BlockKind::KV ? 0 : 2) + (loc == Location::HostMem ? 0 : 1);
}
}  // namespace

HybridCache::HybridCache(int tokens_per_block, PoolCaps caps, bool kv_on_gpu)
    : tokens_per_block_(tokens_per_block), kv_on_gpu_(kv_on_gpu) {
    if (tokens_per_block < 1) throw InputError("HybridCache: tokens_per_block must be >= 1");
    const long cap_by_index[4] = {caps.kv_host, caps.kv_gpu, caps.act_host, caps.act_gpu};
    for (int i = 0; i < 4; ++i) {
        if (cap_by_index[i] < 0) throw InputError("HybridCache: negative pool capacity");
        pools_[i].capacity = cap_by_index[i];
        pools_[i].in_use.assign(static_cast<std::size_t>(cap_by_index[i]), 0);
        pools_[i].free_list.resize(static_cast<std::size_t>(cap_by_index[i]));
        // descending so pbn 0 is handed out first
        for (long b = 0; b < cap_by_index[i]; ++b)
            pools_[i].free_list[static_cast<std::size_t>(b)] = static_cast<int>(cap_by_index[i] - 1 - b);
    }
}

HybridCache::Pool& HybridCache::pool(BlockKind kind, Location loc) {
    return pools_[pool_index(kind, loc)];
}
const HybridCache::Pool& HybridCache::pool(BlockKind kind, Location loc) const {
    return pools_[pool_index(kind, loc)];
}

BlockTable& HybridCache::table_mut(const std::string& id) {
    auto it = tables_.find(id);
    if (it == tables_.end()) throw InputError("unknown request id: " + id);
    return it->second;
}

const BlockTable& HybridCache::table(const std::string& id) const {
    auto it = tables_.find(id);
    if (it == tables_.end()) throw InputError("unknown request id: " + id);
    return it->second;
}

BlockTable& HybridCache::create_request(const std::string& id, int prompt_len) {
    if (prompt_len < 0) throw InputError("create_request: negative prompt length");
    auto [it, inserted] = tables_.try_emplace(id);
    if (!inserted) throw InputError("duplicate request id: " + id);
    it->second.request_id = id;
    it->second.prompt_len = prompt_len;
    order_.push_back(id);
    return it->second;
}

const BlockTableEntry& HybridCache::append_block(const std::string& id, BlockKind kind) {
    BlockTable& t = table_mut(id);
    if (!t.entries.empty() && t.entries.back().filled_tokens < tokens_per_block_)
        throw InputError("append_block: last block not yet full");

    Location loc;
    if (kind == BlockKind::ACT) {
        if (!pool(BlockKind::ACT, Location::GpuMem).free_list.empty())
            loc = Location::GpuMem;
        else if (!pool(BlockKind::ACT, Location::HostMem).free_list.empty())
            loc = Location::HostMem;
        else
            throw CapacityError("append_block: ACT pools exhausted");
    } else {
        if (kv_on_gpu_ && !pool(BlockKind::KV, Location::GpuMem).free_list.empty())
            loc = Location::GpuMem;
        else if (!pool(BlockKind::KV, Location::HostMem).free_list.empty())
            loc = Location::HostMem;
        else
            throw CapacityError("append_block: KV pools exhausted");
    }

    Pool& p = pool(kind, loc);
    const int pbn = p.free_list.back();
    p.free_list.pop_back();
    p.in_use[static_cast<std::size_t>(pbn)] = 1;
    t.entries.push_back(BlockTableEntry{kind, loc, pbn, 0});
    return t.entries.back();
}

void HybridCache::fill_token(const std::string& id) {
    BlockTable& t = table_mut(id);
    if (t.entries.empty())
        throw InputError("fill_token: no blocks; append_block first");
    BlockTableEntry& last = t.entries.back();
    if (last.filled_tokens >= tokens_per_block_)
        throw InputError("fill_token: last block full; append_block first");
    ++last.filled_tokens;
}

std::pair<long, long> HybridCache::blocks_by_kind(const std::string& id) const {
    return table(id).blocks_by_kind();
}

void HybridCache::free_request(const std::string& id) {
    BlockTable& t = table_mut(id);
    for (const auto& e : t.entries) {
        Pool& p = pool(e.kind, e.location);
        p.in_use[static_cast<std::size_t>(e.pbn)] = 0;
        p.free_list.push_back(e.pbn);
    }
    tables_.erase(id);
    order_.erase(std::find(order_.begin(), order_.end(), id));
}

long HybridCache::free_blocks(BlockKind kind, Location loc) const {
    return static_cast<long>(pool(kind, loc).free_list.size());
}

long HybridCache::capacity(BlockKind kind, Location loc) const {
    return pool(kind, loc).capacity;
}

std::uint64_t HybridCache::bytes_of(BlockKind kind, const ModelConfig& config) {
    const std::uint64_t per_token = static_cast<std::uint64_t>(config.hidden_dim) *
                                    static_cast<std::uint64_t>(config.bytes_per_scalar);
    const std::uint64_t tokens = static_cast<std::uint64_t>(config.tokens_per_block);
    return kind == BlockKind::KV ? tokens * 2 * per_token : tokens * per_token;
}

nlohmann::json HybridCache::dump_json() const {
    nlohmann::json requests = nlohmann::json::array();
    for (const std::string& id : order_) {
        const BlockTable& t = table(id);
        nlohmann::json entries = nlohmann::json::array();
        for (const auto& e : t.entries) {
            entries.push_back({{"kind", to_string(e.kind)},
                               {"location", to_string(e.location)},
                               {"pbn", e.pbn},
                               {"filled", e.filled_tokens}});
        }
        requests.push_back({{"id", t.request_id},
                            {"prompt_len", t.prompt_len},
                            {"context_len", t.context_len()},
                            {"entries", entries}});
    }
    return nlohmann::json{{"tokens_per_block", tokens_per_block_}, {"requests", requests}};
}

}  // namespace hybridsim
