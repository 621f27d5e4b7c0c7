#include "hybridsim/plan.hpp"

#include <cmath>
#include <cstdlib>

#include "hybridsim/errors.hpp"

namespace hybridsim {

namespace {

// Largest n with n * block_bytes <= avail_bytes, robust to the division's
// rounding (the correction loops settle it exactly).
long fit_blocks(double avail_bytes, double block_bytes) {
    if (avail_bytes <= 0 || block_bytes <= 0) return 0;
    long n = static_cast<long>(std::floor(avail_bytes / block_bytes));
    while (n > 0 && static_cast<double>(n) * block_bytes > avail_bytes) --n;
    while (static_cast<double>(n + 1) * block_bytes <= avail_bytes) ++n;
    return n;
}

}  // namespace

nlohmann::json HostAllocation::to_json() const {
    return nlohmann::json{{"act_host", act_host},     {"kv_host", kv_host},
                          {"act_init", act_init},     {"kv_init", kv_init},
                          {"act_remain", act_remain}, {"kv_remain", kv_remain}};
}

HostAllocation HostAllocation::from_json(const nlohmann::json& j) {
    HostAllocation a;
    a.act_host = j.at("act_host").get<long>();
    a.kv_host = j.at("kv_host").get<long>();
    a.act_init = j.value("act_init", 0L);
    a.kv_init = j.value("kv_init", 0L);
    a.act_remain = j.value("act_remain", 0L);
    a.kv_remain = j.value("kv_remain", 0L);
    return a;
}

MemoryBudget budget_for(const HardwareProfile& profile, const ModelConfig& config,
                        const TimingBundle& bundle) {
    MemoryBudget mem;
    mem.m_host = profile.host_mem;
    mem.s_weight = static_cast<double>(bundle.s_weight_total);
    mem.s_kv_block = static_cast<double>(HybridCache::bytes_of(BlockKind::KV, config)) *
                     config.num_layers;
    mem.s_act_block = static_cast<double>(HybridCache::bytes_of(BlockKind::ACT, config)) *
                      config.num_layers;
    return mem;
}

std::pair<long, long> initial_cache_allocation(const TimingBundle& bundle, int tokens_per_block,
                                               GpuResidency act_gpu) {
    if (tokens_per_block < 1) throw InputError("initial_cache_allocation: bad block size");
    if (act_gpu.act_gpu < 0) throw InputError("initial_cache_allocation: negative ACT_GPU");
    const double gpu_act_tokens = static_cast<double>(act_gpu.act_gpu) * tokens_per_block;
    const double t_budget = bundle.t_load_w - eval(bundle.t_kv_gen, gpu_act_tokens);

    long act_init = 0, kv_init = 0;
    if (t_budget >= 0) {
        if (bundle.t_kv_gen.slope > 0)
            act_init = invert(bundle.t_kv_gen, t_budget) / tokens_per_block;
    } else {
        if (bundle.t_load_kv.slope > 0)
            kv_init = invert(bundle.t_load_kv, -t_budget) / tokens_per_block;
    }
    return {act_init, kv_init};
}

std::pair<long, long> alloc_remaining(const TimingBundle& bundle, const MemoryBudget& mem,
                                      int tokens_per_block, long act_init, long kv_init) {
    if (mem.s_kv_block <= 0 || mem.s_act_block <= 0)
        throw InputError("alloc_remaining: block sizes must be positive");
    const double m_occupied = mem.s_act_block * static_cast<double>(act_init) +
                              mem.s_kv_block * static_cast<double>(kv_init);
    const double m_remaining = mem.m_host - mem.s_weight - m_occupied;
    if (m_remaining < 0)
        throw CapacityError("alloc_remaining: host memory cannot hold weights plus initial blocks");

    const double b = static_cast<double>(tokens_per_block);
    const double sa = bundle.t_kv_gen.slope * b;   // seconds per ACT block
    const double sk = bundle.t_load_kv.slope * b;  // seconds per KV block
    const double ia = bundle.t_kv_gen.intercept;
    const double ik = bundle.t_load_kv.intercept;

    const double denom = sa * mem.s_kv_block + sk * mem.s_act_block;
    if (denom <= 0) {
        // both models flat: the balance equation is vacuous, keep everything KV
        return {0, static_cast<long>(std::floor(m_remaining / mem.s_kv_block))};
    }

    // The balance crossing is fractional; nudge the floor so exact-integer
    // solutions survive rounding. Memory fills below are integer-exact.
    const double x_exact = (sk * m_remaining + mem.s_kv_block * (ik - ia)) / denom;
    if (x_exact < 0) return {0, fit_blocks(m_remaining, mem.s_kv_block)};
    const double y_exact = (m_remaining - mem.s_act_block * x_exact) / mem.s_kv_block;
    if (y_exact < 0) return {fit_blocks(m_remaining, mem.s_act_block), 0};
    const long x = static_cast<long>(std::floor(x_exact + 1e-9 * (1.0 + std::abs(x_exact))));
    // KV takes whatever bytes the floored ACT count leaves behind
    const long y = fit_blocks(m_remaining - mem.s_act_block * static_cast<double>(x),
                              mem.s_kv_block);
    return {x, y};
}

HostAllocation plan_host_allocation(const TimingBundle& bundle, const MemoryBudget& mem,
                                    int tokens_per_block, GpuResidency act_gpu) {
    HostAllocation a;
    std::tie(a.act_init, a.kv_init) = initial_cache_allocation(bundle, tokens_per_block, act_gpu);
    std::tie(a.act_remain, a.kv_remain) =
        alloc_remaining(bundle, mem, tokens_per_block, a.act_init, a.kv_init);
    a.act_host = a.act_init + a.act_remain;
    a.kv_host = a.kv_init + a.kv_remain;

    // Discrete polish. Flooring the two-step solution can sit a block or two
    // off the best integer split (the step-wise construction also double
    // counts the recompute intercept). The signed channel gap is strictly
    // decreasing in the ACT count along the memory-filling frontier, so a
    // binary search lands on the exact discrete minimizer of the balance
    // objective.
    const double m_avail = mem.m_host - mem.s_weight;
    auto frontier_kv = [&](long act) {
        return fit_blocks(m_avail - mem.s_act_block * static_cast<double>(act),
                          mem.s_kv_block);
    };
    auto signed_gap = [&](long act) {
        HostAllocation cand = a;
        cand.act_host = act;
        cand.kv_host = frontier_kv(act);
        return planned_t_pcie(bundle, tokens_per_block, cand) -
               planned_t_computation(bundle, tokens_per_block, cand, act_gpu);
    };
    const long x_max = fit_blocks(m_avail, mem.s_act_block);
    long best;
    if (signed_gap(0) <= 0) {
        best = 0;
    } else if (signed_gap(x_max) >= 0) {
        best = x_max;
    } else {
        long lo = 0, hi = x_max;  // gap(lo) > 0 >= gap(hi)
        while (hi - lo > 1) {
            const long mid = lo + (hi - lo) / 2;
            (signed_gap(mid) > 0 ? lo : hi) = mid;
        }
        best = std::abs(signed_gap(lo)) <= std::abs(signed_gap(hi)) ? lo : hi;
    }
    a.act_host = best;
    a.kv_host = frontier_kv(best);
    a.act_remain = a.act_host - a.act_init;
    a.kv_remain = a.kv_host - a.kv_init;
    return a;
}

BlockKind next_block_kind(long act_req, long kv_req, const HostAllocation& allocation) {
    if (allocation.act_host + allocation.kv_host <= 0)
        throw InputError("next_block_kind: allocation has no blocks");
    if (act_req < 0 || kv_req < 0) throw InputError("next_block_kind: negative block count");
    const double target = static_cast<double>(allocation.act_host) /
                          static_cast<double>(allocation.act_host + allocation.kv_host);
    const double total = static_cast<double>(act_req + kv_req + 1);
    const double err_act = std::abs(static_cast<double>(act_req + 1) / total - target);
    const double err_kv = std::abs(static_cast<double>(act_req) / total - target);
    return err_act <= err_kv ? BlockKind::ACT : BlockKind::KV;
}

double planned_t_pcie(const TimingBundle& bundle, int tokens_per_block,
                      const HostAllocation& allocation) {
    return bundle.t_load_w +
           eval(bundle.t_load_kv, static_cast<double>(allocation.kv_host) * tokens_per_block);
}

double planned_t_computation(const TimingBundle& bundle, int tokens_per_block,
                             const HostAllocation& allocation, GpuResidency act_gpu) {
    const double act_tokens =
        static_cast<double>(allocation.act_host + act_gpu.act_gpu) * tokens_per_block;
    return eval(bundle.t_kv_gen, act_tokens);
}

}  // namespace hybridsim
