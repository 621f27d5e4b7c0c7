#include "hybridsim/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>
#include <set>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "hybridsim/errors.hpp"
#include "hybridsim/flops.hpp"

namespace hybridsim {

const char* to_string(SimMode m) {
    switch (m) {
        case SimMode::Hybrid: return "hybrid";
        case SimMode::KvOnly: return "kv_only";
        case SimMode::ActOnly: return "act_only";
        case SimMode::TokenRecompute: return "token_recompute";
    }
    return "?";
}

SimMode sim_mode_from_string(const std::string& s) {
    if (s == "hybrid") return SimMode::Hybrid;
    if (s == "kv_only") return SimMode::KvOnly;
    if (s == "act_only") return SimMode::ActOnly;
    if (s == "token_recompute") return SimMode::TokenRecompute;
    throw InputError("unknown mode: " + s);
}

const char* to_string(Channel c) {
    switch (c) {
        case Channel::PCIe: return "PCIe";
        case Channel::GPU: return "GPU";
        case Channel::PCIeUp: return "PCIeUp";
    }
    return "?";
}

const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::WeightLoad: return "weight_load";
        case EventKind::KvLoad: return "kv_load";
        case EventKind::ActLoad: return "act_load";
        case EventKind::KvGen: return "kv_gen";
        case EventKind::QkvAndForward: return "qkv_and_forward";
        case EventKind::KvStore: return "kv_store";
        case EventKind::ActStore: return "act_store";
    }
    return "?";
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Priorities on the PCIe channel; lower wins. Weights preempt everything,
// stores yield to everything; between the two, loads run in mini-batch order
// with a unit's act_load ahead of its kv_load.
enum PciePrio { kPrioWeight = 0, kPrioActLoad = 1, kPrioKvLoad = 2, kPrioStore = 3 };

std::tuple<int, long, int> pcie_pick_key(int prio, long seq) {
    const int group = prio == kPrioWeight ? 0 : (prio == kPrioStore ? 2 : 1);
    return {group, seq, prio};
}

struct PcieJob {
    EventKind kind;
    int prio;
    long seq;             // tie-break within a priority class
    double dur = 0;
    std::uint64_t bytes = 0;
    int iteration = -1, layer = -1, minibatch = -1;
    double ready = kInf;  // set when the trigger fires
    bool armed = false;
    bool done = false;
    double end = kInf;
    int fwd_dep = -1;     // forward index it unblocks (-1 none)
    int kvgen_dep = -1;   // kvgen index it unblocks (-1 none)
};

struct GpuJob {
    EventKind kind;
    long cseq;            // GPU picks the lowest ready cseq
    double dur = 0;
    int iteration = -1, layer = -1, minibatch = -1;
    int step = -1;        // global layer step
    int deps = 0;         // outstanding dependency count
    bool exists = false;
    bool done = false;
    double end = kInf;
};

// Per-(iteration, layer, mini-batch) work read from the cache snapshots.
struct UnitWork {
    int iteration, layer, minibatch;
    int step;
    double kv_load_dur = 0;
    std::uint64_t kv_load_bytes = 0;
    double act_load_dur = 0;
    std::uint64_t act_load_bytes = 0;
    double kvgen_dur = 0;
    bool has_kvgen = false;
    double fwd_dur = 0;
    std::uint64_t kv_store_bytes = 0;
    std::uint64_t act_store_bytes = 0;
};

struct Resource {
    double busy_until = 0;
    int in_flight = -1;  // job index, -1 idle
};

}  // namespace

PackerConfig default_packer(const HardwareProfile& profile, const ModelConfig& config) {
    const double kv_buffer = 0.25 * profile.gpu_mem;
    const double act_buffer = 0.125 * profile.gpu_mem;
    const double kv_block = static_cast<double>(HybridCache::bytes_of(BlockKind::KV, config));
    const double act_block = static_cast<double>(HybridCache::bytes_of(BlockKind::ACT, config));
    PackerConfig p;
    // double buffering halves the usable capacity
    p.kv_max = std::max(1L, static_cast<long>(std::floor(kv_buffer / (2.0 * kv_block))));
    p.act_max = std::max(1L, static_cast<long>(std::floor(act_buffer / (2.0 * act_block))));
    return p;
}

SimResult simulate(const SimConfig& config) {
    ModelConfig model = config.model;
    model.validate();
    const TimingBundle& bundle = config.bundle;
    const int B = model.tokens_per_block;
    const int L = model.num_layers;
    const double d = static_cast<double>(model.hidden_dim);
    const double per_token_kv_bytes = 2.0 * d * model.bytes_per_scalar;

    if (config.batch.empty()) throw ConfigError("simulate: empty batch");
    if (config.mode == SimMode::TokenRecompute &&
        (config.recompute_ratio < 0.0 || config.recompute_ratio > 1.0))
        throw ConfigError("simulate: recompute_ratio must lie in [0, 1]");
    if (bundle.t_kv_gen.slope < 0 || bundle.t_load_kv.slope < 0 || bundle.t_load_w < 0)
        throw ConfigError("simulate: negative times in bundle");

    // Mode-effective pools. Conversions are byte-neutral (one KV block = two
    // ACT blocks) so forcing a mode never changes the memory footprint.
    HostAllocation alloc = config.allocation;
    long act_gpu = config.act_gpu.act_gpu;
    switch (config.mode) {
        case SimMode::Hybrid:
            break;
        case SimMode::KvOnly:
        case SimMode::TokenRecompute:
            alloc.kv_host += alloc.act_host / 2;
            alloc.act_host = 0;
            act_gpu = 0;
            break;
        case SimMode::ActOnly:
            alloc.act_host += 2 * alloc.kv_host;
            alloc.kv_host = 0;
            break;
    }

    long total_tokens_needed = 0;
    int gen_iterations = 0;
    for (const RequestSpec& r : config.batch) {
        if (r.prompt_len < 0 || r.gen_len < 0)
            throw ConfigError("simulate: negative prompt or generation length");
        total_tokens_needed += r.prompt_len + r.gen_len;
        gen_iterations = std::max(gen_iterations, r.gen_len);
    }
    if (config.mode == SimMode::Hybrid && total_tokens_needed > 0 &&
        alloc.act_host + alloc.kv_host <= 0)
        throw ConfigError("simulate: hybrid mode needs a nonempty host allocation");

    HybridCache cache(B, PoolCaps{alloc.kv_host, 0, alloc.act_host, act_gpu});

    const int n_req = static_cast<int>(config.batch.size());
    std::vector<long> rc_tokens(n_req, 0);   // token-recompute share per request
    std::vector<long> ctx_tokens(n_req, 0);  // full context length per request
    std::vector<std::string> ids(n_req);
    for (int i = 0; i < n_req; ++i) {
        ids[i] = "r" + std::to_string(i);
        cache.create_request(ids[i], config.batch[i].prompt_len);
    }

    // Adds one context token for request i; returns the (kind, location) of
    // the block that received it, or nullopt for a token-recompute token.
    auto add_token = [&](int i) -> std::pair<bool, BlockTableEntry> {
        ctx_tokens[i] += 1;
        if (config.mode == SimMode::TokenRecompute) {
            const double r = config.recompute_ratio;
            const long cached = cache.table(ids[i]).context_len();
            const double total = static_cast<double>(rc_tokens[i] + cached + 1);
            const double err_rc = std::abs((rc_tokens[i] + 1) / total - r);
            const double err_kv = std::abs(rc_tokens[i] / total - r);
            if (err_rc <= err_kv) {
                rc_tokens[i] += 1;
                return {false, {}};
            }
        }
        const BlockTable& t = cache.table(ids[i]);
        if (t.context_len() % B == 0) {
            BlockKind kind = BlockKind::KV;
            if (config.mode == SimMode::Hybrid) {
                auto [a, k] = t.blocks_by_kind();
                kind = next_block_kind(a, k, alloc);
            } else if (config.mode == SimMode::ActOnly) {
                kind = BlockKind::ACT;
            }
            cache.append_block(ids[i], kind);
        }
        cache.fill_token(ids[i]);
        return {true, cache.table(ids[i]).entries.back()};
    };

    for (int i = 0; i < n_req; ++i)
        for (int t = 0; t < config.batch[i].prompt_len; ++t) add_token(i);

    // Seconds-per-flop implied by the calibrated recompute model, and the
    // byte rate implied by the load model; both degrade to zero-cost when the
    // corresponding slope is zero.
    const double spf = bundle.t_kv_gen.slope > 0
                           ? bundle.t_kv_gen.slope / flop_count(FlopKind::KvGen, model, 1)
                           : 0.0;
    const double sec_per_byte =
        bundle.t_load_kv.slope > 0 ? bundle.t_load_kv.slope / per_token_kv_bytes : 0.0;

    std::vector<SimEvent> events;
    TrafficBytes traffic;

    // --- prefill: one compute stage against the full weight stream ---------
    double t0 = 0.0;
    long total_prompt = 0;
    double prefill_flops = 0.0;
    for (const RequestSpec& r : config.batch) {
        total_prompt += r.prompt_len;
        prefill_flops += flop_count(FlopKind::FullLayer, model, r.prompt_len) * L;
    }
    if (total_prompt > 0) {
        const double w_dur = bundle.t_load_w * L;
        const std::uint64_t w_bytes = bundle.s_weight_layer * static_cast<std::uint64_t>(L);
        events.push_back({Channel::PCIe, EventKind::WeightLoad, 0.0, w_dur, -1, -1, -1});
        traffic.weights += w_bytes;
        const double c_dur = spf * prefill_flops;
        events.push_back({Channel::GPU, EventKind::QkvAndForward, 0.0, c_dur, -1, -1, -1});
        t0 = std::max(w_dur, c_dur);
    }

    // --- per-iteration workload construction -------------------------------
    std::vector<UnitWork> units;
    std::map<std::string, int> id_index;
    for (int i = 0; i < n_req; ++i) id_index[ids[i]] = i;

    int step = 0;
    for (int it = 0; it < gen_iterations; ++it) {
        std::vector<int> active;
        for (int i = 0; i < n_req; ++i)
            if (it < config.batch[i].gen_len) active.push_back(i);

        // pack on pre-growth block counts
        std::vector<RequestBlocks> reqs;
        for (int i : active) {
            auto [a, k] = cache.blocks_by_kind(ids[i]);
            reqs.push_back(RequestBlocks{ids[i], a, k});
        }
        std::vector<MiniBatch> mbs;
        try {
            mbs = form_minibatches(reqs, config.packer, bundle, B);
        } catch (const InputError& e) {
            throw ConfigError(std::string("simulate: infeasible mini-batch packing: ") + e.what());
        }

        // per-mini-batch aggregates
        struct MbAgg {
            long kv_blocks = 0, act_blocks = 0, act_host_blocks = 0, rc = 0;
            double fwd_flops = 0;
            std::vector<int> members;
        };
        std::vector<MbAgg> aggs(mbs.size());
        for (std::size_t m = 0; m < mbs.size(); ++m) {
            for (const std::string& id : mbs[m].ids) {
                const int i = id_index.at(id);
                aggs[m].members.push_back(i);
                const BlockTable& t = cache.table(id);
                for (const auto& e : t.entries) {
                    if (e.kind == BlockKind::KV)
                        aggs[m].kv_blocks += 1;
                    else {
                        aggs[m].act_blocks += 1;
                        if (e.location == Location::HostMem) aggs[m].act_host_blocks += 1;
                    }
                }
                aggs[m].rc += rc_tokens[i];
                aggs[m].fwd_flops += flop_count(FlopKind::QkvGen, model, 1) +
                                     attention_step_flops(model, ctx_tokens[i] + 1) +
                                     flop_count(FlopKind::ProjFfn, model, 1);
            }
        }

        // grow contexts by this iteration's token and collect store bytes
        std::vector<std::uint64_t> kv_store(mbs.size(), 0), act_store(mbs.size(), 0);
        for (std::size_t m = 0; m < mbs.size(); ++m) {
            for (int i : aggs[m].members) {
                auto [stored, entry] = add_token(i);
                if (!stored || !config.store_checkpoint_traffic) continue;
                if (entry.location != Location::HostMem) continue;
                const std::uint64_t tok_bytes =
                    entry.kind == BlockKind::KV
                        ? static_cast<std::uint64_t>(per_token_kv_bytes)
                        : static_cast<std::uint64_t>(per_token_kv_bytes / 2.0);
                if (entry.kind == BlockKind::KV)
                    kv_store[m] += tok_bytes;
                else
                    act_store[m] += tok_bytes;
            }
        }

        for (int l = 0; l < L; ++l, ++step) {
            for (std::size_t m = 0; m < mbs.size(); ++m) {
                UnitWork u;
                u.iteration = it;
                u.layer = l;
                u.minibatch = static_cast<int>(m);
                u.step = step;
                const MbAgg& a = aggs[m];
                if (a.kv_blocks > 0) {
                    u.kv_load_dur = eval(bundle.t_load_kv, static_cast<double>(a.kv_blocks) * B);
                    u.kv_load_bytes = static_cast<std::uint64_t>(a.kv_blocks) *
                                      HybridCache::bytes_of(BlockKind::KV, model);
                }
                if (a.act_host_blocks > 0) {
                    u.act_load_dur = bundle.t_load_kv.intercept +
                                     bundle.t_load_kv.slope *
                                         (static_cast<double>(a.act_host_blocks) * B) / 2.0;
                    u.act_load_bytes = static_cast<std::uint64_t>(a.act_host_blocks) *
                                       HybridCache::bytes_of(BlockKind::ACT, model);
                }
                if (a.act_blocks > 0 || a.rc > 0) {
                    u.has_kvgen = true;
                    u.kvgen_dur = bundle.t_kv_gen.intercept;
                    if (a.act_blocks > 0)
                        u.kvgen_dur +=
                            bundle.t_kv_gen.slope * static_cast<double>(a.act_blocks) * B;
                    if (a.rc > 0)
                        u.kvgen_dur += spf * flop_count(FlopKind::FullLayer, model, a.rc);
                }
                u.fwd_dur = bundle.t_kv_gen.intercept + spf * a.fwd_flops;
                u.kv_store_bytes = kv_store[m];
                u.act_store_bytes = act_store[m];
                units.push_back(u);
            }
        }
    }

    // --- job construction ---------------------------------------------------
    const int n_units = static_cast<int>(units.size());
    const int n_steps = step;

    std::vector<GpuJob> fwd(n_units), kvgen(n_units);
    std::vector<PcieJob> pcie;
    std::vector<int> act_load_of(n_units, -1), kv_load_of(n_units, -1);
    std::vector<std::vector<int>> fwd_of_step(n_steps);

    for (int j = 0; j < n_units; ++j) {
        const UnitWork& u = units[j];
        fwd[j] = GpuJob{EventKind::QkvAndForward, 2L * j + 1, u.fwd_dur,
                        u.iteration, u.layer, u.minibatch, u.step, 0, true, false, kInf};
        fwd_of_step[u.step].push_back(j);
        if (u.has_kvgen)
            kvgen[j] = GpuJob{EventKind::KvGen, 2L * j, u.kvgen_dur,
                              u.iteration, u.layer, u.minibatch, u.step, 0, true, false, kInf};
        if (u.act_load_bytes > 0 || u.act_load_dur > 0) {
            act_load_of[j] = static_cast<int>(pcie.size());
            pcie.push_back(PcieJob{EventKind::ActLoad, kPrioActLoad, j, u.act_load_dur,
                                   u.act_load_bytes, u.iteration, u.layer, u.minibatch, kInf,
                                   false, false, kInf, -1, j});
        }
        if (u.kv_load_bytes > 0 || u.kv_load_dur > 0) {
            kv_load_of[j] = static_cast<int>(pcie.size());
            pcie.push_back(PcieJob{EventKind::KvLoad, kPrioKvLoad, j, u.kv_load_dur,
                                   u.kv_load_bytes, u.iteration, u.layer, u.minibatch, kInf,
                                   false, false, kInf, j, -1});
        }
    }
    std::vector<int> weight_of_step(n_steps, -1);
    for (int g = 0; g < n_steps; ++g) {
        weight_of_step[g] = static_cast<int>(pcie.size());
        const UnitWork& first = *std::find_if(units.begin(), units.end(),
                                              [g](const UnitWork& u) { return u.step == g; });
        pcie.push_back(PcieJob{EventKind::WeightLoad, kPrioWeight, g, bundle.t_load_w,
                               bundle.s_weight_layer, first.iteration, first.layer, -1, kInf,
                               false, false, kInf, -1, -1});
    }
    std::vector<int> kv_store_of(n_units, -1), act_store_of(n_units, -1);
    for (int j = 0; j < n_units; ++j) {
        const UnitWork& u = units[j];
        if (u.kv_store_bytes > 0) {
            kv_store_of[j] = static_cast<int>(pcie.size());
            pcie.push_back(PcieJob{EventKind::KvStore, kPrioStore, 2L * j,
                                   static_cast<double>(u.kv_store_bytes) * sec_per_byte,
                                   u.kv_store_bytes, u.iteration, u.layer, u.minibatch, kInf,
                                   false, false, kInf, -1, -1});
        }
        if (u.act_store_bytes > 0) {
            act_store_of[j] = static_cast<int>(pcie.size());
            pcie.push_back(PcieJob{EventKind::ActStore, kPrioStore, 2L * j + 1,
                                   static_cast<double>(u.act_store_bytes) * sec_per_byte,
                                   u.act_store_bytes, u.iteration, u.layer, u.minibatch, kInf,
                                   false, false, kInf, -1, -1});
        }
    }

    // dependency counts
    for (int j = 0; j < n_units; ++j) {
        fwd[j].deps = 1;                                  // weight(step)
        if (kvgen[j].exists) fwd[j].deps += 1;
        if (kv_load_of[j] >= 0) fwd[j].deps += 1;
        if (j > 0) fwd[j].deps += 1;                      // fwd(j-1)
        if (kvgen[j].exists) {
            if (act_load_of[j] >= 0) kvgen[j].deps += 1;
            if (j >= 2) kvgen[j].deps += 1;               // buffer slot frees with fwd(j-2)
        }
    }

    // --- two-resource scheduler ---------------------------------------------
    Resource gpu{t0, -1}, pci{t0, -1}, up{t0, -1};
    const bool duplex = config.full_duplex_pcie;

    using PickKey = std::tuple<int, long, int>;
    std::set<long> gpu_ready;                   // cseq of startable GPU jobs
    std::set<PickKey> pcie_ready;
    std::map<PickKey, int> pcie_index;
    std::set<PickKey> up_ready;
    std::map<PickKey, int> up_index;
    using ReadyEntry = std::pair<double, int>;      // (ready time, pcie job)
    std::priority_queue<ReadyEntry, std::vector<ReadyEntry>, std::greater<>> pcie_future;
    std::vector<bool> weight_armed_for_step(n_steps + 1, false);

    auto gpu_job = [&](long cseq) -> GpuJob& { return cseq % 2 == 0 ? kvgen[cseq / 2] : fwd[cseq / 2]; };

    auto arm_pcie = [&](int idx, double when) {
        PcieJob& p = pcie[idx];
        if (p.armed) return;
        p.armed = true;
        p.ready = when;
        pcie_future.push({when, idx});
    };

    auto gpu_dep_satisfied = [&](GpuJob& job, long cseq) {
        if (--job.deps <= 0 && !job.done) gpu_ready.insert(cseq);
    };

    // initial arming
    if (n_steps > 0) arm_pcie(weight_of_step[0], t0);
    for (int j = 0; j < std::min(2, n_units); ++j) {
        if (act_load_of[j] >= 0) arm_pcie(act_load_of[j], t0);
        if (kv_load_of[j] >= 0) arm_pcie(kv_load_of[j], t0);
    }
    for (int j = 0; j < n_units; ++j) {
        if (kvgen[j].exists && kvgen[j].deps == 0) gpu_ready.insert(2L * j);
        if (fwd[j].deps == 0) gpu_ready.insert(2L * j + 1);
    }

    double now = t0;
    int remaining = n_units;  // forwards left
    long pcie_remaining = static_cast<long>(pcie.size());

    auto complete_gpu = [&](long cseq) {
        GpuJob& job = gpu_job(cseq);
        job.done = true;
        const int j = static_cast<int>(cseq / 2);
        if (cseq % 2 == 0) {
            gpu_dep_satisfied(fwd[j], 2L * j + 1);  // kvgen(j) -> fwd(j)
        } else {
            --remaining;
            if (j + 1 < n_units) gpu_dep_satisfied(fwd[j + 1], 2L * (j + 1) + 1);
            if (j + 2 < n_units) {
                if (act_load_of[j + 2] >= 0) arm_pcie(act_load_of[j + 2], job.end);
                if (kv_load_of[j + 2] >= 0) arm_pcie(kv_load_of[j + 2], job.end);
                if (kvgen[j + 2].exists) gpu_dep_satisfied(kvgen[j + 2], 2L * (j + 2));
            }
            if (kv_store_of[j] >= 0) arm_pcie(kv_store_of[j], job.end);
            if (act_store_of[j] >= 0) arm_pcie(act_store_of[j], job.end);
        }
    };

    auto complete_pcie = [&](int idx) {
        PcieJob& p = pcie[idx];
        p.done = true;
        --pcie_remaining;
        if (p.kvgen_dep >= 0 && kvgen[p.kvgen_dep].exists)
            gpu_dep_satisfied(kvgen[p.kvgen_dep], 2L * p.kvgen_dep);
        if (p.fwd_dep >= 0) gpu_dep_satisfied(fwd[p.fwd_dep], 2L * p.fwd_dep + 1);
        if (p.kind == EventKind::WeightLoad)
            for (int j : fwd_of_step[static_cast<int>(p.seq)])
                gpu_dep_satisfied(fwd[j], 2L * j + 1);
    };

    while (remaining > 0 || pcie_remaining > 0 || gpu.in_flight >= 0 || pci.in_flight >= 0 ||
           up.in_flight >= 0) {
        // mature armed pcie jobs
        while (!pcie_future.empty() && pcie_future.top().first <= now) {
            const int idx = pcie_future.top().second;
            pcie_future.pop();
            const PcieJob& p = pcie[idx];
            const bool to_up = duplex && p.prio == kPrioStore;
            const PickKey key = pcie_pick_key(p.prio, p.seq);
            if (to_up) {
                up_ready.insert(key);
                up_index[key] = idx;
            } else {
                pcie_ready.insert(key);
                pcie_index[key] = idx;
            }
        }

        bool progressed = false;

        if (gpu.in_flight < 0 && !gpu_ready.empty()) {
            const long cseq = *gpu_ready.begin();
            gpu_ready.erase(gpu_ready.begin());
            GpuJob& job = gpu_job(cseq);
            job.end = now + job.dur;
            gpu.busy_until = job.end;
            gpu.in_flight = static_cast<int>(cseq);
            events.push_back({Channel::GPU, job.kind, now, job.end, job.iteration, job.layer,
                              job.minibatch});
            if (!weight_armed_for_step[job.step] ) {
                weight_armed_for_step[job.step] = true;
                if (job.step + 1 < n_steps) arm_pcie(weight_of_step[job.step + 1], now);
            }
            progressed = true;
        }

        if (pci.in_flight < 0 && !pcie_ready.empty()) {
            const auto key = *pcie_ready.begin();
            pcie_ready.erase(pcie_ready.begin());
            const int idx = pcie_index.at(key);
            pcie_index.erase(key);
            PcieJob& p = pcie[idx];
            p.end = now + p.dur;
            pci.busy_until = p.end;
            pci.in_flight = idx;
            events.push_back({Channel::PCIe, p.kind, now, p.end, p.iteration, p.layer,
                              p.minibatch});
            switch (p.kind) {
                case EventKind::WeightLoad: traffic.weights += p.bytes; break;
                case EventKind::KvLoad: traffic.kv_load += p.bytes; break;
                case EventKind::ActLoad: traffic.act_load += p.bytes; break;
                case EventKind::KvStore: traffic.kv_store += p.bytes; break;
                case EventKind::ActStore: traffic.act_store += p.bytes; break;
                default: break;
            }
            progressed = true;
        }

        if (duplex && up.in_flight < 0 && !up_ready.empty()) {
            const auto key = *up_ready.begin();
            up_ready.erase(up_ready.begin());
            const int idx = up_index.at(key);
            up_index.erase(key);
            PcieJob& p = pcie[idx];
            p.end = now + p.dur;
            up.busy_until = p.end;
            up.in_flight = idx;
            events.push_back({Channel::PCIeUp, p.kind, now, p.end, p.iteration, p.layer,
                              p.minibatch});
            if (p.kind == EventKind::KvStore) traffic.kv_store += p.bytes;
            if (p.kind == EventKind::ActStore) traffic.act_store += p.bytes;
            progressed = true;
        }

        if (progressed) continue;

        double next = kInf;
        if (gpu.in_flight >= 0) next = std::min(next, gpu.busy_until);
        if (pci.in_flight >= 0) next = std::min(next, pci.busy_until);
        if (up.in_flight >= 0) next = std::min(next, up.busy_until);
        if (!pcie_future.empty()) next = std::min(next, pcie_future.top().first);
        if (next == kInf) {
            if (remaining > 0 || pcie_remaining > 0)
                throw ConfigError("simulate: scheduler stalled (dependency cycle)");
            break;
        }
        now = std::max(now, next);
        if (gpu.in_flight >= 0 && gpu.busy_until <= now) {
            complete_gpu(gpu.in_flight);
            gpu.in_flight = -1;
        }
        if (pci.in_flight >= 0 && pci.busy_until <= now) {
            complete_pcie(pci.in_flight);
            pci.in_flight = -1;
        }
        if (up.in_flight >= 0 && up.busy_until <= now) {
            complete_pcie(up.in_flight);
            up.in_flight = -1;
        }
    }

    // --- metrics -------------------------------------------------------------
    SimResult res;
    res.events = std::move(events);
    std::sort(res.events.begin(), res.events.end(), [](const SimEvent& a, const SimEvent& b) {
        if (a.start != b.start) return a.start < b.start;
        if (a.channel != b.channel) return static_cast<int>(a.channel) < static_cast<int>(b.channel);
        if (a.kind != b.kind) return static_cast<int>(a.kind) < static_cast<int>(b.kind);
        return a.end < b.end;
    });

    SimMetrics& m = res.metrics;
    m.traffic = traffic;
    for (const RequestSpec& r : config.batch) m.tokens_generated += r.gen_len;
    double pcie_busy_time = 0, gpu_busy_time = 0;
    for (const SimEvent& e : res.events) {
        m.makespan = std::max(m.makespan, e.end);
        if (e.channel == Channel::PCIe) pcie_busy_time += e.end - e.start;
        if (e.channel == Channel::GPU) gpu_busy_time += e.end - e.start;
    }
    m.prefill_seconds = t0;
    m.gen_seconds = m.makespan - t0;
    if (m.makespan > 0) {
        m.throughput = static_cast<double>(m.tokens_generated) / m.makespan;
        m.pcie_busy = pcie_busy_time / m.makespan;
        m.gpu_busy = gpu_busy_time / m.makespan;
    }
    return res;
}

nlohmann::json TrafficReport::to_json() const {
    return nlohmann::json{{"weights", bytes.weights},
                          {"kv_load", bytes.kv_load},
                          {"act_load", bytes.act_load},
                          {"kv_store", bytes.kv_store},
                          {"act_store", bytes.act_store},
                          {"total", total},
                          {"context_load", context_load},
                          {"frac_weights", frac_weights},
                          {"frac_kv_load", frac_kv_load},
                          {"frac_act_load", frac_act_load},
                          {"frac_kv_store", frac_kv_store},
                          {"frac_act_store", frac_act_store}};
}

TrafficReport traffic_report(const SimMetrics& metrics) {
    TrafficReport r;
    r.bytes = metrics.traffic;
    r.total = metrics.traffic.total();
    r.context_load = metrics.traffic.kv_load + metrics.traffic.act_load;
    if (r.total > 0) {
        const double t = static_cast<double>(r.total);
        r.frac_weights = metrics.traffic.weights / t;
        r.frac_kv_load = metrics.traffic.kv_load / t;
        r.frac_act_load = metrics.traffic.act_load / t;
        r.frac_kv_store = metrics.traffic.kv_store / t;
        r.frac_act_store = metrics.traffic.act_store / t;
    }
    return r;
}

SimConfig make_sim_config(const SweepSpec& spec, const TimingBundle& bundle,
                          const HostAllocation& allocation, SimMode mode, int batch,
                          int prompt_len) {
    SimConfig cfg;
    cfg.model = spec.model;
    cfg.bundle = bundle;
    cfg.allocation = allocation;
    cfg.act_gpu = GpuResidency{spec.act_gpu_blocks};
    cfg.packer = (spec.packer.act_max > 0 && spec.packer.kv_max > 0)
                     ? spec.packer
                     : default_packer(spec.profile, spec.model);
    cfg.batch.assign(static_cast<std::size_t>(batch), RequestSpec{prompt_len, spec.gen_len});
    cfg.mode = mode;
    cfg.recompute_ratio = spec.recompute_ratio;
    cfg.store_checkpoint_traffic = spec.store_checkpoint_traffic;
    return cfg;
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec, int jobs) {
    ModelConfig model = spec.model;
    model.validate();
    spec.profile.validate();
    if (spec.modes.empty() || spec.batch_sizes.empty() || spec.prompt_lens.empty())
        throw InputError("run_sweep: modes, batch sizes and prompt lengths must be nonempty");

    SweepSpec s = spec;
    s.model = model;
    const TimingBundle bundle = calibrate(s.profile, model, s.seed, s.calib_points);
    const MemoryBudget mem = budget_for(s.profile, model, bundle);
    const HostAllocation alloc = plan_host_allocation(bundle, mem, model.tokens_per_block,
                                                      GpuResidency{s.act_gpu_blocks});

    std::vector<SweepRow> rows;
    for (SimMode mode : s.modes)
        for (int batch : s.batch_sizes)
            for (int prompt : s.prompt_lens)
                rows.push_back(SweepRow{mode, batch, prompt, false, "", {}});

    const int n = static_cast<int>(rows.size());
#ifdef _OPENMP
    const int threads = jobs > 0 ? jobs : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
#endif
    for (int i = 0; i < n; ++i) {
        SweepRow& row = rows[i];
        try {
            const SimConfig cfg =
                make_sim_config(s, bundle, alloc, row.mode, row.batch, row.prompt_len);
            row.metrics = simulate(cfg).metrics;
            row.ok = true;
        } catch (const std::exception& e) {
            row.error = e.what();
        }
    }
    return rows;
}

}  // namespace hybridsim
