#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "hybridsim/errors.hpp"
#include "hybridsim/flops.hpp"
#include "hybridsim/rng.hpp"
#include "hybridsim/sim.hpp"

using namespace hybridsim;

namespace {

ModelConfig toy_model(int layers = 2, int d = 1024, int block = 16) {
    ModelConfig c;
    c.num_layers = layers;
    c.hidden_dim = d;
    c.num_heads = 16;
    c.tokens_per_block = block;
    c.validate();
    return c;
}

TimingBundle make_bundle(double kvgen_slope, double kvgen_icept, double load_slope,
                         double load_icept, double t_load_w, std::uint64_t weight_layer_bytes) {
    TimingBundle b;
    b.t_kv_gen = LinearTimeModel{kvgen_slope, kvgen_icept, 1.0, false};
    b.t_load_kv = LinearTimeModel{load_slope, load_icept, 1.0, false};
    b.t_load_w = t_load_w;
    b.s_weight_layer = weight_layer_bytes;
    b.s_weight_total = weight_layer_bytes;
    return b;
}

SimConfig base_config(SimMode mode, int batch, int prompt, int gen, long act_host,
                      long kv_host) {
    SimConfig cfg;
    cfg.model = toy_model();
    cfg.bundle = make_bundle(1e-7, 0.0, 5e-8, 0.0, 2e-3, 50'000'000);
    cfg.allocation.act_host = act_host;
    cfg.allocation.kv_host = kv_host;
    cfg.packer = PackerConfig{4096, 4096};
    cfg.batch.assign(static_cast<std::size_t>(batch), RequestSpec{prompt, gen});
    cfg.mode = mode;
    return cfg;
}

// default-profile OPT-30B setup shared by the direction checks
struct PlannedSetup {
    ModelConfig model;
    HardwareProfile profile;
    TimingBundle bundle;
    HostAllocation alloc;
    PackerConfig packer;
};

PlannedSetup planned_setup(std::uint64_t seed = 42) {
    PlannedSetup s;
    s.model = ModelConfig::preset("opt-30b");
    s.profile = HardwareProfile{};
    s.profile.noise_std = 0.0;
    s.bundle = calibrate(s.profile, s.model, seed);
    s.alloc = plan_host_allocation(s.bundle, budget_for(s.profile, s.model, s.bundle),
                                   s.model.tokens_per_block, GpuResidency{0});
    s.packer = default_packer(s.profile, s.model);
    return s;
}

SimConfig planned_config(const PlannedSetup& s, SimMode mode, int batch, int prompt, int gen) {
    SimConfig cfg;
    cfg.model = s.model;
    cfg.bundle = s.bundle;
    cfg.allocation = s.alloc;
    cfg.packer = s.packer;
    cfg.batch.assign(static_cast<std::size_t>(batch), RequestSpec{prompt, gen});
    cfg.mode = mode;
    return cfg;
}

void check_invariants(const SimResult& res) {
    // channel exclusivity
    std::map<Channel, std::vector<std::pair<double, double>>> lanes;
    for (const SimEvent& e : res.events) {
        CHECK(e.end >= e.start);
        lanes[e.channel].push_back({e.start, e.end});
    }
    for (auto& [ch, spans] : lanes) {
        std::sort(spans.begin(), spans.end());
        for (std::size_t i = 0; i + 1 < spans.size(); ++i)
            CHECK(spans[i].second <= spans[i + 1].first + 1e-12);
    }

    // dependency ordering per (iteration, layer, minibatch)
    std::map<std::tuple<int, int, int>, const SimEvent*> act_load, kv_load, kv_gen, fwd;
    std::map<std::pair<int, int>, const SimEvent*> weights;  // (iteration, layer)
    for (const SimEvent& e : res.events) {
        if (e.iteration < 0) continue;  // prefill stage
        const auto key = std::make_tuple(e.iteration, e.layer, e.minibatch);
        switch (e.kind) {
            case EventKind::ActLoad: act_load[key] = &e; break;
            case EventKind::KvLoad: kv_load[key] = &e; break;
            case EventKind::KvGen: kv_gen[key] = &e; break;
            case EventKind::QkvAndForward: fwd[key] = &e; break;
            case EventKind::WeightLoad: weights[{e.iteration, e.layer}] = &e; break;
            default: break;
        }
    }
    for (const auto& [key, gen] : kv_gen) {
        if (auto it = act_load.find(key); it != act_load.end())
            CHECK(it->second->end <= gen->start + 1e-12);
    }
    for (const auto& [key, f] : fwd) {
        if (auto it = kv_load.find(key); it != kv_load.end())
            CHECK(it->second->end <= f->start + 1e-12);
        if (auto it = kv_gen.find(key); it != kv_gen.end())
            CHECK(it->second->end <= f->start + 1e-12);
        const auto w = weights.find({std::get<0>(key), std::get<1>(key)});
        REQUIRE(w != weights.end());
        CHECK(w->second->end <= f->start + 1e-12);
    }

    // work conservation and busy fractions
    double pcie_time = 0, gpu_time = 0;
    for (const SimEvent& e : res.events) {
        if (e.channel == Channel::PCIe) pcie_time += e.end - e.start;
        if (e.channel == Channel::GPU) gpu_time += e.end - e.start;
    }
    CHECK(res.metrics.makespan >= pcie_time - 1e-9);
    CHECK(res.metrics.makespan >= gpu_time - 1e-9);
    CHECK(res.metrics.pcie_busy <= 1.0 + 1e-9);
    CHECK(res.metrics.gpu_busy <= 1.0 + 1e-9);
    if (res.metrics.makespan > 0)
        CHECK(res.metrics.throughput ==
              doctest::Approx(res.metrics.tokens_generated / res.metrics.makespan));
}

bool events_equal(const std::vector<SimEvent>& a, const std::vector<SimEvent>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].channel != b[i].channel || a[i].kind != b[i].kind ||
            a[i].start != b[i].start || a[i].end != b[i].end ||
            a[i].iteration != b[i].iteration || a[i].layer != b[i].layer ||
            a[i].minibatch != b[i].minibatch)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("kv_only single-layer arithmetic: PCIe-bound and GPU-bound shapes") {
    // one layer, one request, constant context (one block), stores off
    const double W = 2e-3, ld_slope = 5e-8;
    const int gen = 4;

    SimConfig cfg = base_config(SimMode::KvOnly, 1, 8, gen, 0, 64);
    cfg.model = toy_model(1, 1024, 32);  // 8+4 tokens stay inside one block
    cfg.store_checkpoint_traffic = false;

    // PCIe-bound: load dominates the tiny forward
    SimResult res = simulate(cfg);
    const double ld = ld_slope * 32;  // one block of 32 tokens
    const double spf = 1e-7 / (4.0 * 1024 * 1024);
    // makespan: prefill, then the PCIe chain of G*(W+ld), then the last forward
    const double fwd = spf * (flop_count(FlopKind::QkvGen, cfg.model, 1) +
                              attention_step_flops(cfg.model, 8 + gen) +
                              flop_count(FlopKind::ProjFfn, cfg.model, 1));
    const double expect = res.metrics.prefill_seconds + gen * (W + ld) + fwd;
    CHECK(res.metrics.makespan == doctest::Approx(expect).epsilon(1e-9));
    CHECK(res.metrics.gpu_busy < res.metrics.pcie_busy);
    check_invariants(res);

    // GPU-bound: inflate the compute slope so the forward dominates
    cfg.bundle.t_kv_gen.slope = 1e-3;
    const SimResult res2 = simulate(cfg);
    const double spf2 = 1e-3 / (4.0 * 1024 * 1024);
    double fwd2 = 0;
    for (int it = 0; it < gen; ++it)
        fwd2 += spf2 * (flop_count(FlopKind::QkvGen, cfg.model, 1) +
                        attention_step_flops(cfg.model, 9 + it) +
                        flop_count(FlopKind::ProjFfn, cfg.model, 1));
    const double expect2 = res2.metrics.prefill_seconds + W + ld + fwd2;
    CHECK(res2.metrics.makespan == doctest::Approx(expect2).epsilon(1e-9));
    CHECK(res2.metrics.pcie_busy < res2.metrics.gpu_busy);
}

TEST_CASE("mode degeneracy: forced single-kind allocations reproduce the pure modes") {
    SimConfig hybrid_kv = base_config(SimMode::Hybrid, 3, 40, 3, 0, 64);
    SimConfig kv_only = base_config(SimMode::KvOnly, 3, 40, 3, 0, 64);
    CHECK(events_equal(simulate(hybrid_kv).events, simulate(kv_only).events));

    SimConfig hybrid_act = base_config(SimMode::Hybrid, 3, 40, 3, 128, 0);
    SimConfig act_only = base_config(SimMode::ActOnly, 3, 40, 3, 128, 0);
    CHECK(events_equal(simulate(hybrid_act).events, simulate(act_only).events));

    // token recompute at ratio zero is plain KV caching
    SimConfig tr = base_config(SimMode::TokenRecompute, 3, 40, 3, 0, 64);
    tr.recompute_ratio = 0.0;
    CHECK(events_equal(simulate(tr).events, simulate(kv_only).events));
}

TEST_CASE("imbalance directions on the planned default profile") {
    const PlannedSetup s = planned_setup();
    const SimResult kv = simulate(planned_config(s, SimMode::KvOnly, 64, 1024, 128));
    CHECK(kv.metrics.gpu_busy < kv.metrics.pcie_busy);

    const SimResult act = simulate(planned_config(s, SimMode::ActOnly, 64, 1024, 128));
    CHECK(act.metrics.pcie_busy < act.metrics.gpu_busy);
}

TEST_CASE("hybrid at the planned ratio beats both pure modes") {
    const PlannedSetup s = planned_setup();
    for (const int batch : {32, 128}) {
        const double hybrid =
            simulate(planned_config(s, SimMode::Hybrid, batch, 1024, 32)).metrics.throughput;
        const double kv =
            simulate(planned_config(s, SimMode::KvOnly, batch, 1024, 32)).metrics.throughput;
        const double act =
            simulate(planned_config(s, SimMode::ActOnly, batch, 1024, 32)).metrics.throughput;
        CAPTURE(batch);
        CHECK(hybrid >= 0.99 * kv);
        CHECK(hybrid >= 0.99 * act);
    }
}

TEST_CASE("token recompute raises iteration latency over pure KV caching") {
    const PlannedSetup s = planned_setup();
    SimConfig half = planned_config(s, SimMode::TokenRecompute, 64, 1024, 4);
    half.recompute_ratio = 0.5;
    SimConfig none = planned_config(s, SimMode::TokenRecompute, 64, 1024, 4);
    none.recompute_ratio = 0.0;
    const SimMetrics m_half = simulate(half).metrics;
    const SimMetrics m_none = simulate(none).metrics;
    CHECK(m_half.gen_seconds / 4.0 > m_none.gen_seconds / 4.0);
}

TEST_CASE("50% law: act-only context loads exactly half of kv-only, stores off") {
    SimConfig kv = base_config(SimMode::KvOnly, 4, 64, 4, 0, 200);
    kv.store_checkpoint_traffic = false;
    SimConfig act = base_config(SimMode::ActOnly, 4, 64, 4, 200, 0);
    act.store_checkpoint_traffic = false;

    const TrafficReport rkv = traffic_report(simulate(kv).metrics);
    const TrafficReport ract = traffic_report(simulate(act).metrics);
    CHECK(rkv.bytes.act_load == 0);
    CHECK(ract.bytes.kv_load == 0);
    CHECK(static_cast<double>(ract.context_load) ==
          0.5 * static_cast<double>(rkv.context_load));
}

TEST_CASE("store traffic: zero without generation, present with it") {
    SimConfig none = base_config(SimMode::KvOnly, 2, 40, 0, 0, 64);
    const SimMetrics m0 = simulate(none).metrics;
    CHECK(m0.traffic.kv_store == 0);
    CHECK(m0.traffic.act_store == 0);
    CHECK(m0.tokens_generated == 0);

    SimConfig some = base_config(SimMode::KvOnly, 2, 40, 2, 0, 64);
    CHECK(simulate(some).metrics.traffic.kv_store > 0);

    SimConfig off = some;
    off.store_checkpoint_traffic = false;
    CHECK(simulate(off).metrics.traffic.kv_store == 0);
}

TEST_CASE("interior balance: planned hybrid keeps both channels near parity") {
    // profile tuned so the balanced ratio is interior at a workload-sized host
    ModelConfig model = toy_model(4, 1024, 16);
    HardwareProfile profile;
    profile.noise_std = 0.0;
    profile.pcie_bandwidth = 25e9;
    profile.gpu_throughput = 12.8e12;
    profile.gpu_efficiency = 0.5;

    const TimingBundle bundle = calibrate(profile, model, 1);
    MemoryBudget mem = budget_for(profile, model, bundle);
    const int batch = 64, prompt = 256, gen = 128;
    const double workload_blocks = batch * (prompt + gen) / 16.0;
    mem.m_host = mem.s_weight + workload_blocks * mem.s_kv_block * 0.9;
    const HostAllocation alloc =
        plan_host_allocation(bundle, mem, model.tokens_per_block, GpuResidency{0});

    SimConfig cfg;
    cfg.model = model;
    cfg.bundle = bundle;
    cfg.allocation = alloc;
    cfg.packer = PackerConfig{1 << 20, 1 << 20};
    cfg.batch.assign(batch, RequestSpec{prompt, gen});
    cfg.mode = SimMode::Hybrid;
    const SimMetrics m = simulate(cfg).metrics;
    CAPTURE(m.pcie_busy);
    CAPTURE(m.gpu_busy);
    CHECK(alloc.act_host > 0);
    CHECK(alloc.kv_host > 0);
    CHECK(std::abs(m.pcie_busy - m.gpu_busy) <= 0.10);

    // brute-force ratio sweep: no forced split does much better
    double best = 0;
    const long total_bytes_blocks = alloc.act_host + 2 * alloc.kv_host;  // in ACT units
    for (int i = 0; i <= 10; ++i) {
        HostAllocation forced;
        forced.act_host = total_bytes_blocks * i / 10;
        forced.kv_host = (total_bytes_blocks - forced.act_host) / 2;
        if (forced.act_host + forced.kv_host == 0) continue;
        SimConfig f = cfg;
        f.allocation = forced;
        try {
            best = std::max(best, simulate(f).metrics.throughput);
        } catch (const CapacityError&) {
        }
    }
    CHECK(m.throughput >= 0.95 * best);
}

TEST_CASE("fuzzed configurations hold the structural invariants") {
    SplitMix64 rng(1234);
    for (int trial = 0; trial < 60; ++trial) {
        SimConfig cfg;
        cfg.model = toy_model(static_cast<int>(rng.uniform_int(1, 3)), 512,
                              static_cast<int>(rng.uniform_int(4, 16)));
        cfg.bundle = make_bundle(rng.uniform(1e-8, 1e-6), rng.uniform(0, 1e-5),
                                 rng.uniform(1e-8, 1e-6), rng.uniform(0, 1e-5),
                                 rng.uniform(1e-4, 5e-3), 10'000'000);
        cfg.allocation.act_host = rng.uniform_int(0, 64);
        cfg.allocation.kv_host = rng.uniform_int(1, 64);
        cfg.act_gpu.act_gpu = rng.uniform_int(0, 8);
        cfg.packer = PackerConfig{rng.uniform_int(8, 64), rng.uniform_int(8, 64)};
        const int batch = static_cast<int>(rng.uniform_int(1, 5));
        for (int i = 0; i < batch; ++i)
            cfg.batch.push_back(RequestSpec{static_cast<int>(rng.uniform_int(1, 40)),
                                            static_cast<int>(rng.uniform_int(0, 4))});
        const int mode = static_cast<int>(rng.uniform_int(0, 3));
        cfg.mode = static_cast<SimMode>(mode);
        cfg.recompute_ratio = rng.uniform01();
        cfg.full_duplex_pcie = rng.uniform01() < 0.25;
        cfg.store_checkpoint_traffic = rng.uniform01() < 0.75;

        try {
            const SimResult res = simulate(cfg);
            check_invariants(res);
            const SimResult again = simulate(cfg);
            CHECK(events_equal(res.events, again.events));
        } catch (const CapacityError&) {
        } catch (const ConfigError&) {
        }
    }
}

TEST_CASE("sweep: full grid, per-point error isolation, CSV-ready rows") {
    SweepSpec spec;
    spec.model = toy_model(2, 1024, 16);
    spec.profile.noise_std = 0.0;
    spec.profile.host_mem = 1e9;
    spec.modes = {SimMode::Hybrid, SimMode::KvOnly};
    spec.batch_sizes = {2, 4, 4096};  // the last cannot fit in 8 GB of host
    spec.prompt_lens = {64};
    spec.gen_len = 2;
    const auto rows = run_sweep(spec, 1);
    REQUIRE(rows.size() == 6);
    int failures = 0;
    for (const SweepRow& r : rows) {
        if (!r.ok) {
            ++failures;
            CHECK(!r.error.empty());
            CHECK(r.batch == 4096);
        } else {
            CHECK(r.metrics.throughput > 0);
        }
    }
    CHECK(failures == 2);
}
