#include <doctest.h>

#include <cmath>
#include <vector>

#include "hybridsim/errors.hpp"
#include "hybridsim/rng.hpp"
#include "hybridsim/timing.hpp"

using namespace hybridsim;

namespace {

ModelConfig opt30b_dims() {
    ModelConfig c;
    c.num_layers = 48;
    c.hidden_dim = 7168;
    c.num_heads = 56;
    c.validate();
    return c;
}

}  // namespace

TEST_CASE("fit_linear: exact line, constant data, degenerate input") {
    const LinearTimeModel exact = fit_linear({{0, 0}, {10, 10}});
    CHECK(exact.slope == doctest::Approx(1.0));
    CHECK(exact.intercept == doctest::Approx(0.0));
    CHECK(exact.r_squared == doctest::Approx(1.0));

    const LinearTimeModel flat = fit_linear({{1, 5}, {2, 5}, {3, 5}});
    CHECK(flat.slope == doctest::Approx(0.0));
    CHECK(flat.intercept == doctest::Approx(5.0));
    CHECK(flat.r_squared == 1.0);  // zero residual on zero variance

    CHECK_THROWS_AS(fit_linear({{1, 1}}), InputError);
    CHECK_THROWS_AS(fit_linear({{2, 1}, {2, 3}, {2, 9}}), InputError);
}

TEST_CASE("fit_linear: negative intercepts clamp to zero with a flag") {
    const LinearTimeModel m = fit_linear({{10, 0.5}, {20, 2.5}});
    CHECK(m.slope == doctest::Approx(0.2));
    CHECK(m.intercept == 0.0);
    CHECK(m.intercept_clamped);
}

TEST_CASE("fit_linear: 2% noise still fits with R^2 at the paper's level") {
    HardwareProfile profile;
    profile.noise_std = 0.02;
    const auto samples = synthesize_samples(profile, opt30b_dims(), SampleKind::KvGen, 20, 7);
    const LinearTimeModel m = fit_linear(samples);
    CHECK(m.r_squared >= 0.99);
}

TEST_CASE("synthesize_samples: noiseless points sit exactly on the analytic line") {
    HardwareProfile profile;
    profile.noise_std = 0.0;
    const ModelConfig cfg = opt30b_dims();

    const auto kv = synthesize_samples(profile, cfg, SampleKind::KvGen, 16, 1);
    const LinearTimeModel mk = fit_linear(kv);
    const double slope_true = 4.0 * 7168.0 * 7168.0 / profile.effective_flops();
    CHECK(std::abs(mk.slope - slope_true) / slope_true <= 1e-9);
    CHECK(mk.r_squared == doctest::Approx(1.0));

    const auto ld = synthesize_samples(profile, cfg, SampleKind::LoadKv, 16, 1);
    const LinearTimeModel ml = fit_linear(ld);
    CHECK(ml.r_squared == doctest::Approx(1.0));
    // hand arithmetic: 1024 tokens * 28672 B / 25 GB/s per layer
    CHECK(eval(ml, 1024) == doctest::Approx(1024.0 * 28672.0 / 25e9).epsilon(1e-9));
}

TEST_CASE("synthesize_samples: doubling PCIe bandwidth halves every load sample") {
    HardwareProfile a;
    HardwareProfile b;
    b.pcie_bandwidth = 2 * a.pcie_bandwidth;
    const ModelConfig cfg = opt30b_dims();
    const auto sa = synthesize_samples(a, cfg, SampleKind::LoadKv, 12, 9);
    const auto sb = synthesize_samples(b, cfg, SampleKind::LoadKv, 12, 9);
    for (std::size_t i = 0; i < sa.size(); ++i) {
        CHECK(sa[i].n_tokens == sb[i].n_tokens);
        CHECK(sa[i].seconds == doctest::Approx(2.0 * sb[i].seconds).epsilon(1e-12));
    }
}

TEST_CASE("eval: line evaluation and input guards") {
    const LinearTimeModel m{2.0, 3.0, 1.0, false};
    CHECK(eval(m, 0) == 3.0);
    CHECK(eval(m, 5) == 13.0);
    CHECK_THROWS_AS(eval(m, -1), InputError);
}

TEST_CASE("invert: floor semantics and the budget property") {
    const LinearTimeModel unit{1.0, 0.0, 1.0, false};
    CHECK(invert(unit, 7.9) == 7);
    const LinearTimeModel off{0.5, 2.0, 1.0, false};
    CHECK(invert(off, 2.0) == 0);  // budget equals the intercept
    CHECK(invert(off, 1.0) == 0);  // below the intercept clamps at zero
    CHECK_THROWS_AS(invert(LinearTimeModel{0.0, 1.0, 1.0, false}, 5.0), InputError);

    SplitMix64 rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const LinearTimeModel m{rng.uniform(1e-9, 1e-3), rng.uniform(0.0, 1e-3), 1.0, false};
        const double t = m.intercept + rng.uniform(0.0, 1.0);
        const long n = invert(m, t);
        CHECK(eval(m, static_cast<double>(n)) <= t);
        CHECK(t < eval(m, static_cast<double>(n + 1)));
    }
}

TEST_CASE("weight_bytes: OPT-30B footprint and scaling laws") {
    const ModelConfig cfg = opt30b_dims();
    const WeightBytes w = weight_bytes(cfg);
    CHECK(w.per_layer == 12ULL * 7168 * 7168 * 2);  // ~1.23 GB
    // fp16 footprint of a ~30B parameter model
    CHECK(static_cast<double>(w.total) == doctest::Approx(30e9 * 2.0).epsilon(0.05));

    ModelConfig doubled = cfg;
    doubled.hidden_dim = 2 * cfg.hidden_dim;
    doubled.ffn_dim = 4 * doubled.hidden_dim;
    CHECK(weight_bytes(doubled).per_layer == 4 * w.per_layer);

    ModelConfig no_layers = cfg;
    no_layers.num_layers = 0;
    CHECK(weight_bytes(no_layers).total ==
          static_cast<std::uint64_t>(cfg.vocab_size) * cfg.hidden_dim * 2);
}

TEST_CASE("calibrate: bundle fields are consistent and serialize") {
    HardwareProfile profile;
    profile.noise_std = 0.0;
    const ModelConfig cfg = opt30b_dims();
    const TimingBundle b = calibrate(profile, cfg, 42);
    CHECK(b.s_weight_layer == weight_bytes(cfg).per_layer);
    CHECK(b.t_load_w ==
          doctest::Approx(static_cast<double>(b.s_weight_layer) / profile.pcie_bandwidth));
    CHECK(b.t_kv_gen.r_squared == doctest::Approx(1.0));

    const TimingBundle back = TimingBundle::from_json(b.to_json());
    CHECK(back.t_kv_gen.slope == b.t_kv_gen.slope);
    CHECK(back.t_load_kv.intercept == b.t_load_kv.intercept);
    CHECK(back.t_load_w == b.t_load_w);
    CHECK(back.s_weight_total == b.s_weight_total);
}

TEST_CASE("calibration quality: 2% noise keeps R^2 >= 0.98 in at least 95% of seeds") {
    HardwareProfile profile;  // default noise_std = 0.02
    const ModelConfig cfg = opt30b_dims();
    int good = 0;
    const int seeds = 40;
    for (int s = 0; s < seeds; ++s) {
        const TimingBundle b = calibrate(profile, cfg, static_cast<std::uint64_t>(s));
        if (b.t_kv_gen.r_squared >= 0.98 && b.t_load_kv.r_squared >= 0.98) ++good;
    }
    CHECK(good >= static_cast<int>(0.95 * seeds));
}
