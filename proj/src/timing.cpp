#include "hybridsim/timing.hpp"

#include <cmath>
#include <set>

#include "hybridsim/errors.hpp"
#include "hybridsim/flops.hpp"
#include "hybridsim/rng.hpp"

namespace hybridsim {

void HardwareProfile::validate() const {
    if (pcie_bandwidth <= 0 || gpu_throughput <= 0 || gpu_efficiency <= 0 || host_mem <= 0 ||
        gpu_mem <= 0)
        throw InputError("HardwareProfile: all rates and capacities must be positive");
    if (gpu_efficiency > 1.0) throw InputError("HardwareProfile: gpu_efficiency must be <= 1");
    if (noise_std < 0) throw InputError("HardwareProfile: noise_std must be >= 0");
}

HardwareProfile HardwareProfile::from_json(const nlohmann::json& j) {
    HardwareProfile p;
    if (j.contains("pcie_bandwidth")) p.pcie_bandwidth = j.at("pcie_bandwidth").get<double>();
    if (j.contains("gpu_throughput")) p.gpu_throughput = j.at("gpu_throughput").get<double>();
    if (j.contains("gpu_efficiency")) p.gpu_efficiency = j.at("gpu_efficiency").get<double>();
    if (j.contains("host_mem")) p.host_mem = j.at("host_mem").get<double>();
    if (j.contains("gpu_mem")) p.gpu_mem = j.at("gpu_mem").get<double>();
    if (j.contains("noise_std")) p.noise_std = j.at("noise_std").get<double>();
    p.validate();
    return p;
}

nlohmann::json HardwareProfile::to_json() const {
    return nlohmann::json{{"pcie_bandwidth", pcie_bandwidth}, {"gpu_throughput", gpu_throughput},
                          {"gpu_efficiency", gpu_efficiency}, {"host_mem", host_mem},
                          {"gpu_mem", gpu_mem},               {"noise_std", noise_std}};
}

LinearTimeModel fit_linear(const std::vector<Sample>& samples) {
    const std::size_t n = samples.size();
    if (n < 2) throw InputError("fit_linear: need at least two samples");
    std::set<double> xs;
    for (const Sample& s : samples) xs.insert(s.n_tokens);
    if (xs.size() < 2) throw InputError("fit_linear: need at least two distinct n_tokens values");

    double sx = 0, sy = 0;
    for (const Sample& s : samples) {
        sx += s.n_tokens;
        sy += s.seconds;
    }
    const double mx = sx / static_cast<double>(n);
    const double my = sy / static_cast<double>(n);
    double sxx = 0, sxy = 0;
    for (const Sample& s : samples) {
        sxx += (s.n_tokens - mx) * (s.n_tokens - mx);
        sxy += (s.n_tokens - mx) * (s.seconds - my);
    }
    LinearTimeModel m;
    m.slope = sxy / sxx;
    m.intercept = my - m.slope * mx;
    if (m.intercept < 0) {
        m.intercept = 0.0;
        m.intercept_clamped = true;
    }

    double ss_res = 0, ss_tot = 0;
    for (const Sample& s : samples) {
        const double fit = m.slope * s.n_tokens + m.intercept;
        ss_res += (s.seconds - fit) * (s.seconds - fit);
        ss_tot += (s.seconds - my) * (s.seconds - my);
    }
    m.r_squared = ss_tot == 0.0 ? (ss_res == 0.0 ? 1.0 : 0.0) : 1.0 - ss_res / ss_tot;
    return m;
}

std::vector<Sample> synthesize_samples(const HardwareProfile& profile, const ModelConfig& config,
                                       SampleKind kind, int n_points, std::uint64_t seed,
                                       double lo_tokens, double hi_tokens) {
    profile.validate();
    if (n_points < 2) throw InputError("synthesize_samples: n_points must be >= 2");
    const std::uint64_t tag = kind == SampleKind::KvGen ? 0x6b76 : 0x6c64;
    SplitMix64 rng(mix_seed(seed, tag));
    const double per_token_kv_bytes =
        2.0 * config.hidden_dim * config.bytes_per_scalar;  // one layer

    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(n_points));
    for (int i = 0; i < n_points; ++i) {
        const double frac = n_points == 1 ? 0.0 : static_cast<double>(i) / (n_points - 1);
        const double n = std::floor(lo_tokens * std::pow(hi_tokens / lo_tokens, frac));
        double seconds;
        if (kind == SampleKind::KvGen) {
            seconds = flop_count(FlopKind::KvGen, config, static_cast<long>(n)) /
                      profile.effective_flops();
        } else {
            seconds = n * per_token_kv_bytes / profile.pcie_bandwidth;
        }
        seconds *= 1.0 + rng.normal(0.0, profile.noise_std);
        out.push_back(Sample{n, seconds});
    }
    return out;
}

double eval(const LinearTimeModel& model, double n_tokens) {
    if (n_tokens < 0) throw InputError("eval: negative token count");
    return model.slope * n_tokens + model.intercept;
}

long invert(const LinearTimeModel& model, double seconds) {
    if (model.slope <= 0) throw InputError("invert: model is not invertible (slope <= 0)");
    if (seconds < 0) throw InputError("invert: negative time budget");
    long n = static_cast<long>(std::floor((seconds - model.intercept) / model.slope));
    if (n < 0) return 0;
    // guard the floor against rounding so eval(n) never exceeds the budget
    while (n > 0 && eval(model, static_cast<double>(n)) > seconds) --n;
    return n;
}

WeightBytes weight_bytes(const ModelConfig& config) {
    const std::uint64_t d = static_cast<std::uint64_t>(config.hidden_dim);
    const std::uint64_t f = static_cast<std::uint64_t>(config.ffn_dim);
    const std::uint64_t bps = static_cast<std::uint64_t>(config.bytes_per_scalar);
    WeightBytes w;
    w.per_layer = (4 * d * d + 2 * d * f) * bps;
    w.total = w.per_layer * static_cast<std::uint64_t>(config.num_layers) +
              static_cast<std::uint64_t>(config.vocab_size) * d * bps;
    return w;
}

namespace {
nlohmann::json model_to_json(const LinearTimeModel& m) {
    return nlohmann::json{{"slope", m.slope},
                          {"intercept", m.intercept},
                          {"r2", m.r_squared},
                          {"intercept_clamped", m.intercept_clamped}};
}

LinearTimeModel model_from_json(const nlohmann::json& j) {
    LinearTimeModel m;
    m.slope = j.at("slope").get<double>();
    m.intercept = j.at("intercept").get<double>();
    m.r_squared = j.value("r2", 0.0);
    m.intercept_clamped = j.value("intercept_clamped", false);
    return m;
}
}  // namespace

nlohmann::json TimingBundle::to_json() const {
    return nlohmann::json{{"kv_gen", model_to_json(t_kv_gen)},
                          {"load_kv", model_to_json(t_load_kv)},
                          {"t_load_w", t_load_w},
                          {"s_weight_layer", s_weight_layer},
                          {"s_weight_total", s_weight_total}};
}

TimingBundle TimingBundle::from_json(const nlohmann::json& j) {
    TimingBundle b;
    b.t_kv_gen = model_from_json(j.at("kv_gen"));
    b.t_load_kv = model_from_json(j.at("load_kv"));
    b.t_load_w = j.at("t_load_w").get<double>();
    b.s_weight_layer = j.at("s_weight_layer").get<std::uint64_t>();
    b.s_weight_total = j.value("s_weight_total", std::uint64_t{0});
    return b;
}

TimingBundle calibrate(const HardwareProfile& profile, const ModelConfig& config,
                       std::uint64_t seed, int n_points) {
    const auto kv_gen = synthesize_samples(profile, config, SampleKind::KvGen, n_points, seed);
    const auto load_kv = synthesize_samples(profile, config, SampleKind::LoadKv, n_points, seed);
    return bundle_from_samples(kv_gen, load_kv, profile, config);
}

TimingBundle bundle_from_samples(const std::vector<Sample>& kv_gen_samples,
                                 const std::vector<Sample>& load_kv_samples,
                                 const HardwareProfile& profile, const ModelConfig& config) {
    TimingBundle b;
    b.t_kv_gen = fit_linear(kv_gen_samples);
    b.t_load_kv = fit_linear(load_kv_samples);
    const WeightBytes w = weight_bytes(config);
    b.s_weight_layer = w.per_layer;
    b.s_weight_total = w.total;
    b.t_load_w = static_cast<double>(w.per_layer) / profile.pcie_bandwidth;
    return b;
}

}  // namespace hybridsim
