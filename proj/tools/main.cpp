// hybridsim command line: calibration, planning, packing, simulation and the
// numerics equivalence check, wired for reproducible experiments.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hybridsim/errors.hpp"
#include "hybridsim/meta.hpp"
#include "hybridsim/rng.hpp"
#include "hybridsim/sim.hpp"
#include "hybridsim/verify.hpp"

using nlohmann::json;
namespace fs = std::filesystem;
using namespace hybridsim;

namespace {

struct Ctx {
    json config = json::object();
    std::string out_dir = ".";
    std::uint64_t seed = 42;
    int jobs = 0;
    std::string profile_path;
    // raw bytes of every consumed input, hashed into output headers
    std::map<std::string, std::string> inputs;
};

json load_json_file(Ctx& ctx, const std::string& path, const std::string& tag) {
    const std::string bytes = read_file(path);
    ctx.inputs[tag] = bytes;
    return json::parse(bytes);
}

HardwareProfile resolve_profile(Ctx& ctx) {
    if (!ctx.profile_path.empty())
        return HardwareProfile::from_json(load_json_file(ctx, ctx.profile_path, "profile"));
    if (ctx.config.contains("profile")) return HardwareProfile::from_json(ctx.config["profile"]);
    return HardwareProfile{};
}

ModelConfig resolve_model(Ctx& ctx, const std::string& model_flag,
                          const std::string& model_file) {
    if (!model_file.empty())
        return ModelConfig::from_json(load_json_file(ctx, model_file, "model"));
    if (!model_flag.empty()) return ModelConfig::preset(model_flag);
    if (ctx.config.contains("model")) {
        const json& m = ctx.config["model"];
        if (m.is_string()) return ModelConfig::preset(m.get<std::string>());
        return ModelConfig::from_json(m);
    }
    return ModelConfig::preset("opt-30b");
}

TimingBundle resolve_bundle(Ctx& ctx, const std::string& bundle_path,
                            const HardwareProfile& profile, const ModelConfig& model) {
    if (!bundle_path.empty())
        return TimingBundle::from_json(load_json_file(ctx, bundle_path, "bundle"));
    return calibrate(profile, model, ctx.seed);
}

std::string out_path(const Ctx& ctx, const std::string& name) {
    fs::create_directories(ctx.out_dir);
    return (fs::path(ctx.out_dir) / name).string();
}

void write_json(Ctx& ctx, const std::string& name, json j) {
    j["meta"] = make_meta(ctx.seed, ctx.inputs);
    const std::string path = out_path(ctx, name);
    write_file(path, j.dump(2) + "\n");
    std::cout << path << "\n";
}

std::vector<Sample> parse_samples_csv(const std::string& bytes, const std::string& path) {
    std::vector<Sample> out;
    std::istringstream in(bytes);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string a, b;
        if (!std::getline(ls, a, ',') || !std::getline(ls, b)) continue;
        try {
            out.push_back(Sample{std::stod(a), std::stod(b)});
        } catch (const std::exception&) {
            continue;  // header or stray text line
        }
    }
    if (out.size() < 2) throw InputError("too few samples in " + path);
    return out;
}

json metrics_to_json(const SimMetrics& m) {
    return json{{"tokens_generated", m.tokens_generated},
                {"makespan_s", m.makespan},
                {"throughput_tok_s", m.throughput},
                {"pcie_busy", m.pcie_busy},
                {"gpu_busy", m.gpu_busy},
                {"prefill_s", m.prefill_seconds},
                {"gen_s", m.gen_seconds},
                {"traffic",
                 {{"weights", m.traffic.weights},
                  {"kv_load", m.traffic.kv_load},
                  {"act_load", m.traffic.act_load},
                  {"kv_store", m.traffic.kv_store},
                  {"act_store", m.traffic.act_store}}}};
}

template <typename T>
std::vector<T> config_list(const Ctx& ctx, const std::string& key, std::vector<T> fallback) {
    if (ctx.config.contains(key)) return ctx.config[key].get<std::vector<T>>();
    return fallback;
}

int cmd_calibrate(Ctx& ctx, const std::string& model_flag, const std::string& model_file,
                  int points, const std::string& kv_gen_csv, const std::string& load_kv_csv) {
    const HardwareProfile profile = resolve_profile(ctx);
    const ModelConfig model = resolve_model(ctx, model_flag, model_file);
    TimingBundle bundle;
    if (!kv_gen_csv.empty() || !load_kv_csv.empty()) {
        if (kv_gen_csv.empty() || load_kv_csv.empty())
            throw InputError("--kv-gen-csv and --load-kv-csv must be given together");
        const std::string kb = read_file(kv_gen_csv);
        const std::string lb = read_file(load_kv_csv);
        ctx.inputs["kv_gen_csv"] = kb;
        ctx.inputs["load_kv_csv"] = lb;
        bundle = bundle_from_samples(parse_samples_csv(kb, kv_gen_csv),
                                     parse_samples_csv(lb, load_kv_csv), profile, model);
    } else {
        bundle = calibrate(profile, model, ctx.seed, points);
    }
    json j = bundle.to_json();
    j["model"] = model.to_json();
    write_json(ctx, "bundle.json", j);
    return 0;
}

int cmd_plan(Ctx& ctx, const std::string& model_flag, const std::string& model_file,
             const std::string& bundle_path, long act_gpu) {
    const HardwareProfile profile = resolve_profile(ctx);
    const ModelConfig model = resolve_model(ctx, model_flag, model_file);
    const TimingBundle bundle = resolve_bundle(ctx, bundle_path, profile, model);
    const MemoryBudget mem = budget_for(profile, model, bundle);
    const HostAllocation alloc =
        plan_host_allocation(bundle, mem, model.tokens_per_block, GpuResidency{act_gpu});
    json j = alloc.to_json();
    j["predicted"] = {
        {"t_pcie", planned_t_pcie(bundle, model.tokens_per_block, alloc)},
        {"t_computation",
         planned_t_computation(bundle, model.tokens_per_block, alloc, GpuResidency{act_gpu})}};
    j["budget"] = {{"m_host", mem.m_host},
                   {"s_weight", mem.s_weight},
                   {"s_kv_block", mem.s_kv_block},
                   {"s_act_block", mem.s_act_block},
                   {"act_gpu_blocks", act_gpu}};
    write_json(ctx, "plan.json", j);
    return 0;
}

int cmd_pack(Ctx& ctx, const std::string& requests_csv, const std::string& model_flag,
             const std::string& model_file, const std::string& bundle_path, long act_max,
             long kv_max) {
    const HardwareProfile profile = resolve_profile(ctx);
    const ModelConfig model = resolve_model(ctx, model_flag, model_file);
    const TimingBundle bundle = resolve_bundle(ctx, bundle_path, profile, model);

    const std::string bytes = read_file(requests_csv);
    ctx.inputs["requests"] = bytes;
    std::vector<RequestBlocks> requests;
    std::istringstream in(bytes);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string id, a, k;
        if (!std::getline(ls, id, ',') || !std::getline(ls, a, ',') || !std::getline(ls, k))
            continue;
        try {
            requests.push_back(RequestBlocks{id, std::stol(a), std::stol(k)});
        } catch (const std::exception&) {
            continue;
        }
    }
    if (requests.empty()) throw InputError("no requests parsed from " + requests_csv);

    PackerConfig packer = default_packer(profile, model);
    if (act_max > 0) packer.act_max = act_max;
    if (kv_max > 0) packer.kv_max = kv_max;

    const auto batches = form_minibatches(requests, packer, bundle, model.tokens_per_block);
    json out_batches = json::array();
    for (const MiniBatch& mb : batches) {
        out_batches.push_back(
            {{"ids", mb.ids},
             {"act_blocks", mb.act_mb},
             {"kv_blocks", mb.kv_mb},
             {"f_b", cost_fb(mb.act_mb, mb.kv_mb, bundle, model.tokens_per_block)}});
    }
    write_json(ctx, "packing.json",
               json{{"minibatches", out_batches},
                    {"packer", {{"act_max", packer.act_max}, {"kv_max", packer.kv_max}}}});
    return 0;
}

SweepSpec build_sweep_spec(Ctx& ctx, const std::string& model_flag, const std::string& model_file,
                           std::vector<std::string> modes, std::vector<int> batches,
                           std::vector<int> prompts, int gen_len, double rc_ratio, long act_gpu) {
    SweepSpec spec;
    spec.profile = resolve_profile(ctx);
    spec.model = resolve_model(ctx, model_flag, model_file);
    spec.seed = ctx.seed;

    if (modes.empty())
        modes = config_list<std::string>(ctx, "modes", {"hybrid", "kv_only", "act_only"});
    spec.modes.clear();
    for (const std::string& m : modes) spec.modes.push_back(sim_mode_from_string(m));
    spec.batch_sizes = !batches.empty() ? batches
                                        : config_list<int>(ctx, "batch_sizes", spec.batch_sizes);
    spec.prompt_lens = !prompts.empty() ? prompts
                                        : config_list<int>(ctx, "prompt_lens", spec.prompt_lens);
    spec.gen_len = gen_len > 0 ? gen_len : ctx.config.value("gen_len", spec.gen_len);
    spec.recompute_ratio =
        rc_ratio >= 0 ? rc_ratio : ctx.config.value("recompute_ratio", spec.recompute_ratio);
    spec.act_gpu_blocks =
        act_gpu >= 0 ? act_gpu : ctx.config.value("act_gpu_blocks", spec.act_gpu_blocks);
    return spec;
}

int cmd_simulate(Ctx& ctx, const SweepSpec& spec, const std::string& bundle_path,
                 const std::string& plan_path, const std::string& mode, int batch, int prompt,
                 bool trace, bool no_store_traffic, bool full_duplex) {
    const TimingBundle bundle = resolve_bundle(ctx, bundle_path, spec.profile, spec.model);
    HostAllocation alloc;
    if (!plan_path.empty()) {
        alloc = HostAllocation::from_json(load_json_file(ctx, plan_path, "plan"));
    } else {
        const MemoryBudget mem = budget_for(spec.profile, spec.model, bundle);
        alloc = plan_host_allocation(bundle, mem, spec.model.tokens_per_block,
                                     GpuResidency{spec.act_gpu_blocks});
    }
    SimConfig cfg =
        make_sim_config(spec, bundle, alloc, sim_mode_from_string(mode), batch, prompt);
    cfg.store_checkpoint_traffic = !no_store_traffic;
    cfg.full_duplex_pcie = full_duplex;

    const SimResult res = simulate(cfg);
    json j = metrics_to_json(res.metrics);
    j["mode"] = mode;
    j["batch"] = batch;
    j["prompt_len"] = prompt;
    j["gen_len"] = spec.gen_len;
    j["traffic_report"] = traffic_report(res.metrics).to_json();
    write_json(ctx, "metrics.json", j);

    if (trace) {
        json ev = json::array();
        for (const SimEvent& e : res.events) {
            ev.push_back({{"name", to_string(e.kind)},
                          {"track", to_string(e.channel)},
                          {"start_us", e.start * 1e6},
                          {"end_us", e.end * 1e6},
                          {"iteration", e.iteration},
                          {"layer", e.layer},
                          {"minibatch", e.minibatch}});
        }
        write_json(ctx, "trace.json", json{{"events", ev}});
    }
    return 0;
}

int cmd_sweep(Ctx& ctx, const SweepSpec& spec, const std::string& out_name) {
    const std::vector<SweepRow> rows = run_sweep(spec, ctx.jobs);
    std::ostringstream csv;
    csv << meta_csv_line(ctx.seed, ctx.inputs) << "\n";
    csv << "mode,batch,prompt_len,throughput_tok_s,pcie_busy,gpu_busy,"
           "traffic_weights,traffic_kv_load,traffic_act_load,traffic_kv_store,traffic_act_store,"
           "error\n";
    char buf[64];
    for (const SweepRow& r : rows) {
        csv << to_string(r.mode) << "," << r.batch << "," << r.prompt_len << ",";
        auto num = [&](double v) {
            std::snprintf(buf, sizeof(buf), "%.9g", v);
            csv << buf;
        };
        if (r.ok) {
            num(r.metrics.throughput);
            csv << ",";
            num(r.metrics.pcie_busy);
            csv << ",";
            num(r.metrics.gpu_busy);
            csv << "," << r.metrics.traffic.weights << "," << r.metrics.traffic.kv_load << ","
                << r.metrics.traffic.act_load << "," << r.metrics.traffic.kv_store << ","
                << r.metrics.traffic.act_store << ",";
        } else {
            csv << ",,,,,,,,";
        }
        csv << r.error << "\n";
    }
    const std::string path = out_path(ctx, out_name);
    write_file(path, csv.str());
    std::cout << path << "\n";
    return 0;
}

int cmd_verify_numerics(Ctx& ctx, int n_models, bool inject_fault) {
    double worst = 0.0;
    bool all_exact = true;
    for (int i = 0; i < n_models; ++i) {
        const EquivalenceResult r =
            run_equivalence_case(mix_seed(ctx.seed, static_cast<std::uint64_t>(i)), inject_fault);
        std::printf("model %2d: layers=%d d=%-3d prompt=%-3d max_rel_dev=%.3e%s\n", i,
                    r.num_layers, r.hidden_dim, r.prompt_len, r.max_rel_dev,
                    r.exact ? " (exact)" : "");
        worst = std::max(worst, r.max_rel_dev);
        all_exact = all_exact && r.exact;
    }
    const bool pass = worst <= 1e-10;
    std::printf("max deviation across %d models: %.3e -> %s\n", n_models, worst,
                pass ? "PASS" : "FAIL");
    if (all_exact) std::printf("all assemblies matched bit-for-bit\n");
    return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"planner and simulator for host-offloaded LLM inference with a "
                 "KV-activation hybrid cache"};
    app.require_subcommand(1);

    Ctx ctx;
    std::string config_path;
    app.add_option("--config", config_path, "experiment config JSON");
    app.add_option("--seed", ctx.seed, "RNG seed");
    app.add_option("--out", ctx.out_dir, "output directory");
    app.add_option("--jobs", ctx.jobs, "parallel sweep workers (0 = all cores)");
    app.add_option("--profile", ctx.profile_path, "hardware profile JSON");

    std::string model_flag, model_file, bundle_path, plan_path;
    auto add_model_opts = [&](CLI::App* cmd) {
        cmd->add_option("--model", model_flag, "model preset (opt-6.7b/13b/30b/66b)");
        cmd->add_option("--model-file", model_file, "model config JSON file");
    };

    // calibrate
    auto* calib = app.add_subcommand("calibrate", "fit the timing models");
    add_model_opts(calib);
    int calib_points = 16;
    std::string kv_gen_csv, load_kv_csv;
    calib->add_option("--points", calib_points, "synthetic sample count");
    calib->add_option("--kv-gen-csv", kv_gen_csv, "measured samples: n_tokens,seconds");
    calib->add_option("--load-kv-csv", load_kv_csv, "measured samples: n_tokens,seconds");

    // plan
    auto* plan = app.add_subcommand("plan", "host memory block allocation");
    add_model_opts(plan);
    long act_gpu = -1;
    plan->add_option("--bundle", bundle_path, "timing bundle JSON");
    plan->add_option("--act-gpu", act_gpu, "ACT blocks resident in GPU memory");

    // pack
    auto* pack = app.add_subcommand("pack", "greedy mini-batch formation");
    add_model_opts(pack);
    std::string requests_csv;
    long act_max = 0, kv_max = 0;
    pack->add_option("--requests", requests_csv, "CSV: id,act_blocks,kv_blocks")->required();
    pack->add_option("--bundle", bundle_path, "timing bundle JSON");
    pack->add_option("--act-max", act_max, "ACT block capacity per mini-batch");
    pack->add_option("--kv-max", kv_max, "KV block capacity per mini-batch");

    // simulate
    auto* sim = app.add_subcommand("simulate", "run one configuration");
    add_model_opts(sim);
    std::string mode = "hybrid";
    int batch = 8, prompt = 512, gen_len = 0;
    double rc_ratio = -1;
    bool trace = false, no_store = false, duplex = false;
    sim->add_option("--bundle", bundle_path, "timing bundle JSON");
    sim->add_option("--plan", plan_path, "host allocation JSON");
    sim->add_option("--mode", mode, "hybrid|kv_only|act_only|token_recompute");
    sim->add_option("--batch-size", batch, "requests in the batch");
    sim->add_option("--prompt-len", prompt, "prompt tokens per request");
    sim->add_option("--gen-len", gen_len, "generated tokens per request");
    sim->add_option("--recompute-ratio", rc_ratio, "token_recompute share in [0,1]");
    sim->add_option("--act-gpu", act_gpu, "ACT blocks resident in GPU memory");
    sim->add_flag("--trace", trace, "also write the event trace JSON");
    sim->add_flag("--no-store-traffic", no_store, "disable new-token store modeling");
    sim->add_flag("--full-duplex", duplex, "stores use a separate PCIe direction");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "grid of simulations to CSV");
    add_model_opts(sweep);
    std::vector<std::string> modes;
    std::vector<int> batches, prompts;
    std::string sweep_out = "sweep.csv";
    sweep->add_option("--modes", modes, "simulation modes")->delimiter(',');
    sweep->add_option("--batch-sizes", batches, "batch sizes")->delimiter(',');
    sweep->add_option("--prompt-lens", prompts, "prompt lengths")->delimiter(',');
    sweep->add_option("--gen-len", gen_len, "generated tokens per request");
    sweep->add_option("--recompute-ratio", rc_ratio, "token_recompute share");
    sweep->add_option("--act-gpu", act_gpu, "ACT blocks resident in GPU memory");
    sweep->add_option("--out-file", sweep_out, "CSV file name");

    // verify-numerics
    auto* verify = app.add_subcommand("verify-numerics", "recompute equivalence check");
    int n_models = 10;
    bool inject_fault = false;
    verify->add_option("--models", n_models, "number of seeded models");
    verify->add_flag("--inject-fault", inject_fault, "negative control: perturb one W_K entry");

    CLI11_PARSE(app, argc, argv);

    try {
        if (!config_path.empty()) {
            ctx.config = json::parse(read_file(config_path));
            ctx.inputs["config"] = ctx.config.dump();
            if (app.count("--seed") == 0 && ctx.config.contains("seed"))
                ctx.seed = ctx.config["seed"].get<std::uint64_t>();
            if (app.count("--out") == 0 && ctx.config.contains("out"))
                ctx.out_dir = ctx.config["out"].get<std::string>();
        }

        if (calib->parsed())
            return cmd_calibrate(ctx, model_flag, model_file, calib_points, kv_gen_csv,
                                 load_kv_csv);
        if (plan->parsed())
            return cmd_plan(ctx, model_flag, model_file, bundle_path, std::max(0L, act_gpu));
        if (pack->parsed())
            return cmd_pack(ctx, requests_csv, model_flag, model_file, bundle_path, act_max,
                            kv_max);
        if (sim->parsed() || sweep->parsed()) {
            SweepSpec spec = build_sweep_spec(ctx, model_flag, model_file, modes, batches,
                                              prompts, gen_len, rc_ratio, act_gpu);
            if (sim->parsed())
                return cmd_simulate(ctx, spec, bundle_path, plan_path, mode, batch, prompt,
                                    trace, no_store, duplex);
            return cmd_sweep(ctx, spec, sweep_out);
        }
        if (verify->parsed()) return cmd_verify_numerics(ctx, n_models, inject_fault);
    } catch (const std::exception& e) {
        std::cout << json{{"error", {{"message", e.what()}}}}.dump() << "\n";
        return 1;
    }
    return 0;
}
