#include "hybridsim/verify.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "hybridsim/rng.hpp"

namespace hybridsim {

namespace {

double rel_dev(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double x = a.data[i], y = b.data[i];
        if (x == y) continue;
        const double denom = std::max(std::abs(y), 1e-30);
        worst = std::max(worst, std::abs(x - y) / denom);
    }
    return worst;
}

}  // namespace

EquivalenceResult run_equivalence_case(std::uint64_t seed, bool inject_fault, bool scaled) {
    SplitMix64 rng(mix_seed(seed, 0x657175));

    ModelConfig cfg;
    cfg.num_layers = static_cast<int>(rng.uniform_int(1, 6));
    const int dims[] = {8, 16, 32, 64};
    cfg.hidden_dim = dims[rng.uniform_int(0, 3)];
    const int head_choices[] = {1, 2, 4};
    cfg.num_heads = head_choices[rng.uniform_int(0, 2)];
    cfg.ffn_dim = 2 * cfg.hidden_dim;
    cfg.vocab_size = 64;
    cfg.tokens_per_block = static_cast<int>(rng.uniform_int(2, 8));
    cfg.validate();

    const int prompt_len = static_cast<int>(rng.uniform_int(3, 24));
    const DecoderWeights weights = DecoderWeights::generate(cfg, mix_seed(seed, 0x77), prompt_len + 2);

    std::vector<int> ids(static_cast<std::size_t>(prompt_len));
    for (int& id : ids) id = static_cast<int>(rng.uniform_int(0, cfg.vocab_size - 1));
    const int next_token = static_cast<int>(rng.uniform_int(0, cfg.vocab_size - 1));

    const ForwardTrace trace = forward_prompt(ids, weights, scaled);

    DecoderWeights faulted = weights;
    if (inject_fault) faulted.layers[0].w_k.at(0, 0) += 0.5;

    // context assemblies, one vector<KvPair> per strategy
    std::vector<KvPair> stored, from_act, from_tokens, mixed;
    for (int l = 0; l < cfg.num_layers; ++l) {
        stored.push_back(trace.kv[l]);
        from_act.push_back(recompute_kv_from_activation(trace.layer_inputs[l], l,
                                                        inject_fault ? faulted : weights));
        from_tokens.push_back(token_recompute_kv(ids, weights, l, scaled));

        // block-wise mix of all three sources
        KvPair mix;
        const int b = cfg.tokens_per_block;
        for (int lo = 0; lo < prompt_len; lo += b) {
            const int hi = std::min(prompt_len, lo + b);
            const KvPair* src;
            switch ((lo / b) % 3) {
                case 0: src = &stored.back(); break;
                case 1: src = &from_act.back(); break;
                default: src = &from_tokens.back(); break;
            }
            mix.k = concat_rows(mix.k, slice_rows(src->k, lo, hi));
            mix.v = concat_rows(mix.v, slice_rows(src->v, lo, hi));
        }
        mixed.push_back(std::move(mix));
    }

    const StepResult ref = generation_step(next_token, prompt_len, stored, weights, scaled);

    EquivalenceResult res;
    res.num_layers = cfg.num_layers;
    res.hidden_dim = cfg.hidden_dim;
    res.prompt_len = prompt_len;
    res.exact = true;
    for (const auto* ctx : {&from_act, &from_tokens, &mixed}) {
        const StepResult alt = generation_step(next_token, prompt_len, *ctx, weights, scaled);
        double dev = rel_dev(alt.output, ref.output);
        for (int l = 0; l < cfg.num_layers; ++l) {
            dev = std::max(dev, rel_dev(alt.new_kv[l].k, ref.new_kv[l].k));
            dev = std::max(dev, rel_dev(alt.new_kv[l].v, ref.new_kv[l].v));
        }
        res.max_rel_dev = std::max(res.max_rel_dev, dev);
        if (dev != 0.0) res.exact = false;
    }
    return res;
}

}  // namespace hybridsim
