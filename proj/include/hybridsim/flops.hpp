#pragma once

#include "hybridsim/model.hpp"

namespace hybridsim {

enum class FlopKind {
    KvGen,                  // K,V from checkpointed activations (two d x d matmuls)
    QkvGen,                 // Q,K,V generation
    Attention,              // causal attention, n queries over their prefixes
    ProjFfn,                // projection + both FFN matmuls
    TokenRecomputeToLayerK, // full layers 0..k-1 then QKV at layer k
    FullLayer,              // QkvGen + Attention + ProjFfn
};

// Analytic multiply-add count times two. k is only read for
// TokenRecomputeToLayerK. Counts are returned as double; they are consumed by
// the timing model, not by exact accounting.
double flop_count(FlopKind kind, const ModelConfig& config, long n_tokens, int k = 0);

// Attention cost of one generation step: a single query over ctx_len rows.
double attention_step_flops(const ModelConfig& config, long ctx_len);

}  // namespace hybridsim
