#pragma once

#include <span>
#include <vector>

#include "hybridsim/model.hpp"

namespace hybridsim {

// Key/value rows for one layer. Row t covers context position t.
struct KvPair {
    Matrix k;
    Matrix v;
};

struct Qkv {
    Matrix q, k, v;
};

// Embedding lookup plus positional encoding: row t = embedding[id_t] + positional[t].
Matrix embed(std::span<const int> token_ids, const DecoderWeights& weights);

// Q = A*W_Q, K = A*W_K, V = A*W_V for one layer.
Qkv qkv_generate(const Matrix& a, int layer, const DecoderWeights& weights);

// Multi-head attention for a single new token over the given context.
// scaled=false drops the 1/sqrt(head_dim) factor.
Matrix attention_step(const Matrix& q_new, const KvPair& kv, int num_heads, bool scaled = true);

// relu((att * W_Proj) * W_FFN1) * W_FFN2.
Matrix project_ffn(const Matrix& att, int layer, const DecoderWeights& weights);

// Rebuilds K,V of one layer from that layer's checkpointed input rows.
// Arithmetic is element-for-element the one qkv_generate performs, so the
// result is bit-identical to the K,V produced during the original forward.
KvPair recompute_kv_from_activation(const Matrix& a_c, int layer, const DecoderWeights& weights);

// Rebuilds K,V at target_layer from raw token ids by re-running every
// preceding layer. target_layer = 0 degenerates to embed + qkv_generate.
KvPair token_recompute_kv(std::span<const int> token_ids, const DecoderWeights& weights,
                          int target_layer, bool scaled = true);

// Causal forward pass over a prompt, capturing everything caches would hold:
// per-layer input activations (the checkpoints) and per-layer K,V.
struct ForwardTrace {
    std::vector<Matrix> layer_inputs;  // A^i, one per layer, rows = tokens
    std::vector<KvPair> kv;            // K,V per layer
    Matrix output;                     // activation leaving the last layer
};
ForwardTrace forward_prompt(std::span<const int> token_ids, const DecoderWeights& weights,
                            bool scaled = true);

// One generation step at position pos. context[l] holds the established K,V of
// layer l (however they were assembled); the new token's own K,V rows are
// produced in-step and returned.
struct StepResult {
    Matrix output;                // 1 x d activation leaving the last layer
    std::vector<KvPair> new_kv;   // one 1-row pair per layer
};
StepResult generation_step(int token_id, int pos, std::span<const KvPair> context,
                           const DecoderWeights& weights, bool scaled = true);

}  // namespace hybridsim
