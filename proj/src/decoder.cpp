#include "hybridsim/decoder.hpp"

#include <cmath>
#include <string>

#include "hybridsim/errors.hpp"

namespace hybridsim {

namespace {

// Scaled dot-product attention for one query row over context rows [0, ctx).
// Every attention path in this module funnels through here, which is what
// makes stored-KV and recomputed-KV generation steps bit-identical.
void attention_row(const double* q, const Matrix& k, const Matrix& v, int ctx, int num_heads,
                   bool scaled, double* out) {
    const int d = k.cols;
    const int head_dim = d / num_heads;
    const double scale = scaled ? 1.0 / std::sqrt(static_cast<double>(head_dim)) : 1.0;
    std::vector<double> weights(static_cast<std::size_t>(ctx));
    for (int h = 0; h < num_heads; ++h) {
        const int off = h * head_dim;
        double max_logit = -1e300;
        for (int t = 0; t < ctx; ++t) {
            double dot = 0.0;
            const double* krow = k.row(t);
            for (int c = 0; c < head_dim; ++c) dot += q[off + c] * krow[off + c];
            weights[t] = dot * scale;
            if (weights[t] > max_logit) max_logit = weights[t];
        }
        double denom = 0.0;
        for (int t = 0; t < ctx; ++t) {
            weights[t] = std::exp(weights[t] - max_logit);
            denom += weights[t];
        }
        for (int c = 0; c < head_dim; ++c) out[off + c] = 0.0;
        for (int t = 0; t < ctx; ++t) {
            const double w = weights[t] / denom;
            const double* vrow = v.row(t);
            for (int c = 0; c < head_dim; ++c) out[off + c] += w * vrow[off + c];
        }
    }
}

void check_attention_inputs(const Matrix& q, const KvPair& kv, int num_heads) {
    if (kv.k.rows == 0) throw InputError("attention_step: empty context");
    if (kv.k.rows != kv.v.rows) throw InputError("attention_step: K/V row counts differ");
    if (q.cols != kv.k.cols || q.cols != kv.v.cols)
        throw InputError("attention_step: width mismatch");
    if (num_heads < 1 || q.cols % num_heads != 0)
        throw InputError("attention_step: width not divisible by num_heads");
}

// Causal attention over all rows of one layer: row t attends to rows [0, t].
Matrix attention_causal(const Matrix& q, const Matrix& k, const Matrix& v, int num_heads,
                        bool scaled) {
    Matrix out(q.rows, q.cols);
#pragma omp parallel for schedule(static)
    for (int t = 0; t < q.rows; ++t) {
        attention_row(q.row(t), k, v, t + 1, num_heads, scaled, out.row(t));
    }
    return out;
}

Matrix embed_one(int token_id, int pos, const DecoderWeights& w) {
    if (token_id < 0 || token_id >= w.config.vocab_size)
        throw InputError("embed: token id out of range: " + std::to_string(token_id));
    if (pos < 0 || pos >= w.max_seq)
        throw InputError("embed: position exceeds max_seq: " + std::to_string(pos));
    Matrix row(1, w.config.hidden_dim);
    for (int c = 0; c < w.config.hidden_dim; ++c)
        row.at(0, c) = w.embedding.at(token_id, c) + w.positional.at(pos, c);
    return row;
}

void check_layer(int layer, const DecoderWeights& w) {
    if (layer < 0 || layer >= w.config.num_layers)
        throw InputError("layer index out of range: " + std::to_string(layer));
}

}  // namespace

Matrix embed(std::span<const int> token_ids, const DecoderWeights& weights) {
    const int n = static_cast<int>(token_ids.size());
    if (n > weights.max_seq) throw InputError("embed: sequence longer than max_seq");
    Matrix out(n, weights.config.hidden_dim);
    for (int t = 0; t < n; ++t) {
        const int id = token_ids[t];
        if (id < 0 || id >= weights.config.vocab_size)
            throw InputError("embed: token id out of range: " + std::to_string(id));
        for (int c = 0; c < weights.config.hidden_dim; ++c)
            out.at(t, c) = weights.embedding.at(id, c) + weights.positional.at(t, c);
    }
    return out;
}

Qkv qkv_generate(const Matrix& a, int layer, const DecoderWeights& weights) {
    check_layer(layer, weights);
    if (a.cols != weights.config.hidden_dim)
        throw InputError("qkv_generate: activation width != hidden_dim");
    const LayerWeights& lw = weights.layers[layer];
    return Qkv{matmul(a, lw.w_q), matmul(a, lw.w_k), matmul(a, lw.w_v)};
}

Matrix attention_step(const Matrix& q_new, const KvPair& kv, int num_heads, bool scaled) {
    if (q_new.rows != 1) throw InputError("attention_step: q_new must be a single row");
    check_attention_inputs(q_new, kv, num_heads);
    Matrix out(1, q_new.cols);
    attention_row(q_new.row(0), kv.k, kv.v, kv.k.rows, num_heads, scaled, out.row(0));
    return out;
}

Matrix project_ffn(const Matrix& att, int layer, const DecoderWeights& weights) {
    check_layer(layer, weights);
    if (att.cols != weights.config.hidden_dim)
        throw InputError("project_ffn: activation width != hidden_dim");
    const LayerWeights& lw = weights.layers[layer];
    Matrix h = matmul(matmul(att, lw.w_proj), lw.w_ffn1);
    relu_inplace(h);
    return matmul(h, lw.w_ffn2);
}

KvPair recompute_kv_from_activation(const Matrix& a_c, int layer, const DecoderWeights& weights) {
    check_layer(layer, weights);
    if (a_c.cols != weights.config.hidden_dim)
        throw InputError("recompute_kv_from_activation: width != hidden_dim");
    const LayerWeights& lw = weights.layers[layer];
    return KvPair{matmul(a_c, lw.w_k), matmul(a_c, lw.w_v)};
}

KvPair token_recompute_kv(std::span<const int> token_ids, const DecoderWeights& weights,
                          int target_layer, bool scaled) {
    check_layer(target_layer, weights);
    Matrix a = embed(token_ids, weights);
    for (int l = 0; l < target_layer; ++l) {
        Qkv qkv = qkv_generate(a, l, weights);
        Matrix att = attention_causal(qkv.q, qkv.k, qkv.v, weights.config.num_heads, scaled);
        a = project_ffn(att, l, weights);
    }
    Qkv qkv = qkv_generate(a, target_layer, weights);
    return KvPair{std::move(qkv.k), std::move(qkv.v)};
}

ForwardTrace forward_prompt(std::span<const int> token_ids, const DecoderWeights& weights,
                            bool scaled) {
    ForwardTrace trace;
    Matrix a = embed(token_ids, weights);
    for (int l = 0; l < weights.config.num_layers; ++l) {
        trace.layer_inputs.push_back(a);
        Qkv qkv = qkv_generate(a, l, weights);
        Matrix att = attention_causal(qkv.q, qkv.k, qkv.v, weights.config.num_heads, scaled);
        trace.kv.push_back(KvPair{std::move(qkv.k), std::move(qkv.v)});
        a = project_ffn(att, l, weights);
    }
    trace.output = std::move(a);
    return trace;
}

StepResult generation_step(int token_id, int pos, std::span<const KvPair> context,
                           const DecoderWeights& weights, bool scaled) {
    if (static_cast<int>(context.size()) != weights.config.num_layers)
        throw InputError("generation_step: context must cover every layer");
    StepResult res;
    Matrix x = embed_one(token_id, pos, weights);
    for (int l = 0; l < weights.config.num_layers; ++l) {
        Qkv qkv = qkv_generate(x, l, weights);
        KvPair full{concat_rows(context[l].k, qkv.k), concat_rows(context[l].v, qkv.v)};
        Matrix att = attention_step(qkv.q, full, weights.config.num_heads, scaled);
        x = project_ffn(att, l, weights);
        res.new_kv.push_back(KvPair{std::move(qkv.k), std::move(qkv.v)});
    }
    res.output = std::move(x);
    return res;
}

}  // namespace hybridsim
