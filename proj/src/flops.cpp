#include "hybridsim/flops.hpp"

#include "hybridsim/errors.hpp"

namespace hybridsim {

double flop_count(FlopKind kind, const ModelConfig& config, long n_tokens, int k) {
    if (n_tokens < 0) throw InputError("flop_count: negative token count");
    const double n = static_cast<double>(n_tokens);
    const double d = static_cast<double>(config.hidden_dim);
    const double f = static_cast<double>(config.ffn_dim);
    switch (kind) {
        case FlopKind::KvGen:
            return 2.0 * (2.0 * n * d * d);
        case FlopKind::QkvGen:
            return 2.0 * (3.0 * n * d * d);
        case FlopKind::Attention:
            // query t attends over t+1 rows: QK^T plus the value mix
            return 2.0 * d * n * (n + 1.0);
        case FlopKind::ProjFfn:
            return 2.0 * (n * d * d + 2.0 * n * d * f);
        case FlopKind::FullLayer:
            return flop_count(FlopKind::QkvGen, config, n_tokens) +
                   flop_count(FlopKind::Attention, config, n_tokens) +
                   flop_count(FlopKind::ProjFfn, config, n_tokens);
        case FlopKind::TokenRecomputeToLayerK:
            if (k < 0 || k >= config.num_layers)
                throw InputError("flop_count: layer index out of range");
            return static_cast<double>(k) * flop_count(FlopKind::FullLayer, config, n_tokens) +
                   flop_count(FlopKind::QkvGen, config, n_tokens);
    }
    throw InputError("flop_count: unknown op kind");
}

double attention_step_flops(const ModelConfig& config, long ctx_len) {
    return 4.0 * static_cast<double>(config.hidden_dim) * static_cast<double>(ctx_len);
}

}  // namespace hybridsim
