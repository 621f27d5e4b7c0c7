#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hybridsim/matrix.hpp"

namespace hybridsim {

// Model dimensions plus the cache block granularity. bytes_per_scalar is the
// storage precision used for byte accounting only (2 = fp16).
struct ModelConfig {
    std::string name = "custom";
    int num_layers = 1;
    int hidden_dim = 64;
    int num_heads = 1;
    int ffn_dim = 0;  // 0 means the default 4 * hidden_dim
    int vocab_size = 256;
    int tokens_per_block = 16;
    int bytes_per_scalar = 2;
    std::uint64_t seed = 0;

    int head_dim() const { return hidden_dim / num_heads; }

    // Throws InputError if any invariant is violated. Fills ffn_dim default.
    void validate();

    static ModelConfig preset(const std::string& name);
    static const std::vector<std::string>& preset_names();

    static ModelConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct LayerWeights {
    Matrix w_q, w_k, w_v;   // d x d
    Matrix w_proj;          // d x d
    Matrix w_ffn1;          // d x ffn
    Matrix w_ffn2;          // ffn x d
};

// Seeded dense weights. Entries are uniform in [-0.1, 0.1], each tensor drawn
// from its own splitmix stream so layouts can change without reshuffling
// earlier tensors.
struct DecoderWeights {
    ModelConfig config;
    int max_seq = 0;
    Matrix embedding;   // vocab x d
    Matrix positional;  // max_seq x d
    std::vector<LayerWeights> layers;

    static DecoderWeights generate(const ModelConfig& config, std::uint64_t seed, int max_seq);
};

}  // namespace hybridsim
