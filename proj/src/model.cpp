#include "hybridsim/model.hpp"

#include "hybridsim/errors.hpp"
#include "hybridsim/rng.hpp"

namespace hybridsim {

void ModelConfig::validate() {
    if (ffn_dim == 0) ffn_dim = 4 * hidden_dim;
    if (num_layers < 1 || hidden_dim < 1 || num_heads < 1 || vocab_size < 1 ||
        tokens_per_block < 1 || bytes_per_scalar < 1)
        throw InputError("ModelConfig: all counts must be >= 1");
    if (hidden_dim % num_heads != 0)
        throw InputError("ModelConfig: hidden_dim must be divisible by num_heads");
    if (ffn_dim < hidden_dim)
        throw InputError("ModelConfig: ffn_dim must be >= hidden_dim");
}

namespace {

// Public OPT release configurations (layers / width / heads).
ModelConfig make_preset(const std::string& name, int layers, int d, int heads) {
    ModelConfig c;
    c.name = name;
    c.num_layers = layers;
    c.hidden_dim = d;
    c.num_heads = heads;
    c.ffn_dim = 4 * d;
    c.vocab_size = 50272;
    c.tokens_per_block = 16;
    c.bytes_per_scalar = 2;
    return c;
}

}  // namespace

ModelConfig ModelConfig::preset(const std::string& name) {
    if (name == "opt-6.7b") return make_preset(name, 32, 4096, 32);
    if (name == "opt-13b") return make_preset(name, 40, 5120, 40);
    if (name == "opt-30b") return make_preset(name, 48, 7168, 56);
    if (name == "opt-66b") return make_preset(name, 64, 9216, 72);
    throw InputError("unknown model preset: " + name);
}

const std::vector<std::string>& ModelConfig::preset_names() {
    static const std::vector<std::string> names = {"opt-6.7b", "opt-13b", "opt-30b", "opt-66b"};
    return names;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    if (j.contains("preset")) c = preset(j.at("preset").get<std::string>());
    if (j.contains("name")) c.name = j.at("name").get<std::string>();
    if (j.contains("num_layers")) c.num_layers = j.at("num_layers").get<int>();
    if (j.contains("hidden_dim")) c.hidden_dim = j.at("hidden_dim").get<int>();
    if (j.contains("num_heads")) c.num_heads = j.at("num_heads").get<int>();
    if (j.contains("ffn_dim")) c.ffn_dim = j.at("ffn_dim").get<int>();
    if (j.contains("vocab_size")) c.vocab_size = j.at("vocab_size").get<int>();
    if (j.contains("tokens_per_block")) c.tokens_per_block = j.at("tokens_per_block").get<int>();
    if (j.contains("bytes_per_scalar")) c.bytes_per_scalar = j.at("bytes_per_scalar").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

nlohmann::json ModelConfig::to_json() const {
    return nlohmann::json{
        {"name", name},
        {"num_layers", num_layers},
        {"hidden_dim", hidden_dim},
        {"num_heads", num_heads},
        {"ffn_dim", ffn_dim},
        {"vocab_size", vocab_size},
        {"tokens_per_block", tokens_per_block},
        {"bytes_per_scalar", bytes_per_scalar},
        {"seed", seed},
    };
}

namespace {

Matrix seeded_matrix(int rows, int cols, std::uint64_t seed) {
    Matrix m(rows, cols);
    SplitMix64 rng(seed);
    for (double& v : m.data) v = rng.uniform(-0.1, 0.1);
    return m;
}

// Stable per-tensor tags; layer tensors start at 100.
enum TensorTag : std::uint64_t { kEmbedding = 0, kPositional = 1, kLayerBase = 100 };

}  // namespace

DecoderWeights DecoderWeights::generate(const ModelConfig& config, std::uint64_t seed, int max_seq) {
    ModelConfig cfg = config;
    cfg.validate();
    if (max_seq < 1) throw InputError("DecoderWeights: max_seq must be >= 1");

    DecoderWeights w;
    w.config = cfg;
    w.max_seq = max_seq;
    w.embedding = seeded_matrix(cfg.vocab_size, cfg.hidden_dim, mix_seed(seed, kEmbedding));
    w.positional = seeded_matrix(max_seq, cfg.hidden_dim, mix_seed(seed, kPositional));
    w.layers.reserve(cfg.num_layers);
    for (int l = 0; l < cfg.num_layers; ++l) {
        const std::uint64_t base = kLayerBase + static_cast<std::uint64_t>(l) * 8;
        LayerWeights lw;
        lw.w_q = seeded_matrix(cfg.hidden_dim, cfg.hidden_dim, mix_seed(seed, base + 0));
        lw.w_k = seeded_matrix(cfg.hidden_dim, cfg.hidden_dim, mix_seed(seed, base + 1));
        lw.w_v = seeded_matrix(cfg.hidden_dim, cfg.hidden_dim, mix_seed(seed, base + 2));
        lw.w_proj = seeded_matrix(cfg.hidden_dim, cfg.hidden_dim, mix_seed(seed, base + 3));
        lw.w_ffn1 = seeded_matrix(cfg.hidden_dim, cfg.ffn_dim, mix_seed(seed, base + 4));
        lw.w_ffn2 = seeded_matrix(cfg.ffn_dim, cfg.hidden_dim, mix_seed(seed, base + 5));
        w.layers.push_back(std::move(lw));
    }
    return w;
}

}  // namespace hybridsim
