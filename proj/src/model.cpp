// Copyright 2026 The memvr-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "memvr/model.hpp"

#include <cmath>
#include <sstream>

namespace memvr {

void ModelConfig::validate() const {
    auto fail = [](const std::string& why) { throw std::invalid_argument("invalid model config: " + why); };
    if (num_layers < 2) fail("num_layers must be >= 2");
    if (hidden_dim == 0 || num_heads == 0) fail("hidden_dim and num_heads must be positive");
    if (hidden_dim % num_heads != 0) fail("hidden_dim must be divisible by num_heads");
    if (head_dim() % 2 != 0) fail("head_dim must be even for rotary embedding");
    if (ffn_dim < hidden_dim) fail("ffn_dim must be >= hidden_dim");
    if (vocab_size < 2) fail("vocab_size must be >= 2");
    if (num_visual_tokens < 1) fail("num_visual_tokens must be >= 1");
    if (num_visual_tokens >= ffn_dim) fail("num_visual_tokens must be < ffn_dim");
    if (max_seq_len < 1) fail("max_seq_len must be >= 1");
}

std::string describe(const ModelConfig& c) {
    std::ostringstream os;
    os << "layers=" << c.num_layers << " dim=" << c.hidden_dim << " ffn_dim=" << c.ffn_dim
       << " vocab=" << c.vocab_size << " heads=" << c.num_heads << " visual_tokens=" << c.num_visual_tokens
       << " max_seq=" << c.max_seq_len;
    return os.str();
}

bool Weights::operator==(const Weights& other) const {
    if (!(config == other.config && token_embedding == other.token_embedding &&
          final_norm == other.final_norm && vocab_head == other.vocab_head &&
          layers.size() == other.layers.size())) {
        return false;
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& a = layers[i];
        const auto& b = other.layers[i];
        if (!(a.wq == b.wq && a.wk == b.wk && a.wv == b.wv && a.wo == b.wo && a.w1 == b.w1 &&
              a.w2 == b.w2 && a.attn_norm == b.attn_norm && a.ffn_norm == b.ffn_norm)) {
            return false;
        }
    }
    return true;
}

KvCache::KvCache(const ModelConfig& config)
    : capacity_(config.max_seq_len), keys_(config.num_layers), values_(config.num_layers) {
    const std::size_t reserve = std::size_t{config.max_seq_len} * config.hidden_dim;
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        keys_[l].reserve(reserve);
        values_[l].reserve(reserve);
    }
}

void KvCache::append(std::size_t layer, const Vector& key, const Vector& value) {
    keys_[layer].insert(keys_[layer].end(), key.data.begin(), key.data.end());
    values_[layer].insert(values_[layer].end(), value.data.begin(), value.data.end());
}

namespace {

void fill_gaussian(std::span<float> out, Prng& rng, double stddev) {
    for (float& x : out) x = static_cast<float>(stddev * rng.gaussian());
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Prng& rng, double stddev) {
    Matrix m(rows, cols);
    fill_gaussian(m.data, rng, stddev);
    return m;
}

Vector gaussian_vector(std::size_t dim, Prng& rng, double stddev) {
    Vector v(dim);
    fill_gaussian(v.data, rng, stddev);
    return v;
}

}  // namespace

Weights synthesize_weights(const ModelConfig& config, std::uint64_t seed, double init_std) {
    config.validate();
    if (!(init_std > 0.0) || !std::isfinite(init_std)) {
        throw std::invalid_argument("init_std must be positive and finite");
    }
    Prng rng(seed);
    const std::size_t d = config.hidden_dim;
    const std::size_t ffn = config.ffn_dim;
    const std::size_t n = config.vocab_size;

    Weights w;
    w.config = config;
    w.token_embedding = gaussian_matrix(n, d, rng, init_std);
    w.layers.reserve(config.num_layers);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        LayerWeights layer;
        layer.wq = gaussian_matrix(d, d, rng, init_std);
        layer.wk = gaussian_matrix(d, d, rng, init_std);
        layer.wv = gaussian_matrix(d, d, rng, init_std);
        layer.wo = gaussian_matrix(d, d, rng, init_std);
        layer.w1 = gaussian_matrix(d, ffn, rng, init_std);
        layer.w2 = gaussian_matrix(d, ffn, rng, init_std);
        layer.attn_norm = gaussian_vector(d, rng, init_std);
        layer.ffn_norm = gaussian_vector(d, rng, init_std);
        w.layers.push_back(std::move(layer));
    }
    w.final_norm = gaussian_vector(d, rng, init_std);
    w.vocab_head = gaussian_matrix(n, d, rng, init_std);
    return w;
}

VisualContext synthesize_visual_context(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Prng rng(seed);
    const std::size_t d = config.hidden_dim;
    VisualContext visual{Matrix(d, config.num_visual_tokens)};
    std::vector<float> column(d);
    for (std::size_t c = 0; c < config.num_visual_tokens; ++c) {
        fill_gaussian(column, rng, 1.0);
        const double norm = std::sqrt(dot(column, column));
        for (std::size_t r = 0; r < d; ++r) {
            visual.tokens.at(r, c) = static_cast<float>(column[r] / norm);
        }
    }
    return visual;
}

Vector ffn_forward(const Vector& x, const LayerWeights& layer) {
    if (x.dim() != layer.w1.rows) {
        throw ShapeError("ffn_forward: input dim " + std::to_string(x.dim()) + " vs W1 " +
                         shape_string(layer.w1));
    }
    return matvec(layer.w2, silu(vecmat(x, layer.w1)));
}

Vector ffn_forward_kv(const Vector& x, const LayerWeights& layer) {
    if (x.dim() != layer.w1.rows || layer.w1.rows != layer.w2.rows || layer.w1.cols != layer.w2.cols) {
        throw ShapeError("ffn_forward_kv: input dim " + std::to_string(x.dim()) + " with W1 " +
                         shape_string(layer.w1) + " and W2 " + shape_string(layer.w2));
    }
    const std::size_t d = layer.w1.rows;
    std::vector<double> acc(d, 0.0);
    std::vector<float> key(d);
    for (std::size_t i = 0; i < layer.w1.cols; ++i) {
        for (std::size_t r = 0; r < d; ++r) key[r] = layer.w1.at(r, i);
        const double weight = silu(static_cast<float>(dot(x.span(), key)));
        for (std::size_t r = 0; r < d; ++r) acc[r] += weight * layer.w2.at(r, i);
    }
    Vector out(d);
    for (std::size_t r = 0; r < d; ++r) out[r] = static_cast<float>(acc[r]);
    return out;
}

void apply_rotary(Vector& packed, std::size_t num_heads, std::size_t position) {
    constexpr double kTheta = 10000.0;
    const std::size_t head_dim = packed.dim() / num_heads;
    for (std::size_t i = 0; i < head_dim / 2; ++i) {
        const double freq = std::pow(kTheta, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
        const double angle = static_cast<double>(position) * freq;
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        for (std::size_t h = 0; h < num_heads; ++h) {
            float& a = packed[h * head_dim + 2 * i];
            float& b = packed[h * head_dim + 2 * i + 1];
            const double x0 = a;
            const double x1 = b;
            a = static_cast<float>(x0 * c - x1 * s);
            b = static_cast<float>(x0 * s + x1 * c);
        }
    }
}

namespace {

// Causal attention of one query against every cached position of a layer.
Vector attend(const Vector& query, std::span<const float> keys, std::span<const float> values,
              std::size_t length, std::size_t num_heads) {
    const std::size_t d = query.dim();
    const std::size_t head_dim = d / num_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    Vector out(d);
    std::vector<double> scores(length);
    for (std::size_t h = 0; h < num_heads; ++h) {
        const std::size_t off = h * head_dim;
        const auto q = query.span().subspan(off, head_dim);
        double max_score = -INFINITY;
        for (std::size_t t = 0; t < length; ++t) {
            scores[t] = dot(q, keys.subspan(t * d + off, head_dim)) * scale;
            max_score = std::max(max_score, scores[t]);
        }
        double sum = 0.0;
        for (std::size_t t = 0; t < length; ++t) {
            scores[t] = std::exp(scores[t] - max_score);
            sum += scores[t];
        }
        for (std::size_t j = 0; j < head_dim; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < length; ++t) acc += scores[t] * values[t * d + off + j];
            out[off + j] = static_cast<float>(acc / sum);
        }
    }
    return out;
}

}  // namespace

StepOutput forward_step(const Weights& weights, KvCache& cache, const Vector& input_embedding,
                        const ForwardHooks& hooks) {
    const ModelConfig& cfg = weights.config;
    if (input_embedding.dim() != cfg.hidden_dim) {
        throw ShapeError("forward_step: embedding dim " + std::to_string(input_embedding.dim()) +
                         " vs hidden_dim " + std::to_string(cfg.hidden_dim));
    }
    if (cache.length() >= cache.capacity()) {
        throw std::length_error("forward_step: kv cache full at " + std::to_string(cache.capacity()) +
                                " positions");
    }
    const std::size_t position = cache.length();

    StepOutput out;
    out.per_layer_hidden.reserve(cfg.num_layers);
    Vector hidden = input_embedding;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const LayerWeights& layer = weights.layers[l];

        const Vector normed = rmsnorm(hidden, layer.attn_norm);
        Vector q = matvec(layer.wq, normed);
        Vector k = matvec(layer.wk, normed);
        Vector v = matvec(layer.wv, normed);
        apply_rotary(q, cfg.num_heads, position);
        apply_rotary(k, cfg.num_heads, position);
        cache.append(l, k, v);
        const Vector mixed = attend(q, cache.keys(l), cache.values(l), position + 1, cfg.num_heads);
        add_inplace(hidden, matvec(layer.wo, mixed));

        const Vector ffn_in = rmsnorm(hidden, layer.ffn_norm);
        Vector ffn_out = ffn_forward(ffn_in, layer);
        if (hooks.ffn) ffn_out = hooks.ffn(l, ffn_in, std::move(ffn_out));
        add_inplace(hidden, ffn_out);

        out.per_layer_hidden.push_back(hidden);
        if (hooks.on_hidden) hooks.on_hidden(l, hidden);
    }
    cache.commit();
    out.final_logits = early_exit_logits(weights, hidden);
    return out;
}

Vector early_exit_logits(const Weights& weights, const Vector& hidden) {
    return matvec(weights.vocab_head, rmsnorm(hidden, weights.final_norm));
}

Vector token_embedding(const Weights& weights, std::uint32_t token_id) {
    if (token_id >= weights.config.vocab_size) {
        throw std::out_of_range("token id " + std::to_string(token_id) + " out of range for vocab size " +
                                std::to_string(weights.config.vocab_size));
    }
    const auto row = weights.token_embedding.row(token_id);
    return Vector(std::vector<float>(row.begin(), row.end()));
}

std::vector<Vector> embed_prompt(const Weights& weights, std::span<const std::uint32_t> token_ids,
                                 const VisualContext& visual) {
    if (visual.dim() != weights.config.hidden_dim) {
        throw ShapeError("embed_prompt: visual tokens " + shape_string(visual.tokens) +
                         " vs hidden_dim " + std::to_string(weights.config.hidden_dim));
    }
    std::vector<Vector> out;
    out.reserve(visual.count() + token_ids.size());
    for (std::size_t c = 0; c < visual.count(); ++c) out.push_back(visual.tokens.column(c));
    for (std::uint32_t id : token_ids) out.push_back(token_embedding(weights, id));
    return out;
}

}  // namespace memvr
