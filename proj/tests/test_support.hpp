// Copyright 2026 The memvr-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Shared helpers for the test binaries: random instances, temp paths and an
// uncached full-sequence forward used as the oracle for the KV-cache path.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "memvr/model.hpp"
#include "memvr/tensor.hpp"

namespace memvr::testing {

inline Vector random_vector(std::mt19937_64& rng, std::size_t dim, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Vector v(dim);
    for (float& x : v.data) x = static_cast<float>(normal(rng));
    return v;
}

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(rows, cols);
    for (float& x : m.data) x = static_cast<float>(normal(rng));
    return m;
}

inline LayerWeights random_ffn_layer(std::mt19937_64& rng, std::size_t d, std::size_t ffn, double scale = 0.5) {
    LayerWeights layer;
    layer.w1 = random_matrix(rng, d, ffn, scale);
    layer.w2 = random_matrix(rng, d, ffn, scale);
    return layer;
}

inline ModelConfig small_config() {
    ModelConfig c;
    c.num_layers = 3;
    c.hidden_dim = 16;
    c.ffn_dim = 32;
    c.vocab_size = 24;
    c.num_heads = 2;
    c.num_visual_tokens = 4;
    c.max_seq_len = 64;
    return c;
}

/// Random but valid small configuration.
inline ModelConfig random_config(std::mt19937_64& rng) {
    std::uniform_int_distribution<std::uint32_t> layers(2, 5);
    std::uniform_int_distribution<std::uint32_t> heads(1, 3);
    std::uniform_int_distribution<std::uint32_t> head_half(2, 6);
    std::uniform_int_distribution<std::uint32_t> vocab(8, 64);
    std::uniform_int_distribution<std::uint32_t> visual(1, 6);
    ModelConfig c;
    c.num_layers = layers(rng);
    c.num_heads = heads(rng);
    c.hidden_dim = c.num_heads * 2 * head_half(rng);
    c.ffn_dim = c.hidden_dim * 2;
    c.vocab_size = vocab(rng);
    c.num_visual_tokens = visual(rng);
    c.max_seq_len = 64;
    return c;
}

inline std::filesystem::path temp_path(const std::string& name) {
    static const std::filesystem::path dir = [] {
        auto p = std::filesystem::temp_directory_path() /
                 ("memvr_test_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(p);
        return p;
    }();
    return dir / name;
}

/// Recomputes every position from scratch with explicit causal attention and
/// the key-value FFN form. Returns logits for every position.
inline std::vector<Vector> reference_forward(const Weights& w, const std::vector<Vector>& inputs) {
    const ModelConfig& c = w.config;
    const std::size_t n = inputs.size();
    const std::size_t d = c.hidden_dim;
    const std::size_t hd = c.head_dim();

    auto rotate = [&](Vector v, std::size_t pos) {
        for (std::size_t h = 0; h < c.num_heads; ++h) {
            for (std::size_t i = 0; i < hd / 2; ++i) {
                const double angle = static_cast<double>(pos) * std::pow(10000.0, -2.0 * double(i) / double(hd));
                const double x0 = v[h * hd + 2 * i];
                const double x1 = v[h * hd + 2 * i + 1];
                v[h * hd + 2 * i] = static_cast<float>(x0 * std::cos(angle) - x1 * std::sin(angle));
                v[h * hd + 2 * i + 1] = static_cast<float>(x0 * std::sin(angle) + x1 * std::cos(angle));
            }
        }
        return v;
    };

    std::vector<Vector> hidden = inputs;
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        const LayerWeights& layer = w.layers[l];
        std::vector<Vector> q(n), k(n), v(n);
        for (std::size_t p = 0; p < n; ++p) {
            const Vector normed = rmsnorm(hidden[p], layer.attn_norm);
            q[p] = rotate(matvec(layer.wq, normed), p);
            k[p] = rotate(matvec(layer.wk, normed), p);
            v[p] = matvec(layer.wv, normed);
        }
        for (std::size_t p = 0; p < n; ++p) {
            Vector mixed(d);
            for (std::size_t h = 0; h < c.num_heads; ++h) {
                std::vector<double> score(p + 1);
                double mx = -INFINITY;
                for (std::size_t t = 0; t <= p; ++t) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < hd; ++j) s += double(q[p][h * hd + j]) * k[t][h * hd + j];
                    score[t] = s / std::sqrt(double(hd));
                    mx = std::max(mx, score[t]);
                }
                double z = 0.0;
                for (double& s : score) z += (s = std::exp(s - mx));
                for (std::size_t j = 0; j < hd; ++j) {
                    double acc = 0.0;
                    for (std::size_t t = 0; t <= p; ++t) acc += score[t] / z * v[t][h * hd + j];
                    mixed[h * hd + j] = static_cast<float>(acc);
                }
            }
            add_inplace(hidden[p], matvec(layer.wo, mixed));
            add_inplace(hidden[p], ffn_forward_kv(rmsnorm(hidden[p], layer.ffn_norm), layer));
        }
    }
    std::vector<Vector> logits;
    for (const Vector& h : hidden) logits.push_back(matvec(w.vocab_head, rmsnorm(h, w.final_norm)));
    return logits;
}

inline double max_abs_diff(const Vector& a, const Vector& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
    return m;
}

}  // namespace memvr::testing
