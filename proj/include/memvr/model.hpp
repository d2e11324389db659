// Copyright 2026 The memvr-toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "memvr/tensor.hpp"

namespace memvr {

struct ModelConfig {
    std::uint32_t num_layers = 12;
    std::uint32_t hidden_dim = 128;
    std::uint32_t ffn_dim = 512;
    std::uint32_t vocab_size = 512;
    std::uint32_t num_heads = 4;
    std::uint32_t num_visual_tokens = 16;
    std::uint32_t max_seq_len = 256;

    std::uint32_t head_dim() const { return hidden_dim / num_heads; }
    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

std::string describe(const ModelConfig& config);

struct LayerWeights {
    Matrix wq, wk, wv, wo;  // d x d, applied as W·x
    Matrix w1;              // d x D, column i is key k_i
    Matrix w2;              // d x D, column i is value v_i
    Vector attn_norm;       // d
    Vector ffn_norm;        // d
};

struct Weights {
    ModelConfig config;
    Matrix token_embedding;  // N x d
    std::vector<LayerWeights> layers;
    Vector final_norm;  // d
    Matrix vocab_head;  // N x d

    bool operator==(const Weights& other) const;
};

/// Dimension-aligned visual tokens; column i is token z_{v,i}.
struct VisualContext {
    Matrix tokens;  // d x N_v

    std::size_t count() const { return tokens.cols; }
    std::size_t dim() const { return tokens.rows; }
};

/// Per-layer keys and values for every processed position.
class KvCache {
public:
    explicit KvCache(const ModelConfig& config);

    std::size_t length() const { return length_; }
    std::size_t capacity() const { return capacity_; }
    std::span<const float> keys(std::size_t layer) const { return keys_[layer]; }
    std::span<const float> values(std::size_t layer) const { return values_[layer]; }

    // Used by forward_step: every layer appends once, then commit() advances.
    void append(std::size_t layer, const Vector& key, const Vector& value);
    void commit() { ++length_; }

private:
    std::size_t length_ = 0;
    std::size_t capacity_ = 0;
    std::vector<std::vector<float>> keys_;
    std::vector<std::vector<float>> values_;
};

struct StepOutput {
    Vector final_logits;                 // N
    std::vector<Vector> per_layer_hidden;  // L entries, post-block residual
};

/// Optional callbacks threaded through forward_step. Layer indices are
/// zero-based block indices.
struct ForwardHooks {
    /// Sees the FFN input and output of a block and returns the output to use.
    std::function<Vector(std::size_t layer, const Vector& ffn_input, Vector ffn_output)> ffn;
    /// Called with the post-block hidden state after each block.
    std::function<void(std::size_t layer, const Vector& hidden)> on_hidden;
};

/// Default initialization scale for synthesized parameters.
inline constexpr double kDefaultInitStd = 0.02;

/// Draws every parameter from gaussian(0, init_std) in file order: embedding,
/// then per layer Q, K, V, O, W1, W2, attention gain, FFN gain, then the final
/// gain, then the vocabulary head.
Weights synthesize_weights(const ModelConfig& config, std::uint64_t seed,
                           double init_std = kDefaultInitStd);

/// N_v standard-normal columns (drawn column by column), each rescaled to
/// unit L2 norm.
VisualContext synthesize_visual_context(const ModelConfig& config, std::uint64_t seed);

/// Matrix form: silu(x W1) W2ᵀ.
Vector ffn_forward(const Vector& x, const LayerWeights& layer);

/// Key-value memory form: sum_i silu(<x, k_i>) v_i. Same result as
/// ffn_forward up to rounding; kept as an independent route.
Vector ffn_forward_kv(const Vector& x, const LayerWeights& layer);

/// In-place rotary embedding of a packed multi-head vector at `position`.
void apply_rotary(Vector& packed, std::size_t num_heads, std::size_t position);

/// Runs one position through all blocks, appending its keys/values to
/// `cache`. Throws std::length_error when the cache is full.
StepOutput forward_step(const Weights& weights, KvCache& cache, const Vector& input_embedding,
                        const ForwardHooks& hooks = {});

/// Final rmsnorm followed by the vocabulary head, applied to any hidden state.
Vector early_exit_logits(const Weights& weights, const Vector& hidden);

Vector token_embedding(const Weights& weights, std::uint32_t token_id);

/// Visual columns first, then text token embeddings, in order.
std::vector<Vector> embed_prompt(const Weights& weights, std::span<const std::uint32_t> token_ids,
                                 const VisualContext& visual);

// --- binary formats -------------------------------------------------------

class FormatError : public std::runtime_error {
public:
    enum class Kind { BadMagic, VersionMismatch, Truncated, TrailingData, InvalidHeader, Io };

    FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

inline constexpr char kWeightsMagic[8] = {'M', 'E', 'M', 'V', 'R', 'T', 'O', 'Y'};
inline constexpr char kVisualMagic[8] = {'M', 'E', 'M', 'V', 'R', 'I', 'M', 'G'};
inline constexpr std::uint32_t kWeightsVersion = 1;

std::vector<std::uint8_t> serialize_weights(const Weights& weights);
Weights deserialize_weights(std::span<const std::uint8_t> bytes);
void save_weights(const Weights& weights, const std::filesystem::path& path);
Weights load_weights(const std::filesystem::path& path);

/// 64-bit FNV-1a over a byte buffer.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
/// Checksum of the serialized weight file.
std::uint64_t weights_checksum(const Weights& weights);

std::vector<std::uint8_t> serialize_visual(const VisualContext& visual);
VisualContext deserialize_visual(std::span<const std::uint8_t> bytes);
void save_visual(const VisualContext& visual, const std::filesystem::path& path);
VisualContext load_visual(const std::filesystem::path& path);

}  // namespace memvr
