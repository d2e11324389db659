// Copyright 2026 The memvr-toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "memvr/model.hpp"

namespace memvr {

enum class Strategy { Greedy, Sample, MemvrStatic, MemvrDynamic, MemvrDynamicAlpha, Contrastive };

/// CLI spelling: greedy, sample, memvr-static, memvr-dynamic,
/// memvr-dynamic-alpha, contrastive.
std::string_view strategy_name(Strategy s);
std::optional<Strategy> parse_strategy(std::string_view name);
bool is_memvr(Strategy s);

/// Inclusive range of one-based layer indices.
struct LayerRange {
    std::uint32_t first = 1;
    std::uint32_t last = 1;

    bool contains(std::size_t layer) const { return layer >= first && layer <= last; }
};

/// Parses "a-b" (or "a:b", or a single "a") into an inclusive range.
LayerRange parse_layer_range(std::string_view text);

/// End-of-sequence token id.
inline constexpr std::uint32_t kEosToken = 0;

struct DecodePolicy {
    Strategy strategy = Strategy::Greedy;
    double gamma = 0.75;
    double alpha = 0.2;
    /// For memvr-static: VR replaces the FFN of the block after this layer,
    /// mirroring the dynamic trigger. Zero means unset.
    std::uint32_t static_layer = 0;
    /// Unset means every layer 1..L-1.
    std::optional<LayerRange> candidate_layers;
    double temperature = 1.0;
    std::uint64_t sample_seed = 0;
    double cd_beta = 1.0;
    double cd_noise_sigma = 0.5;
    double cd_plausibility = 0.1;
    std::uint32_t max_new_tokens = 32;
    bool stop_at_eos = true;
    /// Probe every layer's early-exit entropy for the uncertainty trace. When
    /// off, only the probes the trigger decision needs are computed and
    /// StepDecision::per_layer_uncertainty stays empty.
    bool instrument_uncertainty = true;

    /// Throws std::invalid_argument on an out-of-range field.
    void validate(const ModelConfig& config) const;
    LayerRange candidates(const ModelConfig& config) const;
};

struct StepDecision {
    std::uint32_t token_id = 0;
    bool triggered = false;
    /// One-based layer whose uncertainty fired the trigger; VR replaced the
    /// FFN output of the following block.
    std::optional<std::uint32_t> trigger_layer;
    double applied_alpha = 0.0;
    /// u for layers 1..L-1 when instrumented, empty otherwise.
    std::vector<double> per_layer_uncertainty;
};

/// Work counters filled in by the step functions.
struct DecodeCounters {
    std::uint64_t forward_passes = 0;
    std::uint64_t prefill_passes = 0;
    std::uint64_t entropy_probes = 0;
    std::uint64_t retrace_blends = 0;
};

/// Shannon entropy divided by log N; 0 log 0 = 0. Result is in [0, 1].
double normalized_entropy(std::span<const float> probs);

/// Sum over visual tokens of silu(<x, z_i>) z_i.
Vector visual_retrace(const Vector& x, const VisualContext& visual);

/// alpha * retrace + (1 - alpha) * ffn_output, given an FFN output already
/// computed for the same x.
Vector blend_with_retrace(const Vector& x, const Vector& ffn_output, const VisualContext& visual,
                          double alpha);

/// alpha * visual_retrace(x) + (1 - alpha) * ffn_forward(x).
Vector ffn_with_vr(const Vector& x, const VisualContext& visual, double alpha, const LayerWeights& layer);

/// clamp(2 (u - gamma), 0, 1).
double dynamic_alpha(double u, double gamma);

/// Early-exit uncertainty of one hidden state.
double layer_uncertainty(const Weights& weights, const Vector& hidden);

StepDecision decode_step_greedy(const Weights& weights, KvCache& cache, const DecodePolicy& policy,
                                const Vector& next_embedding, DecodeCounters& counters);

StepDecision decode_step_sample(const Weights& weights, KvCache& cache, const DecodePolicy& policy,
                                const Vector& next_embedding, Prng& rng, DecodeCounters& counters);

StepDecision decode_step_memvr(const Weights& weights, KvCache& cache, const DecodePolicy& policy,
                               const VisualContext& visual, const Vector& next_embedding,
                               DecodeCounters& counters);

/// Visual tokens plus gaussian(0, sigma^2) noise per entry.
VisualContext distort_visual(const VisualContext& visual, double sigma, std::uint64_t seed);

/// Two forward passes (clean and distorted caches), logits
/// (1 + beta) f_clean - beta f_distorted, restricted to tokens whose clean
/// probability is at least cd_plausibility times the clean maximum.
StepDecision decode_step_contrastive(const Weights& weights, KvCache& clean_cache, KvCache& distorted_cache,
                                     const DecodePolicy& policy, const Vector& next_embedding,
                                     DecodeCounters& counters);

struct Generation {
    std::vector<std::uint32_t> tokens;
    std::vector<StepDecision> steps;
    DecodeCounters counters;
};

/// Prefills visual-then-text prompt positions except the last, then runs one
/// policy step per emitted token starting from the last prompt position.
/// Stops after max_new_tokens or after emitting kEosToken when stop_at_eos.
/// `on_decode_start` runs once, after prefill and before the first step.
Generation generate(const Weights& weights, const DecodePolicy& policy, const VisualContext& visual,
                    std::span<const std::uint32_t> prompt_ids,
                    const std::function<void()>& on_decode_start = {});

}  // namespace memvr
