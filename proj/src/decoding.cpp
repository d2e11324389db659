// Copyright 2026 The memvr-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "memvr/decoding.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>

namespace memvr {

std::string_view strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Greedy: return "greedy";
        case Strategy::Sample: return "sample";
        case Strategy::MemvrStatic: return "memvr-static";
        case Strategy::MemvrDynamic: return "memvr-dynamic";
        case Strategy::MemvrDynamicAlpha: return "memvr-dynamic-alpha";
        case Strategy::Contrastive: return "contrastive";
    }
    return "unknown";
}

std::optional<Strategy> parse_strategy(std::string_view name) {
    for (Strategy s : {Strategy::Greedy, Strategy::Sample, Strategy::MemvrStatic, Strategy::MemvrDynamic,
                       Strategy::MemvrDynamicAlpha, Strategy::Contrastive}) {
        if (strategy_name(s) == name) return s;
    }
    return std::nullopt;
}

bool is_memvr(Strategy s) {
    return s == Strategy::MemvrStatic || s == Strategy::MemvrDynamic || s == Strategy::MemvrDynamicAlpha;
}

LayerRange parse_layer_range(std::string_view text) {
    auto parse_index = [&](std::string_view part) {
        std::uint32_t v = 0;
        const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (ec != std::errc() || ptr != part.data() + part.size() || part.empty()) {
            throw std::invalid_argument("bad layer range '" + std::string(text) + "'");
        }
        return v;
    };
    const auto sep = text.find_first_of("-:");
    if (sep == std::string_view::npos) {
        const auto v = parse_index(text);
        return {v, v};
    }
    return {parse_index(text.substr(0, sep)), parse_index(text.substr(sep + 1))};
}

LayerRange DecodePolicy::candidates(const ModelConfig& config) const {
    return candidate_layers.value_or(LayerRange{1, config.num_layers - 1});
}

void DecodePolicy::validate(const ModelConfig& config) const {
    auto fail = [](const std::string& why) { throw std::invalid_argument("invalid decode policy: " + why); };
    if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must lie in [0, 1]");
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0, 1]");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) fail("temperature must be positive");
    if (!(cd_beta >= 0.0) || !std::isfinite(cd_beta)) fail("cd_beta must be >= 0");
    if (!(cd_noise_sigma >= 0.0) || !std::isfinite(cd_noise_sigma)) fail("cd_noise_sigma must be >= 0");
    if (!(cd_plausibility >= 0.0 && cd_plausibility <= 1.0)) fail("cd_plausibility must lie in [0, 1]");
    const std::uint32_t top = config.num_layers - 1;
    if (strategy == Strategy::MemvrStatic && (static_layer < 1 || static_layer > top)) {
        fail("static_layer must lie in [1, " + std::to_string(top) + "]");
    }
    if (candidate_layers) {
        const LayerRange r = *candidate_layers;
        if (r.first < 1 || r.last > top || r.first > r.last) {
            fail("candidate layers " + std::to_string(r.first) + "-" + std::to_string(r.last) +
                 " must be a nonempty range within [1, " + std::to_string(top) + "]");
        }
    }
}

double normalized_entropy(std::span<const float> probs) {
    if (probs.size() < 2) throw std::invalid_argument("normalized_entropy: need at least 2 outcomes");
    double sum = 0.0;
    double entropy = 0.0;
    for (float p : probs) {
        if (!(p >= 0.0f)) throw std::invalid_argument("normalized_entropy: negative or NaN probability");
        sum += p;
        if (p > 0.0f) entropy -= static_cast<double>(p) * std::log(static_cast<double>(p));
    }
    if (std::abs(sum - 1.0) > 1e-5) {
        throw std::invalid_argument("normalized_entropy: probabilities sum to " + std::to_string(sum));
    }
    const double u = entropy / std::log(static_cast<double>(probs.size()));
    return std::clamp(u, 0.0, 1.0);
}

Vector visual_retrace(const Vector& x, const VisualContext& visual) {
    if (x.dim() != visual.dim()) {
        throw ShapeError("visual_retrace: query dim " + std::to_string(x.dim()) + " vs visual tokens " +
                         shape_string(visual.tokens));
    }
    const std::size_t d = visual.dim();
    std::vector<double> acc(d, 0.0);
    std::vector<float> token(d);
    for (std::size_t i = 0; i < visual.count(); ++i) {
        for (std::size_t r = 0; r < d; ++r) token[r] = visual.tokens.at(r, i);
        const double score = dot(x.span(), token);
        const double weight = score / (1.0 + std::exp(-score));
        for (std::size_t r = 0; r < d; ++r) acc[r] += weight * token[r];
    }
    Vector out(d);
    for (std::size_t r = 0; r < d; ++r) out[r] = static_cast<float>(acc[r]);
    return out;
}

Vector blend_with_retrace(const Vector& x, const Vector& ffn_output, const VisualContext& visual,
                          double alpha) {
    if (ffn_output.dim() != x.dim()) {
        throw ShapeError("blend_with_retrace: ffn output dim " + std::to_string(ffn_output.dim()) +
                         " vs query dim " + std::to_string(x.dim()));
    }
    const Vector retrace = visual_retrace(x, visual);
    Vector out(x.dim());
    for (std::size_t i = 0; i < out.dim(); ++i) {
        out[i] = static_cast<float>(alpha * retrace[i] + (1.0 - alpha) * ffn_output[i]);
    }
    return out;
}

Vector ffn_with_vr(const Vector& x, const VisualContext& visual, double alpha, const LayerWeights& layer) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("ffn_with_vr: alpha must lie in [0, 1]");
    return blend_with_retrace(x, ffn_forward(x, layer), visual, alpha);
}

double dynamic_alpha(double u, double gamma) {
    return std::max(0.0, std::min(1.0, 2.0 * (u - gamma)));
}

double layer_uncertainty(const Weights& weights, const Vector& hidden) {
    return normalized_entropy(softmax(early_exit_logits(weights, hidden)).span());
}

namespace {

std::uint32_t greedy_token(const Vector& logits) {
    return static_cast<std::uint32_t>(argmax(logits.span()));
}

// Installs an on_hidden probe that records u for layers 1..L-1.
void attach_trace_probe(ForwardHooks& hooks, const Weights& weights, std::vector<double>& u,
                        DecodeCounters& counters) {
    const std::size_t probed = weights.config.num_layers - 1;
    u.assign(probed, 0.0);
    hooks.on_hidden = [&weights, &u, &counters, probed](std::size_t layer, const Vector& hidden) {
        if (layer >= probed) return;
        u[layer] = layer_uncertainty(weights, hidden);
        ++counters.entropy_probes;
    };
}

StepOutput plain_step(const Weights& weights, KvCache& cache, const DecodePolicy& policy,
                      const Vector& next_embedding, DecodeCounters& counters, std::vector<double>& u) {
    ForwardHooks hooks;
    if (policy.instrument_uncertainty) attach_trace_probe(hooks, weights, u, counters);
    StepOutput out = forward_step(weights, cache, next_embedding, hooks);
    ++counters.forward_passes;
    return out;
}

}  // namespace

StepDecision decode_step_greedy(const Weights& weights, KvCache& cache, const DecodePolicy& policy,
                                const Vector& next_embedding, DecodeCounters& counters) {
    StepDecision decision;
    const StepOutput out = plain_step(weights, cache, policy, next_embedding, counters,
                                      decision.per_layer_uncertainty);
    decision.token_id = greedy_token(out.final_logits);
    return decision;
}

StepDecision decode_step_sample(const Weights& weights, KvCache& cache, const DecodePolicy& policy,
                                const Vector& next_embedding, Prng& rng, DecodeCounters& counters) {
    StepDecision decision;
    StepOutput out = plain_step(weights, cache, policy, next_embedding, counters, decision.per_layer_uncertainty);
    Vector scaled = std::move(out.final_logits);
    for (float& x : scaled.data) x = static_cast<float>(x / policy.temperature);
    const Vector probs = softmax(scaled);
    const double r = rng.uniform();
    double cumulative = 0.0;
    std::size_t choice = probs.dim();
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < probs.dim(); ++i) {
        if (probs[i] > 0.0f) last_positive = i;
        cumulative += probs[i];
        if (r < cumulative) {
            choice = i;
            break;
        }
    }
    // Rounding can leave the cumulative sum just under r.
    if (choice == probs.dim()) choice = last_positive;
    decision.token_id = static_cast<std::uint32_t>(choice);
    return decision;
}

StepDecision decode_step_memvr(const Weights& weights, KvCache& cache, const DecodePolicy& policy,
                               const VisualContext& visual, const Vector& next_embedding,
                               DecodeCounters& counters) {
    if (!is_memvr(policy.strategy)) {
        throw std::invalid_argument("decode_step_memvr: strategy " + std::string(strategy_name(policy.strategy)) +
                                    " is not a MemVR variant");
    }
    const ModelConfig& cfg = weights.config;
    const std::size_t probed = cfg.num_layers - 1;
    const LayerRange candidates = policy.candidates(cfg);
    const bool dynamic = policy.strategy != Strategy::MemvrStatic;
    const bool instrument = policy.instrument_uncertainty;

    StepDecision decision;
    if (instrument) decision.per_layer_uncertainty.assign(probed, 0.0);

    // Zero-based index of the block whose FFN output is replaced.
    std::optional<std::size_t> inject_block;
    bool armed = dynamic;
    if (!dynamic) {
        decision.trigger_layer = policy.static_layer;
        decision.applied_alpha = policy.alpha;
        inject_block = policy.static_layer;
    }

    ForwardHooks hooks;
    hooks.on_hidden = [&](std::size_t block, const Vector& hidden) {
        const std::size_t layer = block + 1;
        if (layer > probed) return;
        const bool decides = armed && candidates.contains(layer);
        if (!instrument && !decides) return;
        const double u = layer_uncertainty(weights, hidden);
        ++counters.entropy_probes;
        if (instrument) decision.per_layer_uncertainty[block] = u;
        if (decides && u > policy.gamma) {
            armed = false;
            decision.trigger_layer = static_cast<std::uint32_t>(layer);
            decision.applied_alpha =
                policy.strategy == Strategy::MemvrDynamicAlpha ? dynamic_alpha(u, policy.gamma) : policy.alpha;
            inject_block = layer;
        }
    };
    hooks.ffn = [&](std::size_t block, const Vector& ffn_input, Vector ffn_output) {
        if (!inject_block || *inject_block != block) return ffn_output;
        ++counters.retrace_blends;
        return blend_with_retrace(ffn_input, ffn_output, visual, decision.applied_alpha);
    };

    const StepOutput out = forward_step(weights, cache, next_embedding, hooks);
    ++counters.forward_passes;
    decision.triggered = decision.trigger_layer.has_value();
    decision.token_id = greedy_token(out.final_logits);
    return decision;
}

VisualContext distort_visual(const VisualContext& visual, double sigma, std::uint64_t seed) {
    VisualContext noisy = visual;
    Prng rng(seed);
    for (float& x : noisy.tokens.data) x = static_cast<float>(x + sigma * rng.gaussian());
    return noisy;
}

StepDecision decode_step_contrastive(const Weights& weights, KvCache& clean_cache, KvCache& distorted_cache,
                                     const DecodePolicy& policy, const Vector& next_embedding,
                                     DecodeCounters& counters) {
    if (policy.strategy != Strategy::Contrastive) {
        throw std::invalid_argument("decode_step_contrastive: strategy must be contrastive");
    }
    StepDecision decision;
    const StepOutput clean = plain_step(weights, clean_cache, policy, next_embedding, counters,
                                        decision.per_layer_uncertainty);
    const StepOutput distorted = forward_step(weights, distorted_cache, next_embedding);
    ++counters.forward_passes;

    const Vector probs = softmax(clean.final_logits);
    const float cutoff = static_cast<float>(policy.cd_plausibility * probs[argmax(probs.span())]);
    std::size_t best = probs.dim();
    double best_score = 0.0;
    for (std::size_t i = 0; i < probs.dim(); ++i) {
        if (probs[i] < cutoff) continue;
        // (1 + beta) f - beta f', written as f + beta (f - f').
        const double fc = clean.final_logits[i];
        const double score = fc + policy.cd_beta * (fc - distorted.final_logits[i]);
        if (best == probs.dim() || score > best_score) {
            best = i;
            best_score = score;
        }
    }
    decision.token_id = static_cast<std::uint32_t>(best);
    return decision;
}

Generation generate(const Weights& weights, const DecodePolicy& policy, const VisualContext& visual,
                    std::span<const std::uint32_t> prompt_ids, const std::function<void()>& on_decode_start) {
    const ModelConfig& cfg = weights.config;
    cfg.validate();
    policy.validate(cfg);
    if (prompt_ids.empty()) throw std::invalid_argument("generate: prompt must contain at least one token");
    if (visual.dim() != cfg.hidden_dim) {
        throw ShapeError("generate: visual tokens " + shape_string(visual.tokens) + " vs hidden_dim " +
                         std::to_string(cfg.hidden_dim));
    }
    const std::size_t prompt_len = visual.count() + prompt_ids.size();
    if (prompt_len + policy.max_new_tokens > cfg.max_seq_len) {
        throw std::length_error("generate: prompt of " + std::to_string(prompt_len) + " positions plus " +
                                std::to_string(policy.max_new_tokens) + " new tokens exceeds max_seq_len " +
                                std::to_string(cfg.max_seq_len));
    }

    Generation gen;
    if (policy.max_new_tokens == 0) return gen;

    const std::vector<Vector> prompt = embed_prompt(weights, prompt_ids, visual);
    KvCache cache(cfg);
    for (std::size_t i = 0; i + 1 < prompt.size(); ++i) {
        forward_step(weights, cache, prompt[i]);
        ++gen.counters.prefill_passes;
    }

    // Contrastive decoding keeps a second cache fed with distorted visual tokens.
    std::optional<KvCache> distorted_cache;
    if (policy.strategy == Strategy::Contrastive) {
        const VisualContext noisy = distort_visual(visual, policy.cd_noise_sigma, policy.sample_seed);
        const std::vector<Vector> noisy_prompt = embed_prompt(weights, prompt_ids, noisy);
        distorted_cache.emplace(cfg);
        for (std::size_t i = 0; i + 1 < noisy_prompt.size(); ++i) {
            forward_step(weights, *distorted_cache, noisy_prompt[i]);
            ++gen.counters.prefill_passes;
        }
    }

    if (on_decode_start) on_decode_start();
    Prng rng(policy.sample_seed);
    Vector next = prompt.back();
    gen.tokens.reserve(policy.max_new_tokens);
    gen.steps.reserve(policy.max_new_tokens);
    for (std::uint32_t t = 0; t < policy.max_new_tokens; ++t) {
        StepDecision decision;
        switch (policy.strategy) {
            case Strategy::Greedy:
                decision = decode_step_greedy(weights, cache, policy, next, gen.counters);
                break;
            case Strategy::Sample:
                decision = decode_step_sample(weights, cache, policy, next, rng, gen.counters);
                break;
            case Strategy::MemvrStatic:
            case Strategy::MemvrDynamic:
            case Strategy::MemvrDynamicAlpha:
                decision = decode_step_memvr(weights, cache, policy, visual, next, gen.counters);
                break;
            case Strategy::Contrastive:
                decision = decode_step_contrastive(weights, cache, *distorted_cache, policy, next, gen.counters);
                break;
        }
        const std::uint32_t token = decision.token_id;
        gen.tokens.push_back(token);
        gen.steps.push_back(std::move(decision));
        if (policy.stop_at_eos && token == kEosToken) break;
        next = token_embedding(weights, token);
    }
    return gen;
}

}  // namespace memvr
