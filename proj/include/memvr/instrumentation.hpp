// Copyright 2026 The memvr-toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "memvr/decoding.hpp"

namespace memvr {

struct TraceRow {
    std::uint32_t step = 0;
    std::uint32_t token_id = 0;
    std::optional<std::uint32_t> trigger_layer;
    double applied_alpha = 0.0;
    std::vector<double> u;  // layers 1..L-1

    bool operator==(const TraceRow&) const = default;
};

/// Per-step, per-layer uncertainty of one generation.
class UncertaintyTrace {
public:
    explicit UncertaintyTrace(std::size_t num_probed_layers) : probed_(num_probed_layers) {}

    std::size_t num_probed_layers() const { return probed_; }
    std::size_t size() const { return rows_.size(); }
    bool empty() const { return rows_.empty(); }
    const std::vector<TraceRow>& rows() const { return rows_; }

    /// Appends one row. Throws std::invalid_argument when the step does not
    /// carry exactly num_probed_layers() uncertainty values.
    void record_step(const StepDecision& step);
    /// Appends a row as read back from a file; same arity rule.
    void append(TraceRow row);

private:
    std::size_t probed_;
    std::vector<TraceRow> rows_;
};

UncertaintyTrace trace_from_generation(const Generation& gen, const ModelConfig& config);

class TraceParseError : public std::runtime_error {
public:
    TraceParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

std::string trace_to_csv(const UncertaintyTrace& trace);
std::string trace_to_json(const UncertaintyTrace& trace);
UncertaintyTrace trace_from_csv(const std::string& text);
UncertaintyTrace trace_from_json(const std::string& text);

void export_trace_csv(const UncertaintyTrace& trace, const std::filesystem::path& path);
void export_trace_json(const UncertaintyTrace& trace, const std::filesystem::path& path);
/// Reads CSV, or JSON when the extension is .json.
UncertaintyTrace load_trace(const std::filesystem::path& path);

inline constexpr std::string_view kHeatmapRamp = " .:-=+*#%@";

/// One row per layer (layer 1 on top), one column per step, glyph by
/// u-decile; the trigger cell of each step shows '!'.
std::string render_ascii_heatmap(const UncertaintyTrace& trace);

struct LayerStats {
    std::uint32_t layer = 0;
    double mean_u = 0.0;
    double max_u = 0.0;
    std::uint32_t triggers = 0;
};

struct TraceStats {
    std::vector<LayerStats> layers;
    std::size_t steps = 0;
    std::size_t triggered_steps = 0;
    double mean_applied_alpha = 0.0;  // over triggered steps
};

TraceStats compute_stats(const UncertaintyTrace& trace);
std::string format_stats(const TraceStats& stats);

// --- benchmark --------------------------------------------------------------

struct BenchRow {
    std::string strategy;
    std::uint32_t tokens = 0;
    double latency_ms_per_token = 0.0;
    double throughput_tokens_per_ms = 0.0;
    double total_ms = 0.0;
    std::uint64_t forward_passes = 0;
    std::uint64_t entropy_probes = 0;
    std::uint64_t retrace_blends = 0;
    double resident_mb = 0.0;  // approximate
    double ratio_to_greedy = 0.0;
    std::optional<std::string> error;
};

struct BenchReport {
    std::uint32_t tokens_per_run = 0;
    std::uint32_t repeats = 0;
    std::vector<BenchRow> rows;
};

struct BenchOptions {
    std::uint32_t tokens_per_run = 80;
    std::uint32_t repeats = 5;
    /// Probe every layer during timing, as a traced generation would.
    bool instrument_uncertainty = false;
};

/// Times each policy: one warm-up run each, then `repeats` rounds that run
/// every policy once, reporting the median per-token latency of the decode
/// phase (prefill excluded; total_ms covers the whole run). Ratios are
/// against a greedy run from the same call. A policy that throws yields a row
/// with `error` set.
BenchReport benchmark(const Weights& weights, const VisualContext& visual, std::span<const std::uint32_t> prompt,
                      std::span<const DecodePolicy> policies, const BenchOptions& options);

std::string format_bench_table(const BenchReport& report);
std::string bench_to_json(const BenchReport& report);

/// Resident set size of this process in MiB, or 0 when unavailable.
double resident_memory_mb();

}  // namespace memvr
