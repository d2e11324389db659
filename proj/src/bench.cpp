// Copyright 2026 The memvr-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>

#include <sys/resource.h>
#include <unistd.h>

#include <json.hpp>

#include "memvr/instrumentation.hpp"

namespace memvr {

double resident_memory_mb() {
    std::ifstream statm("/proc/self/statm");
    long total_pages = 0;
    long resident_pages = 0;
    if (statm >> total_pages >> resident_pages) {
        return static_cast<double>(resident_pages) * static_cast<double>(sysconf(_SC_PAGESIZE)) / (1024.0 * 1024.0);
    }
    rusage usage{};
    if (getrusage(RUSAGE_SELF, &usage) == 0) return static_cast<double>(usage.ru_maxrss) / 1024.0;
    return 0.0;
}

namespace {

double median(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

struct Slot {
    DecodePolicy policy;
    BenchRow row;
    std::vector<double> per_token;
    std::vector<double> totals;
    Generation last;
};

Slot make_slot(DecodePolicy policy, const BenchOptions& options) {
    policy.max_new_tokens = options.tokens_per_run;
    policy.stop_at_eos = false;
    policy.instrument_uncertainty = options.instrument_uncertainty;
    Slot slot;
    slot.row.strategy = std::string(strategy_name(policy.strategy));
    slot.policy = policy;
    return slot;
}

void time_once(Slot& slot, const Weights& weights, const VisualContext& visual, std::span<const std::uint32_t> prompt) {
    if (slot.row.error) return;
    try {
        using Clock = std::chrono::steady_clock;
        const Clock::time_point start = Clock::now();
        Clock::time_point decode_start = start;
        slot.last = generate(weights, slot.policy, visual, prompt, [&] { decode_start = Clock::now(); });
        const Clock::time_point stop = Clock::now();
        const double decode_ms = std::chrono::duration<double, std::milli>(stop - decode_start).count();
        slot.totals.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
        slot.per_token.push_back(decode_ms /
                                 static_cast<double>(std::max<std::size_t>(1, slot.last.tokens.size())));
    } catch (const std::exception& e) {
        slot.row.error = e.what();
    }
}

void finish(Slot& slot) {
    if (slot.row.error) return;
    BenchRow& row = slot.row;
    row.tokens = static_cast<std::uint32_t>(slot.last.tokens.size());
    row.latency_ms_per_token = median(slot.per_token);
    row.throughput_tokens_per_ms = row.latency_ms_per_token > 0.0 ? 1.0 / row.latency_ms_per_token : 0.0;
    row.total_ms = median(slot.totals);
    row.forward_passes = slot.last.counters.forward_passes;
    row.entropy_probes = slot.last.counters.entropy_probes;
    row.retrace_blends = slot.last.counters.retrace_blends;
    row.resident_mb = resident_memory_mb();
}

}  // namespace

BenchReport benchmark(const Weights& weights, const VisualContext& visual, std::span<const std::uint32_t> prompt,
                      std::span<const DecodePolicy> policies, const BenchOptions& options) {
    if (options.repeats < 3) throw std::invalid_argument("benchmark: repeats must be >= 3");
    if (options.tokens_per_run == 0) throw std::invalid_argument("benchmark: tokens_per_run must be >= 1");

    std::vector<Slot> slots;
    for (const DecodePolicy& policy : policies) slots.push_back(make_slot(policy, options));
    const bool has_greedy = std::any_of(policies.begin(), policies.end(),
                                        [](const DecodePolicy& p) { return p.strategy == Strategy::Greedy; });
    if (!has_greedy) {
        DecodePolicy reference;
        reference.strategy = Strategy::Greedy;
        slots.push_back(make_slot(reference, options));
    }

    // Warm every strategy first, then interleave the timed runs.
    for (Slot& slot : slots) {
        time_once(slot, weights, visual, prompt);
        slot.per_token.clear();
        slot.totals.clear();
    }
    for (std::uint32_t r = 0; r < options.repeats; ++r) {
        for (Slot& slot : slots) time_once(slot, weights, visual, prompt);
    }
    for (Slot& slot : slots) finish(slot);

    double baseline = 0.0;
    for (const Slot& slot : slots) {
        if (slot.policy.strategy == Strategy::Greedy && !slot.row.error) {
            baseline = slot.row.latency_ms_per_token;
            break;
        }
    }

    BenchReport report;
    report.tokens_per_run = options.tokens_per_run;
    report.repeats = options.repeats;
    bool greedy_seen = false;
    for (std::size_t i = 0; i < policies.size(); ++i) {
        BenchRow row = slots[i].row;
        if (!row.error && baseline > 0.0) row.ratio_to_greedy = row.latency_ms_per_token / baseline;
        if (!row.error && row.strategy == "greedy" && !greedy_seen) {
            row.ratio_to_greedy = 1.0;
            greedy_seen = true;
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string format_bench_table(const BenchReport& report) {
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-20s %7s %10s %10s %11s %8s %8s %6s %9s %8s\n", "strategy", "tokens",
                  "ms/token", "tok/ms", "total_ms", "fwd", "probes", "vr", "rss_mb~", "ratio");
    out += buf;
    for (const BenchRow& r : report.rows) {
        if (r.error) {
            std::snprintf(buf, sizeof(buf), "%-20s FAILED: ", r.strategy.c_str());
            out += buf + *r.error + "\n";
            continue;
        }
        std::snprintf(buf, sizeof(buf), "%-20s %7u %10.4f %10.4f %11.3f %8llu %8llu %6llu %9.1f    x%.2f\n",
                      r.strategy.c_str(), r.tokens, r.latency_ms_per_token, r.throughput_tokens_per_ms, r.total_ms,
                      static_cast<unsigned long long>(r.forward_passes),
                      static_cast<unsigned long long>(r.entropy_probes),
                      static_cast<unsigned long long>(r.retrace_blends), r.resident_mb, r.ratio_to_greedy);
        out += buf;
    }
    return out;
}

std::string bench_to_json(const BenchReport& report) {
    nlohmann::ordered_json doc;
    doc["tokens_per_run"] = report.tokens_per_run;
    doc["repeats"] = report.repeats;
    doc["rows"] = nlohmann::ordered_json::array();
    for (const BenchRow& r : report.rows) {
        nlohmann::ordered_json row;
        row["strategy"] = r.strategy;
        if (r.error) {
            row["error"] = *r.error;
        } else {
            row["tokens"] = r.tokens;
            row["latency_ms_per_token"] = r.latency_ms_per_token;
            row["throughput_tokens_per_ms"] = r.throughput_tokens_per_ms;
            row["total_ms"] = r.total_ms;
            row["forward_passes"] = r.forward_passes;
            row["entropy_probes"] = r.entropy_probes;
            row["retrace_blends"] = r.retrace_blends;
            row["resident_mb_approx"] = r.resident_mb;
            row["ratio_to_greedy"] = r.ratio_to_greedy;
        }
        doc["rows"].push_back(std::move(row));
    }
    return doc.dump(2) + "\n";
}

}  // namespace memvr
