// Copyright 2026 The memvr-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "memvr/instrumentation.hpp"

namespace memvr {

void UncertaintyTrace::record_step(const StepDecision& step) {
    TraceRow row;
    row.step = static_cast<std::uint32_t>(rows_.size());
    row.token_id = step.token_id;
    row.trigger_layer = step.trigger_layer;
    row.applied_alpha = step.applied_alpha;
    row.u = step.per_layer_uncertainty;
    append(std::move(row));
}

void UncertaintyTrace::append(TraceRow row) {
    if (row.u.size() != probed_) {
        throw std::invalid_argument("trace row carries " + std::to_string(row.u.size()) +
                                    " uncertainty values, expected " + std::to_string(probed_));
    }
    rows_.push_back(std::move(row));
}

UncertaintyTrace trace_from_generation(const Generation& gen, const ModelConfig& config) {
    UncertaintyTrace trace(config.num_layers - 1);
    for (const StepDecision& step : gen.steps) trace.record_step(step);
    return trace;
}

namespace {

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

double round6(double v) {
    return std::round(v * 1e6) / 1e6;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

template <typename T>
T parse_number(std::string_view field, std::size_t line, const char* what) {
    T value{};
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
        throw TraceParseError(line, std::string("bad ") + what + " '" + std::string(field) + "'");
    }
    return value;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string() + " for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

std::string trace_to_csv(const UncertaintyTrace& trace) {
    std::string out = "step,token_id,trigger_layer,applied_alpha";
    for (std::size_t l = 1; l <= trace.num_probed_layers(); ++l) out += ",u_" + std::to_string(l);
    out += '\n';
    for (const TraceRow& row : trace.rows()) {
        out += std::to_string(row.step) + ',' + std::to_string(row.token_id) + ',';
        if (row.trigger_layer) out += std::to_string(*row.trigger_layer);
        out += ',' + fixed6(row.applied_alpha);
        for (double u : row.u) out += ',' + fixed6(u);
        out += '\n';
    }
    return out;
}

UncertaintyTrace trace_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw TraceParseError(1, "missing header");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const auto header = split(line, ',');
    static constexpr std::string_view kFixed[] = {"step", "token_id", "trigger_layer", "applied_alpha"};
    if (header.size() < std::size(kFixed) || !std::equal(std::begin(kFixed), std::end(kFixed), header.begin())) {
        throw TraceParseError(line_no, "header must start with step,token_id,trigger_layer,applied_alpha");
    }
    const std::size_t probed = header.size() - std::size(kFixed);
    for (std::size_t l = 1; l <= probed; ++l) {
        if (header[3 + l] != "u_" + std::to_string(l)) {
            throw TraceParseError(line_no, "expected column u_" + std::to_string(l));
        }
    }

    UncertaintyTrace trace(probed);
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split(line, ',');
        if (fields.size() != header.size()) {
            throw TraceParseError(line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                               std::to_string(fields.size()));
        }
        TraceRow row;
        row.step = parse_number<std::uint32_t>(fields[0], line_no, "step");
        row.token_id = parse_number<std::uint32_t>(fields[1], line_no, "token_id");
        if (!fields[2].empty()) row.trigger_layer = parse_number<std::uint32_t>(fields[2], line_no, "trigger_layer");
        row.applied_alpha = parse_number<double>(fields[3], line_no, "applied_alpha");
        for (std::size_t l = 0; l < probed; ++l) {
            const double u = parse_number<double>(fields[4 + l], line_no, "uncertainty");
            if (!(u >= 0.0 && u <= 1.0)) throw TraceParseError(line_no, "uncertainty outside [0, 1]");
            row.u.push_back(u);
        }
        trace.append(std::move(row));
    }
    return trace;
}

std::string trace_to_json(const UncertaintyTrace& trace) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const TraceRow& row : trace.rows()) {
        nlohmann::ordered_json obj;
        obj["step"] = row.step;
        obj["token_id"] = row.token_id;
        obj["trigger_layer"] = row.trigger_layer ? nlohmann::ordered_json(*row.trigger_layer) : nullptr;
        obj["applied_alpha"] = round6(row.applied_alpha);
        for (std::size_t l = 0; l < row.u.size(); ++l) obj["u_" + std::to_string(l + 1)] = round6(row.u[l]);
        rows.push_back(std::move(obj));
    }
    return rows.dump(2) + "\n";
}

UncertaintyTrace trace_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw TraceParseError(0, std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_array()) throw TraceParseError(0, "trace JSON must be an array of rows");

    std::size_t probed = 0;
    if (!doc.empty()) {
        while (doc[0].contains("u_" + std::to_string(probed + 1))) ++probed;
    }
    UncertaintyTrace trace(probed);
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& obj = doc[i];
        try {
            TraceRow row;
            row.step = obj.at("step").get<std::uint32_t>();
            row.token_id = obj.at("token_id").get<std::uint32_t>();
            if (!obj.at("trigger_layer").is_null()) row.trigger_layer = obj.at("trigger_layer").get<std::uint32_t>();
            row.applied_alpha = obj.at("applied_alpha").get<double>();
            for (std::size_t l = 1; l <= probed; ++l) row.u.push_back(obj.at("u_" + std::to_string(l)).get<double>());
            trace.append(std::move(row));
        } catch (const nlohmann::json::exception& e) {
            throw TraceParseError(i, std::string("row ") + std::to_string(i) + ": " + e.what());
        }
    }
    return trace;
}

void export_trace_csv(const UncertaintyTrace& trace, const std::filesystem::path& path) {
    write_text(path, trace_to_csv(trace));
}

void export_trace_json(const UncertaintyTrace& trace, const std::filesystem::path& path) {
    write_text(path, trace_to_json(trace));
}

UncertaintyTrace load_trace(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    if (path.extension() == ".json") return trace_from_json(text);
    return trace_from_csv(text);
}

std::string render_ascii_heatmap(const UncertaintyTrace& trace) {
    if (trace.empty()) return "empty trace\n";
    std::string out;
    char label[16];
    for (std::size_t l = 0; l < trace.num_probed_layers(); ++l) {
        std::snprintf(label, sizeof(label), "L%02zu |", l + 1);
        out += label;
        for (const TraceRow& row : trace.rows()) {
            if (row.trigger_layer && *row.trigger_layer == l + 1) {
                out += '!';
                continue;
            }
            const double u = std::clamp(row.u[l], 0.0, 1.0);
            const auto bin = std::min<std::size_t>(kHeatmapRamp.size() - 1,
                                                   static_cast<std::size_t>(u * static_cast<double>(kHeatmapRamp.size())));
            out += kHeatmapRamp[bin];
        }
        out += "|\n";
    }
    return out;
}

TraceStats compute_stats(const UncertaintyTrace& trace) {
    TraceStats stats;
    stats.steps = trace.size();
    stats.layers.resize(trace.num_probed_layers());
    for (std::size_t l = 0; l < stats.layers.size(); ++l) stats.layers[l].layer = static_cast<std::uint32_t>(l + 1);
    double alpha_sum = 0.0;
    for (const TraceRow& row : trace.rows()) {
        for (std::size_t l = 0; l < row.u.size(); ++l) {
            stats.layers[l].mean_u += row.u[l];
            stats.layers[l].max_u = std::max(stats.layers[l].max_u, row.u[l]);
        }
        if (row.trigger_layer) {
            ++stats.triggered_steps;
            alpha_sum += row.applied_alpha;
            if (*row.trigger_layer >= 1 && *row.trigger_layer <= stats.layers.size()) {
                ++stats.layers[*row.trigger_layer - 1].triggers;
            }
        }
    }
    if (stats.steps > 0) {
        for (LayerStats& s : stats.layers) s.mean_u /= static_cast<double>(stats.steps);
    }
    if (stats.triggered_steps > 0) stats.mean_applied_alpha = alpha_sum / static_cast<double>(stats.triggered_steps);
    return stats;
}

std::string format_stats(const TraceStats& stats) {
    std::string out = "layer  mean_u    max_u     triggers\n";
    char buf[96];
    for (const LayerStats& s : stats.layers) {
        std::snprintf(buf, sizeof(buf), "%5u  %.6f  %.6f  %u\n", s.layer, s.mean_u, s.max_u, s.triggers);
        out += buf;
    }
    const double rate = stats.steps ? static_cast<double>(stats.triggered_steps) / static_cast<double>(stats.steps) : 0.0;
    std::snprintf(buf, sizeof(buf), "steps=%zu triggered=%zu trigger_rate=%.6f mean_alpha=%.6f\n", stats.steps,
                  stats.triggered_steps, rate, stats.mean_applied_alpha);
    out += buf;
    return out;
}

}  // namespace memvr
