// Copyright 2026 The memvr-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "memvr/cli.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "memvr/decoding.hpp"
#include "memvr/instrumentation.hpp"
#include "memvr/model.hpp"

namespace memvr::cli {

namespace {

std::vector<std::string_view> tokenize(std::string_view text) {
    std::vector<std::string_view> parts;
    std::size_t i = 0;
    auto is_sep = [](char c) { return c == ',' || c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
    while (i < text.size()) {
        while (i < text.size() && is_sep(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && !is_sep(text[j])) ++j;
        if (j > i) parts.push_back(text.substr(i, j - i));
        i = j;
    }
    return parts;
}

}  // namespace

std::vector<std::uint32_t> parse_token_ids(std::string_view text) {
    std::vector<std::uint32_t> ids;
    for (std::string_view part : tokenize(text)) {
        std::uint32_t v = 0;
        const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (ec != std::errc() || ptr != part.data() + part.size()) {
            throw UsageError("bad token id '" + std::string(part) + "'");
        }
        ids.push_back(v);
    }
    return ids;
}

std::vector<double> parse_double_list(std::string_view text) {
    std::vector<double> values;
    for (std::string_view part : tokenize(text)) {
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (ec != std::errc() || ptr != part.data() + part.size()) {
            throw UsageError("bad number '" + std::string(part) + "'");
        }
        values.push_back(v);
    }
    return values;
}

namespace {

// Flags shared by gen, bench and sweep.
struct InputFlags {
    std::string weights;
    std::uint64_t image_seed = 7;
    std::string image_file;
    std::string prompt_ids = "1,2,3,4";
    CLI::Option* image_seed_opt = nullptr;
    CLI::Option* image_file_opt = nullptr;

    void add_to(CLI::App& cmd) {
        cmd.add_option("--weights", weights, "Weight file written by init-weights")->required();
        image_seed_opt = cmd.add_option("--image-seed", image_seed, "Seed for synthetic visual tokens")
                             ->capture_default_str();
        image_file_opt = cmd.add_option("--image-file", image_file, "MEMVRIMG visual token file");
        image_seed_opt->excludes(image_file_opt);
        cmd.add_option("--prompt-ids", prompt_ids, "Prompt token ids, comma or space separated")
            ->capture_default_str();
    }
};

struct Inputs {
    Weights weights;
    VisualContext visual;
    std::vector<std::uint32_t> prompt;
};

Inputs load_inputs(const InputFlags& flags) {
    Inputs in;
    in.prompt = parse_token_ids(flags.prompt_ids);
    if (in.prompt.empty()) throw UsageError("--prompt-ids must name at least one token");
    in.weights = load_weights(flags.weights);
    for (std::uint32_t id : in.prompt) {
        if (id >= in.weights.config.vocab_size) {
            throw UsageError("token id " + std::to_string(id) + " out of range for vocab size " +
                             std::to_string(in.weights.config.vocab_size));
        }
    }
    if (!flags.image_file.empty()) {
        in.visual = load_visual(flags.image_file);
        if (in.visual.dim() != in.weights.config.hidden_dim) {
            throw std::runtime_error("visual file has dim " + std::to_string(in.visual.dim()) +
                                     " but model hidden_dim is " + std::to_string(in.weights.config.hidden_dim));
        }
    } else {
        in.visual = synthesize_visual_context(in.weights.config, flags.image_seed);
    }
    return in;
}

Strategy require_strategy(const std::string& name) {
    const auto s = parse_strategy(name);
    if (!s) throw UsageError("unknown strategy '" + name + "'");
    return *s;
}

void validate_policy(const DecodePolicy& policy, const ModelConfig& config) {
    try {
        policy.validate(config);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

std::string hex64(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path);
}

std::size_t parameter_count(const ModelConfig& c) {
    const std::size_t d = c.hidden_dim;
    const std::size_t per_layer = 4 * d * d + 2 * d * c.ffn_dim + 2 * d;
    return 2 * std::size_t{c.vocab_size} * d + c.num_layers * per_layer + d;
}

// --- init-weights ------------------------------------------------------------

struct InitWeightsCmd {
    std::string out_path;
    std::uint64_t seed = 42;
    ModelConfig config;
    double init_std = kDefaultInitStd;

    void add_to(CLI::App& app) {
        auto* cmd = app.add_subcommand("init-weights", "Synthesize a deterministic weight file");
        cmd->add_option("--out", out_path, "Output weight file")->required();
        cmd->add_option("--seed", seed, "Weight seed")->capture_default_str();
        cmd->add_option("--layers", config.num_layers, "Number of layers L")->capture_default_str();
        cmd->add_option("--dim", config.hidden_dim, "Hidden dimension d")->capture_default_str();
        cmd->add_option("--ffn-dim", config.ffn_dim, "FFN dimension D")->capture_default_str();
        cmd->add_option("--vocab", config.vocab_size, "Vocabulary size N")->capture_default_str();
        cmd->add_option("--heads", config.num_heads, "Attention heads")->capture_default_str();
        cmd->add_option("--visual-tokens", config.num_visual_tokens, "Visual tokens N_v")->capture_default_str();
        cmd->add_option("--max-seq", config.max_seq_len, "Maximum sequence length")->capture_default_str();
        cmd->add_option("--init-std", init_std, "Standard deviation of every parameter")->capture_default_str();
        cmd->callback([this] { run_requested = true; });
    }

    int run(std::ostream& out) const {
        try {
            config.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        if (!(init_std > 0.0)) throw UsageError("--init-std must be positive");
        const Weights weights = synthesize_weights(config, seed, init_std);
        const auto bytes = serialize_weights(weights);
        std::ofstream file(out_path, std::ios::binary | std::ios::trunc);
        if (!file) throw std::runtime_error("cannot open " + out_path + " for writing");
        file.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!file) throw std::runtime_error("write failed for " + out_path);
        out << "config: " << describe(config) << "\n";
        out << "seed: " << seed << "\n";
        out << "parameters: " << parameter_count(config) << "\n";
        out << "bytes: " << bytes.size() << "\n";
        out << "checksum: " << hex64(fnv1a64(bytes)) << "\n";
        out << "wrote " << out_path << "\n";
        return kExitOk;
    }

    bool run_requested = false;
};

// --- init-image --------------------------------------------------------------

struct InitImageCmd {
    std::string out_path;
    std::uint64_t seed = 7;
    std::uint32_t dim = 128;
    std::uint32_t count = 16;
    bool run_requested = false;

    void add_to(CLI::App& app) {
        auto* cmd = app.add_subcommand("init-image", "Write a synthetic MEMVRIMG visual token file");
        cmd->add_option("--out", out_path, "Output file")->required();
        cmd->add_option("--seed", seed, "Visual token seed")->capture_default_str();
        cmd->add_option("--dim", dim, "Token dimension d")->capture_default_str();
        cmd->add_option("--visual-tokens", count, "Number of tokens N_v")->capture_default_str();
        cmd->callback([this] { run_requested = true; });
    }

    int run(std::ostream& out) const {
        if (dim == 0 || count == 0) throw UsageError("--dim and --visual-tokens must be positive");
        ModelConfig config;
        config.hidden_dim = dim;
        config.num_heads = 1;
        config.num_visual_tokens = count;
        config.ffn_dim = std::max(dim, count + 1);
        if (dim % 2 != 0) throw UsageError("--dim must be even");
        save_visual(synthesize_visual_context(config, seed), out_path);
        out << "wrote " << out_path << " (" << dim << " x " << count << ")\n";
        return kExitOk;
    }
};

// --- gen -----------------------------------------------------------------------

struct GenCmd {
    InputFlags input;
    std::string strategy = "greedy";
    double gamma = 0.75;
    double alpha = 0.2;
    std::uint32_t layer = 0;
    std::string candidates;
    double temperature = 1.0;
    std::uint64_t sample_seed = 0;
    double cd_beta = 1.0;
    double cd_sigma = 0.5;
    std::uint32_t max_new = 32;
    bool keep_going = false;
    std::string trace_out;
    std::string format = "csv";
    bool run_requested = false;

    CLI::App* cmd = nullptr;

    void add_to(CLI::App& app) {
        cmd = app.add_subcommand("gen", "Generate tokens with a decoding strategy");
        input.add_to(*cmd);
        cmd->add_option("--strategy", strategy,
                        "greedy | sample | memvr-static | memvr-dynamic | memvr-dynamic-alpha | contrastive")
            ->capture_default_str();
        cmd->add_option("--gamma", gamma, "Uncertainty threshold (memvr-dynamic*)")->capture_default_str();
        cmd->add_option("--alpha", alpha, "Injection ratio (memvr-static, memvr-dynamic)")->capture_default_str();
        cmd->add_option("--layer", layer, "Static trigger layer (memvr-static only, required there)");
        cmd->add_option("--candidates", candidates, "Candidate layer range a-b (memvr-dynamic*); default 1-(L-1)");
        cmd->add_option("--temperature", temperature, "Sampling temperature (sample)")->capture_default_str();
        cmd->add_option("--sample-seed", sample_seed, "Sampling / noise seed (sample, contrastive)")
            ->capture_default_str();
        cmd->add_option("--cd-beta", cd_beta, "Contrast strength (contrastive)")->capture_default_str();
        cmd->add_option("--cd-sigma", cd_sigma, "Visual noise sigma (contrastive)")->capture_default_str();
        cmd->add_option("--max-new", max_new, "Maximum new tokens")->capture_default_str();
        cmd->add_flag("--no-eos", keep_going, "Do not stop at the end-of-sequence token 0");
        cmd->add_option("--trace-out", trace_out, "Write the uncertainty trace here");
        cmd->add_option("--format", format, "Trace format: csv | json")
            ->capture_default_str()
            ->check(CLI::IsMember({"csv", "json"}));
        cmd->callback([this] { run_requested = true; });
    }

    bool given(const char* name) const { return cmd->get_option(name)->count() > 0; }

    DecodePolicy build_policy() const {
        DecodePolicy p;
        p.strategy = require_strategy(strategy);
        const bool dynamic = p.strategy == Strategy::MemvrDynamic || p.strategy == Strategy::MemvrDynamicAlpha;
        auto only = [&](const char* flag, bool allowed, const char* who) {
            if (given(flag) && !allowed) throw UsageError(std::string(flag) + " only applies to " + who);
        };
        only("--layer", p.strategy == Strategy::MemvrStatic, "memvr-static");
        only("--gamma", dynamic, "memvr-dynamic and memvr-dynamic-alpha");
        only("--candidates", dynamic, "memvr-dynamic and memvr-dynamic-alpha");
        only("--alpha", p.strategy == Strategy::MemvrStatic || p.strategy == Strategy::MemvrDynamic,
             "memvr-static and memvr-dynamic");
        only("--temperature", p.strategy == Strategy::Sample, "sample");
        only("--sample-seed", p.strategy == Strategy::Sample || p.strategy == Strategy::Contrastive,
             "sample and contrastive");
        only("--cd-beta", p.strategy == Strategy::Contrastive, "contrastive");
        only("--cd-sigma", p.strategy == Strategy::Contrastive, "contrastive");
        if (given("--format") && trace_out.empty()) throw UsageError("--format requires --trace-out");
        if (p.strategy == Strategy::MemvrStatic && !given("--layer")) {
            throw UsageError("memvr-static requires --layer");
        }
        p.gamma = gamma;
        p.alpha = alpha;
        p.static_layer = layer;
        if (!candidates.empty()) {
            try {
                p.candidate_layers = parse_layer_range(candidates);
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
        }
        p.temperature = temperature;
        p.sample_seed = sample_seed;
        p.cd_beta = cd_beta;
        p.cd_noise_sigma = cd_sigma;
        p.max_new_tokens = max_new;
        p.stop_at_eos = !keep_going;
        p.instrument_uncertainty = !trace_out.empty();
        return p;
    }

    int run(std::ostream& out, std::ostream& err) const {
        const DecodePolicy policy = build_policy();
        const Inputs in = load_inputs(input);
        validate_policy(policy, in.weights.config);
        const Generation gen = generate(in.weights, policy, in.visual, in.prompt);

        std::string line;
        for (std::size_t i = 0; i < gen.tokens.size(); ++i) {
            if (i) line += ' ';
            line += std::to_string(gen.tokens[i]);
        }
        out << line << "\n";

        if (!trace_out.empty()) {
            const UncertaintyTrace trace = trace_from_generation(gen, in.weights.config);
            if (format == "json") {
                export_trace_json(trace, trace_out);
            } else {
                export_trace_csv(trace, trace_out);
            }
            err << "trace: " << trace.size() << " steps -> " << trace_out << "\n";
        }
        return kExitOk;
    }
};

// --- bench ---------------------------------------------------------------------

struct BenchCmd {
    InputFlags input;
    std::uint32_t tokens = 80;
    std::uint32_t repeats = 5;
    std::string strategies = "greedy,memvr-dynamic,contrastive";
    std::string json_out;
    double gamma = 0.75;
    double alpha = 0.2;
    std::uint32_t layer = 0;
    bool instrumented = false;
    bool run_requested = false;

    void add_to(CLI::App& app) {
        auto* cmd = app.add_subcommand("bench", "Time decoding strategies against greedy");
        input.add_to(*cmd);
        cmd->add_option("--tokens", tokens, "Tokens per run")->capture_default_str()->check(CLI::PositiveNumber);
        cmd->add_option("--repeats", repeats, "Timed repeats (>= 3)")
            ->capture_default_str()
            ->check(CLI::Range(3u, 1000000u));
        cmd->add_option("--strategies", strategies, "Comma-separated strategies")->capture_default_str();
        cmd->add_option("--json-out", json_out, "Write the report as JSON");
        cmd->add_option("--gamma", gamma, "Uncertainty threshold for memvr-dynamic*")->capture_default_str();
        cmd->add_option("--alpha", alpha, "Injection ratio for memvr-static / memvr-dynamic")->capture_default_str();
        cmd->add_option("--layer", layer, "Trigger layer for memvr-static; default L/2");
        cmd->add_flag("--instrumented", instrumented, "Probe every layer's uncertainty while timing");
        cmd->callback([this] { run_requested = true; });
    }

    int run(std::ostream& out) const {
        std::vector<DecodePolicy> policies;
        for (std::string_view name : tokenize(strategies)) {
            DecodePolicy p;
            p.strategy = require_strategy(std::string(name));
            p.gamma = gamma;
            p.alpha = alpha;
            policies.push_back(p);
        }
        if (policies.empty()) throw UsageError("--strategies must name at least one strategy");
        const Inputs in = load_inputs(input);
        for (DecodePolicy& p : policies) {
            p.static_layer = layer ? layer : in.weights.config.num_layers / 2;
            validate_policy(p, in.weights.config);
        }
        BenchOptions options;
        options.tokens_per_run = tokens;
        options.repeats = repeats;
        options.instrument_uncertainty = instrumented;
        const BenchReport report = benchmark(in.weights, in.visual, in.prompt, policies, options);
        out << format_bench_table(report);
        if (!json_out.empty()) write_text(json_out, bench_to_json(report));
        return kExitOk;
    }
};

// --- sweep ---------------------------------------------------------------------

double divergence(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b, bool prefix_metric) {
    const std::size_t n = std::max(a.size(), b.size());
    if (n == 0) return 0.0;
    std::size_t differing = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const bool same = i < a.size() && i < b.size() && a[i] == b[i];
        if (same) continue;
        if (prefix_metric) return static_cast<double>(n - i) / static_cast<double>(n);
        ++differing;
    }
    return static_cast<double>(differing) / static_cast<double>(n);
}

struct SweepCmd {
    InputFlags input;
    std::string gammas = "0.5,0.75,0.9,1.0";
    std::string alphas = "0,0.1,0.2,0.35";
    std::string metric = "hamming";
    std::string out_path;
    std::uint32_t max_new = 32;
    bool run_requested = false;

    void add_to(CLI::App& app) {
        auto* cmd = app.add_subcommand("sweep", "Sweep memvr-dynamic over a (gamma, alpha) grid");
        input.add_to(*cmd);
        cmd->add_option("--gammas", gammas, "Threshold grid")->capture_default_str();
        cmd->add_option("--alphas", alphas, "Injection ratio grid")->capture_default_str();
        cmd->add_option("--metric", metric, "Divergence from greedy: hamming | prefix")
            ->capture_default_str()
            ->check(CLI::IsMember({"hamming", "prefix"}));
        cmd->add_option("--out", out_path, "Write CSV here instead of stdout");
        cmd->add_option("--max-new", max_new, "Tokens per generation")->capture_default_str();
        cmd->callback([this] { run_requested = true; });
    }

    int run(std::ostream& out) const {
        const auto gamma_grid = parse_double_list(gammas);
        const auto alpha_grid = parse_double_list(alphas);
        if (gamma_grid.empty() || alpha_grid.empty()) throw UsageError("--gammas and --alphas must be nonempty");
        const Inputs in = load_inputs(input);

        DecodePolicy base;
        base.max_new_tokens = max_new;
        base.instrument_uncertainty = false;
        validate_policy(base, in.weights.config);
        const Generation reference = generate(in.weights, base, in.visual, in.prompt);

        std::string csv = "gamma,alpha,trigger_rate,mean_trigger_layer,mean_alpha,divergence\n";
        char buf[160];
        for (double g : gamma_grid) {
            for (double a : alpha_grid) {
                DecodePolicy p = base;
                p.strategy = Strategy::MemvrDynamic;
                p.gamma = g;
                p.alpha = a;
                validate_policy(p, in.weights.config);
                const Generation gen = generate(in.weights, p, in.visual, in.prompt);
                std::size_t triggered = 0;
                double layer_sum = 0.0;
                double alpha_sum = 0.0;
                for (const StepDecision& s : gen.steps) {
                    if (!s.triggered) continue;
                    ++triggered;
                    layer_sum += *s.trigger_layer;
                    alpha_sum += s.applied_alpha;
                }
                const double steps = static_cast<double>(std::max<std::size_t>(1, gen.steps.size()));
                std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,", g, a, static_cast<double>(triggered) / steps);
                csv += buf;
                if (triggered) {
                    std::snprintf(buf, sizeof(buf), "%.6f", layer_sum / static_cast<double>(triggered));
                    csv += buf;
                }
                std::snprintf(buf, sizeof(buf), ",%.6f,%.6f\n",
                              triggered ? alpha_sum / static_cast<double>(triggered) : 0.0,
                              divergence(gen.tokens, reference.tokens, metric == "prefix"));
                csv += buf;
            }
        }
        if (out_path.empty()) {
            out << csv;
        } else {
            write_text(out_path, csv);
        }
        return kExitOk;
    }
};

// --- inspect -------------------------------------------------------------------

struct InspectCmd {
    std::string trace_path;
    bool ascii = false;
    bool stats = false;
    bool run_requested = false;

    void add_to(CLI::App& app) {
        auto* cmd = app.add_subcommand("inspect", "Render or summarize an uncertainty trace");
        cmd->add_option("--trace", trace_path, "Trace file (CSV, or JSON by extension)")->required();
        auto* a = cmd->add_flag("--ascii", ascii, "Render the layer x step heatmap");
        auto* s = cmd->add_flag("--stats", stats, "Per-layer mean/max uncertainty and trigger summary");
        a->excludes(s);
        cmd->callback([this] { run_requested = true; });
    }

    int run(std::ostream& out) const {
        if (!ascii && !stats) throw UsageError("inspect needs --ascii or --stats");
        const UncertaintyTrace trace = load_trace(trace_path);
        if (trace.empty()) {
            out << "empty trace\n";
            return kExitOk;
        }
        out << (ascii ? render_ascii_heatmap(trace) : format_stats(compute_stats(trace)));
        return kExitOk;
    }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Toy multimodal decoder with visual retracing"};
    app.name(args.empty() ? "memvr" : args[0]);
    app.require_subcommand(1);

    InitWeightsCmd init_weights;
    InitImageCmd init_image;
    GenCmd gen;
    BenchCmd bench;
    SweepCmd sweep;
    InspectCmd inspect;
    init_weights.add_to(app);
    init_image.add_to(app);
    gen.add_to(app);
    bench.add_to(app);
    sweep.add_to(app);
    inspect.add_to(app);

    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (init_weights.run_requested) return init_weights.run(out);
        if (init_image.run_requested) return init_image.run(out);
        if (gen.run_requested) return gen.run(out, err);
        if (bench.run_requested) return bench.run(out);
        if (sweep.run_requested) return sweep.run(out);
        if (inspect.run_requested) return inspect.run(out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    err << "usage error: no command given\n";
    return kExitUsage;
}

}  // namespace memvr::cli
