// Copyright 2026 The memvr-toy Authors
// SPDX-License-Identifier: Apache-2.0

// Weight file:  "MEMVRTOY" | u32 version | 7 x u32 config | f32 payload
// Visual file:  "MEMVRIMG" | u32 d | u32 N_v | f32 payload, column-major
// All integers and floats little-endian.

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "memvr/model.hpp"

namespace memvr {

namespace {

std::uint32_t to_little(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
    }
    return v;
}

class Writer {
public:
    void bytes(std::span<const char> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    void u32(std::uint32_t v) {
        v = to_little(v);
        std::uint8_t raw[4];
        std::memcpy(raw, &v, 4);
        out_.insert(out_.end(), raw, raw + 4);
    }
    void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
    void floats(std::span<const float> values) {
        for (float f : values) f32(f);
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    bool starts_with(std::span<const char> magic) const {
        return in_.size() >= magic.size() &&
               std::equal(magic.begin(), magic.end(), in_.begin(),
                          [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; });
    }
    void skip(std::size_t n) { need(n, "header"); pos_ += n; }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v;
        std::memcpy(&v, in_.data() + pos_, 4);
        pos_ += 4;
        return to_little(v);
    }
    void floats(std::span<float> out, const char* what) {
        need(out.size() * 4, what);
        for (float& f : out) f = std::bit_cast<float>(u32(what));
    }
    std::size_t remaining() const { return in_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (remaining() < n) {
            throw FormatError(FormatError::Kind::Truncated,
                              std::string("truncated file: ran out of bytes reading ") + what + " (needed " +
                                  std::to_string(n) + ", have " + std::to_string(remaining()) + ")");
        }
    }

    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string() + " for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(FormatError::Kind::Io, "write failed for " + path.string());
}

void read_matrix(Reader& r, Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
    m = Matrix(rows, cols);
    r.floats(m.data, what);
}

void read_vector(Reader& r, Vector& v, std::size_t dim, const char* what) {
    v = Vector(dim);
    r.floats(v.data, what);
}

}  // namespace

std::vector<std::uint8_t> serialize_weights(const Weights& w) {
    const ModelConfig& c = w.config;
    Writer out;
    out.bytes(kWeightsMagic);
    out.u32(kWeightsVersion);
    for (std::uint32_t v : {c.num_layers, c.hidden_dim, c.ffn_dim, c.vocab_size, c.num_heads,
                            c.num_visual_tokens, c.max_seq_len}) {
        out.u32(v);
    }
    out.floats(w.token_embedding.data);
    for (const LayerWeights& layer : w.layers) {
        out.floats(layer.wq.data);
        out.floats(layer.wk.data);
        out.floats(layer.wv.data);
        out.floats(layer.wo.data);
        out.floats(layer.w1.data);
        out.floats(layer.w2.data);
        out.floats(layer.attn_norm.data);
        out.floats(layer.ffn_norm.data);
    }
    out.floats(w.final_norm.data);
    out.floats(w.vocab_head.data);
    return out.take();
}

Weights deserialize_weights(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    if (!r.starts_with(kWeightsMagic)) {
        throw FormatError(FormatError::Kind::BadMagic, "bad magic: not a MEMVRTOY weight file");
    }
    r.skip(sizeof(kWeightsMagic));
    const std::uint32_t version = r.u32("version");
    if (version != kWeightsVersion) {
        throw FormatError(FormatError::Kind::VersionMismatch,
                          "version mismatch: file has " + std::to_string(version) + ", expected " +
                              std::to_string(kWeightsVersion));
    }
    Weights w;
    ModelConfig& c = w.config;
    c.num_layers = r.u32("config");
    c.hidden_dim = r.u32("config");
    c.ffn_dim = r.u32("config");
    c.vocab_size = r.u32("config");
    c.num_heads = r.u32("config");
    c.num_visual_tokens = r.u32("config");
    c.max_seq_len = r.u32("config");
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(FormatError::Kind::InvalidHeader, e.what());
    }

    const std::size_t d = c.hidden_dim;
    read_matrix(r, w.token_embedding, c.vocab_size, d, "token embedding");
    w.layers.resize(c.num_layers);
    for (LayerWeights& layer : w.layers) {
        read_matrix(r, layer.wq, d, d, "layer Q");
        read_matrix(r, layer.wk, d, d, "layer K");
        read_matrix(r, layer.wv, d, d, "layer V");
        read_matrix(r, layer.wo, d, d, "layer O");
        read_matrix(r, layer.w1, d, c.ffn_dim, "layer W1");
        read_matrix(r, layer.w2, d, c.ffn_dim, "layer W2");
        read_vector(r, layer.attn_norm, d, "attention gain");
        read_vector(r, layer.ffn_norm, d, "ffn gain");
    }
    read_vector(r, w.final_norm, d, "final gain");
    read_matrix(r, w.vocab_head, c.vocab_size, d, "vocab head");
    if (r.remaining() != 0) {
        throw FormatError(FormatError::Kind::TrailingData,
                          "trailing data: " + std::to_string(r.remaining()) + " bytes after payload");
    }
    return w;
}

void save_weights(const Weights& weights, const std::filesystem::path& path) {
    write_file(path, serialize_weights(weights));
}

Weights load_weights(const std::filesystem::path& path) {
    return deserialize_weights(read_file(path));
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t weights_checksum(const Weights& weights) {
    return fnv1a64(serialize_weights(weights));
}

std::vector<std::uint8_t> serialize_visual(const VisualContext& visual) {
    Writer out;
    out.bytes(kVisualMagic);
    out.u32(static_cast<std::uint32_t>(visual.dim()));
    out.u32(static_cast<std::uint32_t>(visual.count()));
    for (std::size_t c = 0; c < visual.count(); ++c) {
        for (std::size_t r = 0; r < visual.dim(); ++r) out.f32(visual.tokens.at(r, c));
    }
    return out.take();
}

VisualContext deserialize_visual(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    if (!r.starts_with(kVisualMagic)) {
        throw FormatError(FormatError::Kind::BadMagic, "bad magic: not a MEMVRIMG visual file");
    }
    r.skip(sizeof(kVisualMagic));
    const std::uint32_t d = r.u32("dim");
    const std::uint32_t count = r.u32("token count");
    if (d == 0 || count == 0) {
        throw FormatError(FormatError::Kind::InvalidHeader, "visual file declares an empty matrix");
    }
    VisualContext visual{Matrix(d, count)};
    std::vector<float> column(d);
    for (std::size_t c = 0; c < count; ++c) {
        r.floats(column, "visual payload");
        for (std::size_t row = 0; row < d; ++row) visual.tokens.at(row, c) = column[row];
    }
    if (r.remaining() != 0) {
        throw FormatError(FormatError::Kind::TrailingData,
                          "trailing data: " + std::to_string(r.remaining()) + " bytes after payload");
    }
    return visual;
}

void save_visual(const VisualContext& visual, const std::filesystem::path& path) {
    write_file(path, serialize_visual(visual));
}

VisualContext load_visual(const std::filesystem::path& path) {
    return deserialize_visual(read_file(path));
}

}  // namespace memvr
