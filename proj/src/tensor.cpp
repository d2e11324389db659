// Copyright 2026 The memvr-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "memvr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace memvr {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<float> values)
    : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != rows * cols) {
        throw ShapeError("matrix " + std::to_string(rows) + "x" + std::to_string(cols) + " given " +
                         std::to_string(data.size()) + " values");
    }
}

Vector Matrix::column(std::size_t c) const {
    Vector out(rows);
    for (std::size_t r = 0; r < rows; ++r) out[r] = at(r, c);
    return out;
}

std::string shape_string(const Matrix& m) {
    return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

double dot(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    // Four accumulators, combined in a fixed order.
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    const std::size_t n = a.size();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc[0] += static_cast<double>(a[i]) * b[i];
        acc[1] += static_cast<double>(a[i + 1]) * b[i + 1];
        acc[2] += static_cast<double>(a[i + 2]) * b[i + 2];
        acc[3] += static_cast<double>(a[i + 3]) * b[i + 3];
    }
    for (; i < n; ++i) acc[0] += static_cast<double>(a[i]) * b[i];
    return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

Vector matvec(const Matrix& m, const Vector& v) {
    if (m.cols != v.dim()) {
        throw ShapeError("matvec: matrix " + shape_string(m) + " times vector of dim " +
                         std::to_string(v.dim()));
    }
    Vector out(m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) {
        out[r] = static_cast<float>(dot(m.row(r), v.span()));
    }
    return out;
}

Vector vecmat(const Vector& v, const Matrix& m) {
    if (m.rows != v.dim()) {
        throw ShapeError("vecmat: vector of dim " + std::to_string(v.dim()) + " times matrix " +
                         shape_string(m));
    }
    std::vector<double> acc(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double scale = v[r];
        const float* row = m.data.data() + r * m.cols;
        for (std::size_t c = 0; c < m.cols; ++c) acc[c] += scale * row[c];
    }
    Vector out(m.cols);
    for (std::size_t c = 0; c < m.cols; ++c) out[c] = static_cast<float>(acc[c]);
    return out;
}

Vector softmax(const Vector& logits) {
    if (logits.dim() == 0) throw std::invalid_argument("softmax: empty input");
    float max_logit = logits[0];
    for (float x : logits.data) {
        if (!std::isfinite(x)) throw std::invalid_argument("softmax: non-finite logit");
        max_logit = std::max(max_logit, x);
    }
    std::vector<double> e(logits.dim());
    double sum = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        e[i] = std::exp(static_cast<double>(logits[i]) - max_logit);
        sum += e[i];
    }
    Vector out(logits.dim());
    for (std::size_t i = 0; i < e.size(); ++i) out[i] = static_cast<float>(e[i] / sum);
    return out;
}

float silu(float x) {
    return static_cast<float>(static_cast<double>(x) / (1.0 + std::exp(-static_cast<double>(x))));
}

Vector silu(const Vector& v) {
    Vector out(v.dim());
    for (std::size_t i = 0; i < v.dim(); ++i) out[i] = silu(v[i]);
    return out;
}

Vector rmsnorm(const Vector& v, const Vector& gain, float eps) {
    if (v.dim() != gain.dim()) {
        throw ShapeError("rmsnorm: input dim " + std::to_string(v.dim()) + " vs gain dim " +
                         std::to_string(gain.dim()));
    }
    if (!(eps >= 0.0f)) throw std::invalid_argument("rmsnorm: eps must be >= 0");
    Vector out(v.dim());
    if (v.dim() == 0) return out;
    const double mean_sq = dot(v.span(), v.span()) / static_cast<double>(v.dim());
    const double denom = mean_sq + eps;
    if (denom == 0.0) return out;
    const double scale = 1.0 / std::sqrt(denom);
    for (std::size_t i = 0; i < v.dim(); ++i) {
        out[i] = static_cast<float>(v[i] * scale * gain[i]);
    }
    return out;
}

void add_inplace(Vector& acc, const Vector& v) {
    if (acc.dim() != v.dim()) {
        throw ShapeError("add: dim " + std::to_string(acc.dim()) + " vs " + std::to_string(v.dim()));
    }
    for (std::size_t i = 0; i < v.dim(); ++i) acc[i] += v[i];
}

std::size_t argmax(std::span<const float> values) {
    if (values.empty()) throw std::invalid_argument("argmax: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

std::uint64_t Prng::next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double Prng::uniform() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double Prng::gaussian() {
    const double u1 = uniform();
    const double u2 = uniform();
    // 1 - u1 lies in (0, 1].
    const double radius = std::sqrt(-2.0 * std::log(1.0 - u1));
    return radius * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace memvr
