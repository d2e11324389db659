// Copyright 2026 The memvr-toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace memvr {

/// Raised when operand shapes do not line up. The message names both shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Vector {
    std::vector<float> data;

    Vector() = default;
    explicit Vector(std::size_t dim, float fill = 0.0f) : data(dim, fill) {}
    Vector(std::initializer_list<float> values) : data(values) {}
    explicit Vector(std::vector<float> values) : data(std::move(values)) {}

    std::size_t dim() const { return data.size(); }
    float& operator[](std::size_t i) { return data[i]; }
    float operator[](std::size_t i) const { return data[i]; }
    std::span<float> span() { return data; }
    std::span<const float> span() const { return data; }

    bool operator==(const Vector&) const = default;
};

/// Dense row-major matrix of 32-bit floats.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<float> values);

    float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    Vector column(std::size_t c) const;

    bool operator==(const Matrix&) const = default;
};

std::string shape_string(const Matrix& m);

/// Dot product accumulated in double.
double dot(std::span<const float> a, std::span<const float> b);

/// m · v, result has m.rows entries.
Vector matvec(const Matrix& m, const Vector& v);

/// vᵀ · m, result has m.cols entries.
Vector vecmat(const Vector& v, const Matrix& m);

/// Numerically stable softmax (max-subtracted, normalized in double).
Vector softmax(const Vector& logits);

float silu(float x);
Vector silu(const Vector& v);

inline constexpr float kRmsNormEps = 1e-5f;

/// v / sqrt(mean(v²) + eps), scaled elementwise by gain. eps may be 0; an
/// all-zero input then maps to zero.
Vector rmsnorm(const Vector& v, const Vector& gain, float eps = kRmsNormEps);

void add_inplace(Vector& acc, const Vector& v);

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(std::span<const float> values);

/// SplitMix64 generator. The same seed yields the same stream everywhere.
class Prng {
public:
    explicit Prng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next();
    /// Uniform double in [0, 1) from the top 53 bits.
    double uniform();
    /// Standard normal via Box–Muller; consumes two uniforms per draw.
    double gaussian();

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

}  // namespace memvr
