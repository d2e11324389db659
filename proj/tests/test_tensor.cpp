// Copyright 2026 The memvr-toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "memvr/tensor.hpp"
#include "test_support.hpp"

using namespace memvr;

TEST_CASE("matvec") {
    SUBCASE("identity") {
        const Matrix eye(2, 2, {1, 0, 0, 1});
        CHECK(matvec(eye, Vector{3, 4}) == Vector{3, 4});
    }
    SUBCASE("zero matrix") {
        CHECK(matvec(Matrix(3, 2), Vector{1, 1}) == Vector{0, 0, 0});
    }
    SUBCASE("hand arithmetic") {
        CHECK(matvec(Matrix(2, 2, {1, 2, 3, 4}), Vector{1, 1}) == Vector{3, 7});
    }
    SUBCASE("shape mismatch names both shapes") {
        try {
            matvec(Matrix(2, 3), Vector{1, 1});
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("2x3") != std::string::npos);
            CHECK(msg.find("dim 2") != std::string::npos);
        }
    }
}

TEST_CASE("matvec distributes over vector addition") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const Matrix m = testing::random_matrix(rng, 1 + trial % 7, 1 + trial % 5);
        const Vector a = testing::random_vector(rng, m.cols);
        const Vector b = testing::random_vector(rng, m.cols);
        Vector sum = a;
        add_inplace(sum, b);
        Vector lhs = matvec(m, sum);
        Vector rhs = matvec(m, a);
        add_inplace(rhs, matvec(m, b));
        CHECK(testing::max_abs_diff(lhs, rhs) < 1e-5);
    }
}

TEST_CASE("vecmat is the transpose product") {
    const Matrix m(2, 3, {1, 2, 3, 4, 5, 6});
    CHECK(vecmat(Vector{1, 1}, m) == Vector{5, 7, 9});
    CHECK_THROWS_AS(vecmat(Vector{1, 1, 1}, m), ShapeError);
}

TEST_CASE("softmax") {
    SUBCASE("symmetric input") {
        const Vector p = softmax(Vector{0, 0, 0});
        for (float x : p.data) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    }
    SUBCASE("large logits do not overflow") {
        const Vector p = softmax(Vector{1000, 0});
        CHECK(std::abs(p[0] - 1.0) < 1e-6);
        CHECK(std::abs(p[1]) < 1e-6);
    }
    SUBCASE("closed form for ln 2") {
        const Vector p = softmax(Vector{static_cast<float>(std::log(2.0)), 0});
        CHECK(std::abs(p[0] - 2.0 / 3.0) < 1e-6);
        CHECK(std::abs(p[1] - 1.0 / 3.0) < 1e-6);
    }
    SUBCASE("empty input") {
        CHECK_THROWS_AS(softmax(Vector{}), std::invalid_argument);
    }
    SUBCASE("non-finite input") {
        CHECK_THROWS_AS(softmax(Vector{1.0f, NAN}), std::invalid_argument);
    }
}

TEST_CASE("softmax sums to one and ignores a constant shift") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> shift(-50.0, 50.0);
    for (int trial = 0; trial < 300; ++trial) {
        const Vector logits = testing::random_vector(rng, 1 + trial % 40, 3.0);
        const Vector p = softmax(logits);
        double sum = 0.0;
        for (float x : p.data) {
            CHECK(x >= 0.0f);
            sum += x;
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);

        Vector shifted = logits;
        const float c = static_cast<float>(shift(rng));
        for (float& x : shifted.data) x += c;
        CHECK(testing::max_abs_diff(p, softmax(shifted)) < 1e-6);
    }
}

TEST_CASE("silu") {
    CHECK(silu(0.0f) == 0.0f);
    CHECK(silu(30.0f) == doctest::Approx(30.0).epsilon(1e-9));
    CHECK(std::abs(silu(1.0f) - 0.7310585786300049) < 1e-6);
    const Vector v = silu(Vector{0, 1});
    CHECK(v[0] == 0.0f);
    CHECK(v[1] == silu(1.0f));
}

TEST_CASE("rmsnorm") {
    SUBCASE("all ones stay ones") {
        const Vector out = rmsnorm(Vector{1, 1, 1, 1}, Vector{1, 1, 1, 1}, 0.0f);
        for (float x : out.data) CHECK(x == doctest::Approx(1.0));
    }
    SUBCASE("zero vector maps to zero") {
        CHECK(rmsnorm(Vector{0, 0}, Vector{1, 1}) == Vector{0, 0});
        CHECK(rmsnorm(Vector{0, 0}, Vector{1, 1}, 0.0f) == Vector{0, 0});
    }
    SUBCASE("hand arithmetic") {
        const Vector out = rmsnorm(Vector{3, 4}, Vector{1, 1}, 0.0f);
        CHECK(std::abs(out[0] - 0.848528137423857) < 1e-6);
        CHECK(std::abs(out[1] - 1.131370849898476) < 1e-6);
    }
    SUBCASE("gain applies elementwise") {
        const Vector out = rmsnorm(Vector{3, 4}, Vector{2, -1}, 0.0f);
        CHECK(std::abs(out[0] - 2 * 0.848528137423857) < 1e-6);
        CHECK(std::abs(out[1] + 1.131370849898476) < 1e-6);
    }
    SUBCASE("dimension mismatch") {
        CHECK_THROWS_AS(rmsnorm(Vector{1, 2}, Vector{1}), ShapeError);
    }
}

TEST_CASE("argmax breaks ties toward the lowest index") {
    CHECK(argmax(Vector{1, 3, 3, 2}.span()) == 1);
    CHECK(argmax(Vector{5, 5}.span()) == 0);
}

TEST_CASE("SplitMix64 matches the reference stream") {
    // Reference values from the published SplitMix64 algorithm.
    Prng p(0);
    CHECK(p.next() == 0xE220A8397B1DCDAFULL);
    CHECK(p.next() == 0x6E789E6AA1B965F4ULL);
    CHECK(p.next() == 0x06C45D188009454FULL);
}

TEST_CASE("equal seeds give equal streams") {
    Prng a(1234);
    Prng b(1234);
    for (int i = 0; i < 1000; ++i) CHECK(a.next() == b.next());
    Prng c(1235);
    CHECK(Prng(1234).next() != c.next());
}

TEST_CASE("uniform stays in [0, 1)") {
    Prng p(99);
    for (int i = 0; i < 100000; ++i) {
        const double u = p.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("gaussian moments") {
    Prng p(2024);
    constexpr int n = 100000;
    double sum = 0.0;
    double sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = p.gaussian();
        REQUIRE(std::isfinite(g));
        sum += g;
        sum_sq += g * g;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.05);
}
