#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "kdlab/rng.hpp"
#include "kdlab/tensor.hpp"

using namespace kdlab;

namespace {

TensorD random_tensor(SeededRng& rng, std::vector<std::size_t> shape) {
    TensorD t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 2.0 * rng.uniform01() - 1.0;
    return t;
}

}  // namespace

TEST_CASE("matmul hand example", "[tensor]") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    CHECK(c[0] == 19.0f);
    CHECK(c[1] == 22.0f);
    CHECK(c[2] == 43.0f);
    CHECK(c[3] == 50.0f);
}

TEST_CASE("matmul identity and zero", "[tensor]") {
    SeededRng rng(7);
    TensorD a = random_tensor(rng, {3, 4});
    TensorD eye({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
    TensorD ai = matmul(a, eye);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(ai[i] == a[i]);

    TensorD z({4, 2});
    TensorD az = matmul(a, z);
    for (std::size_t i = 0; i < az.size(); ++i) CHECK(az[i] == 0.0);
}

TEST_CASE("matmul shape mismatch", "[tensor]") {
    Tensor a({2, 3});
    Tensor b({2, 2});
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("matmul distributes over addition and associates", "[tensor]") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SeededRng rng(seed);
        TensorD a = random_tensor(rng, {3, 5});
        TensorD b = random_tensor(rng, {5, 4});
        TensorD c = random_tensor(rng, {5, 4});
        TensorD d = random_tensor(rng, {4, 2});

        TensorD bc(b.shape());
        for (std::size_t i = 0; i < b.size(); ++i) bc[i] = b[i] + c[i];
        TensorD lhs = matmul(a, bc);
        TensorD ab = matmul(a, b), ac = matmul(a, c);
        for (std::size_t i = 0; i < lhs.size(); ++i)
            CHECK_THAT(lhs[i], Catch::Matchers::WithinRel(ab[i] + ac[i], 1e-6) ||
                                   Catch::Matchers::WithinAbs(ab[i] + ac[i], 1e-12));

        TensorD l = matmul(matmul(a, b), d);
        TensorD r = matmul(a, matmul(b, d));
        for (std::size_t i = 0; i < l.size(); ++i)
            CHECK_THAT(l[i], Catch::Matchers::WithinRel(r[i], 1e-6) ||
                                 Catch::Matchers::WithinAbs(r[i], 1e-12));
    }
}

TEST_CASE("conv2d hand summation", "[tensor]") {
    Tensor in = Tensor::full({1, 3, 3}, 1.0f);
    Tensor k = Tensor::full({1, 1, 2, 2}, 1.0f);
    Tensor out = conv2d(in, k, 1, Padding::valid);
    REQUIRE(out.shape() == std::vector<std::size_t>{1, 2, 2});
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 4.0f);
}

TEST_CASE("conv2d delta kernel crops", "[tensor]") {
    SeededRng rng(3);
    TensorD in = random_tensor(rng, {1, 4, 5});
    TensorD k({1, 1, 2, 2});
    k[0] = 1.0;  // delta at (0, 0)
    TensorD out = conv2d(in, k, 1, Padding::valid);
    REQUIRE(out.shape() == std::vector<std::size_t>{1, 3, 4});
    for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 4; ++x) CHECK(out[y * 4 + x] == in[y * 5 + x]);
}

TEST_CASE("conv2d zero input", "[tensor]") {
    Tensor in({2, 4, 4});
    Tensor k = Tensor::full({3, 2, 3, 3}, 0.7f);
    Tensor out = conv2d(in, k, 1, Padding::same);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0f);
}

TEST_CASE("conv2d 1x1 all-ones kernel is identity", "[tensor]") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SeededRng rng(seed);
        TensorD in = random_tensor(rng, {1, 6, 7});
        TensorD k = TensorD::full({1, 1, 1, 1}, 1.0);
        TensorD out = conv2d(in, k, 1, Padding::valid);
        REQUIRE(out.shape() == in.shape());
        for (std::size_t i = 0; i < in.size(); ++i) CHECK(out[i] == in[i]);
    }
}

TEST_CASE("conv2d same padding extents", "[tensor]") {
    Tensor in({1, 28, 28});
    Tensor k({8, 1, 3, 3});
    CHECK(conv2d(in, k, 1, Padding::same).shape() == std::vector<std::size_t>{8, 28, 28});
    CHECK(conv2d(in, k, 2, Padding::same).shape() == std::vector<std::size_t>{8, 14, 14});
    CHECK(conv2d(in, k, 1, Padding::valid).shape() == std::vector<std::size_t>{8, 26, 26});
}

TEST_CASE("conv2d errors", "[tensor]") {
    Tensor in({2, 4, 4});
    CHECK_THROWS_AS(conv2d(in, Tensor({3, 1, 3, 3}), 1, Padding::valid), ShapeError);
    CHECK_THROWS_AS(conv2d(in, Tensor({3, 2, 5, 5}), 1, Padding::valid), ShapeError);
}

TEST_CASE("maxpool2 basics", "[tensor]") {
    Tensor in({1, 2, 2}, {1, 2, 3, 4});
    auto [out, idx] = maxpool2(in);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == 4.0f);
    CHECK(idx[0] == 3);

    Tensor c = Tensor::full({2, 4, 4}, 2.5f);
    auto [cout_, cidx] = maxpool2(c);
    for (std::size_t i = 0; i < cout_.size(); ++i) CHECK(cout_[i] == 2.5f);

    Tensor tie = Tensor::full({1, 2, 2}, 5.0f);
    auto [tout, tidx] = maxpool2(tie);
    CHECK(tout[0] == 5.0f);
    CHECK(tidx[0] == 0);  // tie breaks toward the lowest flat index

    CHECK_THROWS_AS(maxpool2(Tensor({1, 3, 4})), ShapeError);
}

TEST_CASE("maxpool2 bounded by elementwise max", "[tensor]") {
    SeededRng rng(11);
    TensorD in = random_tensor(rng, {2, 6, 8});
    auto [out, idx] = maxpool2(in);
    double inmax = -1e9;
    for (std::size_t i = 0; i < in.size(); ++i) inmax = std::max(inmax, in[i]);
    for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(out[i] <= inmax);
        CHECK(out[i] == in[idx[i]]);
    }
}

TEST_CASE("rng_draw determinism and edge cases", "[rng]") {
    SeededRng a(42), b(42);
    CHECK(rng_draw(a, 0, Dist::uniform01).size() == 0);
    a = SeededRng(42);
    Tensor ta = rng_draw(a, 10, Dist::uniform01);
    Tensor tb = rng_draw(b, 10, Dist::uniform01);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(ta[i] == tb[i]);
        CHECK(ta[i] >= 0.0f);
        CHECK(ta[i] < 1.0f);
    }
}

TEST_CASE("rng uniform law of large numbers", "[rng]") {
    SeededRng rng(2024);
    double sum = 0.0;
    const std::size_t n = 1000000;
    for (std::size_t i = 0; i < n; ++i) sum += rng.uniform01();
    CHECK_THAT(sum / double(n), Catch::Matchers::WithinAbs(0.5, 0.01));
}

TEST_CASE("rng normal moments", "[rng]") {
    SeededRng rng(77);
    double s = 0.0, s2 = 0.0;
    const std::size_t n = 200000;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = rng.normal();
        s += v;
        s2 += v * v;
    }
    CHECK_THAT(s / double(n), Catch::Matchers::WithinAbs(0.0, 0.01));
    CHECK_THAT(s2 / double(n), Catch::Matchers::WithinAbs(1.0, 0.02));
}

TEST_CASE("rng child streams are independent of parent advance", "[rng]") {
    SeededRng a(9);
    SeededRng c1 = a.child(0);
    SeededRng c2 = a.child(1);
    CHECK(c1.next_u64() != c2.next_u64());
    SeededRng b(9);
    SeededRng c1b = b.child(0);
    c1 = a.child(0);
    CHECK(c1.next_u64() == c1b.next_u64());
}

TEST_CASE("kernels are pure and thread-count invariant", "[tensor]") {
    SeededRng rng(5);
    TensorD a = random_tensor(rng, {9, 13});
    TensorD b = random_tensor(rng, {13, 7});
    TensorD in = random_tensor(rng, {3, 10, 10});
    TensorD k = random_tensor(rng, {5, 3, 3, 3});

#ifdef _OPENMP
    omp_set_num_threads(1);
#endif
    TensorD m1 = matmul(a, b);
    TensorD c1 = conv2d(in, k, 1, Padding::same);
#ifdef _OPENMP
    omp_set_num_threads(2);
#endif
    TensorD m2 = matmul(a, b);
    TensorD c2 = conv2d(in, k, 1, Padding::same);

    for (std::size_t i = 0; i < m1.size(); ++i) REQUIRE(m1[i] == m2[i]);
    for (std::size_t i = 0; i < c1.size(); ++i) REQUIRE(c1[i] == c2[i]);
}
