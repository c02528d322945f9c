// Forward semantics of the tensor primitives against independent oracles.

#include <cmath>
#include <cstring>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "sacreg/tensor.hpp"

using namespace sacreg;
using testutil::clampi;
using testutil::max_abs_diff;
using testutil::rand_tensor;

namespace {

// naive 6-nested-loop convolution with replicate padding (cross-correlation)
template <typename T>
std::vector<T> conv_oracle(const std::vector<T>& in, int cin, int d, int h,
                           int w, const std::vector<T>& ker, int cout, int k,
                           const std::vector<T>& bias) {
    const int r = k / 2;
    std::vector<T> out(static_cast<std::size_t>(cout) * d * h * w);
    for (int co = 0; co < cout; ++co) {
        for (int z = 0; z < d; ++z) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    double acc = static_cast<double>(bias[co]);
                    for (int ci = 0; ci < cin; ++ci) {
                        for (int dz = -r; dz <= r; ++dz) {
                            for (int dy = -r; dy <= r; ++dy) {
                                for (int dx = -r; dx <= r; ++dx) {
                                    const int zz = clampi(z + dz, 0, d - 1);
                                    const int yy = clampi(y + dy, 0, h - 1);
                                    const int xx = clampi(x + dx, 0, w - 1);
                                    const T iv =
                                        in[((static_cast<std::size_t>(ci) * d + zz) * h + yy) * w + xx];
                                    const T kv =
                                        ker[(((static_cast<std::size_t>(co) * cin + ci) * k + (dz + r)) * k +
                                             (dy + r)) * k + (dx + r)];
                                    acc += static_cast<double>(iv) * kv;
                                }
                            }
                        }
                    }
                    out[((static_cast<std::size_t>(co) * d + z) * h + y) * w + x] =
                        static_cast<T>(acc);
                }
            }
        }
    }
    return out;
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("conv3d zero kernel with bias") {
    const Tensor in = Tensor::full({1, 3, 3, 3}, 1.0f);
    const Tensor k = Tensor::full({1, 1, 3, 3, 3}, 0.0f);
    const Tensor b = Tensor::full({1}, 0.5f);
    const Tensor out = conv3d(in, k, b, 1);
    REQUIRE(out.shape() == std::vector<int>({1, 3, 3, 3}));
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == 0.5f);
}

TEST_CASE("conv3d identity kernel is the identity map") {
    Rng rng(11);
    const Tensor in = rand_tensor<float>(rng, {2, 4, 5, 3}, -1.0, 1.0);
    Tensor k = Tensor::full({2, 2, 3, 3, 3}, 0.0f);
    // 1 at the kernel center of the matching channel pair
    for (int c = 0; c < 2; ++c) {
        k.data()[(((c * 2 + c) * 3 + 1) * 3 + 1) * 3 + 1] = 1.0f;
    }
    const Tensor b = Tensor::full({2}, 0.0f);
    const Tensor out = conv3d(in, k, b, 1);
    CHECK(std::memcmp(out.data(), in.data(), in.numel() * sizeof(float)) == 0);
}

TEST_CASE("conv3d matches the naive-loop oracle") {
    Rng rng(12);
    const TensorD in = rand_tensor<double>(rng, {2, 5, 5, 5}, -1.0, 1.0);
    const TensorD k = rand_tensor<double>(rng, {3, 2, 3, 3, 3}, -1.0, 1.0);
    const TensorD b = rand_tensor<double>(rng, {3}, -1.0, 1.0);
    const TensorD out = conv3d(in, k, b, 1);
    const auto want = conv_oracle<double>(in.values(), 2, 5, 5, 5, k.values(),
                                          3, 3, b.values());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        CHECK(out.data()[i] ==
              doctest::Approx(want[i]).epsilon(1e-6).scale(1.0));
    }

    // float path against the same double oracle, looser tolerance
    std::vector<float> inf(in.values().begin(), in.values().end());
    std::vector<float> kf(k.values().begin(), k.values().end());
    std::vector<float> bf(b.values().begin(), b.values().end());
    const Tensor outf =
        conv3d(Tensor::leaf({2, 5, 5, 5}, inf), Tensor::leaf({3, 2, 3, 3, 3}, kf),
               Tensor::leaf({3}, bf), 1);
    CHECK(max_abs_diff(outf, want) < 1e-4);
}

TEST_CASE("conv3d shape violations are rejected") {
    const Tensor in = Tensor::full({1, 3, 3, 3}, 0.0f);
    const Tensor k = Tensor::full({1, 2, 3, 3, 3}, 0.0f);
    const Tensor b = Tensor::full({1}, 0.0f);
    CHECK_THROWS_AS(conv3d(in, k, b, 1), std::invalid_argument);
    const Tensor k2 = Tensor::full({1, 1, 3, 3, 3}, 0.0f);
    CHECK_THROWS_AS(conv3d(in, k2, b, 0), std::invalid_argument);
}

TEST_CASE("unfold3d constant field") {
    const Tensor in = Tensor::full({2, 3, 4, 3}, 3.0f);
    const Tensor u = unfold3d(in, 3);
    REQUIRE(u.shape() == std::vector<int>({2, 36, 27}));
    for (std::size_t i = 0; i < u.numel(); ++i) CHECK(u.data()[i] == 3.0f);
}

TEST_CASE("unfold3d ramp center patch is the whole volume") {
    std::vector<float> ramp(27);
    std::iota(ramp.begin(), ramp.end(), 0.0f);
    const Tensor in = Tensor::leaf({1, 3, 3, 3}, ramp);
    const Tensor u = unfold3d(in, 3);
    REQUIRE(u.shape() == std::vector<int>({1, 27, 27}));
    // center voxel (1,1,1) has linear index 13; its 3-window covers everything
    for (int j = 0; j < 27; ++j) {
        CHECK(u.at({0, 13, j}) == static_cast<float>(j));
    }
}

TEST_CASE("unfold3d center offset reproduces the input") {
    Rng rng(13);
    const Tensor in = rand_tensor<float>(rng, {2, 3, 3, 3}, -1.0, 1.0);
    const Tensor u = unfold3d(in, 3);
    for (int c = 0; c < 2; ++c) {
        for (int v = 0; v < 27; ++v) {
            CHECK(u.at({c, v, 13}) == in.data()[c * 27 + v]);
        }
    }
}

TEST_CASE("unfold3d zero padding fills zeros outside") {
    const Tensor in = Tensor::full({1, 2, 2, 2}, 5.0f);
    const Tensor u = unfold3d(in, 3, PadMode::zero);
    // voxel (0,0,0): offset (-1,-1,-1) is outside -> 0; offset (0,0,0) -> 5
    CHECK(u.at({0, 0, 0}) == 0.0f);
    CHECK(u.at({0, 0, 13}) == 5.0f);
}

TEST_CASE("avg_pool3d block means") {
    SUBCASE("constant") {
        const Tensor in = Tensor::full({3, 4, 4, 4}, 2.5f);
        const Tensor out = avg_pool3d(in);
        REQUIRE(out.shape() == std::vector<int>({3, 2, 2, 2}));
        for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == 2.5f);
    }
    SUBCASE("0..7 block") {
        std::vector<float> v(8);
        std::iota(v.begin(), v.end(), 0.0f);
        const Tensor out = avg_pool3d(Tensor::leaf({1, 2, 2, 2}, v));
        REQUIRE(out.numel() == 1);
        CHECK(out.item() == doctest::Approx(3.5));
    }
    SUBCASE("random 4^3 vs explicit block averaging") {
        Rng rng(14);
        const Tensor in = rand_tensor<float>(rng, {1, 4, 4, 4}, -1.0, 1.0);
        const Tensor out = avg_pool3d(in);
        for (int z = 0; z < 2; ++z) {
            for (int y = 0; y < 2; ++y) {
                for (int x = 0; x < 2; ++x) {
                    double acc = 0.0;
                    for (int a = 0; a < 2; ++a)
                        for (int b = 0; b < 2; ++b)
                            for (int c = 0; c < 2; ++c)
                                acc += in.at({0, 2 * z + a, 2 * y + b, 2 * x + c});
                    CHECK(out.at({0, z, y, x}) == doctest::Approx(acc / 8.0));
                }
            }
        }
    }
}

TEST_CASE("instance_norm statistics and oracle") {
    Rng rng(15);
    const int c = 3, n = 4 * 4 * 4;
    const Tensor in = rand_tensor<float>(rng, {c, 4, 4, 4}, -2.0, 2.0);
    const Tensor gamma = Tensor::full({c}, 1.0f);
    const Tensor beta = Tensor::full({c}, 0.0f);
    const Tensor out = instance_norm(in, gamma, beta);

    for (int ci = 0; ci < c; ++ci) {
        double m = 0.0, v = 0.0;
        for (int i = 0; i < n; ++i) m += out.data()[ci * n + i];
        m /= n;
        for (int i = 0; i < n; ++i) {
            const double d = out.data()[ci * n + i] - m;
            v += d * d;
        }
        v /= n;
        CHECK(std::abs(m) < 1e-5);
        CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
    }

    // two-pass oracle (population variance, eps inside the sqrt)
    for (int ci = 0; ci < c; ++ci) {
        double m = 0.0, v = 0.0;
        for (int i = 0; i < n; ++i) m += in.data()[ci * n + i];
        m /= n;
        for (int i = 0; i < n; ++i) {
            const double d = in.data()[ci * n + i] - m;
            v += d * d;
        }
        v /= n;
        const double inv = 1.0 / std::sqrt(v + 1e-5);
        for (int i = 0; i < n; ++i) {
            const double want = (in.data()[ci * n + i] - m) * inv;
            CHECK(out.data()[ci * n + i] == doctest::Approx(want).epsilon(1e-5));
        }
    }
}

TEST_CASE("instance_norm constant channel collapses to the shift") {
    const Tensor in = Tensor::full({1, 3, 3, 3}, 7.0f);
    const Tensor gamma = Tensor::full({1}, 2.0f);
    const Tensor beta = Tensor::full({1}, 0.25f);
    const Tensor out = instance_norm(in, gamma, beta);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        CHECK(out.data()[i] == doctest::Approx(0.25).epsilon(1e-6));
    }
}

TEST_CASE("leaky_relu values") {
    const Tensor x = Tensor::leaf({2}, {2.0f, -2.0f});
    const Tensor y = leaky_relu(x);
    CHECK(y.data()[0] == 2.0f);
    CHECK(y.data()[1] == doctest::Approx(-0.2));
}

TEST_CASE("softmax") {
    SUBCASE("uniform inputs over 27 entries") {
        const Tensor s = softmax(Tensor::full({1, 27}, 4.0f), 1);
        for (int j = 0; j < 27; ++j) {
            CHECK(s.at({0, j}) == doctest::Approx(1.0 / 27.0));
        }
    }
    SUBCASE("saturation") {
        Tensor x = Tensor::full({1, 5}, 0.0f);
        x.data()[2] = 1000.0f;
        const Tensor s = softmax(x, 1);
        CHECK(s.at({0, 2}) == doctest::Approx(1.0));
        CHECK(s.at({0, 0}) == doctest::Approx(0.0).scale(1.0));
    }
    SUBCASE("matches the direct formula in 64-bit, rows sum to 1") {
        Rng rng(16);
        const TensorD x = rand_tensor<double>(rng, {4, 7}, -3.0, 3.0);
        const TensorD s = softmax(x, 1);
        for (int r = 0; r < 4; ++r) {
            double mx = -1e300;
            for (int j = 0; j < 7; ++j) mx = std::max(mx, x.at({r, j}));
            double z = 0.0;
            for (int j = 0; j < 7; ++j) z += std::exp(x.at({r, j}) - mx);
            double rowsum = 0.0;
            for (int j = 0; j < 7; ++j) {
                const double want = std::exp(x.at({r, j}) - mx) / z;
                CHECK(s.at({r, j}) == doctest::Approx(want).epsilon(1e-12));
                CHECK(s.at({r, j}) >= 0.0);
                rowsum += s.at({r, j});
            }
            CHECK(rowsum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("matmul and reductions") {
    SUBCASE("A*I == A") {
        Rng rng(17);
        const Tensor a = rand_tensor<float>(rng, {3, 3}, -1.0, 1.0);
        Tensor eye = Tensor::full({3, 3}, 0.0f);
        for (int i = 0; i < 3; ++i) eye.data()[i * 3 + i] = 1.0f;
        const Tensor out = matmul(a, eye);
        CHECK(max_abs_diff(out, a.values()) == 0.0);
    }
    SUBCASE("mean of [1,2,3]") {
        CHECK(mean(Tensor::leaf({3}, {1.0f, 2.0f, 3.0f})).item() ==
              doctest::Approx(2.0));
        CHECK(sum(Tensor::leaf({3}, {1.0f, 2.0f, 3.0f})).item() ==
              doctest::Approx(6.0));
    }
    SUBCASE("random matmul vs naive loops") {
        Rng rng(18);
        const TensorD a = rand_tensor<double>(rng, {4, 6}, -1.0, 1.0);
        const TensorD b = rand_tensor<double>(rng, {6, 5}, -1.0, 1.0);
        const TensorD c = matmul(a, b);
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 5; ++j) {
                double acc = 0.0;
                for (int k = 0; k < 6; ++k) acc += a.at({i, k}) * b.at({k, j});
                CHECK(c.at({i, j}) == doctest::Approx(acc).epsilon(1e-12));
            }
        }
    }
    SUBCASE("matmul_nt matches matmul with explicit transpose") {
        Rng rng(19);
        const TensorD a = rand_tensor<double>(rng, {4, 6}, -1.0, 1.0);
        const TensorD b = rand_tensor<double>(rng, {5, 6}, -1.0, 1.0);
        const TensorD c = matmul_nt(a, b);
        const TensorD bt = permute(b, {1, 0});
        const TensorD want = matmul(a, bt);
        CHECK(max_abs_diff(c, want.values()) < 1e-12);
    }
}

TEST_CASE("shape ops") {
    Rng rng(20);
    const Tensor a = rand_tensor<float>(rng, {2, 3, 4}, -1.0, 1.0);
    SUBCASE("reshape preserves data") {
        const Tensor r = reshape(a, {6, 4});
        CHECK(std::memcmp(r.data(), a.data(), a.numel() * sizeof(float)) == 0);
        CHECK_THROWS_AS(reshape(a, {5, 5}), std::invalid_argument);
    }
    SUBCASE("permute moves strides") {
        const Tensor p = permute(a, {2, 0, 1});
        REQUIRE(p.shape() == std::vector<int>({4, 2, 3}));
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 4; ++k)
                    CHECK(p.at({k, i, j}) == a.at({i, j, k}));
    }
    SUBCASE("concat0 stacks") {
        const Tensor b = rand_tensor<float>(rng, {1, 3, 4}, -1.0, 1.0);
        const Tensor c = concat0(a, b);
        REQUIRE(c.shape() == std::vector<int>({3, 3, 4}));
        CHECK(std::memcmp(c.data(), a.data(), a.numel() * sizeof(float)) == 0);
        CHECK(std::memcmp(c.data() + a.numel(), b.data(),
                          b.numel() * sizeof(float)) == 0);
    }
}

TEST_CASE("row selection ops") {
    Rng rng(21);
    const Tensor a = rand_tensor<float>(rng, {5, 3}, -1.0, 1.0);
    SUBCASE("gather_rows picks rows, duplicates allowed") {
        const Tensor g = gather_rows(a, {4, 0, 0});
        REQUIRE(g.shape() == std::vector<int>({3, 3}));
        for (int j = 0; j < 3; ++j) {
            CHECK(g.at({0, j}) == a.at({4, j}));
            CHECK(g.at({1, j}) == a.at({0, j}));
            CHECK(g.at({2, j}) == a.at({0, j}));
        }
    }
    SUBCASE("scatter_rows inverts gather on distinct indices") {
        const Tensor g = gather_rows(a, {2, 4});
        const Tensor s = scatter_rows(g, {2, 4}, 5);
        REQUIRE(s.shape() == std::vector<int>({5, 3}));
        for (int j = 0; j < 3; ++j) {
            CHECK(s.at({2, j}) == a.at({2, j}));
            CHECK(s.at({4, j}) == a.at({4, j}));
            CHECK(s.at({0, j}) == 0.0f);
        }
    }
    SUBCASE("slice_rows takes a contiguous range") {
        const Tensor s = slice_rows(a, 1, 4);
        REQUIRE(s.shape() == std::vector<int>({3, 3}));
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) CHECK(s.at({i, j}) == a.at({i + 1, j}));
    }
}

TEST_CASE("elementwise ops") {
    const Tensor a = Tensor::leaf({3}, {1.0f, -2.0f, 3.0f});
    const Tensor b = Tensor::leaf({3}, {0.5f, 0.5f, -1.0f});
    CHECK(add(a, b).data()[1] == -1.5f);
    CHECK(sub(a, b).data()[2] == 4.0f);
    CHECK(mul(a, b).data()[0] == 0.5f);
    CHECK(scale(a, 2.0f).data()[2] == 6.0f);
    CHECK(add_scalar(a, 1.0f).data()[1] == -1.0f);
    CHECK(clamp_values(a, -1.0f, 1.0f).data()[1] == -1.0f);
    CHECK(clamp_values(a, -1.0f, 1.0f).data()[2] == 1.0f);
    CHECK(sacreg::tanh(a).data()[0] == doctest::Approx(std::tanh(1.0)));
}

TEST_CASE("identical rebuilds are bit-identical") {
    auto build = [] {
        Rng rng(22);
        const Tensor in = rand_tensor<float>(rng, {2, 4, 4, 4}, -1.0, 1.0);
        const Tensor k = rand_tensor<float>(rng, {2, 2, 3, 3, 3}, -0.5, 0.5);
        const Tensor b = rand_tensor<float>(rng, {2}, -0.1, 0.1);
        return instance_norm(conv3d(in, k, b, 1), Tensor::full({2}, 1.0f),
                             Tensor::full({2}, 0.0f));
    };
    const Tensor x = build();
    const Tensor y = build();
    CHECK(std::memcmp(x.data(), y.data(), x.numel() * sizeof(float)) == 0);
}

TEST_SUITE_END();
