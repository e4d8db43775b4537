#include <cmath>
#include <vector>

#include "damformer/tensor.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace damformer;
using testutil::finite_diff_check;
using testutil::random_tensor;
using testutil::rel_err;

namespace {

// Independent triple-loop oracle for matmul.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, int m,
                                 int k, int n) {
    std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
    return c;
}

// Direct interpolation-formula oracle for align-corners-false bilinear resize.
double bilinear_ref(const std::vector<double>& img, int h, int w, int oh, int ow, int oy, int ox) {
    auto src = [](int out, int in_sz, int out_sz) {
        double c = (out + 0.5) * (static_cast<double>(in_sz) / out_sz) - 0.5;
        return c < 0.0 ? 0.0 : c;
    };
    double sy = src(oy, h, oh), sx = src(ox, w, ow);
    int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
    int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    double fy = sy - y0, fx = sx - x0;
    double top = img[y0 * w + x0] * (1 - fx) + img[y0 * w + x1] * fx;
    double bot = img[y1 * w + x0] * (1 - fx) + img[y1 * w + x1] * fx;
    return top * (1 - fy) + bot * fy;
}

}  // namespace

TEST_CASE("matmul identity and oracle values") {
    Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1}, Dtype::f64);
    Tensor b = Tensor::from_values({2, 2}, {5, 6, 7, 8}, Dtype::f64);
    Tensor c = matmul(eye, b);
    for (int64_t i = 0; i < 4; ++i) CHECK(c.value_at(i) == doctest::Approx(b.value_at(i)));

    Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4}, Dtype::f64);
    Tensor d = matmul(a, b);
    std::vector<double> want = naive_matmul({1, 2, 3, 4}, {5, 6, 7, 8}, 2, 2, 2);
    CHECK(want == std::vector<double>{19, 22, 43, 50});
    for (int64_t i = 0; i < 4; ++i) CHECK(d.value_at(i) == doctest::Approx(want[static_cast<size_t>(i)]));
}

TEST_CASE("matmul rejects mismatched inner dims with both shapes in the message") {
    Tensor a = Tensor::zeros({2, 3}, Dtype::f32);
    Tensor b = Tensor::zeros({2, 2}, Dtype::f32);
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), ShapeError);
}

TEST_CASE("matmul gradient of sum(A*B) with all-ones B") {
    const int m = 3, k = 4, n = 5;
    SplitMix64 rng(7);
    Tensor a = random_tensor({m, k}, rng, Dtype::f64, true);
    Tensor b = Tensor::full({k, n}, 1.0, Dtype::f64);
    Tensor loss = sum_all(matmul(a, b));
    GradTape::active().backward(loss);
    Tensor g = a.grad();
    for (int64_t i = 0; i < g.numel(); ++i) CHECK(g.value_at(i) == doctest::Approx(n));
    GradTape::active().reset();
}

TEST_CASE("matmul random values against naive oracle") {
    SplitMix64 rng(11);
    const int m = 5, k = 7, n = 3;
    Tensor a = random_tensor({m, k}, rng, Dtype::f64);
    Tensor b = random_tensor({k, n}, rng, Dtype::f64);
    std::vector<double> av(static_cast<size_t>(m * k)), bv(static_cast<size_t>(k * n));
    for (int64_t i = 0; i < a.numel(); ++i) av[static_cast<size_t>(i)] = a.value_at(i);
    for (int64_t i = 0; i < b.numel(); ++i) bv[static_cast<size_t>(i)] = b.value_at(i);
    auto want = naive_matmul(av, bv, m, k, n);
    Tensor c = matmul(a, b);
    for (int64_t i = 0; i < c.numel(); ++i)
        CHECK(rel_err(c.value_at(i), want[static_cast<size_t>(i)]) < 1e-12);
}

TEST_CASE("conv2d 1x1 identity kernel") {
    SplitMix64 rng(3);
    Tensor x = random_tensor({1, 1, 4, 4}, rng, Dtype::f64);
    Tensor w = Tensor::full({1, 1, 1, 1}, 1.0, Dtype::f64);
    Tensor b = Tensor::zeros({1}, Dtype::f64);
    Tensor y = conv2d(x, w, b, 1, 0, 1);
    REQUIRE(y.shape() == Shape{1, 1, 4, 4});
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.value_at(i) == doctest::Approx(x.value_at(i)));
}

TEST_CASE("conv2d 3x3 all-ones kernel on constant image") {
    const double c = 0.37;
    Tensor x = Tensor::full({1, 1, 5, 5}, c, Dtype::f64);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0, Dtype::f64);
    Tensor b = Tensor::zeros({1}, Dtype::f64);
    Tensor y = conv2d(x, w, b, 1, 1, 1);
    // interior pixels see the full 3x3 window
    for (int i = 1; i < 4; ++i)
        for (int j = 1; j < 4; ++j) CHECK(y.value_at(i * 5 + j) == doctest::Approx(9 * c));
    // corner sees a 2x2 window
    CHECK(y.value_at(0) == doctest::Approx(4 * c));
}

TEST_CASE("conv2d rejects input smaller than kernel") {
    Tensor x = Tensor::zeros({1, 1, 2, 2}, Dtype::f32);
    Tensor w = Tensor::zeros({1, 1, 3, 3}, Dtype::f32);
    Tensor b = Tensor::zeros({1}, Dtype::f32);
    CHECK_THROWS_AS(conv2d(x, w, b, 1, 0, 1), ConfigError);
}

TEST_CASE("conv2d gradient vs finite differences") {
    SplitMix64 rng(19);
    Tensor x = random_tensor({2, 3, 5, 5}, rng, Dtype::f64, true);
    Tensor w = random_tensor({4, 3, 3, 3}, rng, Dtype::f64, true);
    Tensor b = random_tensor({4}, rng, Dtype::f64, true);
    auto fn = [&] { return sum_all(mul(conv2d(x, w, b, 1, 1, 1), conv2d(x, w, b, 1, 1, 1))); };
    CHECK(finite_diff_check(fn, {x, w, b}) < 1e-6);
}

TEST_CASE("conv2d depthwise and strided gradients") {
    SplitMix64 rng(23);
    Tensor x = random_tensor({1, 4, 6, 6}, rng, Dtype::f64, true);
    Tensor w = random_tensor({4, 1, 3, 3}, rng, Dtype::f64, true);
    Tensor b = random_tensor({4}, rng, Dtype::f64, true);
    auto fn = [&] { return sum_all(gelu(conv2d(x, w, b, 2, 1, 4))); };
    CHECK(finite_diff_check(fn, {x, w, b}) < 1e-5);
}

TEST_CASE("softmax analytic values") {
    Tensor u = Tensor::full({1, 5}, 0.3, Dtype::f64);
    Tensor su = softmax(u, 1);
    for (int64_t i = 0; i < 5; ++i) CHECK(su.value_at(i) == doctest::Approx(0.2));

    Tensor x = Tensor::from_values({1, 2}, {0.0, std::log(2.0)}, Dtype::f64);
    Tensor sx = softmax(x, 1);
    CHECK(sx.value_at(0) == doctest::Approx(1.0 / 3.0));
    CHECK(sx.value_at(1) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("softmax slices sum to one at f32") {
    SplitMix64 rng(5);
    Tensor x = random_tensor({3, 4, 7}, rng, Dtype::f32, false, -30.0, 30.0);
    Tensor s = softmax(x, 2);
    auto sp = s.data<float>();
    for (int r = 0; r < 12; ++r) {
        float acc = 0.f;
        for (int j = 0; j < 7; ++j) acc += sp[r * 7 + j];
        CHECK(std::fabs(acc - 1.0f) < 1e-6f);
    }
}

TEST_CASE("softmax gradient vs finite differences") {
    SplitMix64 rng(29);
    Tensor x = random_tensor({2, 6}, rng, Dtype::f64, true);
    Tensor w = random_tensor({2, 6}, rng, Dtype::f64);
    auto fn = [&] { return sum_all(mul(softmax(x, 1), w)); };
    CHECK(finite_diff_check(fn, {x}) < 1e-5);
}

TEST_CASE("layer_norm zero-variance and moments") {
    Tensor x = Tensor::full({2, 3, 8}, 1.7, Dtype::f64);
    Tensor gamma = Tensor::full({8}, 1.0, Dtype::f64);
    Tensor beta = Tensor::zeros({8}, Dtype::f64);
    Tensor y = layer_norm(x, gamma, beta, 1e-5);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::fabs(y.value_at(i)) < 1e-9);

    SplitMix64 rng(31);
    Tensor r = random_tensor({4, 16}, rng, Dtype::f64);
    Tensor g16 = Tensor::full({16}, 1.0, Dtype::f64);
    Tensor b16 = Tensor::zeros({16}, Dtype::f64);
    Tensor n = layer_norm(r, g16, b16, 1e-9);
    for (int row = 0; row < 4; ++row) {
        double mean = 0, var = 0;
        for (int j = 0; j < 16; ++j) mean += n.value_at(row * 16 + j);
        mean /= 16;
        for (int j = 0; j < 16; ++j) {
            double d = n.value_at(row * 16 + j) - mean;
            var += d * d;
        }
        var /= 16;
        CHECK(std::fabs(mean) < 1e-6);
        CHECK(std::fabs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("layer_norm gradient vs finite differences") {
    SplitMix64 rng(37);
    Tensor x = random_tensor({3, 6}, rng, Dtype::f64, true);
    Tensor gamma = random_tensor({6}, rng, Dtype::f64, true, 0.5, 1.5);
    Tensor beta = random_tensor({6}, rng, Dtype::f64, true);
    Tensor w = random_tensor({3, 6}, rng, Dtype::f64);
    auto fn = [&] { return sum_all(mul(layer_norm(x, gamma, beta, 1e-5), w)); };
    CHECK(finite_diff_check(fn, {x, gamma, beta}) < 1e-6);
}

TEST_CASE("bilinear_upsample constants, identity, and formula oracle") {
    Tensor c = Tensor::full({1, 2, 3, 3}, 0.42, Dtype::f64);
    Tensor up = bilinear_upsample(c, 7, 5);
    REQUIRE(up.shape() == Shape{1, 2, 7, 5});
    for (int64_t i = 0; i < up.numel(); ++i) CHECK(up.value_at(i) == doctest::Approx(0.42));

    SplitMix64 rng(41);
    Tensor r = random_tensor({1, 1, 4, 4}, rng, Dtype::f64);
    Tensor same = bilinear_upsample(r, 4, 4);
    for (int64_t i = 0; i < r.numel(); ++i) CHECK(same.value_at(i) == doctest::Approx(r.value_at(i)));

    std::vector<double> img = {0, 1, 2, 3};
    Tensor t = Tensor::from_values({1, 1, 2, 2}, img, Dtype::f64);
    Tensor big = bilinear_upsample(t, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            CHECK(big.value_at(y * 4 + x) == doctest::Approx(bilinear_ref(img, 2, 2, 4, 4, y, x)));
}

TEST_CASE("bilinear_upsample rejects zero target dims") {
    Tensor x = Tensor::zeros({1, 1, 2, 2}, Dtype::f32);
    CHECK_THROWS_AS(bilinear_upsample(x, 0, 4), ConfigError);
}

TEST_CASE("bilinear_upsample gradient vs finite differences") {
    SplitMix64 rng(43);
    Tensor x = random_tensor({1, 2, 3, 3}, rng, Dtype::f64, true);
    Tensor w = random_tensor({1, 2, 5, 7}, rng, Dtype::f64);
    auto fn = [&] { return sum_all(mul(bilinear_upsample(x, 5, 7), w)); };
    CHECK(finite_diff_check(fn, {x}) < 1e-6);
}

TEST_CASE("backward of sum of squares and off-path leaves") {
    SplitMix64 rng(47);
    Tensor x = random_tensor({3, 3}, rng, Dtype::f64, true);
    Tensor unused = random_tensor({2, 2}, rng, Dtype::f64, true);
    Tensor loss = sum_all(mul(x, x));
    GradTape::active().backward(loss);
    Tensor g = x.grad();
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(g.value_at(i) == doctest::Approx(2.0 * x.value_at(i)));
    Tensor gu = unused.grad();
    for (int64_t i = 0; i < gu.numel(); ++i) CHECK(gu.value_at(i) == 0.0);
    GradTape::active().reset();
}

TEST_CASE("backward requires a scalar root and accumulates across calls") {
    SplitMix64 rng(53);
    Tensor x = random_tensor({2, 2}, rng, Dtype::f64, true);
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(GradTape::active().backward(y), ShapeError);
    Tensor loss = sum_all(y);
    GradTape::active().backward(loss);
    GradTape::active().backward(loss);
    Tensor g = x.grad();
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(g.value_at(i) == doctest::Approx(4.0 * x.value_at(i)));
    GradTape::active().reset();
}

TEST_CASE("elementwise op gradients vs finite differences") {
    SplitMix64 rng(59);
    Tensor a = random_tensor({4, 5}, rng, Dtype::f64, true);
    Tensor b = random_tensor({4, 5}, rng, Dtype::f64, true, 0.5, 2.0);
    auto fn = [&] {
        Tensor t = add(mul(gelu(a), sigmoid(b)), div(a, b));
        return sum_all(mul(t, t));
    };
    CHECK(finite_diff_check(fn, {a, b}) < 1e-6);
}

TEST_CASE("relu, pooling and gate gradients vs finite differences") {
    SplitMix64 rng(61);
    Tensor x = random_tensor({2, 3, 4, 4}, rng, Dtype::f64, true);
    Tensor g = random_tensor({2, 3}, rng, Dtype::f64, true);
    auto fn = [&] {
        Tensor gated = mul_channel_gate(x, sigmoid(g));
        Tensor pooled = add(global_avg_pool(gated), global_max_pool(gated));
        return sum_all(mul(pooled, pooled));
    };
    CHECK(finite_diff_check(fn, {x, g}) < 1e-5);
}

TEST_CASE("permute, concat, slice and reshape gradients") {
    SplitMix64 rng(67);
    Tensor a = random_tensor({2, 3, 4}, rng, Dtype::f64, true);
    Tensor b = random_tensor({2, 5, 4}, rng, Dtype::f64, true);
    auto fn = [&] {
        Tensor p = permute(a, {0, 2, 1});            // [2,4,3]
        Tensor q = permute(b, {0, 2, 1});            // [2,4,5]
        Tensor cat = concat({p, q}, 2);              // [2,4,8]
        Tensor s = slice(cat, 2, 1, 6);              // [2,4,6]
        Tensor r = reshape(s, {2, 24});
        return sum_all(mul(r, r));
    };
    CHECK(finite_diff_check(fn, {a, b}) < 1e-6);
}

TEST_CASE("bias_add_row and bmm gradients") {
    SplitMix64 rng(71);
    Tensor x = random_tensor({6, 4}, rng, Dtype::f64, true);
    Tensor bias = random_tensor({4}, rng, Dtype::f64, true);
    Tensor l = random_tensor({3, 2, 5}, rng, Dtype::f64, true);
    Tensor r = random_tensor({3, 5, 2}, rng, Dtype::f64, true);
    auto fn = [&] {
        Tensor t = bias_add_row(x, bias);
        Tensor m = bmm(l, r);
        return add(sum_all(mul(t, t)), sum_all(mul(m, m)));
    };
    CHECK(finite_diff_check(fn, {x, bias, l, r}) < 1e-6);
}

TEST_CASE("elementwise ops commute with reshape bitwise") {
    SplitMix64 rng(73);
    Tensor x = random_tensor({3, 8}, rng, Dtype::f32, false, -2.0, 2.0);
    Tensor a = gelu(reshape(x, {6, 4}));
    Tensor b = reshape(gelu(x), {6, 4});
    auto pa = a.data<float>(), pb = b.data<float>();
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
}

TEST_CASE("kernels are bitwise identical across worker counts") {
    SplitMix64 rng(79);
    Tensor a = random_tensor({17, 23}, rng, Dtype::f32);
    Tensor b = random_tensor({23, 13}, rng, Dtype::f32);
    Tensor x = random_tensor({2, 5, 9, 9}, rng, Dtype::f32);
    Tensor w = random_tensor({7, 5, 3, 3}, rng, Dtype::f32);
    Tensor bias = random_tensor({7}, rng, Dtype::f32);

    std::vector<float> mm_ref, cv_ref, sum_ref;
    for (int workers : {1, 2, 5}) {
        set_worker_count(workers);
        Tensor mm = matmul(a, b);
        Tensor cv = conv2d(x, w, bias, 1, 1, 1);
        Tensor s = sum_all(cv);
        std::vector<float> mv(mm.data<float>().begin(), mm.data<float>().end());
        std::vector<float> cvv(cv.data<float>().begin(), cv.data<float>().end());
        std::vector<float> sv(s.data<float>().begin(), s.data<float>().end());
        if (workers == 1) {
            mm_ref = mv;
            cv_ref = cvv;
            sum_ref = sv;
        } else {
            CHECK(mv == mm_ref);
            CHECK(cvv == cv_ref);
            CHECK(sv == sum_ref);
        }
    }
    set_worker_count(1);
}

TEST_CASE("debug finite-check names the producing op") {
    set_debug_check_finite(true);
    Tensor x = Tensor::full({2, 2}, 1e30, Dtype::f32);
    CHECK_THROWS_WITH_AS(mul(x, x), doctest::Contains("mul"), NumericError);
    set_debug_check_finite(false);
}

TEST_CASE("mixed dtypes are rejected") {
    Tensor a = Tensor::zeros({2}, Dtype::f32);
    Tensor b = Tensor::zeros({2}, Dtype::f64);
    CHECK_THROWS_AS(add(a, b), ShapeError);
}
