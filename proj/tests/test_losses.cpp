#include <cmath>

#include "damformer/losses.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace damformer;
using testutil::finite_diff_check;
using testutil::random_tensor;

namespace {

IntMask make_mask(Shape shape, const std::vector<int>& v) {
    IntMask m(std::move(shape));
    for (size_t i = 0; i < v.size(); ++i) m.data[i] = static_cast<uint8_t>(v[i]);
    return m;
}

// Confusion-count IoU per class; the brute-force oracle for hard predictions.
double iou_of(const std::vector<int>& pred, const std::vector<int>& gt, int c) {
    int tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == c && gt[i] == c) tp++;
        if (pred[i] == c && gt[i] != c) fp++;
        if (pred[i] != c && gt[i] == c) fn++;
    }
    return static_cast<double>(tp) / (tp + fp + fn);
}

Tensor one_hot_logits(const std::vector<int>& pred, int classes, double scale) {
    const int n = static_cast<int>(pred.size());
    Tensor z = Tensor::zeros({1, classes, 1, n}, Dtype::f64);
    for (int i = 0; i < n; ++i) z.set_value_at(pred[static_cast<size_t>(i)] * n + i, scale);
    return z;
}

}  // namespace

TEST_CASE("bce at z=0 is ln 2 and vanishes on perfect logits") {
    IntMask y = make_mask({1, 2, 2}, {1, 0, 1, 0});
    Tensor z0 = Tensor::zeros({1, 1, 2, 2}, Dtype::f64);
    CHECK(bce_loss(z0, y).item() == doctest::Approx(std::log(2.0)).epsilon(1e-9));

    Tensor zp = Tensor::from_values({1, 1, 2, 2}, {500, -500, 500, -500}, Dtype::f64);
    CHECK(bce_loss(zp, y).item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("bce matches the direct formula on random logits") {
    SplitMix64 rng(301);
    Tensor z = random_tensor({2, 1, 3, 3}, rng, Dtype::f64, false, -4.0, 4.0);
    IntMask y({2, 3, 3});
    for (auto& v : y.data) v = rng.uniform() < 0.5 ? 1 : 0;
    double want = 0;
    for (int64_t i = 0; i < z.numel(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-z.value_at(i)));
        want += -(y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p));
    }
    want /= static_cast<double>(z.numel());
    CHECK(bce_loss(z, y).item() == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("bce rejects non-binary masks and mismatched shapes") {
    Tensor z = Tensor::zeros({1, 1, 2, 2}, Dtype::f32);
    CHECK_THROWS_AS(bce_loss(z, make_mask({1, 2, 2}, {0, 1, 2, 0})), ShapeError);
    CHECK_THROWS_AS(bce_loss(z, make_mask({1, 2, 3}, {0, 1, 0, 0, 1, 0})), ShapeError);
}

TEST_CASE("bce gradient vs finite differences") {
    SplitMix64 rng(307);
    Tensor z = random_tensor({1, 1, 3, 3}, rng, Dtype::f64, true, -2.0, 2.0);
    IntMask y({1, 3, 3});
    for (auto& v : y.data) v = rng.uniform() < 0.5 ? 1 : 0;
    CHECK(finite_diff_check([&] { return bce_loss(z, y); }, {z}) < 1e-6);
}

TEST_CASE("dice loss analytic cases") {
    // perfect overlap: p == y == 1 over 4 pixels, eps = 1
    IntMask ones = make_mask({1, 2, 2}, {1, 1, 1, 1});
    Tensor zp = Tensor::full({1, 1, 2, 2}, 500.0, Dtype::f64);
    CHECK(dice_loss(zp, ones, 1.0).item() == doctest::Approx(0.0).epsilon(1e-9));

    // p = 0, y = 1: 1 - 1/5
    Tensor zn = Tensor::full({1, 1, 2, 2}, -500.0, Dtype::f64);
    CHECK(dice_loss(zn, ones, 1.0).item() == doctest::Approx(0.8).epsilon(1e-9));

    // empty prediction against empty reference
    IntMask zeros = make_mask({1, 2, 2}, {0, 0, 0, 0});
    CHECK(dice_loss(zn, zeros, 1.0).item() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("dice gradient vs finite differences") {
    SplitMix64 rng(311);
    Tensor z = random_tensor({1, 1, 3, 3}, rng, Dtype::f64, true, -2.0, 2.0);
    IntMask y({1, 3, 3});
    for (auto& v : y.data) v = rng.uniform() < 0.4 ? 1 : 0;
    CHECK(finite_diff_check([&] { return dice_loss(z, y, 1.0); }, {z}) < 1e-6);
}

TEST_CASE("cross entropy analytic cases and the direct-formula oracle") {
    IntMask y = make_mask({1, 1, 2}, {3, 0});
    Tensor uniform = Tensor::full({1, 5, 1, 2}, 0.7, Dtype::f64);
    CHECK(ce_loss(uniform, y).item() == doctest::Approx(std::log(5.0)).epsilon(1e-9));

    Tensor perfect = Tensor::zeros({1, 5, 1, 2}, Dtype::f64);
    perfect.set_value_at(3 * 2 + 0, 500.0);
    perfect.set_value_at(0 * 2 + 1, 500.0);
    CHECK(ce_loss(perfect, y).item() == doctest::Approx(0.0).epsilon(1e-12));

    SplitMix64 rng(313);
    Tensor z = random_tensor({2, 4, 2, 3}, rng, Dtype::f64, false, -3.0, 3.0);
    IntMask m({2, 2, 3});
    for (auto& v : m.data) v = static_cast<uint8_t>(rng.uniform_int(4));
    double want = 0;
    const int64_t hw = 6;
    for (int64_t i = 0; i < 12; ++i) {
        const int64_t nb = i / hw, sp = i % hw;
        double denom = 0;
        for (int k = 0; k < 4; ++k) denom += std::exp(z.value_at((nb * 4 + k) * hw + sp));
        want += -std::log(std::exp(z.value_at((nb * 4 + m[i]) * hw + sp)) / denom);
    }
    want /= 12.0;
    CHECK(ce_loss(z, m).item() == doctest::Approx(want).epsilon(1e-6));

    CHECK_THROWS_AS(ce_loss(z, make_mask({2, 2, 3}, {0, 1, 2, 3, 4, 0, 0, 0, 0, 0, 0, 0})),
                    ShapeError);
}

TEST_CASE("ce gradient vs finite differences") {
    SplitMix64 rng(317);
    Tensor z = random_tensor({1, 5, 2, 2}, rng, Dtype::f64, true, -2.0, 2.0);
    IntMask y({1, 2, 2});
    for (auto& v : y.data) v = static_cast<uint8_t>(rng.uniform_int(5));
    CHECK(finite_diff_check([&] { return ce_loss(z, y); }, {z}) < 1e-6);
}

TEST_CASE("lovasz_grad hand-evaluated sequences") {
    auto g = lovasz_grad({1, 1, 0, 0});
    REQUIRE(g.size() == 4);
    CHECK(g[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(g[2] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(g[3] == doctest::Approx(0.0).epsilon(1e-12));

    auto gz = lovasz_grad({0, 0, 0});
    CHECK(gz[0] == doctest::Approx(1.0));
    CHECK(gz[1] == doctest::Approx(0.0));
    CHECK(gz[2] == doctest::Approx(0.0));

    CHECK(lovasz_grad({}).empty());
}

TEST_CASE("lovasz_grad prefix sums telescope to the jaccard sequence") {
    SplitMix64 rng(331);
    for (int trial = 0; trial < 20; ++trial) {
        const size_t n = 1 + rng.uniform_int(10);
        std::vector<uint8_t> gt(n);
        for (auto& v : gt) v = rng.uniform() < 0.5 ? 1 : 0;
        auto g = lovasz_grad(gt);
        // recompute the jaccard sequence directly
        double gts = 0;
        for (auto v : gt) gts += v;
        double cg = 0, cn = 0, prefix = 0;
        for (size_t m = 0; m < n; ++m) {
            cg += gt[m];
            cn += 1 - gt[m];
            const double jac = 1.0 - (gts - cg) / (gts + cn);
            prefix += g[m];
            CHECK(prefix == doctest::Approx(jac).epsilon(1e-12));
        }
    }
}

TEST_CASE("lovasz softmax is zero at hard-perfect predictions") {
    std::vector<int> gt = {0, 1, 2, 1};
    Tensor z = one_hot_logits(gt, 3, 60.0);
    IntMask m = make_mask({1, 1, 4}, gt);
    CHECK(lovasz_softmax(z, m).item() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("lovasz vertex example: half IoU costs one half") {
    // class-c gt on pixels 0,1; prediction hits c only on pixel 0
    std::vector<int> gt = {1, 1, 0, 0};
    std::vector<int> pred = {1, 0, 0, 0};
    Tensor z = one_hot_logits(pred, 2, 60.0);
    IntMask m = make_mask({1, 1, 4}, gt);
    auto values = lovasz_class_values(z, m, LossConfig::LovaszClasses::present);
    REQUIRE(values.size() == 2);
    CHECK(values[1].first == 1);
    CHECK(values[1].second == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(values[1].second == doctest::Approx(1.0 - iou_of(pred, gt, 1)).epsilon(1e-9));
}

TEST_CASE("lovasz equals one minus IoU at random hard predictions") {
    SplitMix64 rng(337);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_int(7));  // up to 8 pixels
        const int classes = 2 + static_cast<int>(rng.uniform_int(3));
        std::vector<int> gt(static_cast<size_t>(n)), pred(static_cast<size_t>(n));
        for (auto& v : gt) v = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(classes)));
        for (auto& v : pred) v = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(classes)));
        Tensor z = one_hot_logits(pred, classes, 60.0);
        IntMask m = make_mask({1, 1, n}, gt);
        for (auto [c, loss_c] : lovasz_class_values(z, m, LossConfig::LovaszClasses::present))
            CHECK(loss_c == doctest::Approx(1.0 - iou_of(pred, gt, c)).epsilon(1e-9));
    }
}

TEST_CASE("lovasz gradient vs finite differences away from ties") {
    SplitMix64 rng(347);
    Tensor z = random_tensor({1, 3, 2, 2}, rng, Dtype::f64, true, -1.5, 1.5);
    IntMask y({1, 2, 2});
    for (auto& v : y.data) v = static_cast<uint8_t>(rng.uniform_int(3));
    CHECK(finite_diff_check([&] { return lovasz_softmax(z, y); }, {z}) < 1e-4);
}

TEST_CASE("losses are invariant to pixel permutation") {
    SplitMix64 rng(349);
    const int n = 8;
    std::vector<double> zvals(n), perm_z(n);
    std::vector<int> yvals(n), perm_y(n);
    for (int i = 0; i < n; ++i) {
        zvals[static_cast<size_t>(i)] = rng.uniform(-2, 2);
        yvals[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(2));
    }
    std::vector<int> order = {5, 2, 7, 0, 3, 6, 1, 4};
    for (int i = 0; i < n; ++i) {
        perm_z[static_cast<size_t>(i)] = zvals[static_cast<size_t>(order[static_cast<size_t>(i)])];
        perm_y[static_cast<size_t>(i)] = yvals[static_cast<size_t>(order[static_cast<size_t>(i)])];
    }
    Tensor z1 = Tensor::from_values({1, 1, 2, 4}, zvals, Dtype::f64);
    Tensor z2 = Tensor::from_values({1, 1, 2, 4}, perm_z, Dtype::f64);
    IntMask y1 = make_mask({1, 2, 4}, yvals);
    IntMask y2 = make_mask({1, 2, 4}, perm_y);
    CHECK(bce_loss(z1, y1).item() == doctest::Approx(bce_loss(z2, y2).item()).epsilon(1e-12));
    CHECK(dice_loss(z1, y1, 1.0).item() ==
          doctest::Approx(dice_loss(z2, y2, 1.0).item()).epsilon(1e-12));

    // damage losses on 3 classes
    SplitMix64 rng2(353);
    std::vector<double> dz(3 * n);
    std::vector<int> dy(n);
    for (auto& v : dz) v = rng2.uniform(-2, 2);
    for (auto& v : dy) v = static_cast<int>(rng2.uniform_int(3));
    std::vector<double> dz_p(3 * n);
    std::vector<int> dy_p(n);
    for (int i = 0; i < n; ++i) {
        dy_p[static_cast<size_t>(i)] = dy[static_cast<size_t>(order[static_cast<size_t>(i)])];
        for (int k = 0; k < 3; ++k)
            dz_p[static_cast<size_t>(k * n + i)] =
                dz[static_cast<size_t>(k * n + order[static_cast<size_t>(i)])];
    }
    Tensor d1 = Tensor::from_values({1, 3, 2, 4}, dz, Dtype::f64);
    Tensor d2 = Tensor::from_values({1, 3, 2, 4}, dz_p, Dtype::f64);
    IntMask m1 = make_mask({1, 2, 4}, dy);
    IntMask m2 = make_mask({1, 2, 4}, dy_p);
    CHECK(ce_loss(d1, m1).item() == doctest::Approx(ce_loss(d2, m2).item()).epsilon(1e-12));
    CHECK(lovasz_softmax(d1, m1).item() ==
          doctest::Approx(lovasz_softmax(d2, m2).item()).epsilon(1e-12));
}

TEST_CASE("compound loss combines per the trade-off parameter") {
    SplitMix64 rng(359);
    Tensor loc = random_tensor({1, 1, 4, 4}, rng, Dtype::f64, false, -2.0, 2.0);
    Tensor dam = random_tensor({1, 5, 4, 4}, rng, Dtype::f64, false, -2.0, 2.0);
    IntMask ly({1, 4, 4}), dy({1, 4, 4});
    for (int64_t i = 0; i < 16; ++i) {
        ly[i] = rng.uniform() < 0.5 ? 1 : 0;
        dy[i] = ly[i] ? static_cast<uint8_t>(1 + rng.uniform_int(4)) : 0;
    }
    LossConfig cfg;

    cfg.alpha = 0.0;
    LossBreakdown zero_alpha = compound_loss(loc, dam, ly, dy, cfg);
    CHECK(zero_alpha.total.item() == zero_alpha.loc);

    cfg.alpha = 2.0;
    LossBreakdown two = compound_loss(loc, dam, ly, dy, cfg);
    CHECK(two.total.item() == doctest::Approx(two.loc + 2.0 * two.dam).epsilon(1e-12));
    CHECK(two.loc == doctest::Approx(two.bce + two.dice).epsilon(1e-12));
    CHECK(two.dam == doctest::Approx(two.ce + two.lovasz).epsilon(1e-12));

    // direct arithmetic: L_loc = 0.4, L_dam = 0.3, alpha = 2 -> 1.0
    CHECK(0.4 + 2.0 * 0.3 == doctest::Approx(1.0));

    // monotone in alpha while damage loss is positive
    cfg.alpha = 1.0;
    LossBreakdown one = compound_loss(loc, dam, ly, dy, cfg);
    CHECK(one.dam > 0);
    CHECK(two.total.item() > one.total.item());
}

TEST_CASE("compound loss is near zero for perfect dual-task predictions") {
    IntMask ly = make_mask({1, 2, 2}, {1, 1, 0, 0});
    IntMask dy = make_mask({1, 2, 2}, {2, 4, 0, 0});
    Tensor loc = Tensor::from_values({1, 1, 2, 2}, {500, 500, -500, -500}, Dtype::f64);
    Tensor dam = Tensor::zeros({1, 5, 2, 2}, Dtype::f64);
    for (int64_t i = 0; i < 4; ++i) dam.set_value_at(dy[i] * 4 + i, 500.0);
    LossConfig cfg;
    LossBreakdown b = compound_loss(loc, dam, ly, dy, cfg);
    CHECK(std::fabs(b.total.item()) < 1e-3);
}

TEST_CASE("compound loss gradients flow through all four terms") {
    SplitMix64 rng(367);
    Tensor loc = random_tensor({1, 1, 2, 2}, rng, Dtype::f64, true, -1.0, 1.0);
    Tensor dam = random_tensor({1, 3, 2, 2}, rng, Dtype::f64, true, -1.0, 1.0);
    IntMask ly({1, 2, 2}), dy({1, 2, 2});
    for (int64_t i = 0; i < 4; ++i) {
        ly[i] = rng.uniform() < 0.5 ? 1 : 0;
        dy[i] = static_cast<uint8_t>(rng.uniform_int(3));
    }
    LossConfig cfg;
    auto fn = [&] {
        LossBreakdown b = compound_loss(loc, dam, ly, dy, cfg);
        return b.total;
    };
    CHECK(finite_diff_check(fn, {loc, dam}) < 1e-4);
}
