#include "damformer/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace damformer {

namespace {

constexpr int64_t kBlock = 4096;

// Fixed-block pixel reduction; totals are independent of any parallelism.
template <class T> T blocked_sum(const std::vector<T>& v) {
    T total = T(0);
    for (size_t b = 0; b < v.size(); b += kBlock) {
        T acc = T(0);
        const size_t hi = std::min(v.size(), b + kBlock);
        for (size_t i = b; i < hi; ++i) acc += v[i];
        total += acc;
    }
    return total;
}

void check_loc_shapes(const Tensor& logits, const IntMask& mask, const char* op) {
    if (logits.ndim() != 4 || logits.dim(1) != 1)
        throw ShapeError(std::string(op) + ": expected [N,1,H,W] logits, got " +
                         shape_str(logits.shape()));
    Shape want{logits.dim(0), logits.dim(2), logits.dim(3)};
    if (mask.shape != want)
        throw ShapeError(std::string(op) + ": mask " + shape_str(mask.shape) +
                         " does not match logits " + shape_str(logits.shape()));
    for (uint8_t v : mask.data)
        if (v > 1) throw ShapeError(std::string(op) + ": mask must be binary");
}

void check_dam_shapes(const Tensor& logits, const IntMask& mask, const char* op) {
    if (logits.ndim() != 4)
        throw ShapeError(std::string(op) + ": expected [N,K,H,W] logits, got " +
                         shape_str(logits.shape()));
    Shape want{logits.dim(0), logits.dim(2), logits.dim(3)};
    if (mask.shape != want)
        throw ShapeError(std::string(op) + ": mask " + shape_str(mask.shape) +
                         " does not match logits " + shape_str(logits.shape()));
    const int k = logits.dim(1);
    for (uint8_t v : mask.data)
        if (v >= k)
            throw ShapeError(std::string(op) + ": class index " + std::to_string(v) +
                             " out of range for " + std::to_string(k) + " classes");
}

Tensor mask_as_tensor(const IntMask& mask, Dtype dt) {
    Tensor t = Tensor::zeros({static_cast<int>(mask.numel())}, dt);
    detail::dispatch(dt, [&](auto tag) {
        using T = decltype(tag);
        auto s = t.mutable_data<T>();
        for (int64_t i = 0; i < mask.numel(); ++i) s[static_cast<size_t>(i)] = static_cast<T>(mask[i]);
    });
    return t;
}

}  // namespace

void LossConfig::validate() const {
    if (alpha < 0) throw ConfigError("loss: alpha must be >= 0");
    if (dice_eps <= 0) throw ConfigError("loss: dice_eps must be > 0");
    if (w_bce < 0 || w_dice < 0 || w_ce < 0 || w_lovasz < 0)
        throw ConfigError("loss: mixing weights must be >= 0");
}

Tensor bce_loss(const Tensor& loc_logits, const IntMask& loc_mask) {
    check_loc_shapes(loc_logits, loc_mask, "bce_loss");
    const int64_t n = loc_logits.numel();
    Tensor out = Tensor::zeros({}, loc_logits.dtype());
    detail::dispatch(loc_logits.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto pz = loc_logits.data<T>();
        std::vector<T> px(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            const double z = static_cast<double>(pz[static_cast<size_t>(i)]);
            const double y = static_cast<double>(loc_mask[i]);
            px[static_cast<size_t>(i)] = static_cast<T>(
                std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z))));
        }
        out.mutable_data<T>()[0] = blocked_sum(px) / static_cast<T>(n);
    });
    return detail::finalize_op("bce_loss", out, {loc_logits}, [loc_logits, loc_mask, out, n] {
        detail::dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T go = detail::grad_view<T>(out)[0];
            auto pz = loc_logits.data<T>();
            auto gz = detail::grad_acc<T>(loc_logits);
            for (int64_t i = 0; i < n; ++i) {
                const double z = static_cast<double>(pz[static_cast<size_t>(i)]);
                const double p = 1.0 / (1.0 + std::exp(-z));
                gz[static_cast<size_t>(i)] +=
                    go * static_cast<T>((p - loc_mask[i]) / static_cast<double>(n));
            }
        });
    });
}

Tensor dice_loss(const Tensor& loc_logits, const IntMask& loc_mask, double eps) {
    check_loc_shapes(loc_logits, loc_mask, "dice_loss");
    if (eps <= 0) throw ConfigError("dice_loss: eps must be > 0");
    const int n = static_cast<int>(loc_logits.numel());
    Tensor p = sigmoid(reshape(loc_logits, {n}));
    Tensor y = mask_as_tensor(loc_mask, loc_logits.dtype());
    double ysum = 0;
    for (uint8_t v : loc_mask.data) ysum += v;
    Tensor inter = sum_all(mul(p, y));
    Tensor denom = add_scalar(add(sum_all(p), Tensor::scalar(ysum, loc_logits.dtype())), eps);
    Tensor numer = add_scalar(mul_scalar(inter, 2.0), eps);
    return add_scalar(mul_scalar(div(numer, denom), -1.0), 1.0);
}

Tensor ce_loss(const Tensor& dam_logits, const IntMask& dam_mask) {
    check_dam_shapes(dam_logits, dam_mask, "ce_loss");
    const int N = dam_logits.dim(0), K = dam_logits.dim(1);
    const int64_t hw = static_cast<int64_t>(dam_logits.dim(2)) * dam_logits.dim(3);
    const int64_t pixels = static_cast<int64_t>(N) * hw;
    Tensor out = Tensor::zeros({}, dam_logits.dtype());
    detail::dispatch(dam_logits.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto pz = dam_logits.data<T>();
        std::vector<T> px(static_cast<size_t>(pixels));
        for (int64_t i = 0; i < pixels; ++i) {
            const int64_t nb = i / hw, sp = i % hw;
            double mx = -1e300;
            for (int k = 0; k < K; ++k)
                mx = std::max(mx, static_cast<double>(pz[(nb * K + k) * hw + sp]));
            double acc = 0;
            for (int k = 0; k < K; ++k)
                acc += std::exp(static_cast<double>(pz[(nb * K + k) * hw + sp]) - mx);
            const double lse = mx + std::log(acc);
            px[static_cast<size_t>(i)] =
                static_cast<T>(lse - static_cast<double>(pz[(nb * K + dam_mask[i]) * hw + sp]));
        }
        out.mutable_data<T>()[0] = blocked_sum(px) / static_cast<T>(pixels);
    });
    return detail::finalize_op("ce_loss", out, {dam_logits}, [dam_logits, dam_mask, out, N, K, hw,
                                                              pixels] {
        detail::dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T go = detail::grad_view<T>(out)[0];
            auto pz = dam_logits.data<T>();
            auto gz = detail::grad_acc<T>(dam_logits);
            for (int64_t i = 0; i < pixels; ++i) {
                const int64_t nb = i / hw, sp = i % hw;
                double mx = -1e300;
                for (int k = 0; k < K; ++k)
                    mx = std::max(mx, static_cast<double>(pz[(nb * K + k) * hw + sp]));
                double acc = 0;
                for (int k = 0; k < K; ++k)
                    acc += std::exp(static_cast<double>(pz[(nb * K + k) * hw + sp]) - mx);
                for (int k = 0; k < K; ++k) {
                    const double soft =
                        std::exp(static_cast<double>(pz[(nb * K + k) * hw + sp]) - mx) / acc;
                    const double ind = k == dam_mask[i] ? 1.0 : 0.0;
                    gz[static_cast<size_t>((nb * K + k) * hw + sp)] +=
                        go * static_cast<T>((soft - ind) / static_cast<double>(pixels));
                }
            }
        });
    });
}

std::vector<double> lovasz_grad(const std::vector<uint8_t>& gt_sorted) {
    const size_t n = gt_sorted.size();
    std::vector<double> g(n);
    if (n == 0) return g;
    double gts = 0;
    for (uint8_t v : gt_sorted) gts += v;
    double cum_gt = 0, cum_not = 0, prev = 0;
    for (size_t i = 0; i < n; ++i) {
        cum_gt += gt_sorted[i];
        cum_not += 1 - gt_sorted[i];
        const double intersection = gts - cum_gt;
        const double uni = gts + cum_not;
        const double jaccard = 1.0 - intersection / uni;
        g[i] = jaccard - prev;
        prev = jaccard;
    }
    return g;
}

namespace {

struct LovaszPlan {
    std::vector<int> classes;                    // included classes, ascending
    std::vector<std::vector<int64_t>> order;     // per class: pixel order by descending error
    std::vector<std::vector<double>> weights;    // per class: lovasz_grad values
    std::vector<double> class_losses;
};

// Shared forward: errors, stable descending sort (ties by pixel index), and
// the per-class dot products.
LovaszPlan lovasz_forward(const Tensor& probs, const IntMask& mask,
                          LossConfig::LovaszClasses policy) {
    const int N = probs.dim(0), K = probs.dim(1);
    const int64_t hw = static_cast<int64_t>(probs.dim(2)) * probs.dim(3);
    const int64_t pixels = static_cast<int64_t>(N) * hw;

    std::vector<int64_t> counts(static_cast<size_t>(K), 0);
    for (int64_t i = 0; i < pixels; ++i) counts[mask[i]]++;

    LovaszPlan plan;
    for (int c = 0; c < K; ++c)
        if (policy == LossConfig::LovaszClasses::all || counts[static_cast<size_t>(c)] > 0)
            plan.classes.push_back(c);

    std::vector<double> errors(static_cast<size_t>(pixels));
    std::vector<int64_t> idx(static_cast<size_t>(pixels));
    std::vector<uint8_t> gt_sorted(static_cast<size_t>(pixels));
    for (int c : plan.classes) {
        for (int64_t i = 0; i < pixels; ++i) {
            const int64_t nb = i / hw, sp = i % hw;
            const double p = probs.value_at((nb * K + c) * hw + sp);
            errors[static_cast<size_t>(i)] = mask[i] == c ? 1.0 - p : p;
        }
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
            return errors[static_cast<size_t>(a)] > errors[static_cast<size_t>(b)];
        });
        for (int64_t r = 0; r < pixels; ++r)
            gt_sorted[static_cast<size_t>(r)] = mask[idx[static_cast<size_t>(r)]] == c ? 1 : 0;
        std::vector<double> g = lovasz_grad(gt_sorted);
        double loss_c = 0;
        for (int64_t r = 0; r < pixels; ++r)
            loss_c += errors[static_cast<size_t>(idx[static_cast<size_t>(r)])] *
                      g[static_cast<size_t>(r)];
        plan.order.push_back(idx);
        plan.weights.push_back(std::move(g));
        plan.class_losses.push_back(loss_c);
    }
    return plan;
}

}  // namespace

std::vector<std::pair<int, double>> lovasz_class_values(const Tensor& dam_logits,
                                                        const IntMask& dam_mask,
                                                        LossConfig::LovaszClasses policy) {
    check_dam_shapes(dam_logits, dam_mask, "lovasz_softmax");
    NoGradGuard ng;
    LovaszPlan plan = lovasz_forward(softmax(dam_logits, 1), dam_mask, policy);
    std::vector<std::pair<int, double>> out;
    for (size_t i = 0; i < plan.classes.size(); ++i)
        out.emplace_back(plan.classes[i], plan.class_losses[i]);
    return out;
}

Tensor lovasz_softmax(const Tensor& dam_logits, const IntMask& dam_mask,
                      LossConfig::LovaszClasses policy) {
    check_dam_shapes(dam_logits, dam_mask, "lovasz_softmax");
    Tensor probs = softmax(dam_logits, 1);
    auto plan = std::make_shared<LovaszPlan>(lovasz_forward(probs, dam_mask, policy));
    const int K = probs.dim(1);
    const int64_t hw = static_cast<int64_t>(probs.dim(2)) * probs.dim(3);

    double total = 0;
    for (double v : plan->class_losses) total += v;
    const double denom = plan->classes.empty() ? 1.0 : static_cast<double>(plan->classes.size());
    Tensor out = Tensor::full({}, total / denom, probs.dtype());

    return detail::finalize_op("lovasz", out, {probs}, [probs, dam_mask, out, plan, K, hw, denom] {
        detail::dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const double go = static_cast<double>(detail::grad_view<T>(out)[0]);
            auto gp = detail::grad_acc<T>(probs);
            for (size_t ci = 0; ci < plan->classes.size(); ++ci) {
                const int c = plan->classes[ci];
                const auto& order = plan->order[ci];
                const auto& g = plan->weights[ci];
                for (size_t r = 0; r < order.size(); ++r) {
                    const int64_t i = order[r];
                    const int64_t nb = i / hw, sp = i % hw;
                    const double sign = dam_mask[i] == c ? -1.0 : 1.0;
                    gp[static_cast<size_t>((nb * K + c) * hw + sp)] +=
                        static_cast<T>(go * g[r] * sign / denom);
                }
            }
        });
    });
}

LossBreakdown compound_loss(const Tensor& loc_logits, const Tensor& dam_logits,
                            const IntMask& loc_mask, const IntMask& dam_mask,
                            const LossConfig& cfg) {
    cfg.validate();
    LossBreakdown out;
    Tensor bce = bce_loss(loc_logits, loc_mask);
    Tensor dice = dice_loss(loc_logits, loc_mask, cfg.dice_eps);
    Tensor ce = ce_loss(dam_logits, dam_mask);
    Tensor lov = lovasz_softmax(dam_logits, dam_mask, cfg.lovasz_classes);
    Tensor l_loc = add(mul_scalar(bce, cfg.w_bce), mul_scalar(dice, cfg.w_dice));
    Tensor l_dam = add(mul_scalar(ce, cfg.w_ce), mul_scalar(lov, cfg.w_lovasz));
    out.total = add(l_loc, mul_scalar(l_dam, cfg.alpha));
    out.bce = bce.item();
    out.dice = dice.item();
    out.ce = ce.item();
    out.lovasz = lov.item();
    out.loc = l_loc.item();
    out.dam = l_dam.item();
    return out;
}

}  // namespace damformer
