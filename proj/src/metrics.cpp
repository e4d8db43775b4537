#include "damformer/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace damformer {

void MetricsReport::accumulate(const IntMask& pred_loc, const IntMask& pred_dam,
                               const IntMask& ref_loc, const IntMask& ref_dam) {
    if (pred_loc.shape != ref_loc.shape || pred_dam.shape != ref_dam.shape ||
        pred_loc.shape != pred_dam.shape)
        throw ShapeError("metrics: mask shapes disagree, " + shape_str(pred_loc.shape) + " / " +
                         shape_str(pred_dam.shape) + " / " + shape_str(ref_loc.shape) + " / " +
                         shape_str(ref_dam.shape));
    const int64_t n = pred_loc.numel();
    for (int64_t i = 0; i < n; ++i) {
        const bool p = pred_loc[i] != 0, r = ref_loc[i] != 0;
        if (p && r)
            loc_tp++;
        else if (p && !r)
            loc_fp++;
        else if (!p && r)
            loc_fn++;
        else
            loc_tn++;
        const int pd = pred_dam[i], rd = ref_dam[i];
        if (pd > 4 || rd > 4) throw ShapeError("metrics: damage class out of range 0..4");
        for (int c = 1; c <= 4; ++c) {
            if (pd == c && rd == c) dam_tp[static_cast<size_t>(c - 1)]++;
            if (pd == c && rd != c) dam_fp[static_cast<size_t>(c - 1)]++;
            if (pd != c && rd == c) dam_fn[static_cast<size_t>(c - 1)]++;
        }
    }
}

void MetricsReport::merge(const MetricsReport& other) {
    loc_tp += other.loc_tp;
    loc_fp += other.loc_fp;
    loc_fn += other.loc_fn;
    loc_tn += other.loc_tn;
    for (size_t c = 0; c < 4; ++c) {
        dam_tp[c] += other.dam_tp[c];
        dam_fp[c] += other.dam_fp[c];
        dam_fn[c] += other.dam_fn[c];
    }
}

double f1_score(int64_t tp, int64_t fp, int64_t fn) {
    const int64_t denom = 2 * tp + fp + fn;
    if (denom == 0) return 0.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double damage_f1(const std::array<double, 4>& per_class) {
    double inv = 0;
    for (double s : per_class) {
        if (s <= 0.0) return 0.0;
        inv += 1.0 / s;
    }
    return 4.0 / inv;
}

double overall_f1(double f1_loc, double f1_dam) { return 0.3 * f1_loc + 0.7 * f1_dam; }

double MetricsReport::f1_loc() const { return f1_score(loc_tp, loc_fp, loc_fn); }

std::array<double, 4> MetricsReport::f1_per_class() const {
    std::array<double, 4> out{};
    for (size_t c = 0; c < 4; ++c) out[c] = f1_score(dam_tp[c], dam_fp[c], dam_fn[c]);
    return out;
}

double MetricsReport::f1_dam() const { return damage_f1(f1_per_class()); }

double MetricsReport::f1_oa() const { return overall_f1(f1_loc(), f1_dam()); }

namespace {
std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v * 100.0);
    return buf;
}
std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}
}  // namespace

std::string MetricsReport::table() const {
    const auto pc = f1_per_class();
    std::ostringstream os;
    os << "  F1_oa  F1_loc  F1_dam      No   Minor   Major  Destr.\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%7s %7s %7s %7s %7s %7s %7s\n", fmt2(f1_oa()).c_str(),
                  fmt2(f1_loc()).c_str(), fmt2(f1_dam()).c_str(), fmt2(pc[0]).c_str(),
                  fmt2(pc[1]).c_str(), fmt2(pc[2]).c_str(), fmt2(pc[3]).c_str());
    os << buf;
    return os.str();
}

std::string MetricsReport::key_values() const {
    const auto pc = f1_per_class();
    std::ostringstream os;
    os << "f1_oa = " << fmt6(f1_oa()) << "\n";
    os << "f1_loc = " << fmt6(f1_loc()) << "\n";
    os << "f1_dam = " << fmt6(f1_dam()) << "\n";
    os << "f1_no_damage = " << fmt6(pc[0]) << "\n";
    os << "f1_minor = " << fmt6(pc[1]) << "\n";
    os << "f1_major = " << fmt6(pc[2]) << "\n";
    os << "f1_destroyed = " << fmt6(pc[3]) << "\n";
    return os.str();
}

std::pair<IntMask, IntMask> derive_masks(const Tensor& loc_logits, const Tensor& dam_logits) {
    if (loc_logits.ndim() != 4 || dam_logits.ndim() != 4 || loc_logits.dim(1) != 1)
        throw ShapeError("derive_masks: expected [N,1,H,W] and [N,K,H,W] logits");
    const int N = loc_logits.dim(0), H = loc_logits.dim(2), W = loc_logits.dim(3);
    const int K = dam_logits.dim(1);
    if (dam_logits.dim(0) != N || dam_logits.dim(2) != H || dam_logits.dim(3) != W)
        throw ShapeError("derive_masks: logit shapes disagree, " + shape_str(loc_logits.shape()) +
                         " vs " + shape_str(dam_logits.shape()));
    IntMask loc({N, H, W});
    IntMask dam({N, H, W});
    const int64_t hw = static_cast<int64_t>(H) * W;
    for (int64_t i = 0; i < static_cast<int64_t>(N) * hw; ++i) {
        const int64_t nb = i / hw, sp = i % hw;
        // sigmoid(z) > 0.5 iff z > 0
        const bool building = loc_logits.value_at(nb * hw + sp) > 0.0;
        loc[i] = building ? 1 : 0;
        if (!building) {
            dam[i] = 0;  // consistency rule
            continue;
        }
        int best = 0;
        double best_v = dam_logits.value_at((nb * K + 0) * hw + sp);
        for (int k = 1; k < K; ++k) {
            const double v = dam_logits.value_at((nb * K + k) * hw + sp);
            if (v > best_v) {  // first max wins on ties
                best_v = v;
                best = k;
            }
        }
        dam[i] = static_cast<uint8_t>(best);
    }
    return {loc, dam};
}

}  // namespace damformer
