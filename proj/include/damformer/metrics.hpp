#pragma once

#include <array>
#include <string>

#include "damformer/mask.hpp"
#include "damformer/tensor.hpp"

namespace damformer {

// Pixel confusion counts plus the xView2-style scores:
// F1_oa = 0.3 * F1_loc + 0.7 * F1_dam, with F1_dam the harmonic mean of the
// four damage-class scores.
struct MetricsReport {
    // localization (building vs background)
    int64_t loc_tp = 0, loc_fp = 0, loc_fn = 0, loc_tn = 0;
    // damage classes 1..4
    std::array<int64_t, 4> dam_tp{};
    std::array<int64_t, 4> dam_fp{};
    std::array<int64_t, 4> dam_fn{};

    void accumulate(const IntMask& pred_loc, const IntMask& pred_dam, const IntMask& ref_loc,
                    const IntMask& ref_dam);
    void merge(const MetricsReport& other);

    double f1_loc() const;
    std::array<double, 4> f1_per_class() const;
    double f1_dam() const;
    double f1_oa() const;

    std::string table() const;       // aligned text table, values x100
    std::string key_values() const;  // machine-readable `key = value` lines
};

// 2*tp / (2*tp + fp + fn); zero when the denominator is zero.
double f1_score(int64_t tp, int64_t fp, int64_t fn);

// Harmonic mean of the four per-class scores; any zero score collapses to 0.
double damage_f1(const std::array<double, 4>& per_class);

double overall_f1(double f1_loc, double f1_dam);

// Prediction rule for the dual-task logits: loc = sigmoid(z) > 0.5, dam =
// argmax over classes with damage forced to background where loc = 0.
std::pair<IntMask, IntMask> derive_masks(const Tensor& loc_logits, const Tensor& dam_logits);

}  // namespace damformer
