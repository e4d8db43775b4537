#pragma once

#include "damformer/mask.hpp"
#include "damformer/tensor.hpp"

namespace damformer {

// Compound training objective: L_overall = L_loc + alpha * L_dam with
// L_loc = bce + dice and L_dam = ce + lovasz (unit mixing weights by default).
struct LossConfig {
    double alpha = 1.0;
    double dice_eps = 1.0;
    double w_bce = 1.0;
    double w_dice = 1.0;
    double w_ce = 1.0;
    double w_lovasz = 1.0;
    enum class LovaszClasses { present, all } lovasz_classes = LovaszClasses::present;

    void validate() const;
};

// Mean over pixels of the numerically stable logits-form binary cross-entropy.
Tensor bce_loss(const Tensor& loc_logits, const IntMask& loc_mask);

// 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps), batch-global sums.
Tensor dice_loss(const Tensor& loc_logits, const IntMask& loc_mask, double eps);

// Mean over pixels of -log softmax(z)[y] in stable log-sum-exp form.
Tensor ce_loss(const Tensor& dam_logits, const IntMask& dam_mask);

// Gradient of the Lovasz extension of the Jaccard loss, for errors sorted in
// descending order.
std::vector<double> lovasz_grad(const std::vector<uint8_t>& gt_sorted);

// Lovasz-softmax: per class, errors sorted descending (stable on pixel index)
// dotted with lovasz_grad of the matching label sequence; averaged over the
// included classes.
Tensor lovasz_softmax(const Tensor& dam_logits, const IntMask& dam_mask,
                      LossConfig::LovaszClasses policy = LossConfig::LovaszClasses::present);

// Per-class Lovasz values (forward only, no tape); used by the IoU oracles.
std::vector<std::pair<int, double>> lovasz_class_values(const Tensor& dam_logits,
                                                        const IntMask& dam_mask,
                                                        LossConfig::LovaszClasses policy);

struct LossBreakdown {
    Tensor total;  // scalar on the tape
    double loc = 0;
    double dam = 0;
    double bce = 0;
    double dice = 0;
    double ce = 0;
    double lovasz = 0;
};

LossBreakdown compound_loss(const Tensor& loc_logits, const Tensor& dam_logits,
                            const IntMask& loc_mask, const IntMask& dam_mask,
                            const LossConfig& cfg);

}  // namespace damformer
