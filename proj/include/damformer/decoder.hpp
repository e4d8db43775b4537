#pragma once

#include "damformer/encoder.hpp"

namespace damformer {

// Lightweight dual-task decoder: per task, 1x1-project the four levels to a
// common width, upsample to the decode plane, concatenate, fuse with a 1x1
// convolution, classify with a 1x1 convolution. The localization fused map is
// added into the damage branch.
struct DecoderConfig {
    int width = 64;  // fused channel width
    int scale = 4;   // decode plane at 1/scale of input resolution (1, 2 or 4)
    enum class AddBack { post_conv, pre_conv } addback = AddBack::post_conv;
    int loc_classes = 1;  // sigmoid semantics
    int dam_classes = 5;  // background + four damage levels, softmax semantics

    void validate() const;
};

struct DecoderBranch {
    std::array<Conv2d, 4> proj;
    Conv2d fuse;
    Conv2d cls;

    DecoderBranch() = default;
    DecoderBranch(const std::vector<int>& channels, int width, int classes, Dtype dt,
                  SplitMix64& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};

class DualDecoder {
  public:
    DualDecoder(const DecoderConfig& cfg, const std::vector<int>& channels, Dtype dt,
                SplitMix64& rng);

    // Per level: 1x1 conv to the decode width, bilinear upsample to the decode
    // plane, concatenate, 1x1 fuse.
    Tensor cross_level_fuse(const DecoderBranch& branch, const FeaturePyramid& p) const;

    // (loc_logits [N,1,H,W], dam_logits [N,5,H,W]) at the input resolution.
    std::pair<Tensor, Tensor> decode(const FeaturePyramid& p_loc,
                                     const FeaturePyramid& p_dam) const;

    void collect(const std::string& prefix, ParamList& out) const;
    const DecoderBranch& loc_branch() const { return loc_; }
    const DecoderBranch& dam_branch() const { return dam_; }
    const DecoderConfig& config() const { return cfg_; }

  private:
    std::vector<Tensor> projected_levels(const DecoderBranch& branch, const FeaturePyramid& p,
                                         int th, int tw) const;

    DecoderConfig cfg_;
    DecoderBranch loc_, dam_;
};

}  // namespace damformer
