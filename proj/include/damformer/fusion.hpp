#pragma once

#include "damformer/encoder.hpp"

namespace damformer {

// Multitemporal adaptive fusion: per pyramid level, concatenate the two
// streams, merge with a convolution, then gate per task with channel
// attention.
struct FusionConfig {
    int kernel = 3;          // merge conv kernel, 1 or 3
    int reduction = 4;       // channel-attention bottleneck ratio
    bool dup_merge = false;  // duplicate the merge conv per task

    void validate(const std::vector<int>& channels) const;
};

// Channel half of CBAM: gate = sigmoid(MLP(avgpool) + MLP(maxpool)) with a
// shared C -> C/r -> C bottleneck, applied multiplicatively per channel.
struct ChannelAttention {
    Linear fc1, fc2;

    ChannelAttention() = default;
    ChannelAttention(int ch, int reduction, Dtype dt, SplitMix64& rng);
    Tensor gate(const Tensor& f) const;     // [N,C,H,W] -> [N,C] in (0,1)
    Tensor forward(const Tensor& f) const;  // f gated per channel
    void collect(const std::string& prefix, ParamList& out) const;
};

struct FusionLevel {
    Conv2d merge;
    Conv2d merge_dam;  // used only with dup_merge
    ChannelAttention att_loc, att_dam;
    bool dup_merge = false;

    FusionLevel() = default;
    FusionLevel(int ch, const FusionConfig& cfg, Dtype dt, SplitMix64& rng);
    std::pair<Tensor, Tensor> fuse(const Tensor& f_pre, const Tensor& f_post) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

class TemporalFusion {
  public:
    TemporalFusion(const FusionConfig& cfg, const std::vector<int>& channels, Dtype dt,
                   SplitMix64& rng);

    // Localization pyramid and damage pyramid, fused level by level with
    // per-level parameters.
    std::pair<FeaturePyramid, FeaturePyramid> fuse_pyramids(const FeaturePyramid& pre,
                                                            const FeaturePyramid& post) const;
    void collect(const std::string& prefix, ParamList& out) const;
    const std::vector<FusionLevel>& levels() const { return levels_; }

  private:
    std::vector<FusionLevel> levels_;
};

}  // namespace damformer
