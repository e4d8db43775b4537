#pragma once

#include <array>
#include <tuple>
#include <vector>

#include "damformer/layers.hpp"

namespace damformer {

// Hierarchical Mix-Transformer encoder: overlap patch embedding, sequence-
// reduction self-attention, Mix-FFN with a 3x3 depthwise convolution instead
// of positional encodings. One parameter set serves both temporal streams.
struct EncoderConfig {
    std::vector<int> blocks{3, 4, 6, 3};
    std::vector<int> channels{16, 32, 64, 128};
    std::vector<int> heads{1, 2, 4, 8};
    std::vector<int> sr_ratios{8, 4, 2, 1};
    int expansion = 4;
    bool overlap_patches = true;  // stage 1: k7/s4/p3 vs strict 4x4/s4

    void validate() const;
};

// Four levels at 1/4, 1/8, 1/16, 1/32 of the input resolution; each level is
// half the spatial size of the previous one.
struct FeaturePyramid {
    std::array<Tensor, 4> levels;
};

struct OverlapPatchEmbed {
    Conv2d proj;
    LayerNorm norm;

    OverlapPatchEmbed() = default;
    OverlapPatchEmbed(int in_ch, int out_ch, int kernel, int stride, int pad, Dtype dt,
                      SplitMix64& rng);
    // tokens [N, h*w, C'] plus the embedded grid size
    std::tuple<Tensor, int, int> forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

struct EfficientSelfAttention {
    Linear q, kv, proj;
    Conv2d sr;  // sequence reduction, present when sr_ratio > 1
    LayerNorm sr_norm;
    int heads = 1;
    int sr_ratio = 1;
    int channels = 0;

    EfficientSelfAttention() = default;
    EfficientSelfAttention(int ch, int heads, int sr_ratio, Dtype dt, SplitMix64& rng);
    Tensor forward(const Tensor& x, int h, int w) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

struct MixFfn {
    Linear fc1, fc2;
    Conv2d dwconv;

    MixFfn() = default;
    MixFfn(int ch, int expansion, Dtype dt, SplitMix64& rng);
    Tensor forward(const Tensor& x, int h, int w) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

struct EncoderBlock {
    LayerNorm norm1, norm2;
    EfficientSelfAttention attn;
    MixFfn ffn;

    EncoderBlock() = default;
    EncoderBlock(int ch, int heads, int sr_ratio, int expansion, Dtype dt, SplitMix64& rng);
    Tensor forward(const Tensor& x, int h, int w) const;  // pre-norm residuals
    void collect(const std::string& prefix, ParamList& out) const;
};

struct EncoderStage {
    OverlapPatchEmbed embed;
    std::vector<EncoderBlock> blocks;
};

class SiameseEncoder {
  public:
    SiameseEncoder(const EncoderConfig& cfg, Dtype dt, SplitMix64& rng);

    FeaturePyramid forward_stream(const Tensor& x) const;
    std::pair<FeaturePyramid, FeaturePyramid> encode_siamese(const Tensor& pre,
                                                             const Tensor& post) const;
    void collect(const std::string& prefix, ParamList& out) const;
    const EncoderConfig& config() const { return cfg_; }

  private:
    EncoderConfig cfg_;
    std::vector<EncoderStage> stages_;
};

}  // namespace damformer
