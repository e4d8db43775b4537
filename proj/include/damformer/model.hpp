#pragma once

#include <optional>

#include "damformer/decoder.hpp"
#include "damformer/fusion.hpp"

namespace damformer {

struct ModelConfig {
    EncoderConfig enc;
    FusionConfig fus;
    DecoderConfig dec;

    void validate() const {
        enc.validate();
        fus.validate(enc.channels);
        dec.validate();
    }
};

// Siamese encoder + multitemporal fusion + dual-task decoder.
class DamFormer {
  public:
    DamFormer(const ModelConfig& cfg, Dtype dt, uint64_t seed);

    // pre/post: [N,3,H,W] with H, W divisible by 32.
    // Returns (loc_logits [N,1,H,W], dam_logits [N,5,H,W]).
    std::pair<Tensor, Tensor> forward(const Tensor& pre, const Tensor& post) const;

    ParamList parameters() const;
    const ModelConfig& config() const { return cfg_; }
    Dtype dtype() const { return dtype_; }

    SiameseEncoder& encoder() { return encoder_; }
    TemporalFusion& fusion() { return fusion_; }
    DualDecoder& decoder() { return decoder_; }
    const SiameseEncoder& encoder() const { return encoder_; }
    const TemporalFusion& fusion() const { return fusion_; }
    const DualDecoder& decoder() const { return decoder_; }

  private:
    ModelConfig cfg_;
    Dtype dtype_;
    std::optional<SplitMix64> init_rng_;  // alive only during construction
    SiameseEncoder encoder_;
    TemporalFusion fusion_;
    DualDecoder decoder_;
};

}  // namespace damformer
