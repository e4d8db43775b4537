#include "damformer/model.hpp"

namespace damformer {

DamFormer::DamFormer(const ModelConfig& cfg, Dtype dt, uint64_t seed)
    : cfg_(cfg),
      dtype_(dt),
      encoder_((cfg_.validate(), init_rng_.emplace(seed), SiameseEncoder(cfg_.enc, dt, *init_rng_))),
      fusion_(cfg_.fus, cfg_.enc.channels, dt, *init_rng_),
      decoder_(cfg_.dec, cfg_.enc.channels, dt, *init_rng_) {
    init_rng_.reset();
}

std::pair<Tensor, Tensor> DamFormer::forward(const Tensor& pre, const Tensor& post) const {
    auto [p_pre, p_post] = encoder_.encode_siamese(pre, post);
    auto [p_loc, p_dam] = fusion_.fuse_pyramids(p_pre, p_post);
    return decoder_.decode(p_loc, p_dam);
}

ParamList DamFormer::parameters() const {
    ParamList out;
    encoder_.collect("enc", out);
    fusion_.collect("fus", out);
    decoder_.collect("dec", out);
    return out;
}

}  // namespace damformer
