#include "damformer/decoder.hpp"

namespace damformer {

void DecoderConfig::validate() const {
    if (width < 1) throw ConfigError("decoder: width must be >= 1");
    if (scale != 1 && scale != 2 && scale != 4)
        throw ConfigError("decoder: scale must be 1, 2 or 4, got " + std::to_string(scale));
    if (dam_classes != 5)
        throw ConfigError("decoder: damage head must emit 5 logits (background + 4 levels)");
    if (loc_classes != 1) throw ConfigError("decoder: localization head emits 1 logit");
}

DecoderBranch::DecoderBranch(const std::vector<int>& channels, int width, int classes, Dtype dt,
                             SplitMix64& rng) {
    for (size_t i = 0; i < 4; ++i) proj[i] = Conv2d(channels[i], width, 1, 1, 0, 1, dt, rng);
    fuse = Conv2d(4 * width, width, 1, 1, 0, 1, dt, rng);
    cls = Conv2d(width, classes, 1, 1, 0, 1, dt, rng);
}

void DecoderBranch::collect(const std::string& prefix, ParamList& out) const {
    for (size_t i = 0; i < 4; ++i) proj[i].collect(prefix + ".p" + std::to_string(i), out);
    fuse.collect(prefix + ".fuse", out);
    cls.collect(prefix + ".cls", out);
}

DualDecoder::DualDecoder(const DecoderConfig& cfg, const std::vector<int>& channels, Dtype dt,
                         SplitMix64& rng)
    : cfg_(cfg) {
    cfg_.validate();
    loc_ = DecoderBranch(channels, cfg.width, cfg.loc_classes, dt, rng);
    dam_ = DecoderBranch(channels, cfg.width, cfg.dam_classes, dt, rng);
}

std::vector<Tensor> DualDecoder::projected_levels(const DecoderBranch& branch,
                                                  const FeaturePyramid& p, int th, int tw) const {
    std::vector<Tensor> parts;
    parts.reserve(4);
    for (size_t i = 0; i < 4; ++i)
        parts.push_back(bilinear_upsample(branch.proj[i].forward(p.levels[i]), th, tw));
    return parts;
}

Tensor DualDecoder::cross_level_fuse(const DecoderBranch& branch, const FeaturePyramid& p) const {
    const int th = p.levels[0].dim(2) * 4 / cfg_.scale;
    const int tw = p.levels[0].dim(3) * 4 / cfg_.scale;
    return branch.fuse.forward(concat(projected_levels(branch, p, th, tw), 1));
}

std::pair<Tensor, Tensor> DualDecoder::decode(const FeaturePyramid& p_loc,
                                              const FeaturePyramid& p_dam) const {
    for (size_t i = 0; i < 4; ++i)
        if (p_loc.levels[i].dim(2) != p_dam.levels[i].dim(2) ||
            p_loc.levels[i].dim(3) != p_dam.levels[i].dim(3))
            throw ShapeError("decode: pyramids disagree at level " + std::to_string(i));
    const int th = p_loc.levels[0].dim(2) * 4 / cfg_.scale;
    const int tw = p_loc.levels[0].dim(3) * 4 / cfg_.scale;
    const int out_h = th * cfg_.scale;
    const int out_w = tw * cfg_.scale;

    Tensor f_loc = cross_level_fuse(loc_, p_loc);

    Tensor f_dam;
    if (cfg_.addback == DecoderConfig::AddBack::pre_conv) {
        std::vector<Tensor> parts = projected_levels(dam_, p_dam, th, tw);
        for (Tensor& part : parts) part = add(part, f_loc);
        f_dam = dam_.fuse.forward(concat(parts, 1));
    } else {
        f_dam = add(cross_level_fuse(dam_, p_dam), f_loc);
    }

    Tensor loc_logits = bilinear_upsample(loc_.cls.forward(f_loc), out_h, out_w);
    Tensor dam_logits = bilinear_upsample(dam_.cls.forward(f_dam), out_h, out_w);
    return {loc_logits, dam_logits};
}

void DualDecoder::collect(const std::string& prefix, ParamList& out) const {
    loc_.collect(prefix + ".loc", out);
    dam_.collect(prefix + ".dam", out);
}

}  // namespace damformer
