#include "damformer/fusion.hpp"

namespace damformer {

void FusionConfig::validate(const std::vector<int>& channels) const {
    if (kernel != 1 && kernel != 3) throw ConfigError("fusion: merge kernel must be 1 or 3");
    if (reduction < 1) throw ConfigError("fusion: reduction must be >= 1");
    for (int c : channels)
        if (c % reduction != 0)
            throw ConfigError("fusion: reduction " + std::to_string(reduction) +
                              " does not divide channel count " + std::to_string(c));
}

ChannelAttention::ChannelAttention(int ch, int reduction, Dtype dt, SplitMix64& rng)
    : fc1(ch, ch / reduction, dt, rng), fc2(ch / reduction, ch, dt, rng) {}

Tensor ChannelAttention::gate(const Tensor& f) const {
    auto mlp = [&](const Tensor& pooled) { return fc2.forward(relu(fc1.forward(pooled))); };
    return sigmoid(add(mlp(global_avg_pool(f)), mlp(global_max_pool(f))));
}

Tensor ChannelAttention::forward(const Tensor& f) const { return mul_channel_gate(f, gate(f)); }

void ChannelAttention::collect(const std::string& prefix, ParamList& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

FusionLevel::FusionLevel(int ch, const FusionConfig& cfg, Dtype dt, SplitMix64& rng)
    : merge(2 * ch, ch, cfg.kernel, 1, (cfg.kernel - 1) / 2, 1, dt, rng),
      att_loc(ch, cfg.reduction, dt, rng),
      att_dam(ch, cfg.reduction, dt, rng),
      dup_merge(cfg.dup_merge) {
    if (cfg.dup_merge) merge_dam = Conv2d(2 * ch, ch, cfg.kernel, 1, (cfg.kernel - 1) / 2, 1, dt, rng);
}

std::pair<Tensor, Tensor> FusionLevel::fuse(const Tensor& f_pre, const Tensor& f_post) const {
    if (f_pre.shape() != f_post.shape())
        throw ShapeError("fuse_level: shape mismatch " + shape_str(f_pre.shape()) + " vs " +
                         shape_str(f_post.shape()));
    Tensor cat = concat({f_pre, f_post}, 1);
    Tensor merged = merge.forward(cat);
    Tensor merged_d = dup_merge ? merge_dam.forward(cat) : merged;
    return {att_loc.forward(merged), att_dam.forward(merged_d)};
}

void FusionLevel::collect(const std::string& prefix, ParamList& out) const {
    merge.collect(prefix + ".merge", out);
    if (dup_merge) merge_dam.collect(prefix + ".merge_dam", out);
    att_loc.collect(prefix + ".loc", out);
    att_dam.collect(prefix + ".dam", out);
}

TemporalFusion::TemporalFusion(const FusionConfig& cfg, const std::vector<int>& channels, Dtype dt,
                               SplitMix64& rng) {
    cfg.validate(channels);
    for (int c : channels) levels_.emplace_back(c, cfg, dt, rng);
}

std::pair<FeaturePyramid, FeaturePyramid> TemporalFusion::fuse_pyramids(
    const FeaturePyramid& pre, const FeaturePyramid& post) const {
    FeaturePyramid loc, dam;
    for (size_t i = 0; i < 4; ++i) {
        if (pre.levels[i].shape() != post.levels[i].shape())
            throw ShapeError("fuse_pyramids: level " + std::to_string(i) + " mismatch " +
                             shape_str(pre.levels[i].shape()) + " vs " +
                             shape_str(post.levels[i].shape()));
        auto [l, d] = levels_[i].fuse(pre.levels[i], post.levels[i]);
        loc.levels[i] = l;
        dam.levels[i] = d;
    }
    return {loc, dam};
}

void TemporalFusion::collect(const std::string& prefix, ParamList& out) const {
    for (size_t i = 0; i < levels_.size(); ++i)
        levels_[i].collect(prefix + ".l" + std::to_string(i), out);
}

}  // namespace damformer
