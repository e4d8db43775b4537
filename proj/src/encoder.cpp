#include "damformer/encoder.hpp"

#include <cmath>

namespace damformer {

void EncoderConfig::validate() const {
    if (blocks.size() != 4 || channels.size() != 4 || heads.size() != 4 || sr_ratios.size() != 4)
        throw ConfigError("encoder: blocks/channels/heads/sr_ratios must all have 4 stages");
    for (int i = 0; i < 4; ++i) {
        if (blocks[static_cast<size_t>(i)] < 1) throw ConfigError("encoder: block counts must be >= 1");
        if (channels[static_cast<size_t>(i)] < 1) throw ConfigError("encoder: channels must be >= 1");
        if (heads[static_cast<size_t>(i)] < 1 ||
            channels[static_cast<size_t>(i)] % heads[static_cast<size_t>(i)] != 0)
            throw ConfigError("encoder: channels[" + std::to_string(i) + "]=" +
                              std::to_string(channels[static_cast<size_t>(i)]) +
                              " not divisible by heads=" +
                              std::to_string(heads[static_cast<size_t>(i)]));
        if (sr_ratios[static_cast<size_t>(i)] < 1)
            throw ConfigError("encoder: sr_ratios must be positive");
    }
    if (expansion < 1) throw ConfigError("encoder: expansion must be >= 1");
}

OverlapPatchEmbed::OverlapPatchEmbed(int in_ch, int out_ch, int kernel, int stride, int pad,
                                     Dtype dt, SplitMix64& rng)
    : proj(in_ch, out_ch, kernel, stride, pad, 1, dt, rng), norm(out_ch, dt) {}

std::tuple<Tensor, int, int> OverlapPatchEmbed::forward(const Tensor& x) const {
    // Effective patch footprint: the stride, or the kernel extent not covered
    // by padding, whichever is larger.
    const int min_side = std::max(proj.stride, proj.w.dim(2) - 2 * proj.pad);
    if (x.dim(2) < min_side || x.dim(3) < min_side)
        throw ConfigError("patch_embed: input " + shape_str(x.shape()) +
                          " smaller than the patch kernel (need >= " + std::to_string(min_side) +
                          " per side)");
    Tensor y = proj.forward(x);
    const int h = y.dim(2), w = y.dim(3);
    Tensor tokens = norm.forward(spatial_to_tokens(y));
    return {tokens, h, w};
}

void OverlapPatchEmbed::collect(const std::string& prefix, ParamList& out) const {
    proj.collect(prefix + ".proj", out);
    norm.collect(prefix + ".norm", out);
}

EfficientSelfAttention::EfficientSelfAttention(int ch, int heads_, int sr_ratio_, Dtype dt,
                                               SplitMix64& rng)
    : q(ch, ch, dt, rng),
      kv(ch, 2 * ch, dt, rng),
      proj(ch, ch, dt, rng),
      heads(heads_),
      sr_ratio(sr_ratio_),
      channels(ch) {
    if (sr_ratio > 1) {
        sr = Conv2d(ch, ch, sr_ratio, sr_ratio, 0, 1, dt, rng);
        sr_norm = LayerNorm(ch, dt);
    }
}

Tensor EfficientSelfAttention::forward(const Tensor& x, int h, int w) const {
    const int N = x.dim(0), L = x.dim(1), C = x.dim(2);
    if (L != h * w)
        throw ShapeError("attention: token count " + std::to_string(L) + " != " +
                         std::to_string(h) + "x" + std::to_string(w));
    const int d = C / heads;

    Tensor queries = q.forward(x);
    Tensor kv_src = x;
    int lr = L;
    if (sr_ratio > 1) {
        if (h % sr_ratio != 0 || w % sr_ratio != 0)
            throw ConfigError("attention: grid " + std::to_string(h) + "x" + std::to_string(w) +
                              " not divisible by sr_ratio " + std::to_string(sr_ratio));
        Tensor sp = sr.forward(tokens_to_spatial(x, h, w));
        kv_src = sr_norm.forward(spatial_to_tokens(sp));
        lr = (h / sr_ratio) * (w / sr_ratio);
    }
    Tensor keys_values = kv.forward(kv_src);  // [N, lr, 2C]
    Tensor keys = slice(keys_values, 2, 0, C);
    Tensor values = slice(keys_values, 2, C, C);

    auto split_heads = [&](const Tensor& t, int len) {
        Tensor r = reshape(t, {N, len, heads, d});
        r = permute(r, {0, 2, 1, 3});
        return reshape(r, {N * heads, len, d});
    };
    Tensor qh = split_heads(queries, L);
    Tensor kh = split_heads(keys, lr);
    Tensor vh = split_heads(values, lr);

    Tensor scores = mul_scalar(bmm(qh, permute(kh, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(d)));
    Tensor attn = softmax(scores, 2);
    Tensor ctx = bmm(attn, vh);  // [N*heads, L, d]
    ctx = reshape(ctx, {N, heads, L, d});
    ctx = permute(ctx, {0, 2, 1, 3});
    ctx = reshape(ctx, {N, L, C});
    return proj.forward(ctx);
}

void EfficientSelfAttention::collect(const std::string& prefix, ParamList& out) const {
    q.collect(prefix + ".q", out);
    kv.collect(prefix + ".kv", out);
    proj.collect(prefix + ".proj", out);
    if (sr_ratio > 1) {
        sr.collect(prefix + ".sr", out);
        sr_norm.collect(prefix + ".srn", out);
    }
}

MixFfn::MixFfn(int ch, int expansion, Dtype dt, SplitMix64& rng)
    : fc1(ch, ch * expansion, dt, rng),
      fc2(ch * expansion, ch, dt, rng),
      dwconv(ch * expansion, ch * expansion, 3, 1, 1, ch * expansion, dt, rng) {}

Tensor MixFfn::forward(const Tensor& x, int h, int w) const {
    if (x.dim(1) != h * w)
        throw ShapeError("mix_ffn: token count " + std::to_string(x.dim(1)) + " != " +
                         std::to_string(h) + "x" + std::to_string(w));
    Tensor a = fc1.forward(x);
    Tensor s = dwconv.forward(tokens_to_spatial(a, h, w));
    Tensor t = gelu(spatial_to_tokens(s));
    return fc2.forward(t);
}

void MixFfn::collect(const std::string& prefix, ParamList& out) const {
    fc1.collect(prefix + ".fc1", out);
    dwconv.collect(prefix + ".dw", out);
    fc2.collect(prefix + ".fc2", out);
}

EncoderBlock::EncoderBlock(int ch, int heads, int sr_ratio, int expansion, Dtype dt,
                           SplitMix64& rng)
    : norm1(ch, dt),
      norm2(ch, dt),
      attn(ch, heads, sr_ratio, dt, rng),
      ffn(ch, expansion, dt, rng) {}

Tensor EncoderBlock::forward(const Tensor& x, int h, int w) const {
    Tensor y = add(x, attn.forward(norm1.forward(x), h, w));
    return add(y, ffn.forward(norm2.forward(y), h, w));
}

void EncoderBlock::collect(const std::string& prefix, ParamList& out) const {
    norm1.collect(prefix + ".n1", out);
    attn.collect(prefix + ".attn", out);
    norm2.collect(prefix + ".n2", out);
    ffn.collect(prefix + ".ffn", out);
}

SiameseEncoder::SiameseEncoder(const EncoderConfig& cfg, Dtype dt, SplitMix64& rng) : cfg_(cfg) {
    cfg_.validate();
    stages_.resize(4);
    for (int s = 0; s < 4; ++s) {
        const int in_ch = s == 0 ? 3 : cfg.channels[static_cast<size_t>(s - 1)];
        const int out_ch = cfg.channels[static_cast<size_t>(s)];
        int kernel, stride, pad;
        if (s == 0) {
            kernel = cfg.overlap_patches ? 7 : 4;
            stride = 4;
            pad = cfg.overlap_patches ? 3 : 0;
        } else {
            kernel = cfg.overlap_patches ? 3 : 2;
            stride = 2;
            pad = cfg.overlap_patches ? 1 : 0;
        }
        stages_[static_cast<size_t>(s)].embed =
            OverlapPatchEmbed(in_ch, out_ch, kernel, stride, pad, dt, rng);
        for (int b = 0; b < cfg.blocks[static_cast<size_t>(s)]; ++b)
            stages_[static_cast<size_t>(s)].blocks.emplace_back(
                out_ch, cfg.heads[static_cast<size_t>(s)], cfg.sr_ratios[static_cast<size_t>(s)],
                cfg.expansion, dt, rng);
    }
}

FeaturePyramid SiameseEncoder::forward_stream(const Tensor& x) const {
    FeaturePyramid pyr;
    Tensor cur = x;
    for (int s = 0; s < 4; ++s) {
        auto [tokens, h, w] = stages_[static_cast<size_t>(s)].embed.forward(cur);
        for (const EncoderBlock& blk : stages_[static_cast<size_t>(s)].blocks)
            tokens = blk.forward(tokens, h, w);
        cur = tokens_to_spatial(tokens, h, w);
        pyr.levels[static_cast<size_t>(s)] = cur;
    }
    return pyr;
}

std::pair<FeaturePyramid, FeaturePyramid> SiameseEncoder::encode_siamese(
    const Tensor& pre, const Tensor& post) const {
    if (pre.shape() != post.shape())
        throw ShapeError("encode_siamese: pre " + shape_str(pre.shape()) + " != post " +
                         shape_str(post.shape()));
    if (pre.ndim() != 4 || pre.dim(1) != 3)
        throw ShapeError("encode_siamese: expected [N,3,H,W], got " + shape_str(pre.shape()));
    if (pre.dim(2) % 32 != 0 || pre.dim(3) % 32 != 0)
        throw ShapeError("encode_siamese: H and W must be divisible by 32, got " +
                         shape_str(pre.shape()));
    return {forward_stream(pre), forward_stream(post)};
}

void SiameseEncoder::collect(const std::string& prefix, ParamList& out) const {
    for (int s = 0; s < 4; ++s) {
        const std::string sp = prefix + ".s" + std::to_string(s + 1);
        stages_[static_cast<size_t>(s)].embed.collect(sp + ".embed", out);
        for (size_t b = 0; b < stages_[static_cast<size_t>(s)].blocks.size(); ++b)
            stages_[static_cast<size_t>(s)].blocks[b].collect(sp + ".b" + std::to_string(b), out);
    }
}

}  // namespace damformer
