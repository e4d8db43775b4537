#include "damformer/layers.hpp"

#include <cmath>

namespace damformer {

Linear::Linear(int in, int out, Dtype dt, SplitMix64& rng) {
    std::vector<double> wv(static_cast<size_t>(in) * out);
    for (auto& v : wv) v = rng.trunc_normal(0.02);
    w = Tensor::from_values({in, out}, wv, dt, true);
    b = Tensor::zeros({out}, dt, true);
}

Tensor Linear::forward(const Tensor& x) const {
    const int in = w.dim(0), out = w.dim(1);
    if (x.dim(x.ndim() - 1) != in)
        throw ShapeError("linear: input " + shape_str(x.shape()) + " does not end in " +
                         std::to_string(in));
    int64_t rows = x.numel() / in;
    Tensor flat = reshape(x, {static_cast<int>(rows), in});
    Tensor y = bias_add_row(matmul(flat, w), b);
    Shape out_shape = x.shape();
    out_shape.back() = out;
    return reshape(y, out_shape);
}

void Linear::collect(const std::string& prefix, ParamList& out_list) const {
    out_list.push_back({prefix + ".w", w});
    out_list.push_back({prefix + ".b", b});
}

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride_, int pad_, int groups_, Dtype dt,
               SplitMix64& rng)
    : stride(stride_), pad(pad_), groups(groups_) {
    const int cg = in_ch / groups_;
    const double fan_out = static_cast<double>(kernel) * kernel * out_ch / groups_;
    const double std = std::sqrt(2.0 / fan_out);
    std::vector<double> wv(static_cast<size_t>(out_ch) * cg * kernel * kernel);
    for (auto& v : wv) v = rng.normal(0.0, std);
    w = Tensor::from_values({out_ch, cg, kernel, kernel}, wv, dt, true);
    b = Tensor::zeros({out_ch}, dt, true);
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad, groups); }

void Conv2d::collect(const std::string& prefix, ParamList& out_list) const {
    out_list.push_back({prefix + ".w", w});
    out_list.push_back({prefix + ".b", b});
}

LayerNorm::LayerNorm(int ch, Dtype dt) {
    gamma = Tensor::full({ch}, 1.0, dt, true);
    beta = Tensor::zeros({ch}, dt, true);
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

void LayerNorm::collect(const std::string& prefix, ParamList& out_list) const {
    out_list.push_back({prefix + ".g", gamma});
    out_list.push_back({prefix + ".b", beta});
}

Tensor tokens_to_spatial(const Tensor& x, int h, int w) {
    if (x.ndim() != 3 || x.dim(1) != h * w)
        throw ShapeError("tokens_to_spatial: " + shape_str(x.shape()) + " does not hold " +
                         std::to_string(h) + "x" + std::to_string(w) + " tokens");
    Tensor g = reshape(x, {x.dim(0), h, w, x.dim(2)});
    return permute(g, {0, 3, 1, 2});
}

Tensor spatial_to_tokens(const Tensor& x) {
    if (x.ndim() != 4) throw ShapeError("spatial_to_tokens: expected NCHW, got " + shape_str(x.shape()));
    Tensor p = permute(x, {0, 2, 3, 1});
    return reshape(p, {x.dim(0), x.dim(2) * x.dim(3), x.dim(1)});
}

}  // namespace damformer
