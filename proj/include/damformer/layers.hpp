#pragma once

#include <string>
#include <vector>

#include "damformer/rng.hpp"
#include "damformer/tensor.hpp"

namespace damformer {

struct NamedParam {
    std::string name;
    Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

// Projections use truncated-normal(0.02) weights, convolutions fan-out-scaled
// normals, norms ones/zeros, biases zero. All draws come from the caller's
// generator in construction order, so a seed fully determines the init.

struct Linear {
    Tensor w;  // [in, out]
    Tensor b;  // [out]

    Linear() = default;
    Linear(int in, int out, Dtype dt, SplitMix64& rng);
    Tensor forward(const Tensor& x) const;  // [..., in] -> [..., out]
    void collect(const std::string& prefix, ParamList& out) const;
};

struct Conv2d {
    Tensor w;  // [out, in/groups, k, k]
    Tensor b;  // [out]
    int stride = 1;
    int pad = 0;
    int groups = 1;

    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, int groups, Dtype dt,
           SplitMix64& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;
    double eps = 1e-6;

    LayerNorm() = default;
    LayerNorm(int ch, Dtype dt);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

Tensor tokens_to_spatial(const Tensor& x, int h, int w);  // [N,L,C] -> [N,C,h,w]
Tensor spatial_to_tokens(const Tensor& x);                // [N,C,h,w] -> [N,h*w,C]

}  // namespace damformer
