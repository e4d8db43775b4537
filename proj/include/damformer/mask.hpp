#pragma once

#include <cstdint>
#include <vector>

#include "damformer/common.hpp"

namespace damformer {

// Dense integer mask (class indices or binary flags), shaped like [N,H,W] or
// [H,W]. Kept separate from Tensor: masks are constants, never differentiated.
struct IntMask {
    Shape shape;
    std::vector<uint8_t> data;

    IntMask() = default;
    IntMask(Shape s, uint8_t fill = 0)
        : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), fill) {}

    int64_t numel() const { return numel_of(shape); }
    uint8_t operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }
    uint8_t& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
};

}  // namespace damformer
