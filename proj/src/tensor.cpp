#include "damformer/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace damformer {

namespace {
Dtype g_default_dtype = Dtype::f32;

std::shared_ptr<TensorImpl> make_impl(Shape shape, Dtype dt, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::make_shared<Storage>(dt, numel_of(impl->shape));
    impl->requires_grad = requires_grad;
    return impl;
}
}  // namespace

Dtype default_dtype() { return g_default_dtype; }
void set_default_dtype(Dtype dt) { g_default_dtype = dt; }

Tensor Tensor::zeros(Shape shape, Dtype dt, bool requires_grad) {
    return wrap(make_impl(std::move(shape), dt, requires_grad));
}

Tensor Tensor::full(Shape shape, double value, Dtype dt, bool requires_grad) {
    Tensor t = zeros(std::move(shape), dt, requires_grad);
    detail::dispatch(dt, [&](auto tag) {
        using T = decltype(tag);
        auto s = t.mutable_data<T>();
        std::fill(s.begin(), s.end(), static_cast<T>(value));
    });
    return t;
}

Tensor Tensor::from_values(Shape shape, const std::vector<double>& values, Dtype dt,
                           bool requires_grad) {
    if (static_cast<int64_t>(values.size()) != numel_of(shape))
        throw ShapeError("from_values: got " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
    Tensor t = zeros(std::move(shape), dt, requires_grad);
    detail::dispatch(dt, [&](auto tag) {
        using T = decltype(tag);
        auto s = t.mutable_data<T>();
        for (size_t i = 0; i < values.size(); ++i) s[i] = static_cast<T>(values[i]);
    });
    return t;
}

Tensor Tensor::scalar(double value, Dtype dt) { return full({}, value, dt); }

double Tensor::value_at(int64_t flat_index) const {
    double out = 0;
    detail::dispatch(dtype(), [&](auto tag) {
        using T = decltype(tag);
        out = static_cast<double>(data<T>()[static_cast<size_t>(flat_index)]);
    });
    return out;
}

void Tensor::set_value_at(int64_t flat_index, double v) const {
    detail::dispatch(dtype(), [&](auto tag) {
        using T = decltype(tag);
        impl_->data->data<T>()[static_cast<size_t>(flat_index)] = static_cast<T>(v);
    });
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
    return value_at(0);
}

Tensor Tensor::grad() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    if (impl_->grad)
        impl->data = impl_->grad;
    else
        impl->data = std::make_shared<Storage>(dtype(), numel());
    return wrap(std::move(impl));
}

// ---- tape -------------------------------------------------------------------

GradTape& GradTape::active() {
    static GradTape tape;
    return tape;
}

void GradTape::record(const char* op, Tensor out, std::vector<Tensor> inputs,
                      std::function<void()> backward) {
    entries_.push_back(Entry{op, std::move(out), std::move(inputs), std::move(backward)});
}

void GradTape::backward(const Tensor& root) {
    if (root.numel() != 1)
        throw ShapeError("backward: root must be a scalar, got " + shape_str(root.shape()));
    std::unordered_set<TensorImpl*> needed;
    needed.insert(root.impl());
    std::vector<size_t> selected;  // collected in reverse execution order
    for (size_t i = entries_.size(); i-- > 0;) {
        Entry& e = entries_[i];
        if (!needed.count(e.out.impl())) continue;
        selected.push_back(i);
        for (const Tensor& in : e.inputs)
            if (in.requires_grad()) needed.insert(in.impl());
    }
    // Intermediates carry only this sweep's gradient; leaves accumulate across
    // sweeps.
    for (size_t i : selected) {
        Tensor& out = entries_[i].out;
        detail::dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto g = detail::grad_acc<T>(out);
            std::fill(g.begin(), g.end(), T(0));
        });
    }
    detail::dispatch(root.dtype(), [&](auto tag) {
        using T = decltype(tag);
        detail::grad_acc<T>(root)[0] += T(1);
    });
    for (size_t i : selected) entries_[i].fn();
}

// ---- op plumbing -------------------------------------------------------------

namespace detail {

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype())
        throw ShapeError(std::string(op) + ": mixed dtypes " + dtype_name(a.dtype()) + " vs " +
                         dtype_name(b.dtype()));
}

Tensor finalize_op(const char* name, Tensor out, std::vector<Tensor> inputs,
                   std::function<void()> backward) {
    if (debug_check_finite()) {
        bool ok = true;
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            for (T v : out.data<T>())
                if (!std::isfinite(static_cast<double>(v))) {
                    ok = false;
                    break;
                }
        });
        if (!ok) throw NumericError(std::string("op ") + name + " produced a non-finite value");
    }
    bool any_grad = false;
    for (const Tensor& in : inputs)
        if (in.requires_grad()) any_grad = true;
    if (GradTape::active().enabled() && any_grad) {
        out.impl()->requires_grad = true;
        out.impl()->leaf = false;
        GradTape::active().record(name, out, std::move(inputs), std::move(backward));
    }
    return out;
}

}  // namespace detail

using detail::dispatch;
using detail::grad_acc;
using detail::grad_view;

// ---- elementwise -------------------------------------------------------------

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    detail::check_same_dtype(a, b, op);
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

constexpr int64_t kElemGrain = 8192;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto pa = a.data<T>();
        auto pb = b.data<T>();
        auto po = out.mutable_data<T>();
        parallel_for(a.numel(), kElemGrain, [&](int64_t i0, int64_t i1) {
            for (int64_t i = i0; i < i1; ++i) po[i] = pa[i] + pb[i];
        });
    });
    return detail::finalize_op("add", out, {a, b}, [a, b, out] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = grad_view<T>(out);
            if (a.requires_grad()) {
                auto ga = grad_acc<T>(a);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                auto gb = grad_acc<T>(b);
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        });
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto pa = a.data<T>();
        auto pb = b.data<T>();
        auto po = out.mutable_data<T>();
        parallel_for(a.numel(), kElemGrain, [&](int64_t i0, int64_t i1) {
            for (int64_t i = i0; i < i1; ++i) po[i] = pa[i] - pb[i];
        });
    });
    return detail::finalize_op("sub", out, {a, b}, [a, b, out] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = grad_view<T>(out);
            if (a.requires_grad()) {
                auto ga = grad_acc<T>(a);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                auto gb = grad_acc<T>(b);
                for (size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
            }
        });
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto pa = a.data<T>();
        auto pb = b.data<T>();
        auto po = out.mutable_data<T>();
        parallel_for(a.numel(), kElemGrain, [&](int64_t i0, int64_t i1) {
            for (int64_t i = i0; i < i1; ++i) po[i] = pa[i] * pb[i];
        });
    });
    return detail::finalize_op("mul", out, {a, b}, [a, b, out] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = grad_view<T>(out);
            auto pa = a.data<T>();
            auto pb = b.data<T>();
            if (a.requires_grad()) {
                auto ga = grad_acc<T>(a);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * pb[i];
            }
            if (b.requires_grad()) {
                auto gb = grad_acc<T>(b);
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * pa[i];
            }
        });
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto pa = a.data<T>();
        auto pb = b.data<T>();
        auto po = out.mutable_data<T>();
        parallel_for(a.numel(), kElemGrain, [&](int64_t i0, int64_t i1) {
            for (int64_t i = i0; i < i1; ++i) po[i] = pa[i] / pb[i];
        });
    });
    return detail::finalize_op("div", out, {a, b}, [a, b, out] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = grad_view<T>(out);
            auto pa = a.data<T>();
            auto pb = b.data<T>();
            if (a.requires_grad()) {
                auto ga = grad_acc<T>(a);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / pb[i];
            }
            if (b.requires_grad()) {
                auto gb = grad_acc<T>(b);
                for (size_t i = 0; i < go.size(); ++i) gb[i] -= go[i] * pa[i] / (pb[i] * pb[i]);
            }
        });
    });
}

Tensor add_scalar(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto pa = a.data<T>();
        auto po = out.mutable_data<T>();
        T tc = static_cast<T>(c);
        for (size_t i = 0; i < pa.size(); ++i) po[i] = pa[i] + tc;
    });
    return detail::finalize_op("add_scalar", out, {a}, [a, out] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = grad_view<T>(out);
            auto ga = grad_acc<T>(a);
            for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        });
    });
}

Tensor mul_scalar(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto pa = a.data<T>();
        auto po = out.mutable_data<T>();
        T tc = static_cast<T>(c);
        for (size_t i = 0; i < pa.size(); ++i) po[i] = pa[i] * tc;
    });
    return detail::finalize_op("mul_scalar", out, {a}, [a, out, c] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = grad_view<T>(out);
            auto ga = grad_acc<T>(a);
            T tc = static_cast<T>(c);
            for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * tc;
        });
    });
}

// ---- matmul ------------------------------------------------------------------

namespace {

// C[M,N] (+)= op(A) * op(B); A and B row-major in their untransposed layouts.
// Inner products accumulate in ascending k regardless of parallelism.
template <class T>
void mm_kernel(const T* A, const T* B, T* C, int M, int K, int N, bool ta, bool tb,
               bool accumulate) {
    parallel_for(M, 1, [&](int64_t r0, int64_t r1) {
        for (int64_t i = r0; i < r1; ++i) {
            T* crow = C + i * N;
            if (!accumulate)
                for (int j = 0; j < N; ++j) crow[j] = T(0);
            for (int k = 0; k < K; ++k) {
                T aik = ta ? A[static_cast<int64_t>(k) * M + i] : A[i * K + k];
                if (tb) {
                    const T* bcol = B + k;
                    for (int j = 0; j < N; ++j) crow[j] += aik * bcol[static_cast<int64_t>(j) * K];
                } else {
                    const T* brow = B + static_cast<int64_t>(k) * N;
                    for (int j = 0; j < N; ++j) crow[j] += aik * brow[j];
                }
            }
        }
    });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_same_dtype(a, b, "matmul");
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
    Tensor out = Tensor::zeros({M, N}, a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        mm_kernel(a.data<T>().data(), b.data<T>().data(), out.mutable_data<T>().data(), M, K, N,
                  false, false, false);
    });
    return detail::finalize_op("matmul", out, {a, b}, [a, b, out, M, K, N] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* go = grad_view<T>(out).data();
            if (a.requires_grad())  // dA = dC * B^T
                mm_kernel(go, b.data<T>().data(), grad_acc<T>(a).data(), M, N, K, false, true,
                          true);
            if (b.requires_grad())  // dB = A^T * dC
                mm_kernel(a.data<T>().data(), go, grad_acc<T>(b).data(), K, M, N, true, false,
                          true);
        });
    });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    detail::check_same_dtype(a, b, "bmm");
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
    Tensor out = Tensor::zeros({B, M, N}, a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>().data();
        const T* pb = b.data<T>().data();
        T* po = out.mutable_data<T>().data();
        parallel_for(static_cast<int64_t>(B) * M, 4, [&](int64_t r0, int64_t r1) {
            for (int64_t r = r0; r < r1; ++r) {
                int64_t bi = r / M, i = r % M;
                const T* arow = pa + (bi * M + i) * K;
                const T* bmat = pb + bi * K * N;
                T* crow = po + (bi * M + i) * N;
                for (int j = 0; j < N; ++j) crow[j] = T(0);
                for (int k = 0; k < K; ++k) {
                    T aik = arow[k];
                    const T* brow = bmat + static_cast<int64_t>(k) * N;
                    for (int j = 0; j < N; ++j) crow[j] += aik * brow[j];
                }
            }
        });
    });
    return detail::finalize_op("bmm", out, {a, b}, [a, b, out, B, M, K, N] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* go = grad_view<T>(out).data();
            if (a.requires_grad()) {
                T* ga = grad_acc<T>(a).data();
                const T* pb = b.data<T>().data();
                for (int bi = 0; bi < B; ++bi)
                    mm_kernel(go + static_cast<int64_t>(bi) * M * N,
                              pb + static_cast<int64_t>(bi) * K * N,
                              ga + static_cast<int64_t>(bi) * M * K, M, N, K, false, true, true);
            }
            if (b.requires_grad()) {
                T* gb = grad_acc<T>(b).data();
                const T* pa = a.data<T>().data();
                for (int bi = 0; bi < B; ++bi)
                    mm_kernel(pa + static_cast<int64_t>(bi) * M * K,
                              go + static_cast<int64_t>(bi) * M * N,
                              gb + static_cast<int64_t>(bi) * K * N, K, M, N, true, false, true);
            }
        });
    });
}

Tensor bias_add_row(const Tensor& x, const Tensor& bias) {
    detail::check_same_dtype(x, bias, "bias_add_row");
    if (x.ndim() != 2 || bias.ndim() != 1 || x.dim(1) != bias.dim(0))
        throw ShapeError("bias_add_row: shapes " + shape_str(x.shape()) + " + " +
                         shape_str(bias.shape()));
    const int M = x.dim(0), C = x.dim(1);
    Tensor out = Tensor::zeros({M, C}, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto px = x.data<T>();
        auto pb = bias.data<T>();
        auto po = out.mutable_data<T>();
        parallel_for(M, 16, [&](int64_t r0, int64_t r1) {
            for (int64_t i = r0; i < r1; ++i)
                for (int j = 0; j < C; ++j) po[i * C + j] = px[i * C + j] + pb[j];
        });
    });
    return detail::finalize_op("bias_add_row", out, {x, bias}, [x, bias, out, M, C] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = grad_view<T>(out);
            if (x.requires_grad()) {
                auto gx = grad_acc<T>(x);
                for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
            }
            if (bias.requires_grad()) {
                auto gb = grad_acc<T>(bias);
                for (int j = 0; j < C; ++j) {
                    T acc = T(0);
                    for (int i = 0; i < M; ++i) acc += go[static_cast<size_t>(i) * C + j];
                    gb[j] += acc;
                }
            }
        });
    });
}

// ---- conv2d ------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad, int groups) {
    detail::check_same_dtype(x, w, "conv2d");
    detail::check_same_dtype(x, b, "conv2d");
    if (x.ndim() != 4 || w.ndim() != 4 || b.ndim() != 1)
        throw ShapeError("conv2d: expected 4d input/weight and 1d bias, got " +
                         shape_str(x.shape()) + ", " + shape_str(w.shape()) + ", " +
                         shape_str(b.shape()));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int O = w.dim(0), Cg = w.dim(1), KH = w.dim(2), KW = w.dim(3);
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (groups < 1 || C % groups != 0 || O % groups != 0)
        throw ConfigError("conv2d: channels " + std::to_string(C) + "/" + std::to_string(O) +
                          " not divisible by groups " + std::to_string(groups));
    if (Cg != C / groups)
        throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " does not match input " +
                         shape_str(x.shape()) + " with groups " + std::to_string(groups));
    if (b.dim(0) != O) throw ShapeError("conv2d: bias size != output channels");
    if (H + 2 * pad < KH || W + 2 * pad < KW)
        throw ConfigError("conv2d: input " + shape_str(x.shape()) + " smaller than kernel " +
                          shape_str(w.shape()) + " with pad " + std::to_string(pad));
    const int OH = (H + 2 * pad - KH) / stride + 1;
    const int OW = (W + 2 * pad - KW) / stride + 1;
    const int Og = O / groups;

    Tensor out = Tensor::zeros({N, O, OH, OW}, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>().data();
        const T* pw = w.data<T>().data();
        const T* pb = b.data<T>().data();
        T* po = out.mutable_data<T>().data();
        parallel_for(static_cast<int64_t>(N) * O, 1, [&](int64_t r0, int64_t r1) {
            for (int64_t r = r0; r < r1; ++r) {
                const int n = static_cast<int>(r / O), o = static_cast<int>(r % O);
                const int g = o / Og;
                const int cbase = g * Cg;
                T* oplane = po + (r * OH) * OW;
                const T* wbase = pw + static_cast<int64_t>(o) * Cg * KH * KW;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih0 = oh * stride - pad;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw0 = ow * stride - pad;
                        T acc = pb[o];
                        for (int ci = 0; ci < Cg; ++ci) {
                            const T* xplane =
                                px + ((static_cast<int64_t>(n) * C + cbase + ci) * H) * W;
                            const T* wrow = wbase + (static_cast<int64_t>(ci) * KH) * KW;
                            for (int ki = 0; ki < KH; ++ki) {
                                const int ih = ih0 + ki;
                                if (ih < 0 || ih >= H) continue;
                                const int kj_lo = std::max(0, -iw0);
                                const int kj_hi = std::min(KW, W - iw0);
                                const T* xrow = xplane + static_cast<int64_t>(ih) * W + iw0;
                                const T* wk = wrow + static_cast<int64_t>(ki) * KW;
                                for (int kj = kj_lo; kj < kj_hi; ++kj) acc += xrow[kj] * wk[kj];
                            }
                        }
                        oplane[static_cast<int64_t>(oh) * OW + ow] = acc;
                    }
                }
            }
        });
    });

    auto backward = [x, w, b, out, N, C, H, W, O, Cg, KH, KW, OH, OW, Og, stride, pad, groups] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* go = grad_view<T>(out).data();
            const T* px = x.data<T>().data();
            const T* pw = w.data<T>().data();
            if (b.requires_grad()) {
                T* gb = grad_acc<T>(b).data();
                for (int o = 0; o < O; ++o) {
                    T acc = T(0);
                    for (int n = 0; n < N; ++n) {
                        const T* plane = go + ((static_cast<int64_t>(n) * O + o) * OH) * OW;
                        for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) acc += plane[i];
                    }
                    gb[o] += acc;
                }
            }
            if (w.requires_grad()) {
                T* gw = grad_acc<T>(w).data();
                parallel_for(O, 1, [&](int64_t o0, int64_t o1) {
                    for (int64_t o = o0; o < o1; ++o) {
                        const int g = static_cast<int>(o) / Og;
                        const int cbase = g * Cg;
                        T* gwbase = gw + (o * Cg) * KH * KW;
                        for (int n = 0; n < N; ++n) {
                            const T* gplane = go + ((static_cast<int64_t>(n) * O + o) * OH) * OW;
                            for (int oh = 0; oh < OH; ++oh) {
                                const int ih0 = oh * stride - pad;
                                for (int ow = 0; ow < OW; ++ow) {
                                    const T gv = gplane[static_cast<int64_t>(oh) * OW + ow];
                                    if (gv == T(0)) continue;
                                    const int iw0 = ow * stride - pad;
                                    for (int ci = 0; ci < Cg; ++ci) {
                                        const T* xplane =
                                            px +
                                            ((static_cast<int64_t>(n) * C + cbase + ci) * H) * W;
                                        for (int ki = 0; ki < KH; ++ki) {
                                            const int ih = ih0 + ki;
                                            if (ih < 0 || ih >= H) continue;
                                            const int kj_lo = std::max(0, -iw0);
                                            const int kj_hi = std::min(KW, W - iw0);
                                            const T* xrow =
                                                xplane + static_cast<int64_t>(ih) * W + iw0;
                                            T* gwrow =
                                                gwbase + (static_cast<int64_t>(ci) * KH + ki) * KW;
                                            for (int kj = kj_lo; kj < kj_hi; ++kj)
                                                gwrow[kj] += gv * xrow[kj];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            if (x.requires_grad()) {
                T* gx = grad_acc<T>(x).data();
                parallel_for(static_cast<int64_t>(N) * C, 1, [&](int64_t r0, int64_t r1) {
                    for (int64_t r = r0; r < r1; ++r) {
                        const int n = static_cast<int>(r / C), c = static_cast<int>(r % C);
                        const int g = c / Cg;
                        const int ci = c % Cg;
                        const int obase = g * Og;
                        T* gxplane = gx + (r * H) * W;
                        for (int ih = 0; ih < H; ++ih) {
                            for (int iw = 0; iw < W; ++iw) {
                                T acc = T(0);
                                for (int ki = 0; ki < KH; ++ki) {
                                    const int num_h = ih + pad - ki;
                                    if (num_h < 0 || num_h % stride != 0) continue;
                                    const int oh = num_h / stride;
                                    if (oh >= OH) continue;
                                    for (int kj = 0; kj < KW; ++kj) {
                                        const int num_w = iw + pad - kj;
                                        if (num_w < 0 || num_w % stride != 0) continue;
                                        const int ow = num_w / stride;
                                        if (ow >= OW) continue;
                                        for (int oo = 0; oo < Og; ++oo) {
                                            const int o = obase + oo;
                                            acc += go[((static_cast<int64_t>(n) * O + o) * OH +
                                                       oh) *
                                                          OW +
                                                      ow] *
                                                   pw[((static_cast<int64_t>(o) * Cg + ci) * KH +
                                                       ki) *
                                                          KW +
                                                      kj];
                                        }
                                    }
                                }
                                gxplane[static_cast<int64_t>(ih) * W + iw] += acc;
                            }
                        }
                    }
                });
            }
        });
    };
    return detail::finalize_op("conv2d", out, {x, w, b}, backward);
}

// ---- activations ---------------------------------------------------------------

Tensor relu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto px = x.data<T>();
        auto po = out.mutable_data<T>();
        parallel_for(x.numel(), kElemGrain, [&](int64_t i0, int64_t i1) {
            for (int64_t i = i0; i < i1; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
        });
    });
    return detail::finalize_op("relu", out, {x}, [x, out] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = grad_view<T>(out);
            auto px = x.data<T>();
            auto gx = grad_acc<T>(x);
            for (size_t i = 0; i < go.size(); ++i)
                if (px[i] > T(0)) gx[i] += go[i];
        });
    });
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto px = x.data<T>();
        auto po = out.mutable_data<T>();
        parallel_for(x.numel(), kElemGrain, [&](int64_t i0, int64_t i1) {
            for (int64_t i = i0; i < i1; ++i) {
                double v = static_cast<double>(px[i]);
                po[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
            }
        });
    });
    return detail::finalize_op("gelu", out, {x}, [x, out] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = grad_view<T>(out);
            auto px = x.data<T>();
            auto gx = grad_acc<T>(x);
            for (size_t i = 0; i < go.size(); ++i) {
                double v = static_cast<double>(px[i]);
                double d = 0.5 * (1.0 + std::erf(v * kInvSqrt2)) +
                           v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
                gx[i] += go[i] * static_cast<T>(d);
            }
        });
    });
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto px = x.data<T>();
        auto po = out.mutable_data<T>();
        parallel_for(x.numel(), kElemGrain, [&](int64_t i0, int64_t i1) {
            for (int64_t i = i0; i < i1; ++i) {
                double v = static_cast<double>(px[i]);
                po[i] = static_cast<T>(1.0 / (1.0 + std::exp(-v)));
            }
        });
    });
    return detail::finalize_op("sigmoid", out, {x}, [x, out] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = grad_view<T>(out);
            auto ps = out.data<T>();
            auto gx = grad_acc<T>(x);
            for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * ps[i] * (T(1) - ps[i]);
        });
    });
}

// ---- softmax / layer norm -------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.ndim())
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    int64_t outer = 1, inner = 1;
    const int len = x.dim(axis);
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>().data();
        T* po = out.mutable_data<T>().data();
        parallel_for(outer * inner, 64, [&](int64_t s0, int64_t s1) {
            for (int64_t s = s0; s < s1; ++s) {
                const int64_t base = (s / inner) * len * inner + (s % inner);
                T mx = px[base];
                for (int k = 1; k < len; ++k) mx = std::max(mx, px[base + k * inner]);
                T denom = T(0);
                for (int k = 0; k < len; ++k) {
                    T e = static_cast<T>(std::exp(static_cast<double>(px[base + k * inner] - mx)));
                    po[base + k * inner] = e;
                    denom += e;
                }
                for (int k = 0; k < len; ++k) po[base + k * inner] /= denom;
            }
        });
    });
    return detail::finalize_op("softmax", out, {x}, [x, out, outer, inner, len] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* go = grad_view<T>(out).data();
            const T* py = out.data<T>().data();
            T* gx = grad_acc<T>(x).data();
            parallel_for(outer * inner, 64, [&](int64_t s0, int64_t s1) {
                for (int64_t s = s0; s < s1; ++s) {
                    const int64_t base = (s / inner) * len * inner + (s % inner);
                    T dot = T(0);
                    for (int k = 0; k < len; ++k)
                        dot += go[base + k * inner] * py[base + k * inner];
                    for (int k = 0; k < len; ++k)
                        gx[base + k * inner] +=
                            py[base + k * inner] * (go[base + k * inner] - dot);
                }
            });
        });
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    detail::check_same_dtype(x, gamma, "layer_norm");
    detail::check_same_dtype(x, beta, "layer_norm");
    if (eps <= 0) throw ConfigError("layer_norm: eps must be positive");
    const int C = x.dim(x.ndim() - 1);
    if (gamma.ndim() != 1 || beta.ndim() != 1 || gamma.dim(0) != C || beta.dim(0) != C)
        throw ShapeError("layer_norm: scale/shift " + shape_str(gamma.shape()) +
                         " do not match channels of " + shape_str(x.shape()));
    const int64_t rows = x.numel() / C;
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>().data();
        const T* pg = gamma.data<T>().data();
        const T* pb = beta.data<T>().data();
        T* po = out.mutable_data<T>().data();
        parallel_for(rows, 16, [&](int64_t r0, int64_t r1) {
            for (int64_t r = r0; r < r1; ++r) {
                const T* row = px + r * C;
                T* orow = po + r * C;
                T mean = T(0);
                for (int j = 0; j < C; ++j) mean += row[j];
                mean /= static_cast<T>(C);
                T var = T(0);
                for (int j = 0; j < C; ++j) {
                    T d = row[j] - mean;
                    var += d * d;
                }
                var /= static_cast<T>(C);
                T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + eps));
                for (int j = 0; j < C; ++j) orow[j] = (row[j] - mean) * inv * pg[j] + pb[j];
            }
        });
    });
    return detail::finalize_op("layer_norm", out, {x, gamma, beta}, [x, gamma, beta, out, eps, C,
                                                                     rows] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* go = grad_view<T>(out).data();
            const T* px = x.data<T>().data();
            const T* pg = gamma.data<T>().data();
            if (x.requires_grad()) {
                T* gx = grad_acc<T>(x).data();
                parallel_for(rows, 16, [&](int64_t r0, int64_t r1) {
                    for (int64_t r = r0; r < r1; ++r) {
                        const T* row = px + r * C;
                        const T* grow = go + r * C;
                        T mean = T(0);
                        for (int j = 0; j < C; ++j) mean += row[j];
                        mean /= static_cast<T>(C);
                        T var = T(0);
                        for (int j = 0; j < C; ++j) {
                            T d = row[j] - mean;
                            var += d * d;
                        }
                        var /= static_cast<T>(C);
                        T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + eps));
                        T gmean = T(0), gxhat = T(0);
                        for (int j = 0; j < C; ++j) {
                            T g = grow[j] * pg[j];
                            gmean += g;
                            gxhat += g * (row[j] - mean) * inv;
                        }
                        gmean /= static_cast<T>(C);
                        gxhat /= static_cast<T>(C);
                        for (int j = 0; j < C; ++j) {
                            T g = grow[j] * pg[j];
                            T xhat = (row[j] - mean) * inv;
                            gx[r * C + j] += inv * (g - gmean - xhat * gxhat);
                        }
                    }
                });
            }
            if (gamma.requires_grad() || beta.requires_grad()) {
                T* gg = gamma.requires_grad() ? grad_acc<T>(gamma).data() : nullptr;
                T* gb = beta.requires_grad() ? grad_acc<T>(beta).data() : nullptr;
                for (int64_t r = 0; r < rows; ++r) {
                    const T* row = px + r * C;
                    const T* grow = go + r * C;
                    T mean = T(0);
                    for (int j = 0; j < C; ++j) mean += row[j];
                    mean /= static_cast<T>(C);
                    T var = T(0);
                    for (int j = 0; j < C; ++j) {
                        T d = row[j] - mean;
                        var += d * d;
                    }
                    var /= static_cast<T>(C);
                    T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + eps));
                    for (int j = 0; j < C; ++j) {
                        if (gg) gg[j] += grow[j] * (row[j] - mean) * inv;
                        if (gb) gb[j] += grow[j];
                    }
                }
            }
        });
    });
}

// ---- resize / pooling ------------------------------------------------------------

Tensor bilinear_upsample(const Tensor& x, int out_h, int out_w) {
    if (x.ndim() != 4) throw ShapeError("bilinear_upsample: expected NCHW, got " + shape_str(x.shape()));
    if (out_h <= 0 || out_w <= 0) throw ConfigError("bilinear_upsample: target dims must be positive");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (out_h < H || out_w < W)
        throw ConfigError("bilinear_upsample: target " + std::to_string(out_h) + "x" +
                          std::to_string(out_w) + " smaller than input " + shape_str(x.shape()));
    // Precomputed per-axis source indices and weights (align-corners-false).
    std::vector<int> y0(out_h), y1(out_h), x0(out_w), x1(out_w);
    std::vector<double> fy(out_h), fx(out_w);
    auto fill_axis = [](int in_sz, int out_sz, std::vector<int>& i0, std::vector<int>& i1,
                        std::vector<double>& f) {
        for (int o = 0; o < out_sz; ++o) {
            double c = (o + 0.5) * (static_cast<double>(in_sz) / out_sz) - 0.5;
            if (c < 0) c = 0;
            int lo = static_cast<int>(c);
            if (lo > in_sz - 1) lo = in_sz - 1;
            i0[o] = lo;
            i1[o] = std::min(lo + 1, in_sz - 1);
            f[o] = c - lo;
        }
    };
    fill_axis(H, out_h, y0, y1, fy);
    fill_axis(W, out_w, x0, x1, fx);

    Tensor out = Tensor::zeros({N, C, out_h, out_w}, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>().data();
        T* po = out.mutable_data<T>().data();
        parallel_for(static_cast<int64_t>(N) * C, 1, [&](int64_t p0, int64_t p1) {
            for (int64_t p = p0; p < p1; ++p) {
                const T* plane = px + (p * H) * W;
                T* oplane = po + (p * out_h) * out_w;
                for (int oy = 0; oy < out_h; ++oy) {
                    const T* top = plane + static_cast<int64_t>(y0[oy]) * W;
                    const T* bot = plane + static_cast<int64_t>(y1[oy]) * W;
                    const T wy = static_cast<T>(fy[oy]);
                    for (int ox = 0; ox < out_w; ++ox) {
                        const T wx = static_cast<T>(fx[ox]);
                        T t = top[x0[ox]] * (T(1) - wx) + top[x1[ox]] * wx;
                        T u = bot[x0[ox]] * (T(1) - wx) + bot[x1[ox]] * wx;
                        oplane[static_cast<int64_t>(oy) * out_w + ox] = t * (T(1) - wy) + u * wy;
                    }
                }
            }
        });
    });
    return detail::finalize_op(
        "bilinear_upsample", out, {x},
        [x, out, N, C, H, W, out_h, out_w, y0, y1, x0, x1, fy, fx] {
            dispatch(out.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* go = grad_view<T>(out).data();
                T* gx = grad_acc<T>(x).data();
                parallel_for(static_cast<int64_t>(N) * C, 1, [&](int64_t p0, int64_t p1) {
                    for (int64_t p = p0; p < p1; ++p) {
                        const T* gplane = go + (p * out_h) * out_w;
                        T* xplane = gx + (p * H) * W;
                        for (int oy = 0; oy < out_h; ++oy) {
                            const T wy = static_cast<T>(fy[oy]);
                            for (int ox = 0; ox < out_w; ++ox) {
                                const T wx = static_cast<T>(fx[ox]);
                                const T g = gplane[static_cast<int64_t>(oy) * out_w + ox];
                                xplane[static_cast<int64_t>(y0[oy]) * W + x0[ox]] +=
                                    g * (T(1) - wy) * (T(1) - wx);
                                xplane[static_cast<int64_t>(y0[oy]) * W + x1[ox]] +=
                                    g * (T(1) - wy) * wx;
                                xplane[static_cast<int64_t>(y1[oy]) * W + x0[ox]] +=
                                    g * wy * (T(1) - wx);
                                xplane[static_cast<int64_t>(y1[oy]) * W + x1[ox]] += g * wy * wx;
                            }
                        }
                    }
                });
            });
        });
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.ndim() != 4) throw ShapeError("global_avg_pool: expected NCHW, got " + shape_str(x.shape()));
    const int N = x.dim(0), C = x.dim(1);
    const int64_t HW = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    Tensor out = Tensor::zeros({N, C}, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>().data();
        T* po = out.mutable_data<T>().data();
        parallel_for(static_cast<int64_t>(N) * C, 4, [&](int64_t p0, int64_t p1) {
            for (int64_t p = p0; p < p1; ++p) {
                const T* plane = px + p * HW;
                T acc = T(0);
                for (int64_t i = 0; i < HW; ++i) acc += plane[i];
                po[p] = acc / static_cast<T>(HW);
            }
        });
    });
    return detail::finalize_op("global_avg_pool", out, {x}, [x, out, HW] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = grad_view<T>(out);
            T* gx = grad_acc<T>(x).data();
            for (size_t p = 0; p < go.size(); ++p) {
                const T g = go[p] / static_cast<T>(HW);
                T* plane = gx + static_cast<int64_t>(p) * HW;
                for (int64_t i = 0; i < HW; ++i) plane[i] += g;
            }
        });
    });
}

Tensor global_max_pool(const Tensor& x) {
    if (x.ndim() != 4) throw ShapeError("global_max_pool: expected NCHW, got " + shape_str(x.shape()));
    const int N = x.dim(0), C = x.dim(1);
    const int64_t HW = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    Tensor out = Tensor::zeros({N, C}, x.dtype());
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(N) * C);
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>().data();
        T* po = out.mutable_data<T>().data();
        parallel_for(static_cast<int64_t>(N) * C, 4, [&](int64_t p0, int64_t p1) {
            for (int64_t p = p0; p < p1; ++p) {
                const T* plane = px + p * HW;
                T best = plane[0];
                int64_t bi = 0;
                for (int64_t i = 1; i < HW; ++i)
                    if (plane[i] > best) {  // first occurrence wins on ties
                        best = plane[i];
                        bi = i;
                    }
                po[p] = best;
                (*argmax)[static_cast<size_t>(p)] = bi;
            }
        });
    });
    return detail::finalize_op("global_max_pool", out, {x}, [x, out, argmax, HW] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = grad_view<T>(out);
            T* gx = grad_acc<T>(x).data();
            for (size_t p = 0; p < go.size(); ++p)
                gx[static_cast<int64_t>(p) * HW + (*argmax)[p]] += go[p];
        });
    });
}

Tensor mul_channel_gate(const Tensor& x, const Tensor& g) {
    detail::check_same_dtype(x, g, "mul_channel_gate");
    if (x.ndim() != 4 || g.ndim() != 2 || g.dim(0) != x.dim(0) || g.dim(1) != x.dim(1))
        throw ShapeError("mul_channel_gate: gate " + shape_str(g.shape()) + " does not match " +
                         shape_str(x.shape()));
    const int64_t HW = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    const int64_t NC = static_cast<int64_t>(x.dim(0)) * x.dim(1);
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>().data();
        const T* pg = g.data<T>().data();
        T* po = out.mutable_data<T>().data();
        parallel_for(NC, 4, [&](int64_t p0, int64_t p1) {
            for (int64_t p = p0; p < p1; ++p) {
                const T gv = pg[p];
                const T* plane = px + p * HW;
                T* oplane = po + p * HW;
                for (int64_t i = 0; i < HW; ++i) oplane[i] = plane[i] * gv;
            }
        });
    });
    return detail::finalize_op("mul_channel_gate", out, {x, g}, [x, g, out, NC, HW] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* go = grad_view<T>(out).data();
            const T* px = x.data<T>().data();
            const T* pg = g.data<T>().data();
            if (x.requires_grad()) {
                T* gx = grad_acc<T>(x).data();
                for (int64_t p = 0; p < NC; ++p) {
                    const T gv = pg[p];
                    for (int64_t i = 0; i < HW; ++i) gx[p * HW + i] += go[p * HW + i] * gv;
                }
            }
            if (g.requires_grad()) {
                T* gg = grad_acc<T>(g).data();
                for (int64_t p = 0; p < NC; ++p) {
                    T acc = T(0);
                    for (int64_t i = 0; i < HW; ++i) acc += go[p * HW + i] * px[p * HW + i];
                    gg[p] += acc;
                }
            }
        });
    });
}

// ---- layout ops -------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
    if (numel_of(new_shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(new_shape);
    impl->data = x.impl()->data;  // shared storage, no copy
    Tensor out = Tensor::wrap(std::move(impl));
    return detail::finalize_op("reshape", out, {x}, [x, out] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = grad_view<T>(out);
            auto gx = grad_acc<T>(x);
            for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
        });
    });
}

namespace {

std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

// dst[i] = src[map(i)] where map applies the permutation; accumulate adds.
template <class T>
void permute_kernel(const T* src, T* dst, const Shape& out_shape,
                    const std::vector<int64_t>& src_stride_for_out_axis, bool accumulate) {
    const int nd = static_cast<int>(out_shape.size());
    const int64_t n = numel_of(out_shape);
    std::vector<int64_t> out_strides = strides_of(out_shape);
    parallel_for(n, 4096, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            int64_t rem = i, src_idx = 0;
            for (int d = 0; d < nd; ++d) {
                int64_t coord = rem / out_strides[d];
                rem -= coord * out_strides[d];
                src_idx += coord * src_stride_for_out_axis[d];
            }
            if (accumulate)
                dst[i] += src[src_idx];
            else
                dst[i] = src[src_idx];
        }
    });
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
    if (static_cast<int>(perm.size()) != x.ndim())
        throw ShapeError("permute: got " + std::to_string(perm.size()) + " axes for " +
                         shape_str(x.shape()));
    Shape out_shape(perm.size());
    auto in_strides = strides_of(x.shape());
    std::vector<int64_t> gather(perm.size());
    std::vector<bool> seen(perm.size(), false);
    for (size_t d = 0; d < perm.size(); ++d) {
        int p = perm[d];
        if (p < 0 || p >= x.ndim() || seen[static_cast<size_t>(p)])
            throw ShapeError("permute: invalid permutation");
        seen[static_cast<size_t>(p)] = true;
        out_shape[d] = x.dim(p);
        gather[d] = in_strides[static_cast<size_t>(p)];
    }
    Tensor out = Tensor::zeros(out_shape, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        permute_kernel(x.data<T>().data(), out.mutable_data<T>().data(), out_shape, gather, false);
    });
    return detail::finalize_op("permute", out, {x}, [x, out, perm] {
        // inverse permutation routes the gradient back
        std::vector<int> inv(perm.size());
        for (size_t d = 0; d < perm.size(); ++d) inv[static_cast<size_t>(perm[d])] = static_cast<int>(d);
        auto out_strides = strides_of(out.shape());
        std::vector<int64_t> gather(perm.size());
        for (size_t d = 0; d < perm.size(); ++d)
            gather[d] = out_strides[static_cast<size_t>(inv[d])];
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            permute_kernel(grad_view<T>(out).data(), grad_acc<T>(x).data(), x.shape(), gather,
                           true);
        });
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Tensor& first = parts[0];
    if (axis < 0 || axis >= first.ndim()) throw ShapeError("concat: bad axis");
    int total = 0;
    for (const Tensor& p : parts) {
        detail::check_same_dtype(first, p, "concat");
        if (p.ndim() != first.ndim()) throw ShapeError("concat: rank mismatch");
        for (int d = 0; d < p.ndim(); ++d)
            if (d != axis && p.dim(d) != first.dim(d))
                throw ShapeError("concat: shape mismatch " + shape_str(first.shape()) + " vs " +
                                 shape_str(p.shape()));
        total += p.dim(axis);
    }
    Shape out_shape = first.shape();
    out_shape[static_cast<size_t>(axis)] = total;
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= first.dim(d);
    for (int d = axis + 1; d < first.ndim(); ++d) inner *= first.dim(d);

    Tensor out = Tensor::zeros(out_shape, first.dtype());
    dispatch(first.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* po = out.mutable_data<T>().data();
        int64_t offset = 0;
        for (const Tensor& p : parts) {
            const T* pp = p.data<T>().data();
            const int64_t blk = static_cast<int64_t>(p.dim(axis)) * inner;
            const int64_t orow = static_cast<int64_t>(total) * inner;
            parallel_for(outer, 16, [&](int64_t r0, int64_t r1) {
                for (int64_t r = r0; r < r1; ++r)
                    std::copy(pp + r * blk, pp + (r + 1) * blk, po + r * orow + offset);
            });
            offset += blk;
        }
    });
    std::vector<Tensor> inputs = parts;
    return detail::finalize_op("concat", out, inputs, [inputs, out, axis, outer, inner, total] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* go = grad_view<T>(out).data();
            const int64_t orow = static_cast<int64_t>(total) * inner;
            int64_t offset = 0;
            for (const Tensor& p : inputs) {
                const int64_t blk = static_cast<int64_t>(p.dim(axis)) * inner;
                if (p.requires_grad()) {
                    T* gp = grad_acc<T>(p).data();
                    for (int64_t r = 0; r < outer; ++r)
                        for (int64_t i = 0; i < blk; ++i) gp[r * blk + i] += go[r * orow + offset + i];
                }
                offset += blk;
            }
        });
    });
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
    if (axis < 0 || axis >= x.ndim()) throw ShapeError("slice: bad axis");
    if (start < 0 || len <= 0 || start + len > x.dim(axis))
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for " +
                         shape_str(x.shape()));
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= x.dim(d);
    for (int d = axis + 1; d < x.ndim(); ++d) inner *= x.dim(d);
    const int64_t xrow = static_cast<int64_t>(x.dim(axis)) * inner;
    const int64_t orow = static_cast<int64_t>(len) * inner;
    const int64_t off = static_cast<int64_t>(start) * inner;

    Tensor out = Tensor::zeros(out_shape, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>().data();
        T* po = out.mutable_data<T>().data();
        parallel_for(outer, 16, [&](int64_t r0, int64_t r1) {
            for (int64_t r = r0; r < r1; ++r)
                std::copy(px + r * xrow + off, px + r * xrow + off + orow, po + r * orow);
        });
    });
    return detail::finalize_op("slice", out, {x}, [x, out, outer, xrow, orow, off] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* go = grad_view<T>(out).data();
            T* gx = grad_acc<T>(x).data();
            for (int64_t r = 0; r < outer; ++r)
                for (int64_t i = 0; i < orow; ++i) gx[r * xrow + off + i] += go[r * orow + i];
        });
    });
}

// ---- reductions -------------------------------------------------------------------

namespace {
constexpr int64_t kReduceBlock = 4096;

// Fixed-size blocked reduction: per-block partial sums in ascending order, then
// a serial combine in block order, so totals do not depend on the worker count.
template <class T> T blocked_sum(const T* p, int64_t n) {
    const int64_t blocks = (n + kReduceBlock - 1) / kReduceBlock;
    std::vector<T> partial(static_cast<size_t>(blocks));
    parallel_for(blocks, 1, [&](int64_t b0, int64_t b1) {
        for (int64_t b = b0; b < b1; ++b) {
            const int64_t lo = b * kReduceBlock, hi = std::min(n, lo + kReduceBlock);
            T acc = T(0);
            for (int64_t i = lo; i < hi; ++i) acc += p[i];
            partial[static_cast<size_t>(b)] = acc;
        }
    });
    T total = T(0);
    for (T v : partial) total += v;
    return total;
}
}  // namespace

Tensor sum_all(const Tensor& x) {
    Tensor out = Tensor::zeros({}, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        out.mutable_data<T>()[0] = blocked_sum(x.data<T>().data(), x.numel());
    });
    return detail::finalize_op("sum", out, {x}, [x, out] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T g = grad_view<T>(out)[0];
            auto gx = grad_acc<T>(x);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    });
}

Tensor mean_all(const Tensor& x) {
    Tensor out = Tensor::zeros({}, x.dtype());
    const int64_t n = x.numel();
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        out.mutable_data<T>()[0] = blocked_sum(x.data<T>().data(), n) / static_cast<T>(n);
    });
    return detail::finalize_op("mean", out, {x}, [x, out, n] {
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T g = grad_view<T>(out)[0] / static_cast<T>(n);
            auto gx = grad_acc<T>(x);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    });
}

}  // namespace damformer
