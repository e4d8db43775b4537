#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "damformer/common.hpp"

namespace damformer {

// Two dtypes only: f32 for training, f64 for gradient-check mode. No mixed
// precision; ops require equal dtypes on all operands.
enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

inline size_t dtype_size(Dtype dt) { return dt == Dtype::f32 ? 4 : 8; }
inline const char* dtype_name(Dtype dt) { return dt == Dtype::f32 ? "f32" : "f64"; }

Dtype default_dtype();
void set_default_dtype(Dtype dt);

// Contiguous row-major element buffer of a single dtype.
class Storage {
  public:
    Storage(Dtype dt, int64_t n) : dtype_(dt), size_(n) {
        if (dt == Dtype::f32)
            f_.assign(static_cast<size_t>(n), 0.f);
        else
            d_.assign(static_cast<size_t>(n), 0.0);
    }
    Dtype dtype() const { return dtype_; }
    int64_t size() const { return size_; }
    template <class T> T* data();
    template <class T> const T* data() const;
    void fill_zero() {
        if (dtype_ == Dtype::f32)
            std::fill(f_.begin(), f_.end(), 0.f);
        else
            std::fill(d_.begin(), d_.end(), 0.0);
    }

  private:
    Dtype dtype_;
    int64_t size_;
    std::vector<float> f_;
    std::vector<double> d_;
};

template <> inline float* Storage::data<float>() { return f_.data(); }
template <> inline double* Storage::data<double>() { return d_.data(); }
template <> inline const float* Storage::data<float>() const { return f_.data(); }
template <> inline const double* Storage::data<double>() const { return d_.data(); }

struct TensorImpl {
    Shape shape;
    std::shared_ptr<Storage> data;
    std::shared_ptr<Storage> grad;  // lazily allocated, same shape/dtype as data
    bool requires_grad = false;
    bool leaf = true;
    std::string name;
};

// Value-semantics handle to a shared tensor. Immutable after creation except
// for the grad buffer; mutable_data is reserved for initialization, optimizer
// updates, and file loading.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, Dtype dt = default_dtype(), bool requires_grad = false);
    static Tensor full(Shape shape, double value, Dtype dt = default_dtype(),
                       bool requires_grad = false);
    static Tensor from_values(Shape shape, const std::vector<double>& values,
                              Dtype dt = default_dtype(), bool requires_grad = false);
    static Tensor scalar(double value, Dtype dt = default_dtype());

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    Dtype dtype() const { return impl_->data->dtype(); }
    int64_t numel() const { return impl_->data->size(); }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }
    bool is_leaf() const { return impl_->leaf; }

    template <class T> std::span<const T> data() const {
        return {impl_->data->data<T>(), static_cast<size_t>(numel())};
    }
    template <class T> std::span<T> mutable_data() {
        return {impl_->data->data<T>(), static_cast<size_t>(numel())};
    }

    double value_at(int64_t flat_index) const;
    void set_value_at(int64_t flat_index, double v) const;
    double item() const;  // scalar tensors only

    bool has_grad() const { return impl_->grad != nullptr; }
    Tensor grad() const;  // aliases the grad buffer; zeros when absent
    void zero_grad() const {
        if (impl_->grad) impl_->grad->fill_zero();
    }

    const std::string& name() const { return impl_->name; }
    void set_name(std::string n) { impl_->name = std::move(n); }

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

    static Tensor wrap(std::shared_ptr<TensorImpl> impl) {
        Tensor t;
        t.impl_ = std::move(impl);
        return t;
    }

  private:
    std::shared_ptr<TensorImpl> impl_;
};

// Ordered record of executed operations; entries are appended at execution
// time, so inputs always precede their consumers.
class GradTape {
  public:
    static GradTape& active();

    bool enabled() const { return enabled_; }
    void set_enabled(bool on) { enabled_ = on; }
    size_t size() const { return entries_.size(); }
    void reset() { entries_.clear(); }

    void record(const char* op, Tensor out, std::vector<Tensor> inputs,
                std::function<void()> backward);

    // Reverse sweep from a scalar root. Visits each contributing entry exactly
    // once, accumulating gradients additively into leaf tensors. Repeated
    // calls without zero_grad keep accumulating.
    void backward(const Tensor& root);

  private:
    struct Entry {
        const char* op;
        Tensor out;
        std::vector<Tensor> inputs;
        std::function<void()> fn;
    };
    bool enabled_ = true;
    std::vector<Entry> entries_;
};

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(GradTape::active().enabled()) { GradTape::active().set_enabled(false); }
    ~NoGradGuard() { GradTape::active().set_enabled(prev); }
};

// ---- ops -------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);                  // [M,K]x[K,N]
Tensor bmm(const Tensor& a, const Tensor& b);                     // [B,M,K]x[B,K,N]
Tensor bias_add_row(const Tensor& x, const Tensor& bias);         // [M,C]+[C]

// Cross-correlation with zero padding; output size floors per the standard
// formula. Supports grouped and depthwise cases.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad, int groups);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor bilinear_upsample(const Tensor& x, int out_h, int out_w);  // align-corners-false

Tensor global_avg_pool(const Tensor& x);                     // [N,C,H,W] -> [N,C]
Tensor global_max_pool(const Tensor& x);                     // [N,C,H,W] -> [N,C]
Tensor mul_channel_gate(const Tensor& x, const Tensor& g);   // [N,C,H,W] * [N,C]

Tensor reshape(const Tensor& x, Shape new_shape);  // shares storage
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);

Tensor sum_all(const Tensor& x);   // [] scalar
Tensor mean_all(const Tensor& x);  // [] scalar

namespace detail {

// Shared tail of every op: optional finite check, requires_grad propagation,
// and tape recording. Fused ops in other modules use it too.
Tensor finalize_op(const char* name, Tensor out, std::vector<Tensor> inputs,
                   std::function<void()> backward);

template <class F> void dispatch(Dtype dt, F&& f) {
    if (dt == Dtype::f32)
        f(float{});
    else
        f(double{});
}

// Grad buffer of t, allocated zero-filled on first use.
template <class T> std::span<T> grad_acc(const Tensor& t) {
    TensorImpl* im = t.impl();
    if (!im->grad) im->grad = std::make_shared<Storage>(im->data->dtype(), im->data->size());
    return {im->grad->data<T>(), static_cast<size_t>(im->data->size())};
}
template <class T> std::span<const T> grad_view(const Tensor& t) {
    return grad_acc<T>(t);
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op);

}  // namespace detail

}  // namespace damformer
