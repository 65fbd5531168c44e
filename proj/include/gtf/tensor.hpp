#pragma once

// Minimal reverse-mode autodiff tensor. Dense row-major storage, runtime
// dtype (f32 for training, f64 for gradient checking), dynamic graph built
// by the ops layer. Backward closures receive the output node by reference,
// so nodes never hold an owning pointer to themselves and graphs free
// naturally once the loss tensor goes out of scope.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <type_traits>
#include <vector>

#include "gtf/rng.hpp"

namespace gtf {

using i64 = std::int64_t;
using Shape = std::vector<i64>;

enum class DType : std::uint8_t { f32, f64 };

const char* dtype_name(DType dt);
DType default_dtype();
void set_default_dtype(DType dt);

// Dispatch a generic lambda on a runtime dtype:
//   with_dtype(dt, [&](auto tag) { using T = typename decltype(tag)::type; ... });
template <class F>
decltype(auto) with_dtype(DType dt, F&& f) {
    if (dt == DType::f64) return f(std::type_identity<double>{});
    return f(std::type_identity<float>{});
}

bool grad_enabled();

// RAII switch that disables graph construction (eval / inference paths).
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

class Tensor;

struct TensorImpl {
    Shape shape;
    DType dtype = DType::f32;
    bool requires_grad = false;
    std::vector<float> vf, gf;
    std::vector<double> vd, gd;
    std::vector<Tensor> parents;
    std::function<void(TensorImpl&)> backward_fn;

    i64 numel() const;
    void ensure_grad();
    bool has_grad() const { return !gf.empty() || !gd.empty(); }

    template <class T> T* val() {
        if constexpr (std::is_same_v<T, float>) return vf.data();
        else return vd.data();
    }
    template <class T> const T* val() const {
        if constexpr (std::is_same_v<T, float>) return vf.data();
        else return vd.data();
    }
    template <class T> T* grd() {
        if constexpr (std::is_same_v<T, float>) return gf.data();
        else return gd.data();
    }
    template <class T> const T* grd() const {
        if constexpr (std::is_same_v<T, float>) return gf.data();
        else return gd.data();
    }
};

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, DType dt, bool requires_grad = false);
    static Tensor zeros(Shape shape) { return zeros(std::move(shape), default_dtype()); }
    static Tensor full(Shape shape, double value, DType dt);
    static Tensor full(Shape shape, double value) { return full(std::move(shape), value, default_dtype()); }
    static Tensor from_double(Shape shape, const std::vector<double>& v, DType dt);
    static Tensor from_double(Shape shape, const std::vector<double>& v) {
        return from_double(std::move(shape), v, default_dtype());
    }
    // N(0, std^2) i.i.d. entries drawn from `rng`.
    static Tensor randn(Shape shape, RngState& rng, double stddev, DType dt);
    static Tensor randn(Shape shape, RngState& rng, double stddev) {
        return randn(std::move(shape), rng, stddev, default_dtype());
    }
    static Tensor uniform(Shape shape, RngState& rng, double lo, double hi, DType dt);
    static Tensor uniform(Shape shape, RngState& rng, double lo, double hi) {
        return uniform(std::move(shape), rng, lo, hi, default_dtype());
    }

    bool defined() const { return impl_ != nullptr; }
    TensorImpl* impl() const { return impl_.get(); }

    const Shape& shape() const { return impl_->shape; }
    i64 dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    i64 numel() const { return impl_->numel(); }
    DType dtype() const { return impl_->dtype; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rq);

    // The handle is value-semantic (shared storage); const-ness of the handle
    // does not imply const-ness of the buffers, mirroring shared_ptr.
    template <class T> T* data() const { return impl_->val<T>(); }
    template <class T> T* grad_data() const { return impl_->grd<T>(); }

    // Generic (converting) accessors for IO, tests, metrics.
    double at(i64 idx) const;
    void set(i64 idx, double v);
    std::vector<double> to_double() const;
    std::vector<double> grad_to_double() const;
    void copy_from_double(const std::vector<double>& v);
    void fill(double v);
    double item() const;  // scalar tensors only

    bool has_grad() const { return impl_->has_grad(); }
    void zero_grad() const; // grad storage is shared state, like data()
    bool all_finite() const;

    // Value copy with no graph attachment (stop-gradient).
    Tensor detach() const;
    // Same values in the other precision; detached.
    Tensor to(DType dt) const;

    // Reverse-mode sweep from a scalar. Frees the graph as it goes.
    void backward();

  private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    friend Tensor make_node(Shape shape, DType dt, std::vector<Tensor> parents,
                            std::function<void(TensorImpl&)> bw);
    std::shared_ptr<TensorImpl> impl_;
};

// Ops-layer factory: allocates the result, wires parents and the backward
// closure when gradients are enabled and some parent needs them.
Tensor make_node(Shape shape, DType dt, std::vector<Tensor> parents,
                 std::function<void(TensorImpl&)> bw);

i64 shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

} // namespace gtf
