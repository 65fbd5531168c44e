#include "gtf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace gtf {

namespace {
DType g_default_dtype = DType::f32;
thread_local bool g_grad_enabled = true;
} // namespace

const char* dtype_name(DType dt) { return dt == DType::f64 ? "f64" : "f32"; }
DType default_dtype() { return g_default_dtype; }
void set_default_dtype(DType dt) { g_default_dtype = dt; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

i64 shape_numel(const Shape& s) {
    i64 n = 1;
    for (i64 d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

i64 TensorImpl::numel() const { return shape_numel(shape); }

void TensorImpl::ensure_grad() {
    const size_t n = static_cast<size_t>(numel());
    if (dtype == DType::f64) {
        if (gd.empty()) gd.assign(n, 0.0);
    } else {
        if (gf.empty()) gf.assign(n, 0.0f);
    }
}

namespace {
std::shared_ptr<TensorImpl> alloc_impl(Shape shape, DType dt) {
    auto impl = std::make_shared<TensorImpl>();
    impl->dtype = dt;
    impl->shape = std::move(shape);
    const size_t n = static_cast<size_t>(impl->numel());
    if (dt == DType::f64) impl->vd.assign(n, 0.0);
    else impl->vf.assign(n, 0.0f);
    return impl;
}
} // namespace

Tensor Tensor::zeros(Shape shape, DType dt, bool requires_grad) {
    auto impl = alloc_impl(std::move(shape), dt);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, DType dt) {
    Tensor t = zeros(std::move(shape), dt);
    t.fill(value);
    return t;
}

Tensor Tensor::from_double(Shape shape, const std::vector<double>& v, DType dt) {
    Tensor t = zeros(std::move(shape), dt);
    if (static_cast<i64>(v.size()) != t.numel())
        throw std::invalid_argument("from_double: size mismatch");
    t.copy_from_double(v);
    return t;
}

Tensor Tensor::randn(Shape shape, RngState& rng, double stddev, DType dt) {
    Tensor t = zeros(std::move(shape), dt);
    const i64 n = t.numel();
    with_dtype(dt, [&](auto tag) {
        using T = typename decltype(tag)::type;
        T* p = t.data<T>();
        for (i64 i = 0; i < n; ++i) p[i] = static_cast<T>(rng.normal() * stddev);
    });
    return t;
}

Tensor Tensor::uniform(Shape shape, RngState& rng, double lo, double hi, DType dt) {
    Tensor t = zeros(std::move(shape), dt);
    const i64 n = t.numel();
    with_dtype(dt, [&](auto tag) {
        using T = typename decltype(tag)::type;
        T* p = t.data<T>();
        for (i64 i = 0; i < n; ++i) p[i] = static_cast<T>(rng.uniform(lo, hi));
    });
    return t;
}

void Tensor::set_requires_grad(bool rq) {
    if (rq && impl_->backward_fn)
        throw std::logic_error("set_requires_grad: not a leaf");
    impl_->requires_grad = rq;
}

double Tensor::at(i64 idx) const {
    return impl_->dtype == DType::f64 ? impl_->vd[static_cast<size_t>(idx)]
                                      : static_cast<double>(impl_->vf[static_cast<size_t>(idx)]);
}

void Tensor::set(i64 idx, double v) {
    if (impl_->dtype == DType::f64) impl_->vd[static_cast<size_t>(idx)] = v;
    else impl_->vf[static_cast<size_t>(idx)] = static_cast<float>(v);
}

std::vector<double> Tensor::to_double() const {
    const i64 n = numel();
    std::vector<double> out(static_cast<size_t>(n));
    for (i64 i = 0; i < n; ++i) out[static_cast<size_t>(i)] = at(i);
    return out;
}

std::vector<double> Tensor::grad_to_double() const {
    const i64 n = numel();
    std::vector<double> out(static_cast<size_t>(n), 0.0);
    if (!impl_->has_grad()) return out;
    if (impl_->dtype == DType::f64)
        for (i64 i = 0; i < n; ++i) out[static_cast<size_t>(i)] = impl_->gd[static_cast<size_t>(i)];
    else
        for (i64 i = 0; i < n; ++i) out[static_cast<size_t>(i)] = static_cast<double>(impl_->gf[static_cast<size_t>(i)]);
    return out;
}

void Tensor::copy_from_double(const std::vector<double>& v) {
    const i64 n = numel();
    for (i64 i = 0; i < n; ++i) set(i, v[static_cast<size_t>(i)]);
}

void Tensor::fill(double v) {
    if (impl_->dtype == DType::f64) std::fill(impl_->vd.begin(), impl_->vd.end(), v);
    else std::fill(impl_->vf.begin(), impl_->vf.end(), static_cast<float>(v));
}

double Tensor::item() const {
    if (numel() != 1) throw std::logic_error("item: tensor is not scalar");
    return at(0);
}

void Tensor::zero_grad() const {
    std::fill(impl_->gf.begin(), impl_->gf.end(), 0.0f);
    std::fill(impl_->gd.begin(), impl_->gd.end(), 0.0);
}

bool Tensor::all_finite() const {
    const i64 n = numel();
    if (impl_->dtype == DType::f64) {
        for (i64 i = 0; i < n; ++i)
            if (!std::isfinite(impl_->vd[static_cast<size_t>(i)])) return false;
    } else {
        for (i64 i = 0; i < n; ++i)
            if (!std::isfinite(impl_->vf[static_cast<size_t>(i)])) return false;
    }
    return true;
}

Tensor Tensor::detach() const {
    Tensor t = zeros(impl_->shape, impl_->dtype);
    t.impl()->vf = impl_->vf;
    t.impl()->vd = impl_->vd;
    return t;
}

Tensor Tensor::to(DType dt) const {
    if (dt == impl_->dtype) return detach();
    Tensor t = zeros(impl_->shape, dt);
    t.copy_from_double(to_double());
    return t;
}

void Tensor::backward() {
    if (numel() != 1) throw std::logic_error("backward: root must be scalar");
    if (!impl_->requires_grad)
        throw std::logic_error("backward: root does not require grad");

    // Iterative post-order DFS over parents. `keep` pins every visited node:
    // closures release their parents as the sweep runs, and without it a
    // node's last owner could die before its own closure fires.
    std::vector<TensorImpl*> order;
    std::vector<Tensor> keep;
    std::unordered_set<TensorImpl*> seen;
    struct Frame { TensorImpl* node; size_t next; };
    std::vector<Frame> stack;
    stack.push_back({impl_.get(), 0});
    seen.insert(impl_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->parents.size()) {
            const Tensor& pt = f.node->parents[f.next++];
            TensorImpl* p = pt.impl();
            if (p->requires_grad && seen.insert(p).second) {
                keep.push_back(pt);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    impl_->ensure_grad();
    if (impl_->dtype == DType::f64) impl_->gd[0] = 1.0;
    else impl_->gf[0] = 1.0f;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward_fn) {
            node->backward_fn(*node);
            // Release intermediates eagerly; the graph is single-use.
            node->backward_fn = nullptr;
            node->parents.clear();
        }
    }
}

Tensor make_node(Shape shape, DType dt, std::vector<Tensor> parents,
                 std::function<void(TensorImpl&)> bw) {
    auto impl = alloc_impl(std::move(shape), dt);
    bool need = false;
    if (grad_enabled())
        for (const Tensor& p : parents)
            if (p.requires_grad()) { need = true; break; }
    if (need) {
        impl->requires_grad = true;
        impl->parents = std::move(parents);
        impl->backward_fn = std::move(bw);
    }
    return Tensor(std::move(impl));
}

} // namespace gtf
