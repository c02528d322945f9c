#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "tensor_detail.hpp"

namespace sacreg {

namespace memstats {
namespace {
std::size_t g_live = 0;
std::size_t g_peak = 0;
}  // namespace
void add(std::size_t bytes) {
    g_live += bytes;
    if (g_live > g_peak) g_peak = g_live;
}
void sub(std::size_t bytes) { g_live -= std::min(bytes, g_live); }
std::size_t peak() { return g_peak; }
void reset_peak() { g_peak = g_live; }
}  // namespace memstats

using detail::alloc_buffer;
using detail::clamp_idx;
using detail::ConstMatMap;
using detail::grad_of;
using detail::make_node;
using detail::MatMap;

// --- construction ---

template <typename T>
TensorT<T> TensorT<T>::leaf(std::vector<int> shape, bool requires_grad) {
    for (int e : shape) {
        check(e >= 1, "tensor extents must be >= 1, got " + shape_str(shape));
    }
    auto n = std::make_shared<NodeT<T>>();
    n->value = alloc_buffer<T>(shape_numel(shape));
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return TensorT<T>(std::move(n));
}

template <typename T>
TensorT<T> TensorT<T>::leaf(std::vector<int> shape, std::vector<T> data,
                            bool requires_grad) {
    check(shape_numel(shape) == data.size(),
          "tensor data size does not match shape " + shape_str(shape));
    TensorT<T> t = leaf(std::move(shape), requires_grad);
    std::copy(data.begin(), data.end(), t.data());
    return t;
}

template <typename T>
TensorT<T> TensorT<T>::scalar(T v) {
    return leaf({1}, std::vector<T>{v});
}

template <typename T>
TensorT<T> TensorT<T>::full(std::vector<int> shape, T v, bool requires_grad) {
    TensorT<T> t = leaf(std::move(shape), requires_grad);
    std::fill(t.data(), t.data() + t.numel(), v);
    return t;
}

template <typename T>
T TensorT<T>::item() const {
    check(numel() == 1, "item() requires a scalar tensor");
    return (*node_->value)[0];
}

template <typename T>
T TensorT<T>::at(std::initializer_list<int> idx) const {
    check(idx.size() == node_->shape.size(), "at(): index rank mismatch");
    std::size_t lin = 0;
    std::size_t axis = 0;
    for (int i : idx) {
        lin = lin * static_cast<std::size_t>(node_->shape[axis]) +
              static_cast<std::size_t>(i);
        ++axis;
    }
    return (*node_->value)[lin];
}

template <typename T>
TensorT<T> TensorT<T>::detach() const {
    auto n = std::make_shared<NodeT<T>>();
    n->shape = node_->shape;
    n->value = node_->value;
    n->requires_grad = false;
    return TensorT<T>(std::move(n));
}

// --- backward ---

template <typename T>
void backward(const TensorT<T>& root) {
    check(root.valid(), "backward: empty tensor");
    check(root.numel() == 1, "backward: root must be a scalar");
    NodeT<T>* rn = root.node().get();
    if (!rn->requires_grad) return;

    // post-order DFS: operands end up before their consumers
    std::vector<NodeT<T>*> order;
    std::unordered_set<NodeT<T>*> seen;
    struct Frame {
        NodeT<T>* n;
        std::size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({rn, 0});
    seen.insert(rn);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            NodeT<T>* p = f.n->parents[f.next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    if (rn->grad.empty()) rn->grad.assign(1, T(0));
    rn->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backfn && !(*it)->grad.empty()) {
            (*it)->backfn(**it);
        }
    }
}

// --- elementwise ---

namespace {

template <typename T, typename F, typename D>
TensorT<T> unary_op(const TensorT<T>& a, F f, D dfdx) {
    auto out = alloc_buffer<T>(a.numel());
    const T* x = a.data();
    for (std::size_t i = 0; i < a.numel(); ++i) (*out)[i] = f(x[i]);
    auto an = a.node();
    return make_node<T>(a.shape(), out, {a}, [an, dfdx](NodeT<T>& self) {
        T* da = grad_of(an);
        if (!da) return;
        const T* x = an->value->data();
        const T* g = self.grad.data();
        for (std::size_t i = 0; i < self.value->size(); ++i) {
            da[i] += g[i] * dfdx(x[i], (*self.value)[i]);
        }
    });
}

}  // namespace

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    check(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
    auto out = alloc_buffer<T>(a.numel());
    for (std::size_t i = 0; i < a.numel(); ++i)
        (*out)[i] = a.data()[i] + b.data()[i];
    auto an = a.node(), bn = b.node();
    return make_node<T>(a.shape(), out, {a, b}, [an, bn](NodeT<T>& self) {
        const T* g = self.grad.data();
        if (T* da = grad_of(an))
            for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += g[i];
        if (T* db = grad_of(bn))
            for (std::size_t i = 0; i < self.grad.size(); ++i) db[i] += g[i];
    });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    check(a.shape() == b.shape(), "sub: shape mismatch");
    auto out = alloc_buffer<T>(a.numel());
    for (std::size_t i = 0; i < a.numel(); ++i)
        (*out)[i] = a.data()[i] - b.data()[i];
    auto an = a.node(), bn = b.node();
    return make_node<T>(a.shape(), out, {a, b}, [an, bn](NodeT<T>& self) {
        const T* g = self.grad.data();
        if (T* da = grad_of(an))
            for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += g[i];
        if (T* db = grad_of(bn))
            for (std::size_t i = 0; i < self.grad.size(); ++i) db[i] -= g[i];
    });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    check(a.shape() == b.shape(), "mul: shape mismatch");
    auto out = alloc_buffer<T>(a.numel());
    for (std::size_t i = 0; i < a.numel(); ++i)
        (*out)[i] = a.data()[i] * b.data()[i];
    auto an = a.node(), bn = b.node();
    return make_node<T>(a.shape(), out, {a, b}, [an, bn](NodeT<T>& self) {
        const T* g = self.grad.data();
        const T* av = an->value->data();
        const T* bv = bn->value->data();
        if (T* da = grad_of(an))
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                da[i] += g[i] * bv[i];
        if (T* db = grad_of(bn))
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                db[i] += g[i] * av[i];
    });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    return unary_op(
        a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
    return unary_op(
        a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
TensorT<T> tanh(const TensorT<T>& a) {
    return unary_op(
        a, [](T x) { return std::tanh(x); },
        [](T, T y) { return T(1) - y * y; });
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& a, T slope) {
    return unary_op(
        a, [slope](T x) { return x > T(0) ? x : slope * x; },
        [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
TensorT<T> clamp_values(const TensorT<T>& a, T lo, T hi) {
    return unary_op(
        a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); },
        [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

// --- reductions ---

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a.data()[i];
    auto out = alloc_buffer<T>(1);
    (*out)[0] = static_cast<T>(acc);
    auto an = a.node();
    return make_node<T>({1}, out, {a}, [an](NodeT<T>& self) {
        if (T* da = grad_of(an)) {
            const T g = self.grad[0];
            for (std::size_t i = 0; i < an->value->size(); ++i) da[i] += g;
        }
    });
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a) {
    const std::size_t n = a.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a.data()[i];
    auto out = alloc_buffer<T>(1);
    (*out)[0] = static_cast<T>(acc / static_cast<double>(n));
    auto an = a.node();
    return make_node<T>({1}, out, {a}, [an, n](NodeT<T>& self) {
        if (T* da = grad_of(an)) {
            const T g = self.grad[0] / static_cast<T>(n);
            for (std::size_t i = 0; i < n; ++i) da[i] += g;
        }
    });
}

// --- linear algebra ---

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank-2");
    check(a.dim(1) == b.dim(0), "matmul: inner extents differ, " +
                                    shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = alloc_buffer<T>(static_cast<std::size_t>(m) * n);
    MatMap<T>(out->data(), m, n).noalias() =
        ConstMatMap<T>(a.data(), m, k) * ConstMatMap<T>(b.data(), k, n);
    auto an = a.node(), bn = b.node();
    return make_node<T>({m, n}, out, {a, b}, [an, bn, m, k, n](NodeT<T>& self) {
        ConstMatMap<T> g(self.grad.data(), m, n);
        if (T* da = grad_of(an))
            MatMap<T>(da, m, k).noalias() +=
                g * ConstMatMap<T>(bn->value->data(), k, n).transpose();
        if (T* db = grad_of(bn))
            MatMap<T>(db, k, n).noalias() +=
                ConstMatMap<T>(an->value->data(), m, k).transpose() * g;
    });
}

template <typename T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul_nt: operands must be rank-2");
    check(a.dim(1) == b.dim(1), "matmul_nt: inner extents differ");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    auto out = alloc_buffer<T>(static_cast<std::size_t>(m) * n);
    MatMap<T>(out->data(), m, n).noalias() =
        ConstMatMap<T>(a.data(), m, k) *
        ConstMatMap<T>(b.data(), n, k).transpose();
    auto an = a.node(), bn = b.node();
    return make_node<T>({m, n}, out, {a, b}, [an, bn, m, k, n](NodeT<T>& self) {
        ConstMatMap<T> g(self.grad.data(), m, n);
        if (T* da = grad_of(an))
            MatMap<T>(da, m, k).noalias() +=
                g * ConstMatMap<T>(bn->value->data(), n, k);
        if (T* db = grad_of(bn))
            MatMap<T>(db, n, k).noalias() +=
                g.transpose() * ConstMatMap<T>(an->value->data(), m, k);
    });
}

template <typename T>
TensorT<T> add_rowwise(const TensorT<T>& a, const TensorT<T>& v) {
    check(a.rank() == 2 && v.rank() == 1 && a.dim(1) == v.dim(0),
          "add_rowwise: expected [M,N] and [N]");
    const int m = a.dim(0), n = a.dim(1);
    auto out = alloc_buffer<T>(a.numel());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            (*out)[static_cast<std::size_t>(i) * n + j] =
                a.data()[static_cast<std::size_t>(i) * n + j] + v.data()[j];
    auto an = a.node(), vn = v.node();
    return make_node<T>(a.shape(), out, {a, v}, [an, vn, m, n](NodeT<T>& self) {
        const T* g = self.grad.data();
        if (T* da = grad_of(an))
            for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += g[i];
        if (T* dv = grad_of(vn))
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    dv[j] += g[static_cast<std::size_t>(i) * n + j];
    });
}

template <typename T>
TensorT<T> mul_rowwise(const TensorT<T>& a, const TensorT<T>& v) {
    check(a.rank() == 2 && v.rank() == 1 && a.dim(1) == v.dim(0),
          "mul_rowwise: expected [M,N] and [N]");
    const int m = a.dim(0), n = a.dim(1);
    auto out = alloc_buffer<T>(a.numel());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            (*out)[static_cast<std::size_t>(i) * n + j] =
                a.data()[static_cast<std::size_t>(i) * n + j] * v.data()[j];
    auto an = a.node(), vn = v.node();
    return make_node<T>(a.shape(), out, {a, v}, [an, vn, m, n](NodeT<T>& self) {
        const T* g = self.grad.data();
        const T* av = an->value->data();
        const T* vv = vn->value->data();
        if (T* da = grad_of(an))
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    da[static_cast<std::size_t>(i) * n + j] +=
                        g[static_cast<std::size_t>(i) * n + j] * vv[j];
        if (T* dv = grad_of(vn))
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    dv[j] += g[static_cast<std::size_t>(i) * n + j] *
                             av[static_cast<std::size_t>(i) * n + j];
    });
}

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    return add_rowwise(matmul_nt(x, w), b);
}

// --- shape ---

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, std::vector<int> shape) {
    check(shape_numel(shape) == a.numel(),
          "reshape: element count mismatch to " + shape_str(shape));
    auto n = std::make_shared<NodeT<T>>();
    n->shape = std::move(shape);
    n->value = a.node()->value;  // view, no copy
    n->requires_grad = a.requires_grad();
    if (n->requires_grad) {
        auto an = a.node();
        n->parents.push_back(an);
        n->backfn = [an](NodeT<T>& self) {
            if (T* da = grad_of(an))
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    da[i] += self.grad[i];
        };
    }
    return TensorT<T>(std::move(n));
}

template <typename T>
TensorT<T> permute(const TensorT<T>& a, std::vector<int> perm) {
    const int r = a.rank();
    check(static_cast<int>(perm.size()) == r, "permute: rank mismatch");
    std::vector<int> out_shape(r);
    for (int i = 0; i < r; ++i) out_shape[i] = a.dim(perm[i]);

    std::vector<std::size_t> in_strides(r, 1);
    for (int i = r - 2; i >= 0; --i)
        in_strides[i] = in_strides[i + 1] * static_cast<std::size_t>(a.dim(i + 1));
    std::vector<std::size_t> map_stride(r);
    for (int i = 0; i < r; ++i) map_stride[i] = in_strides[perm[i]];

    auto out = alloc_buffer<T>(a.numel());
    std::vector<int> cnt(r, 0);
    const T* x = a.data();
    std::size_t src = 0;
    for (std::size_t o = 0; o < a.numel(); ++o) {
        (*out)[o] = x[src];
        for (int axis = r - 1; axis >= 0; --axis) {
            if (++cnt[axis] < out_shape[axis]) {
                src += map_stride[axis];
                break;
            }
            cnt[axis] = 0;
            src -= map_stride[axis] * static_cast<std::size_t>(out_shape[axis] - 1);
        }
    }
    auto an = a.node();
    return make_node<T>(out_shape, out, {a},
                        [an, out_shape, map_stride](NodeT<T>& self) {
                            T* da = grad_of(an);
                            if (!da) return;
                            const int r = static_cast<int>(out_shape.size());
                            std::vector<int> cnt(r, 0);
                            std::size_t src = 0;
                            for (std::size_t o = 0; o < self.grad.size(); ++o) {
                                da[src] += self.grad[o];
                                for (int axis = r - 1; axis >= 0; --axis) {
                                    if (++cnt[axis] < out_shape[axis]) {
                                        src += map_stride[axis];
                                        break;
                                    }
                                    cnt[axis] = 0;
                                    src -= map_stride[axis] *
                                           static_cast<std::size_t>(out_shape[axis] - 1);
                                }
                            }
                        });
}

template <typename T>
TensorT<T> concat0(const TensorT<T>& a, const TensorT<T>& b) {
    check(a.rank() == b.rank() && a.rank() >= 1, "concat0: rank mismatch");
    for (int i = 1; i < a.rank(); ++i)
        check(a.dim(i) == b.dim(i), "concat0: trailing extents differ");
    std::vector<int> out_shape = a.shape();
    out_shape[0] += b.dim(0);
    auto out = alloc_buffer<T>(a.numel() + b.numel());
    std::copy(a.data(), a.data() + a.numel(), out->data());
    std::copy(b.data(), b.data() + b.numel(), out->data() + a.numel());
    auto an = a.node(), bn = b.node();
    const std::size_t na = a.numel();
    return make_node<T>(out_shape, out, {a, b}, [an, bn, na](NodeT<T>& self) {
        const T* g = self.grad.data();
        if (T* da = grad_of(an))
            for (std::size_t i = 0; i < na; ++i) da[i] += g[i];
        if (T* db = grad_of(bn))
            for (std::size_t i = na; i < self.grad.size(); ++i)
                db[i - na] += g[i];
    });
}

// --- row selection ---

template <typename T>
TensorT<T> gather_rows(const TensorT<T>& a, std::vector<int32_t> idx) {
    check(a.rank() == 2, "gather_rows: expected a rank-2 tensor");
    const int cols = a.dim(1);
    const int rows = static_cast<int>(idx.size());
    check(rows >= 1, "gather_rows: empty index list");
    for (int32_t r : idx) {
        check(r >= 0 && r < a.dim(0), "gather_rows: index out of range");
    }
    auto out = alloc_buffer<T>(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
        std::copy(a.data() + static_cast<std::size_t>(idx[r]) * cols,
                  a.data() + static_cast<std::size_t>(idx[r] + 1) * cols,
                  out->data() + static_cast<std::size_t>(r) * cols);
    }
    auto an = a.node();
    return make_node<T>({rows, cols}, out, {a},
                        [an, idx = std::move(idx), cols](NodeT<T>& self) {
                            T* da = grad_of(an);
                            if (!da) return;
                            const T* g = self.grad.data();
                            for (std::size_t r = 0; r < idx.size(); ++r) {
                                T* dst = da + static_cast<std::size_t>(idx[r]) * cols;
                                const T* src = g + r * cols;
                                for (int c = 0; c < cols; ++c) dst[c] += src[c];
                            }
                        });
}

template <typename T>
TensorT<T> scatter_rows(const TensorT<T>& a, std::vector<int32_t> idx, int m) {
    check(a.rank() == 2, "scatter_rows: expected a rank-2 tensor");
    check(static_cast<int>(idx.size()) == a.dim(0),
          "scatter_rows: index count must equal row count");
    const int cols = a.dim(1);
    for (int32_t r : idx) {
        check(r >= 0 && r < m, "scatter_rows: index out of range");
    }
    auto out = alloc_buffer<T>(static_cast<std::size_t>(m) * cols);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy(a.data() + r * cols, a.data() + (r + 1) * cols,
                  out->data() + static_cast<std::size_t>(idx[r]) * cols);
    }
    auto an = a.node();
    return make_node<T>({m, cols}, out, {a},
                        [an, idx = std::move(idx), cols](NodeT<T>& self) {
                            T* da = grad_of(an);
                            if (!da) return;
                            const T* g = self.grad.data();
                            for (std::size_t r = 0; r < idx.size(); ++r) {
                                const T* src =
                                    g + static_cast<std::size_t>(idx[r]) * cols;
                                T* dst = da + r * cols;
                                for (int c = 0; c < cols; ++c) dst[c] += src[c];
                            }
                        });
}

template <typename T>
TensorT<T> slice_rows(const TensorT<T>& a, int lo, int hi) {
    check(a.rank() == 2, "slice_rows: expected a rank-2 tensor");
    check(0 <= lo && lo < hi && hi <= a.dim(0), "slice_rows: bad range");
    const int cols = a.dim(1);
    const int rows = hi - lo;
    auto out = alloc_buffer<T>(static_cast<std::size_t>(rows) * cols);
    std::copy(a.data() + static_cast<std::size_t>(lo) * cols,
              a.data() + static_cast<std::size_t>(hi) * cols, out->data());
    auto an = a.node();
    return make_node<T>({rows, cols}, out, {a},
                        [an, lo, cols](NodeT<T>& self) {
                            T* da = grad_of(an);
                            if (!da) return;
                            T* dst = da + static_cast<std::size_t>(lo) * cols;
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                                dst[i] += self.grad[i];
                        });
}

// --- softmax ---

template <typename T>
TensorT<T> softmax(const TensorT<T>& a, int axis) {
    const int r = a.rank();
    check(axis >= 0 && axis < r, "softmax: axis out of range");
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(a.dim(i));
    for (int i = axis + 1; i < r; ++i) inner *= static_cast<std::size_t>(a.dim(i));
    const std::size_t len = static_cast<std::size_t>(a.dim(axis));

    auto out = alloc_buffer<T>(a.numel());
    const T* x = a.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = x[base];
            for (std::size_t i = 1; i < len; ++i)
                mx = std::max(mx, x[base + i * inner]);
            double denom = 0.0;
            for (std::size_t i = 0; i < len; ++i) {
                const T e = std::exp(x[base + i * inner] - mx);
                (*out)[base + i * inner] = e;
                denom += e;
            }
            const T inv = static_cast<T>(1.0 / denom);
            for (std::size_t i = 0; i < len; ++i) (*out)[base + i * inner] *= inv;
        }
    }
    auto an = a.node();
    return make_node<T>(a.shape(), out, {a},
                        [an, outer, inner, len](NodeT<T>& self) {
                            T* da = grad_of(an);
                            if (!da) return;
                            const T* y = self.value->data();
                            const T* g = self.grad.data();
                            for (std::size_t o = 0; o < outer; ++o) {
                                for (std::size_t in = 0; in < inner; ++in) {
                                    const std::size_t base = o * len * inner + in;
                                    double dot = 0.0;
                                    for (std::size_t i = 0; i < len; ++i)
                                        dot += static_cast<double>(g[base + i * inner]) *
                                               y[base + i * inner];
                                    for (std::size_t i = 0; i < len; ++i) {
                                        const std::size_t p = base + i * inner;
                                        da[p] += y[p] * (g[p] - static_cast<T>(dot));
                                    }
                                }
                            }
                        });
}

// --- spatial primitives ---

namespace detail {

std::vector<int32_t> neighbor_table(int d, int h, int w, int k, PadMode pad) {
    const int r = k / 2;
    std::vector<int32_t> nb(static_cast<std::size_t>(d) * h * w * k * k * k);
    std::size_t p = 0;
    for (int z = 0; z < d; ++z) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                for (int dz = -r; dz <= r; ++dz) {
                    for (int dy = -r; dy <= r; ++dy) {
                        for (int dx = -r; dx <= r; ++dx) {
                            const int zz = z + dz, yy = y + dy, xx = x + dx;
                            if (pad == PadMode::zero &&
                                (zz < 0 || zz >= d || yy < 0 || yy >= h ||
                                 xx < 0 || xx >= w)) {
                                nb[p++] = -1;
                            } else {
                                nb[p++] = static_cast<int32_t>(
                                    (static_cast<std::size_t>(clamp_idx(zz, d)) * h +
                                     clamp_idx(yy, h)) *
                                        w +
                                    clamp_idx(xx, w));
                            }
                        }
                    }
                }
            }
        }
    }
    return nb;
}

}  // namespace detail

namespace {

constexpr int kConvChunkRows = 4096;

// col chunk layout: row (v - v0), column c*k3 + j
template <typename T>
void im2col_chunk(const T* x, std::size_t msp, int cin, int k3,
                  const int32_t* nb, std::size_t v0, std::size_t v1, T* col) {
    const std::size_t kk = static_cast<std::size_t>(cin) * k3;
    for (std::size_t v = v0; v < v1; ++v) {
        T* row = col + (v - v0) * kk;
        const int32_t* nbr = nb + v * k3;
        for (int c = 0; c < cin; ++c) {
            const T* xc = x + static_cast<std::size_t>(c) * msp;
            for (int j = 0; j < k3; ++j) {
                const int32_t src = nbr[j];
                row[static_cast<std::size_t>(c) * k3 + j] =
                    src < 0 ? T(0) : xc[src];
            }
        }
    }
}

template <typename T>
void col2im_chunk_add(const T* dcol, std::size_t msp, int cin, int k3,
                      const int32_t* nb, std::size_t v0, std::size_t v1, T* dx) {
    const std::size_t kk = static_cast<std::size_t>(cin) * k3;
    for (std::size_t v = v0; v < v1; ++v) {
        const T* row = dcol + (v - v0) * kk;
        const int32_t* nbr = nb + v * k3;
        for (int c = 0; c < cin; ++c) {
            T* xc = dx + static_cast<std::size_t>(c) * msp;
            for (int j = 0; j < k3; ++j) {
                const int32_t dst = nbr[j];
                if (dst >= 0) xc[dst] += row[static_cast<std::size_t>(c) * k3 + j];
            }
        }
    }
}

}  // namespace

template <typename T>
TensorT<T> conv3d(const TensorT<T>& input, const TensorT<T>& kernel,
                  const TensorT<T>& bias, int padding) {
    int cin, d, h, w;
    detail::spatial_dims(input, cin, d, h, w);
    check(kernel.rank() == 5, "conv3d: kernel must be [Cout,Cin,k,k,k]");
    const int cout = kernel.dim(0);
    const int k = kernel.dim(2);
    check(kernel.dim(1) == cin,
          "conv3d: input channels (" + std::to_string(cin) +
              ") do not match kernel (" + std::to_string(kernel.dim(1)) + ")");
    check(kernel.dim(3) == k && kernel.dim(4) == k, "conv3d: kernel not cubic");
    check(k % 2 == 1, "conv3d: kernel size must be odd");
    check(padding == (k - 1) / 2, "conv3d: padding must be (k-1)/2");
    check(bias.rank() == 1 && bias.dim(0) == cout,
          "conv3d: bias extent must equal Cout");

    const std::size_t msp = static_cast<std::size_t>(d) * h * w;
    const int k3 = k * k * k;
    const std::size_t kk = static_cast<std::size_t>(cin) * k3;
    const auto nb = detail::neighbor_table(d, h, w, k, PadMode::replicate);

    auto out = alloc_buffer<T>(static_cast<std::size_t>(cout) * msp);
    {
        std::vector<T> col(static_cast<std::size_t>(kConvChunkRows) * kk);
        std::vector<T> tmp(static_cast<std::size_t>(kConvChunkRows) * cout);
        for (std::size_t v0 = 0; v0 < msp; v0 += kConvChunkRows) {
            const std::size_t v1 = std::min(msp, v0 + kConvChunkRows);
            const int rows = static_cast<int>(v1 - v0);
            im2col_chunk(input.data(), msp, cin, k3, nb.data(), v0, v1, col.data());
            MatMap<T>(tmp.data(), rows, cout).noalias() =
                ConstMatMap<T>(col.data(), rows, static_cast<int>(kk)) *
                ConstMatMap<T>(kernel.data(), cout, static_cast<int>(kk))
                    .transpose();
            for (int c = 0; c < cout; ++c) {
                const T b = bias.data()[c];
                T* oc = out->data() + static_cast<std::size_t>(c) * msp;
                for (std::size_t v = v0; v < v1; ++v)
                    oc[v] = tmp[(v - v0) * cout + c] + b;
            }
        }
    }

    auto xn = input.node();
    auto wn = kernel.node();
    auto bn = bias.node();
    return make_node<T>(
        {cout, d, h, w}, out, {input, kernel, bias},
        [xn, wn, bn, cin, cout, d, h, w, k](NodeT<T>& self) {
            const std::size_t msp = static_cast<std::size_t>(d) * h * w;
            const int k3 = k * k * k;
            const std::size_t kk = static_cast<std::size_t>(cin) * k3;
            const auto nb = detail::neighbor_table(d, h, w, k, PadMode::replicate);
            T* dx = grad_of(xn);
            T* dw = grad_of(wn);
            T* db = grad_of(bn);
            const T* g = self.grad.data();

            std::vector<T> col(static_cast<std::size_t>(kConvChunkRows) * kk);
            std::vector<T> gout(static_cast<std::size_t>(kConvChunkRows) * cout);
            std::vector<T> dcol;
            if (dx) dcol.resize(static_cast<std::size_t>(kConvChunkRows) * kk);
            for (std::size_t v0 = 0; v0 < msp; v0 += kConvChunkRows) {
                const std::size_t v1 = std::min(msp, v0 + kConvChunkRows);
                const int rows = static_cast<int>(v1 - v0);
                for (int c = 0; c < cout; ++c) {
                    const T* gc = g + static_cast<std::size_t>(c) * msp;
                    for (std::size_t v = v0; v < v1; ++v)
                        gout[(v - v0) * cout + c] = gc[v];
                }
                if (dw) {
                    im2col_chunk(xn->value->data(), msp, cin, k3, nb.data(), v0,
                                 v1, col.data());
                    MatMap<T>(dw, cout, static_cast<int>(kk)).noalias() +=
                        ConstMatMap<T>(gout.data(), rows, cout).transpose() *
                        ConstMatMap<T>(col.data(), rows, static_cast<int>(kk));
                }
                if (dx) {
                    MatMap<T>(dcol.data(), rows, static_cast<int>(kk)).noalias() =
                        ConstMatMap<T>(gout.data(), rows, cout) *
                        ConstMatMap<T>(wn->value->data(), cout,
                                       static_cast<int>(kk));
                    col2im_chunk_add(dcol.data(), msp, cin, k3, nb.data(), v0, v1,
                                     dx);
                }
            }
            if (db) {
                for (int c = 0; c < cout; ++c) {
                    const T* gc = g + static_cast<std::size_t>(c) * msp;
                    double acc = 0.0;
                    for (std::size_t v = 0; v < msp; ++v) acc += gc[v];
                    db[c] += static_cast<T>(acc);
                }
            }
        });
}

template <typename T>
TensorT<T> unfold3d(const TensorT<T>& input, int k, PadMode pad) {
    int c, d, h, w;
    detail::spatial_dims(input, c, d, h, w);
    check(k % 2 == 1, "unfold3d: window size must be odd");
    const std::size_t msp = static_cast<std::size_t>(d) * h * w;
    const int k3 = k * k * k;
    const auto nb = detail::neighbor_table(d, h, w, k, pad);

    auto out = alloc_buffer<T>(static_cast<std::size_t>(c) * msp * k3);
    for (int ci = 0; ci < c; ++ci) {
        const T* xc = input.data() + static_cast<std::size_t>(ci) * msp;
        T* oc = out->data() + static_cast<std::size_t>(ci) * msp * k3;
        for (std::size_t v = 0; v < msp; ++v) {
            const int32_t* nbr = nb.data() + v * k3;
            for (int j = 0; j < k3; ++j)
                oc[v * k3 + j] = nbr[j] < 0 ? T(0) : xc[nbr[j]];
        }
    }
    auto xn = input.node();
    return make_node<T>(
        {c, static_cast<int>(msp), k3}, out, {input},
        [xn, c, d, h, w, k, pad](NodeT<T>& self) {
            T* dx = grad_of(xn);
            if (!dx) return;
            const std::size_t msp = static_cast<std::size_t>(d) * h * w;
            const int k3 = k * k * k;
            const auto nb = detail::neighbor_table(d, h, w, k, pad);
            const T* g = self.grad.data();
            for (int ci = 0; ci < c; ++ci) {
                T* xc = dx + static_cast<std::size_t>(ci) * msp;
                const T* gc = g + static_cast<std::size_t>(ci) * msp * k3;
                for (std::size_t v = 0; v < msp; ++v) {
                    const int32_t* nbr = nb.data() + v * k3;
                    for (int j = 0; j < k3; ++j)
                        if (nbr[j] >= 0) xc[nbr[j]] += gc[v * k3 + j];
                }
            }
        });
}

template <typename T>
TensorT<T> avg_pool3d(const TensorT<T>& input) {
    int c, d, h, w;
    detail::spatial_dims(input, c, d, h, w);
    check(d >= 2 && h >= 2 && w >= 2, "avg_pool3d: spatial extents must be >= 2");
    const int d2 = d / 2, h2 = h / 2, w2 = w / 2;
    const std::size_t msp = static_cast<std::size_t>(d) * h * w;
    const std::size_t msp2 = static_cast<std::size_t>(d2) * h2 * w2;

    auto out = alloc_buffer<T>(static_cast<std::size_t>(c) * msp2);
    for (int ci = 0; ci < c; ++ci) {
        const T* xc = input.data() + static_cast<std::size_t>(ci) * msp;
        T* oc = out->data() + static_cast<std::size_t>(ci) * msp2;
        for (int z = 0; z < d2; ++z)
            for (int y = 0; y < h2; ++y)
                for (int x = 0; x < w2; ++x) {
                    double acc = 0.0;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                acc += xc[(static_cast<std::size_t>(2 * z + dz) * h +
                                           (2 * y + dy)) *
                                              w +
                                          (2 * x + dx)];
                    oc[(static_cast<std::size_t>(z) * h2 + y) * w2 + x] =
                        static_cast<T>(acc * 0.125);
                }
    }
    auto xn = input.node();
    return make_node<T>(
        {c, d2, h2, w2}, out, {input}, [xn, c, d, h, w, d2, h2, w2](NodeT<T>& self) {
            T* dx = grad_of(xn);
            if (!dx) return;
            const std::size_t msp = static_cast<std::size_t>(d) * h * w;
            const std::size_t msp2 = static_cast<std::size_t>(d2) * h2 * w2;
            const T* g = self.grad.data();
            for (int ci = 0; ci < c; ++ci) {
                T* xc = dx + static_cast<std::size_t>(ci) * msp;
                const T* gc = g + static_cast<std::size_t>(ci) * msp2;
                for (int z = 0; z < d2; ++z)
                    for (int y = 0; y < h2; ++y)
                        for (int x = 0; x < w2; ++x) {
                            const T gv =
                                gc[(static_cast<std::size_t>(z) * h2 + y) * w2 + x] *
                                T(0.125);
                            for (int dz = 0; dz < 2; ++dz)
                                for (int dy = 0; dy < 2; ++dy)
                                    for (int dx2 = 0; dx2 < 2; ++dx2)
                                        xc[(static_cast<std::size_t>(2 * z + dz) * h +
                                            (2 * y + dy)) *
                                               w +
                                           (2 * x + dx2)] += gv;
                        }
            }
        });
}

template <typename T>
TensorT<T> instance_norm(const TensorT<T>& input, const TensorT<T>& gamma,
                         const TensorT<T>& beta, T eps) {
    int c, d, h, w;
    detail::spatial_dims(input, c, d, h, w);
    check(gamma.rank() == 1 && gamma.dim(0) == c, "instance_norm: gamma extent");
    check(beta.rank() == 1 && beta.dim(0) == c, "instance_norm: beta extent");
    const std::size_t msp = static_cast<std::size_t>(d) * h * w;

    auto mean_c = std::make_shared<std::vector<T>>(c);
    auto inv_c = std::make_shared<std::vector<T>>(c);
    auto out = alloc_buffer<T>(input.numel());
    for (int ci = 0; ci < c; ++ci) {
        const T* xc = input.data() + static_cast<std::size_t>(ci) * msp;
        double s = 0.0;
        for (std::size_t v = 0; v < msp; ++v) s += xc[v];
        const double mu = s / static_cast<double>(msp);
        double var = 0.0;
        for (std::size_t v = 0; v < msp; ++v) {
            const double dv = xc[v] - mu;
            var += dv * dv;
        }
        var /= static_cast<double>(msp);
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        (*mean_c)[ci] = static_cast<T>(mu);
        (*inv_c)[ci] = static_cast<T>(inv);
        const T gsc = gamma.data()[ci], bsh = beta.data()[ci];
        T* oc = out->data() + static_cast<std::size_t>(ci) * msp;
        for (std::size_t v = 0; v < msp; ++v)
            oc[v] = static_cast<T>((xc[v] - mu) * inv) * gsc + bsh;
    }
    auto xn = input.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    return make_node<T>(
        input.shape(), out, {input, gamma, beta},
        [xn, gn, bn, mean_c, inv_c, c, msp](NodeT<T>& self) {
            T* dx = grad_of(xn);
            T* dgam = grad_of(gn);
            T* dbet = grad_of(bn);
            const T* g = self.grad.data();
            const T* x = xn->value->data();
            const T* gam = gn->value->data();
            for (int ci = 0; ci < c; ++ci) {
                const T* xc = x + static_cast<std::size_t>(ci) * msp;
                const T* gc = g + static_cast<std::size_t>(ci) * msp;
                const T mu = (*mean_c)[ci], inv = (*inv_c)[ci];
                double sum_g = 0.0, sum_gx = 0.0;
                for (std::size_t v = 0; v < msp; ++v) {
                    const double xh = (xc[v] - mu) * inv;
                    sum_g += gc[v];
                    sum_gx += gc[v] * xh;
                }
                if (dbet) dbet[ci] += static_cast<T>(sum_g);
                if (dgam) dgam[ci] += static_cast<T>(sum_gx);
                if (dx) {
                    T* dxc = dx + static_cast<std::size_t>(ci) * msp;
                    const double mg = sum_g / static_cast<double>(msp);
                    const double mgx = sum_gx / static_cast<double>(msp);
                    const double s = static_cast<double>(gam[ci]) * inv;
                    for (std::size_t v = 0; v < msp; ++v) {
                        const double xh = (xc[v] - mu) * inv;
                        dxc[v] += static_cast<T>(s * (gc[v] - mg - xh * mgx));
                    }
                }
            }
        });
}

// --- explicit instantiations ---

#define SACREG_INSTANTIATE(T)                                                   \
    template class TensorT<T>;                                                  \
    template void backward(const TensorT<T>&);                                  \
    template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);              \
    template TensorT<T> sub(const TensorT<T>&, const TensorT<T>&);              \
    template TensorT<T> mul(const TensorT<T>&, const TensorT<T>&);              \
    template TensorT<T> scale(const TensorT<T>&, T);                            \
    template TensorT<T> add_scalar(const TensorT<T>&, T);                       \
    template TensorT<T> tanh(const TensorT<T>&);                                \
    template TensorT<T> leaky_relu(const TensorT<T>&, T);                       \
    template TensorT<T> clamp_values(const TensorT<T>&, T, T);                  \
    template TensorT<T> sum(const TensorT<T>&);                                 \
    template TensorT<T> mean(const TensorT<T>&);                                \
    template TensorT<T> matmul(const TensorT<T>&, const TensorT<T>&);           \
    template TensorT<T> matmul_nt(const TensorT<T>&, const TensorT<T>&);        \
    template TensorT<T> add_rowwise(const TensorT<T>&, const TensorT<T>&);      \
    template TensorT<T> mul_rowwise(const TensorT<T>&, const TensorT<T>&);      \
    template TensorT<T> linear(const TensorT<T>&, const TensorT<T>&,            \
                               const TensorT<T>&);                              \
    template TensorT<T> reshape(const TensorT<T>&, std::vector<int>);           \
    template TensorT<T> permute(const TensorT<T>&, std::vector<int>);           \
    template TensorT<T> concat0(const TensorT<T>&, const TensorT<T>&);          \
    template TensorT<T> gather_rows(const TensorT<T>&, std::vector<int32_t>);   \
    template TensorT<T> scatter_rows(const TensorT<T>&, std::vector<int32_t>,   \
                                     int);                                      \
    template TensorT<T> slice_rows(const TensorT<T>&, int, int);                \
    template TensorT<T> softmax(const TensorT<T>&, int);                        \
    template TensorT<T> conv3d(const TensorT<T>&, const TensorT<T>&,            \
                               const TensorT<T>&, int);                         \
    template TensorT<T> unfold3d(const TensorT<T>&, int, PadMode);              \
    template TensorT<T> avg_pool3d(const TensorT<T>&);                          \
    template TensorT<T> instance_norm(const TensorT<T>&, const TensorT<T>&,     \
                                      const TensorT<T>&, T);

SACREG_INSTANTIATE(float)
SACREG_INSTANTIATE(double)

#undef SACREG_INSTANTIATE

}  // namespace sacreg
