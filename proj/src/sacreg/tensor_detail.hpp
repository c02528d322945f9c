#pragma once

// Internals shared by the translation units that define tape primitives.
// Not part of the public surface.

#include <Eigen/Core>

#include "tensor.hpp"

namespace sacreg {
namespace detail {

template <typename T>
using RowMat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T> using MatMap = Eigen::Map<RowMat<T>>;
template <typename T> using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
std::shared_ptr<std::vector<T>> alloc_buffer(std::size_t n) {
    memstats::add(n * sizeof(T));
    return std::shared_ptr<std::vector<T>>(new std::vector<T>(n, T(0)),
                                           [n](std::vector<T>* p) {
                                               memstats::sub(n * sizeof(T));
                                               delete p;
                                           });
}

template <typename T>
bool any_requires_grad(std::initializer_list<TensorT<T>> parents) {
    for (const auto& p : parents) {
        if (p.requires_grad()) return true;
    }
    return false;
}

// Create an op node. The backward closure is only retained (and the parents
// only kept alive) when some parent requires grad.
template <typename T>
TensorT<T> make_node(std::vector<int> shape,
                     std::shared_ptr<std::vector<T>> value,
                     std::initializer_list<TensorT<T>> parents,
                     std::function<void(NodeT<T>&)> backfn) {
    auto n = std::make_shared<NodeT<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = any_requires_grad(parents);
    if (n->requires_grad) {
        for (const auto& p : parents) {
            n->parents.push_back(p.node());
        }
        n->backfn = std::move(backfn);
    }
    return TensorT<T>(std::move(n));
}

template <typename T>
T* grad_of(const std::shared_ptr<NodeT<T>>& n) {
    if (!n->requires_grad) return nullptr;
    if (n->grad.empty()) n->grad.assign(n->value->size(), T(0));
    return n->grad.data();
}

inline int clamp_idx(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

// Per-voxel table of clamped linear spatial indices for the k^3 window in
// lexicographic (d',h',w') order. PadMode::zero marks out-of-bounds as -1.
std::vector<int32_t> neighbor_table(int d, int h, int w, int k, PadMode pad);

// spatial dims of a [C,D,H,W] tensor
template <typename T>
void spatial_dims(const TensorT<T>& t, int& c, int& d, int& h, int& w) {
    check(t.rank() == 4, "expected a rank-4 [C,D,H,W] tensor, got shape " +
                             shape_str(t.shape()));
    c = t.dim(0);
    d = t.dim(1);
    h = t.dim(2);
    w = t.dim(3);
}

}  // namespace detail
}  // namespace sacreg
