#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "common.hpp"

namespace sacreg {

enum class PadMode { replicate, zero };

// One recorded primitive application. Nodes form the tape: creation order is
// topological (operands precede their consumers), and backward() replays it
// in reverse, accumulating gradients additively.
template <typename T>
struct NodeT {
    std::vector<int> shape;
    std::shared_ptr<std::vector<T>> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<NodeT>> parents;
    std::function<void(NodeT&)> backfn;
};

// Dense N-dimensional array with value semantics over a shared node.
// Feature maps use channel-first [C, D, H, W] layout; batch size is fixed at
// one so no batch axis is carried.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    static TensorT leaf(std::vector<int> shape, bool requires_grad = false);
    static TensorT leaf(std::vector<int> shape, std::vector<T> data,
                        bool requires_grad = false);
    static TensorT scalar(T v);
    static TensorT full(std::vector<int> shape, T v, bool requires_grad = false);

    bool valid() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::size_t numel() const { return node_->value->size(); }
    bool requires_grad() const { return node_->requires_grad; }

    const T* data() const { return node_->value->data(); }
    T* data() { return node_->value->data(); }
    const std::vector<T>& values() const { return *node_->value; }

    T item() const;
    T at(std::initializer_list<int> idx) const;

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<T>& grad() const { return node_->grad; }
    std::vector<T>& grad() { return node_->grad; }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

    // New leaf sharing this tensor's buffer, cut off from the tape.
    TensorT detach() const;

    std::shared_ptr<NodeT<T>> node() const { return node_; }
    explicit TensorT(std::shared_ptr<NodeT<T>> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<NodeT<T>> node_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// Reverse-mode sweep from a scalar root; leaf gradients accumulate additively.
template <typename T>
void backward(const TensorT<T>& root);

// --- elementwise ---
template <typename T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> scale(const TensorT<T>& a, T s);
template <typename T> TensorT<T> add_scalar(const TensorT<T>& a, T s);
template <typename T> TensorT<T> tanh(const TensorT<T>& a);
template <typename T> TensorT<T> leaky_relu(const TensorT<T>& a, T slope = T(0.1));
template <typename T> TensorT<T> clamp_values(const TensorT<T>& a, T lo, T hi);

// --- reductions ---
template <typename T> TensorT<T> sum(const TensorT<T>& a);
template <typename T> TensorT<T> mean(const TensorT<T>& a);

// --- linear algebra ---
template <typename T> TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);
// a[M,K] * b[N,K]^T -> [M,N]
template <typename T> TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> add_rowwise(const TensorT<T>& a, const TensorT<T>& v);
template <typename T> TensorT<T> mul_rowwise(const TensorT<T>& a, const TensorT<T>& v);
// x[M,in] * w[out,in]^T + b[out]
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b);

// --- shape ---
template <typename T> TensorT<T> reshape(const TensorT<T>& a, std::vector<int> shape);
template <typename T> TensorT<T> permute(const TensorT<T>& a, std::vector<int> perm);
// concatenate along axis 0; trailing extents must match
template <typename T> TensorT<T> concat0(const TensorT<T>& a, const TensorT<T>& b);

// --- row selection on rank-2 tensors ---
// rows of a at the given indices (duplicates allowed); backward scatter-adds
template <typename T>
TensorT<T> gather_rows(const TensorT<T>& a, std::vector<int32_t> idx);
// inverse: place row r of a at row idx[r] of an m-row zero tensor;
// indices must be distinct
template <typename T>
TensorT<T> scatter_rows(const TensorT<T>& a, std::vector<int32_t> idx, int m);
// contiguous row range [lo, hi)
template <typename T>
TensorT<T> slice_rows(const TensorT<T>& a, int lo, int hi);

// --- nonlinear over an axis ---
template <typename T> TensorT<T> softmax(const TensorT<T>& a, int axis);

// --- spatial primitives on [C,D,H,W] ---
// Shape-preserving cross-correlation, replicate padding. kernel [Cout,Cin,k,k,k].
template <typename T>
TensorT<T> conv3d(const TensorT<T>& input, const TensorT<T>& kernel,
                  const TensorT<T>& bias, int padding);
// [C,D,H,W] -> [C, D*H*W, k^3]; entry (c,v,j) is the value at lexicographic
// offset j of the k-window centered at voxel v.
template <typename T>
TensorT<T> unfold3d(const TensorT<T>& input, int k,
                    PadMode pad = PadMode::replicate);
template <typename T> TensorT<T> avg_pool3d(const TensorT<T>& input);
template <typename T>
TensorT<T> instance_norm(const TensorT<T>& input, const TensorT<T>& gamma,
                         const TensorT<T>& beta, T eps = T(1e-5));

}  // namespace sacreg
