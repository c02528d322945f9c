#include "sacb.hpp"

#include "tensor_detail.hpp"

namespace sacreg {

template <typename T>
AdaptiveKernelSetT<T> adaptive_kernels(const TensorT<T>& s_c, const TensorT<T>& w,
                                       const TensorT<T>& fw_w1, const TensorT<T>& fw_b1,
                                       const TensorT<T>& fw_w2, const TensorT<T>& fw_b2,
                                       const TensorT<T>& fb_w1, const TensorT<T>& fb_b1,
                                       const TensorT<T>& fb_w2, const TensorT<T>& fb_b2) {
    check(s_c.rank() == 2, "adaptive_kernels: centroids must be [N,C]");
    check(w.rank() == 3 && w.dim(0) == w.dim(1),
          "adaptive_kernels: kernel must be [C,C,k^3]");
    const int c = w.dim(0);
    const int k3 = w.dim(2);
    check(s_c.dim(1) == c, "adaptive_kernels: centroid width must equal C");
    check(fw_w2.dim(0) == c * c * k3,
          "adaptive_kernels: F_w output width must be C*C*k^3");
    check(fb_w2.dim(0) == c, "adaptive_kernels: F_b output width must be C");

    TensorT<T> hidden_w = leaky_relu(linear(s_c, fw_w1, fw_b1));
    TensorT<T> modulation =
        add_scalar(tanh(linear(hidden_w, fw_w2, fw_b2)), T(1));  // [N, C*C*k^3]
    TensorT<T> w_flat = reshape(w, {c * c * k3});
    AdaptiveKernelSetT<T> set;
    set.weights = mul_rowwise(modulation, w_flat);

    TensorT<T> hidden_b = leaky_relu(linear(s_c, fb_w1, fb_b1));
    set.biases = linear(hidden_b, fb_w2, fb_b2);  // [N, C]
    return set;
}

AdaptiveKernelSet adaptive_kernels(const Tensor& s_c, const SacbParams& p) {
    return adaptive_kernels(s_c, p.w, p.fw_w1, p.fw_b1, p.fw_w2, p.fw_b2,
                            p.fb_w1, p.fb_b1, p.fb_w2, p.fb_b2);
}

template <typename T>
TensorT<T> sac_apply(const TensorT<T>& f, const std::vector<int32_t>& assignments,
                     int n_clusters, const TensorT<T>& weights,
                     const TensorT<T>& biases, int k) {
    int c, d, h, w;
    detail::spatial_dims(f, c, d, h, w);
    const std::size_t msp = static_cast<std::size_t>(d) * h * w;
    const int k3 = k * k * k;
    check(assignments.size() == msp,
          "sac_apply: assignments must cover the spatial grid");
    check(n_clusters >= 1, "sac_apply: need at least one cluster");
    check(weights.rank() == 2 && weights.dim(0) == n_clusters &&
              weights.dim(1) == c * c * k3,
          "sac_apply: weights must be [N, C*C*k^3]");
    check(biases.rank() == 2 && biases.dim(0) == n_clusters && biases.dim(1) == c,
          "sac_apply: biases must be [N, C]");

    // group voxels by cluster
    std::vector<std::vector<int32_t>> groups(static_cast<std::size_t>(n_clusters));
    for (std::size_t v = 0; v < msp; ++v) {
        const int32_t a = assignments[v];
        check(a >= 0 && a < n_clusters, "sac_apply: assignment index out of range");
        groups[static_cast<std::size_t>(a)].push_back(static_cast<int32_t>(v));
    }

    // patches as rows: [M, C*k^3], row layout (ci, j) matching kernel rows
    TensorT<T> patches = reshape(
        permute(unfold3d(f, k, PadMode::replicate), {1, 0, 2}),
        {static_cast<int>(msp), c * k3});

    TensorT<T> out;  // [M, C]
    for (int n = 0; n < n_clusters; ++n) {
        if (groups[static_cast<std::size_t>(n)].empty()) continue;
        TensorT<T> wn = reshape(slice_rows(weights, n, n + 1), {c, c * k3});
        TensorT<T> bn = reshape(slice_rows(biases, n, n + 1), {c});
        TensorT<T> rows = gather_rows(patches, groups[static_cast<std::size_t>(n)]);
        TensorT<T> val = add_rowwise(matmul_nt(rows, wn), bn);
        TensorT<T> placed = scatter_rows(val, groups[static_cast<std::size_t>(n)],
                                         static_cast<int>(msp));
        out = out.valid() ? add(out, placed) : placed;
    }
    return reshape(permute(out, {1, 0}), {c, d, h, w});
}

Tensor sacb_forward(const Tensor& f, const SacbParams& params,
                    const SacbConfig& cfg, uint64_t kmeans_seed) {
    int c, d, h, w;
    {
        detail::spatial_dims(f, c, d, h, w);
    }
    const std::size_t msp = static_cast<std::size_t>(d) * h * w;

    // descriptors steer the partition only; no gradient flows through them
    Tensor desc = spatial_context(f, params.k, cfg.mode);
    std::vector<double> desc_d(desc.values().begin(), desc.values().end());
    const int n_req = std::min<int>(cfg.clusters, static_cast<int>(msp));
    ClusterMap cm = kmeans(desc_d, static_cast<int>(msp), desc.dim(1), n_req,
                           cfg.kmeans_max_iter, cfg.kmeans_tol, kmeans_seed);

    // Eq. 4 centroids over the original features, [M,C] rows
    Tensor f_rows = reshape(permute(f, {1, 2, 3, 0}), {static_cast<int>(msp), c});
    if (cfg.detach_centroids) f_rows = f_rows.detach();
    Tensor s_c = cluster_centroids(f_rows, cm.assignments, cm.n);

    AdaptiveKernelSet set = adaptive_kernels(s_c, params);
    Tensor sac = sac_apply(f, cm.assignments, cm.n, set.weights, set.biases,
                           params.k);
    return add(f, leaky_relu(sac));
}

#define SACREG_INSTANTIATE_SACB(T)                                              \
    template AdaptiveKernelSetT<T> adaptive_kernels(                            \
        const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,                \
        const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,                \
        const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,                \
        const TensorT<T>&);                                                     \
    template TensorT<T> sac_apply(const TensorT<T>&,                            \
                                  const std::vector<int32_t>&, int,             \
                                  const TensorT<T>&, const TensorT<T>&, int);

SACREG_INSTANTIATE_SACB(float)
SACREG_INSTANTIATE_SACB(double)

#undef SACREG_INSTANTIATE_SACB

}  // namespace sacreg
