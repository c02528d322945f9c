#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace sacreg {

enum class ContextMode { spatial, channel, mix };

ContextMode parse_context_mode(const std::string& s);
std::string context_mode_name(ContextMode m);

// Voxel partition produced by kmeans(). `centroids` here are DESCRIPTOR-space
// centroids (width = descriptor width); the feature-space centroids fed to the
// kernel-generating MLPs come from cluster_centroids().
struct ClusterMap {
    std::vector<int32_t> assignments;  // one per voxel, values in [0, n)
    std::vector<double> centroids;     // n x width, row-major
    std::vector<int32_t> sizes;        // per-cluster member counts
    int n = 0;
    int width = 0;
    std::vector<double> objective_trace;  // sum of squared distances, per Lloyd step
};

// Per-voxel context descriptors from the k3 unfolded patch of F (replicate
// padding), computed on detached values — no gradient flows through them.
//   spatial: per-channel patch mean            -> width C
//   channel: per-offset mean over channels     -> width k^3
//   mix:     concatenation of both             -> width C + k^3
template <typename T>
TensorT<T> spatial_context(const TensorT<T>& f, int k, ContextMode mode);

// Deterministic k-means++ seeding followed by Lloyd iterations over squared
// Euclidean distance. Stops when the max centroid shift drops below tol or
// after max_iter update rounds. Empty clusters are re-seeded at the descriptor
// farthest from their current centroid; clusters still empty at convergence
// are dropped and the rest renumbered.
ClusterMap kmeans(const std::vector<double>& descriptors, int m, int width,
                  int n, int max_iter, double tol, uint64_t seed);

// Eq.-4 style grouped mean of the ORIGINAL feature rows: centroid n is the
// mean of rows with assignment n. Differentiable w.r.t. f_flat (assignments
// are constants; each member voxel receives gradient 1/|S_n| per centroid
// coordinate).
template <typename T>
TensorT<T> cluster_centroids(const TensorT<T>& f_flat,
                             const std::vector<int32_t>& assignments, int n);

}  // namespace sacreg
