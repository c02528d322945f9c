#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace sacreg {

enum class VolumeKind : uint8_t { intensity = 0, label = 1 };

// Dense 3D scalar grid, [D,H,W] row-major (w fastest). Intensity volumes are
// normalized to [0,1]; label volumes hold nonnegative integer codes stored as
// floats.
struct Volume {
    int d = 0, h = 0, w = 0;
    std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};  // mm per voxel (d,h,w)
    VolumeKind kind = VolumeKind::intensity;
    std::vector<float> data;

    std::size_t numel() const {
        return static_cast<std::size_t>(d) * h * w;
    }
    float& at(int z, int y, int x) {
        return data[(static_cast<std::size_t>(z) * h + y) * w + x];
    }
    float at(int z, int y, int x) const {
        return data[(static_cast<std::size_t>(z) * h + y) * w + x];
    }
};

// Per-voxel displacement in voxel units, component-major [3,D,H,W] with
// component order (d,h,w). `scale` records the pyramid level it belongs to.
struct DisplacementField {
    int d = 0, h = 0, w = 0;
    int scale = 1;
    std::vector<float> vectors;

    std::size_t spatial() const {
        return static_cast<std::size_t>(d) * h * w;
    }
    float comp(int c, int z, int y, int x) const {
        return vectors[c * spatial() + (static_cast<std::size_t>(z) * h + y) * w + x];
    }
    double max_norm() const;
};

struct SyntheticCase {
    Volume moving;
    Volume fixed;
    DisplacementField gt_flow;
    Volume labels_m;
    Volume labels_f;
};

// Native container (magic "SACV") and minimal uncompressed NIfTI-1 reading.
// Format details are documented in the README.
Volume read_volume(const std::string& path);
void write_volume(const Volume& v, const std::string& path);
DisplacementField read_field(const std::string& path);
void write_field(const DisplacementField& f, const std::string& path);

// Non-differentiable warp: output(x) = input(x + flow(x)); trilinear with
// border clamp for intensity, nearest-neighbor for labels.
Volume warp_volume(const Volume& v, const DisplacementField& flow);

// Trilinear sample of a field at a fractional (z,y,x), border-clamped.
void sample_field(const DisplacementField& f, double z, double y, double x,
                  double out[3]);

// Deterministic synthetic registration pair: blob-textured base volume with
// 2-4 ellipsoid label regions, deformed by a Gaussian-smoothed random field
// whose max vector norm equals max_disp. fixed == warp(moving, gt_flow) up to
// interpolation error.
SyntheticCase synth_pair(uint64_t seed, int size, double max_disp,
                         double smoothness_sigma = 3.0);

// Bridges to the autodiff tensor type.
Tensor volume_to_tensor(const Volume& v, bool requires_grad = false);
Tensor field_to_tensor(const DisplacementField& f, bool requires_grad = false);
DisplacementField tensor_to_field(const Tensor& t, int scale = 1);
Volume tensor_to_volume(const Tensor& t, const Volume& like);

}  // namespace sacreg
